import csv
import json

import numpy as np
import pytest

from shagcl import numcore as nc
from shagcl import train as train_mod
from shagcl.cli import main
from shagcl.dataio import RunConfig, SyntheticSpec, generate_dataset, load_annotations, write_dataset
from shagcl.train import build_partition, evaluate, save_model
from shagcl.pipeline import SceneGraphModel


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    assert main(["gen-data", "--config", "smoke", "--out", str(root / "data")]) == 0
    assert main(["train", "--config", "smoke", "--data", str(root / "data"),
                 "--out", str(root / "run")]) == 0
    return root


def write_counts(tmp_path, counts):
    path = tmp_path / "counts.csv"
    path.write_text("name,count\n" + "".join(f"p{i},{c}\n" for i, c in enumerate(counts)))
    return path


def test_group_worked_example(tmp_path, capsys):
    assert main(["group", "--counts", str(write_counts(tmp_path, [100, 40, 12, 11, 3])),
                 "--mu", "4"]) == 0
    out = capsys.readouterr().out
    assert "groups=2" in out
    assert "group 1: 2 classes  counts 100..40  max/min 2.500" in out
    assert "group 2: 3 classes  counts 12..3  max/min 4.000" in out
    assert "p0\t100\t1.0000\t0.1200" in out


def test_group_mu_one_singletons(tmp_path, capsys):
    assert main(["group", "--counts", str(write_counts(tmp_path, [9, 7, 5, 3, 1])),
                 "--mu", "1"]) == 0
    assert "groups=5" in capsys.readouterr().out


def test_group_errors(tmp_path, capsys):
    assert main(["group", "--counts", str(tmp_path / "missing.csv")]) == 2
    assert main(["group", "--counts", str(write_counts(tmp_path, [5, 3])), "--mu", "0.5"]) == 2
    assert main(["group"]) == 2
    assert "error:" in capsys.readouterr().err


def test_train_writes_run_artifacts(smoke):
    run = smoke / "run"
    for name in ("checkpoint.bin", "manifest.json", "loss_log.csv", "config.toml",
                 "metrics.csv", "per_class.csv"):
        assert (run / name).exists(), name
    manifest = json.loads((run / "manifest.json").read_text())
    for key in ("config", "seed", "dataset_sha256", "loss_log", "metrics", "wall_clock_seconds"):
        assert key in manifest
    assert len(manifest["loss_log"]) == manifest["config"]["steps"]
    assert manifest["dataset_sha256"] == load_annotations(smoke / "data").digest()
    with open(run / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["k"] for r in rows] == ["20", "50", "100"]


def test_per_class_rows_match_test_classes(smoke):
    data = load_annotations(smoke / "data")
    present = {p for s in data.test for _, _, p in s.relations}
    with open(smoke / "run" / "per_class.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["class"] for r in rows} == present


def test_ablation_flags(smoke, tmp_path):
    assert main(["train", "--config", "smoke", "--data", str(smoke / "data"), "--out",
                 str(tmp_path / "nogcl"), "--no-gcl", "--steps", "5"]) == 0
    m = json.loads((tmp_path / "nogcl" / "manifest.json").read_text())
    assert len(m["groups"]) == 1 and m["config"]["gcl"] is False
    assert main(["train", "--config", "smoke", "--data", str(smoke / "data"), "--out",
                 str(tmp_path / "nockd"), "--no-ckd", "--steps", "5"]) == 0
    m = json.loads((tmp_path / "nockd" / "manifest.json").read_text())
    assert all(row["ckd"] == 0.0 for row in m["loss_log"])


def test_eval_rejects_mismatched_vocabulary(smoke, tmp_path, capsys):
    other = generate_dataset(SyntheticSpec(scenes=40, object_classes=4, seed=9))
    write_dataset(other, tmp_path / "other")
    assert main(["eval", "--checkpoint", str(smoke / "run" / "checkpoint.bin"),
                 "--data", str(tmp_path / "other")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "none.bin"),
                 "--data", str(smoke / "data")]) == 2
    assert main(["eval", "--checkpoint", str(smoke / "run" / "checkpoint.bin"),
                 "--data", str(smoke / "data"), "--k", "x"]) == 2


def test_bad_config_exit_code(smoke, tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("strategy = 'sideways'\n")
    assert main(["train", "--config", str(cfg), "--data", str(smoke / "data"),
                 "--out", str(tmp_path / "r")]) == 2


def test_nan_loss_exits_3_with_step(smoke, tmp_path, monkeypatch, capsys):
    real = train_mod.gcl_loss
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        report = real(*args, **kwargs)
        calls["n"] += 1
        if calls["n"] == 4:
            report.objective = nc.scale(report.objective, float("nan"))
        return report
    monkeypatch.setattr(train_mod, "gcl_loss", poisoned)
    assert main(["train", "--config", "smoke", "--data", str(smoke / "data"),
                 "--out", str(tmp_path / "r")]) == 3
    assert "step 3" in capsys.readouterr().err


def test_report_renders_figures(smoke, tmp_path, capsys):
    out = tmp_path / "report"
    assert main(["report", "--run", str(smoke / "run"), "--out", str(out)]) == 0
    for name in ("loss_curves.png", "per_class_recall_at_20.png", "group_counts.png"):
        assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "run,k,recall,mean_recall" and len(lines) == 4
    assert main(["report", "--run", str(tmp_path), "--out", str(out)]) == 2


def oracle_model(data):
    """Hand-set weights that read the predicate straight off noise-free features."""
    vocab = data.vocab
    m = len(vocab)
    config = RunConfig(obj_layers=1, rel_layers=1, model_dim=8, heads=2, ffn_dim=8,
                       embed_dim=4, spatial_dim=4, union_dim=m, seed=0)
    model = SceneGraphModel(config, data.features.dim, len(data.object_classes),
                            build_partition(vocab, config))
    synth = data.synthesizer()
    F = data.features.dim
    weight = np.zeros_like(model.union_fc.weight.data)
    for i, name in enumerate(vocab.names):
        k = synth.predicate_index[name]
        weight[:F, i] = synth.subject_dirs[k]
        weight[F:2 * F, i] = synth.object_role_dirs[k]
    model.union_fc.weight.data[:] = weight
    model.union_fc.bias.data[:] = -1.2  # only the matching role pair clears the margin
    last = model.bank.classifiers[-1]
    last.fc.weight.data[:] = 0.0
    last.fc.bias.data[:] = 1.0
    last.union_proj.weight.data[:] = 10.0 * np.eye(m)
    last.union_proj.bias.data[:] = 0.0
    return model, config


def test_oracle_checkpoint_reaches_full_mean_recall(tmp_path, capsys):
    data = generate_dataset(SyntheticSpec(scenes=120, seed=3, noise=0.0, object_signal=0.0))
    write_dataset(data, tmp_path / "data")
    model, config = oracle_model(data)
    save_model(tmp_path / "oracle.bin", model, data, config)
    assert main(["eval", "--checkpoint", str(tmp_path / "oracle.bin"), "--data",
                 str(tmp_path / "data"), "--out", str(tmp_path / "ev")]) == 0
    rows = {r["k"]: r for r in csv.DictReader(open(tmp_path / "ev" / "metrics.csv"))}
    assert float(rows["100"]["mean_recall"]) == 1.0
    assert float(rows["100"]["recall"]) == 1.0


def test_untrained_model_is_at_chance():
    # ten equally frequent predicates; at most 20 pairs per scene, so R@20
    # covers every pair and mR@20 is the mean per-class accuracy
    data = generate_dataset(SyntheticSpec(scenes=600, predicate_classes=10, zipf_exponent=0.0))
    values = []
    for seed in (1, 2, 3, 4, 5):
        config = RunConfig(obj_layers=1, rel_layers=1, model_dim=8, heads=2, ffn_dim=8,
                           embed_dim=4, spatial_dim=4, union_dim=4, seed=seed)
        model = SceneGraphModel(config, data.features.dim, len(data.object_classes),
                                build_partition(data.vocab, config))
        values.append(evaluate(model, data, config, (20,)).mean_recall[20])
    assert abs(np.mean(values) - 0.1) < 0.05, values
