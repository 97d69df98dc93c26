"""Command-line entry point: ``shagcl {group,gen-data,train,eval,report}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .dataio import (RunConfig, dump_config, generate_dataset, load_annotations,
                     read_config, read_data_spec, synthetic_spec_from_dict, write_dataset)
from .errors import ConfigError, DataError, NumericalError, ParseError, VocabError
from .grouping import partition_predicates, read_counts_csv, sort_vocabulary
from .sampler import SamplingPlan

log = logging.getLogger("shagcl")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def parse_ks(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise UsageError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise UsageError("--k values must be positive")
    return ks


# ---------------------------------------------------------------- group

def cmd_group(args) -> int:
    if args.counts:
        vocab = sort_vocabulary(read_counts_csv(args.counts))
    elif args.data:
        vocab = load_annotations(args.data).vocab
    else:
        raise UsageError("group needs --counts or --data")
    partition = partition_predicates(vocab, args.mu)
    plan = SamplingPlan.from_partition(partition)
    out = sys.stdout
    print(f"mu={args.mu}  classes={len(vocab)}  groups={partition.K}", file=out)
    for k, g in enumerate(partition.groups):
        counts = vocab.counts[g.start:g.stop]
        print(f"group {k + 1}: {len(g)} classes  counts {counts[0]}..{counts[-1]}  "
              f"max/min {partition.ratio(k):.3f}", file=out)
        print("  " + " ".join(partition.group_names(k)), file=out)
    print("", file=out)
    print("sampling rates (rows: classes, columns: classifiers)", file=out)
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    w.writerow(["class", "count"] + [f"C{k + 1}" for k in range(partition.K)])
    w.writerow(["median", ""] + [str(m) for m in plan.medians])
    for i, (name, count) in enumerate(vocab.items()):
        w.writerow([name, count] + [f"{r[i]:.4f}" if i < len(r) else "" for r in plan.rates])
    return EXIT_OK


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(args) -> int:
    raw = {}
    if args.config:
        raw = dataclasses.asdict(read_data_spec(args.config))
    for key, value in (("seed", args.seed), ("scenes", args.scenes),
                       ("predicate_classes", args.predicates), ("zipf_exponent", args.zipf)):
        if value is not None:
            raw[key] = value
    spec = synthetic_spec_from_dict(raw)
    dataset = generate_dataset(spec)
    out = write_dataset(dataset, args.out)
    print(f"wrote {len(dataset.train)} train / {len(dataset.test)} test scenes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train / eval

def _load_config(args) -> RunConfig:
    config = read_config(args.config) if args.config else RunConfig()
    changes = dict(mode=args.mode, mu=args.mu, alpha=args.alpha, strategy=args.strategy,
                   seed=args.seed, steps=args.steps)
    if args.no_gcl:
        changes["gcl"] = False
    if args.no_ckd:
        changes["ckd"] = False
    return config.replace(**changes).validate()


def write_metrics(out_dir: Path, result) -> tuple[Path, Path]:
    from .metrics import write_per_class_csv

    summary = out_dir / "metrics.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "recall", "mean_recall"])
        for k, r, mr in result.summary_rows():
            w.writerow([k, f"{r:.6f}", f"{mr:.6f}"])
    per_class = out_dir / "per_class.csv"
    write_per_class_csv(per_class, result.class_names, result.per_class, result.occurrences)
    return summary, per_class


def print_metrics(result):
    print("k\tR@k\tmR@k")
    for k, r, mr in result.summary_rows():
        print(f"{k}\t{r:.4f}\t{mr:.4f}")


def cmd_train(args) -> int:
    from .train import evaluate, save_model, train_model

    config = _load_config(args)
    ks = parse_ks(args.k)
    dataset = load_annotations(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    result = train_model(dataset, config)
    save_model(out / "checkpoint.bin", result.model, dataset, config)
    (out / "config.toml").write_text(dump_config(config))
    with open(out / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "lr", "pco", "ckd", "object", "total"])
        for row in result.loss_log:
            w.writerow([row["step"], row["epoch"], f"{row['lr']:.6g}", f"{row['pco']:.8f}",
                        f"{row['ckd']:.8f}", f"{row['object']:.8f}", f"{row['total']:.8f}"])
    metrics = evaluate(result.model, dataset, config, ks)
    write_metrics(out, metrics)
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "seed": config.seed,
        "dataset": str(args.data),
        "dataset_sha256": dataset.digest(),
        "vocab": [[n, c] for n, c in result.partition.vocab.items()],
        "groups": [[g.start, g.stop] for g in result.partition.groups],
        "medians": list(result.plan.medians),
        "loss_log": result.loss_log,
        "metrics": {str(k): {"recall": metrics.recall[k], "mean_recall": metrics.mean_recall[k]}
                    for k in metrics.ks},
        "wall_clock_seconds": time.perf_counter() - started,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    print_metrics(metrics)
    print(f"run written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import check_compatible, evaluate, load_model

    ks = parse_ks(args.k)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    model, config, meta = load_model(ckpt)
    dataset = load_annotations(args.data)
    check_compatible(meta, dataset)
    result = evaluate(model, dataset, config, ks, vocab=model.bank.partition.vocab)
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out, result)
    print_metrics(result)
    return EXIT_OK


# ---------------------------------------------------------------- report

def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    from . import plotting

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = {}
    for run in args.run:
        path = Path(run)
        if not (path / "manifest.json").exists():
            raise UsageError(f"{path} is not a run directory (no manifest.json)")
        runs[path.name] = path
    losses, recalls, summary = {}, {}, []
    manifest = None
    classes: list[str] = []
    for name, path in runs.items():
        manifest = json.loads((path / "manifest.json").read_text())
        losses[name] = [{k: float(v) for k, v in r.items()} for r in _read_csv(path / "loss_log.csv")]
        for row in _read_csv(path / "metrics.csv"):
            summary.append((name, int(row["k"]), row["recall"], row["mean_recall"]))
        per_class = _read_csv(path / "per_class.csv")
        col = f"recall_at_{args.k}"
        if per_class and col not in per_class[0]:
            raise UsageError(f"{path}/per_class.csv has no column {col}")
        classes = classes or [r["class"] for r in per_class]
        table = {r["class"]: float(r[col]) for r in per_class}
        recalls[name] = [table.get(c, 0.0) for c in classes]
    stops = [b for _, b in manifest["groups"]] if manifest else []
    figures = [
        plotting.loss_curves(losses, out / "loss_curves.png"),
        plotting.per_class_recall(classes, recalls, out / f"per_class_recall_at_{args.k}.png",
                                  args.k, stops if len(runs) == 1 else ()),
    ]
    if manifest and "vocab" in manifest:
        names, counts = zip(*manifest["vocab"])
        figures.append(plotting.group_counts(names, counts, stops, out / "group_counts.png"))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "k", "recall", "mean_recall"])
        w.writerows(summary)
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(["run", "k", "R@k", "mR@k"])
    w.writerows(summary)
    for f in figures:
        print(f"figure: {f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shagcl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("group", help="show predicate groups and sampling rates")
    g.add_argument("--counts", help="CSV with header name,count")
    g.add_argument("--data", help="dataset directory (counts from its training split)")
    g.add_argument("--mu", type=float, default=4.0)
    g.set_defaults(func=cmd_group)

    d = sub.add_parser("gen-data", help="generate a synthetic long-tailed dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--config", help="TOML file with dataset settings")
    d.add_argument("--seed", type=int)
    d.add_argument("--scenes", type=int)
    d.add_argument("--predicates", type=int)
    d.add_argument("--zipf", type=float)
    d.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and evaluate it on the test split")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="TOML run configuration")
    t.add_argument("--mode", choices=["predcls", "sgcls", "sgdet_sim"])
    t.add_argument("--mu", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--strategy", choices=["adjacent", "topdown"])
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--no-gcl", action="store_true", help="single classifier, plain cross-entropy")
    t.add_argument("--no-ckd", action="store_true", help="keep all classifiers, drop distillation")
    t.add_argument("--k", default="20,50,100")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--k", default="20,50,100")
    e.add_argument("--out", help="directory for metrics.csv and per_class.csv")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="plot and tabulate one or more runs")
    r.add_argument("--run", action="append", required=True, help="run directory (repeatable)")
    r.add_argument("--out", required=True)
    r.add_argument("--k", type=int, default=20)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc} (step {exc.step})", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, DataError, ParseError, VocabError,
            FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
