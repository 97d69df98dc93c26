"""Seeded training and evaluation of the full scene-graph model."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import Dataset, RunConfig, SceneRecord
from .errors import DataError, EmptySampleWarning, NumericalError
from .gcl import build_matching_set, gcl_loss
from .grouping import GroupPartition, PredicateVocabulary, partition_predicates
from .metrics import ImagePredictions, mean_recall_at_k, recall_at_k
from .optim import learning_rate, make_optimizer
from .pipeline import (SceneBatch, SceneGraphModel, all_directed_pairs,
                       generate_proposals, predict_predicates, stack_scenes)
from .sampler import SampledEpoch, SamplingPlan, draw_epoch

log = logging.getLogger(__name__)

DEFAULT_KS = (20, 50, 100)


def build_partition(vocab: PredicateVocabulary, config: RunConfig) -> GroupPartition:
    """Grouped classification spaces, or one space over everything without GCL."""
    if config.gcl:
        return partition_predicates(vocab, config.mu)
    return GroupPartition(vocab, partition_predicates(vocab, config.mu).mu, (range(0, len(vocab)),))


def build_plan(partition: GroupPartition, config: RunConfig) -> SamplingPlan:
    if config.gcl and config.resample:
        return SamplingPlan.from_partition(partition)
    return SamplingPlan.uniform(partition)


@dataclass
class PreparedScene:
    scene: SceneRecord
    visual: np.ndarray
    proposals: list


def prepare_scenes(dataset: Dataset, scenes: Sequence[SceneRecord], config: RunConfig) -> list[PreparedScene]:
    synth = dataset.synthesizer()
    obj_index = {c: i for i, c in enumerate(dataset.object_classes)}
    out = []
    for scene in scenes:
        if scene.num_objects < 2:
            continue
        visual = synth.visual(scene)
        props = generate_proposals(scene, visual, obj_index, config.mode, config.seed,
                                   config.label_noise, config.box_jitter)
        out.append(PreparedScene(scene, visual, props))
    return out


def bucket_batches(items: Sequence[int], sizes: Sequence[int], batch_size: int,
                   rng: np.random.Generator | None) -> list[list[int]]:
    """Group item positions into batches of equal object count.

    With ``rng`` the items and the batch order are shuffled; without it the
    order is deterministic (evaluation).
    """
    order = list(items) if rng is None else [items[i] for i in rng.permutation(len(items))]
    buckets: dict[int, list[int]] = {}
    for i in order:
        buckets.setdefault(sizes[i], []).append(i)
    batches = [b[j:j + batch_size] for n in sorted(buckets) for b in [buckets[n]]
               for j in range(0, len(b), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _batch(prepared: Sequence[PreparedScene], ids: Sequence[int], dataset: Dataset,
           vocab: PredicateVocabulary) -> SceneBatch:
    obj_index = {c: i for i, c in enumerate(dataset.object_classes)}
    pred_index = {p: i for i, p in enumerate(vocab.names)}
    items = [prepared[i] for i in ids]
    return stack_scenes([p.scene for p in items], [p.visual for p in items],
                        [p.proposals for p in items], obj_index, pred_index)


@dataclass
class TrainResult:
    model: SceneGraphModel
    partition: GroupPartition
    plan: SamplingPlan
    loss_log: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def _relation_index(prepared: Sequence[PreparedScene], vocab: PredicateVocabulary):
    """Global relation ids per scene (in-vocabulary relations only) and their labels."""
    pred_index = {p: i for i, p in enumerate(vocab.names)}
    ids, labels = [], []
    for p in prepared:
        own = [pred_index[r[2]] for r in p.scene.relations if r[2] in pred_index]
        ids.append(np.arange(len(labels), len(labels) + len(own)))
        labels.extend(own)
    return ids, np.array(labels, dtype=np.intp)


def train_model(dataset: Dataset, config: RunConfig,
                on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Run ``config.steps`` optimisation steps on the training split."""
    config.validate()
    start = time.perf_counter()
    vocab = dataset.vocab
    partition = build_partition(vocab, config)
    plan = build_plan(partition, config)
    matching = build_matching_set(partition.K, config.strategy)
    alpha = config.alpha if (config.gcl and config.ckd) else 0.0
    model = SceneGraphModel(config, dataset.features.dim, len(dataset.object_classes), partition)
    params = model.parameters()
    opt = make_optimizer(config.optimizer, params, config.lr, config.momentum, config.weight_decay)

    prepared = prepare_scenes(dataset, dataset.train, config)
    prepared = [p for p in prepared if p.scene.relations]
    if not prepared:
        raise DataError("no training scenes with relations")
    rel_index, labels = _relation_index(prepared, vocab)
    sizes = [p.scene.num_objects for p in prepared]
    positions = list(range(len(prepared)))
    object_loss = config.mode != "predcls"

    epoch, batches, cursor, masks = -1, [], 0, None
    history = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySampleWarning)
        for step in range(config.steps):
            if cursor >= len(batches):
                epoch += 1
                rng = np.random.default_rng([config.seed, epoch])
                batches = bucket_batches(positions, sizes, config.batch_size, rng)
                masks = draw_epoch(labels, plan, config.seed + epoch).masks
                cursor = 0
            ids = batches[cursor]
            cursor += 1
            batch = _batch(prepared, ids, dataset, vocab)
            rel_ids = np.concatenate([rel_index[i] for i in ids])
            sub_epoch = SampledEpoch(tuple(m[rel_ids] for m in masks), config.seed + epoch)

            encoded = model.encode(batch)
            pairs = model.relation_pairs(batch, encoded)
            report = gcl_loss(model.bank, pairs, sub_epoch, matching, alpha)
            objective = report.objective
            obj_term = 0.0
            if object_loss:
                ol = model.object_loss(batch, encoded)
                obj_term = ol.item()
                objective = nc.add(objective, ol)
            value = objective.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at step {step}", step=step)
            model.zero_grad()
            nc.backward(objective)
            lr = learning_rate(step, config.steps, config.lr, config.warmup_fraction,
                               config.decay_at, config.decay_factor)
            opt.step(lr)
            row = {"step": step, "epoch": epoch, "lr": lr, "pco": report.pco, "ckd": report.ckd,
                   "object": obj_term, "total": value}
            history.append(row)
            if on_step is not None:
                on_step(row)
            if config.log_every and step % config.log_every == 0:
                log.info("step %d  pco %.4f  ckd %.4f  total %.4f", step, report.pco,
                         report.ckd, value)
    return TrainResult(model, partition, plan, history, time.perf_counter() - start)


@dataclass
class EvalResult:
    ks: tuple[int, ...]
    recall: dict[int, float]
    mean_recall: dict[int, float]
    per_class: dict[int, dict]
    occurrences: dict
    class_names: list[str]

    def summary_rows(self) -> list[tuple[int, float, float]]:
        return [(k, self.recall[k], self.mean_recall[k]) for k in self.ks]


def predict_scenes(model: SceneGraphModel, dataset: Dataset, prepared: Sequence[PreparedScene],
                   vocab: PredicateVocabulary, batch_size: int = 32):
    """Ranked triplets and ground-truth sets for each prepared scene, in input order."""
    extra = [p for p in dataset.predicate_classes if p not in set(vocab.names)]
    names = list(vocab.names) + extra
    index = {p: i for i, p in enumerate(names)}
    sizes = [p.scene.num_objects for p in prepared]
    preds: list = [None] * len(prepared)
    gts: list = [None] * len(prepared)
    with nc.no_grad():
        for ids in bucket_batches(list(range(len(prepared))), sizes, batch_size, None):
            batch = _batch(prepared, ids, dataset, vocab)
            encoded = model.encode(batch)
            pairs = all_directed_pairs(batch.num_scenes, batch.num_objects)
            rel = model.pair_batch(batch, encoded, pairs)
            top, probs = predict_predicates(rel, model.bank)
            scores = probs.max(axis=1)
            labels_ok = (encoded.final_labels == batch.gt_labels)
            for b, i in enumerate(ids):
                rows = np.flatnonzero(pairs[:, 0] == b)
                triplets = []
                for r in rows:
                    s, o = int(pairs[r, 1]), int(pairs[r, 2])
                    pred = int(top[r]) if labels_ok[b, s] and labels_ok[b, o] else -1
                    triplets.append((s, pred, o))
                preds[i] = ImagePredictions.rank(triplets, scores[rows].tolist())
                gts[i] = {(s, index[p], o) for s, o, p in prepared[i].scene.relations}
    return preds, gts, names


def evaluate(model: SceneGraphModel, dataset: Dataset, config: RunConfig,
             ks: Sequence[int] = DEFAULT_KS, vocab: PredicateVocabulary | None = None) -> EvalResult:
    vocab = vocab or dataset.vocab
    prepared = prepare_scenes(dataset, dataset.test, config)
    preds, gts, names = predict_scenes(model, dataset, prepared, vocab)
    ks = tuple(sorted(set(int(k) for k in ks)))
    recall, mean_recall, per_class = {}, {}, {}
    occurrences: dict = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySampleWarning)
        for k in ks:
            recall[k] = recall_at_k(preds, gts, k)
            mr = mean_recall_at_k(preds, gts, k, classes=range(len(names)))
            mean_recall[k] = mr.value
            per_class[k] = mr.per_class
            occurrences = mr.occurrences
    return EvalResult(ks, recall, mean_recall, per_class, occurrences, names)


# ---------------------------------------------------------------- checkpoints

def model_meta(result_model: SceneGraphModel, dataset: Dataset, config: RunConfig) -> dict:
    partition = result_model.bank.partition
    return {
        "config": config.to_dict(),
        "feature_dim": result_model.feature_dim,
        "object_classes": list(dataset.object_classes),
        "vocab": [[n, c] for n, c in partition.vocab.items()],
        "group_stops": [g.stop for g in partition.groups],
        "mu": str(partition.mu),
    }


def save_model(path, model: SceneGraphModel, dataset: Dataset, config: RunConfig):
    save_checkpoint(path, model.state_dict(), model_meta(model, dataset, config))


def load_model(path) -> tuple[SceneGraphModel, RunConfig, dict]:
    from fractions import Fraction

    state, meta = load_checkpoint(path)
    config = RunConfig.from_dict(meta["config"])
    vocab = PredicateVocabulary(tuple(n for n, _ in meta["vocab"]), tuple(c for _, c in meta["vocab"]))
    stops = meta["group_stops"]
    groups = tuple(range(a, b) for a, b in zip([0] + stops[:-1], stops))
    partition = GroupPartition(vocab, Fraction(meta["mu"]), groups)
    model = SceneGraphModel(config, meta["feature_dim"], len(meta["object_classes"]), partition)
    model.load_state_dict(state)
    return model, config, meta


def check_compatible(meta: dict, dataset: Dataset):
    """Raise DataError if the checkpoint's classes don't fit the dataset."""
    if list(meta["object_classes"]) != list(dataset.object_classes):
        raise DataError("checkpoint object classes differ from the dataset's")
    missing = [n for n, _ in meta["vocab"] if n not in set(dataset.predicate_classes)]
    if missing:
        raise DataError(f"checkpoint predicates not in dataset: {missing}")
    if meta["feature_dim"] != dataset.features.dim:
        raise DataError("checkpoint feature dimension differs from the dataset's")
