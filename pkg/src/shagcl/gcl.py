"""Group collaborative learning decoder: nested classifiers and their losses.

Classifier ``k`` (1-based) scores the first ``|P'_k|`` predicates of the
vocabulary. Because every space is a prefix of the next, a vocabulary index is
also a valid index into any classifier whose space contains it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, EmptySampleWarning, ShapeError
from .grouping import GroupPartition
from .layers import Linear
from .sampler import SampledEpoch

STRATEGIES = ("adjacent", "topdown")


@dataclass
class RelationBatch:
    """Stacked subject/object pairs: one row per directed pair."""

    subject: nc.Tensor  # [R, d] refined subject features
    object: nc.Tensor  # [R, d] refined object features
    union: nc.Tensor  # [R, u] union features
    labels: np.ndarray  # [R] vocabulary indices, -1 when unknown

    def __len__(self):
        return self.subject.shape[0]


class PredicateClassifier(nc.Module):
    """Logits ``FC([x_s, x_o]) * Proj(u)`` over one classification space."""

    def __init__(self, pair_dim: int, union_dim: int, num_classes: int, rng):
        self.fc = Linear(pair_dim, num_classes, rng)
        # the gate starts near 1 so early logits follow the pair features
        self.union_proj = Linear(union_dim, num_classes, rng, bias_init=1.0)

    @property
    def num_classes(self) -> int:
        return self.fc.out_dim

    def __call__(self, pairs: RelationBatch) -> nc.Tensor:
        joint = nc.concat([pairs.subject, pairs.object], axis=-1)
        return nc.mul(self.fc(joint), self.union_proj(pairs.union))


class ClassifierBank(nc.Module):
    def __init__(self, partition: GroupPartition, feature_dim: int, union_dim: int,
                 rng: np.random.Generator):
        self.partition = partition
        self.classifiers = [PredicateClassifier(2 * feature_dim, union_dim, size, rng)
                            for size in partition.space_sizes()]

    @property
    def K(self) -> int:
        return len(self.classifiers)

    def sizes(self) -> list[int]:
        return [c.num_classes for c in self.classifiers]

    def classifier(self, k: int) -> PredicateClassifier:
        if not 1 <= k <= self.K:
            raise IndexError(f"classifier index {k} outside 1..{self.K}")
        return self.classifiers[k - 1]

    def logits(self, k: int, pairs: RelationBatch) -> nc.Tensor:
        return self.classifier(k)(pairs)

    def all_logits(self, pairs: RelationBatch) -> list[nc.Tensor]:
        return [c(pairs) for c in self.classifiers]


def classifier_probs(bank: ClassifierBank, k: int, pairs: RelationBatch) -> nc.Tensor:
    return nc.softmax(bank.logits(k, pairs), axis=-1)


def slice_logits(logits_n: nc.Tensor, size_m: int) -> nc.Tensor:
    return nc.narrow(logits_n, size_m)


def slice_distribution(bank: ClassifierBank, n: int, m: int, pairs: RelationBatch) -> nc.Tensor:
    """Classifier ``n``'s prediction restricted and renormalised to classifier ``m``'s space."""
    if not 1 <= m < n <= bank.K:
        raise IndexError(f"slice needs 1 <= m < n <= {bank.K}, got m={m}, n={n}")
    return nc.softmax(slice_logits(bank.logits(n, pairs), bank.sizes()[m - 1]), axis=-1)


@dataclass(frozen=True)
class MatchingSet:
    pairs: tuple[tuple[int, int], ...]
    strategy: str

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def build_matching_set(K: int, strategy: str = "topdown") -> MatchingSet:
    """Teacher/student pairs ``(m, n)``, ``m < n``, for knowledge distillation.

    ``adjacent`` links each classifier to its direct predecessor; ``topdown``
    links it to every predecessor.
    """
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if strategy == "adjacent":
        pairs = tuple((k, k + 1) for k in range(1, K))
    elif strategy == "topdown":
        pairs = tuple((m, n) for n in range(2, K + 1) for m in range(1, n))
    else:
        raise ConfigError(f"unknown matching strategy {strategy!r}; use {STRATEGIES}")
    return MatchingSet(pairs, strategy)


def _mean_rows(values: nc.Tensor, rows: np.ndarray) -> nc.Tensor:
    return nc.mean(nc.take_rows(values, rows))


def pco_from_logits(logits: list[nc.Tensor], labels: np.ndarray, epoch: SampledEpoch) -> nc.Tensor:
    if epoch.K != len(logits):
        raise ShapeError(f"epoch has {epoch.K} sample sets for {len(logits)} classifiers")
    total = None
    for k, lg in enumerate(logits):
        rows = epoch.indices(k)
        if rows.size == 0:
            warnings.warn(f"D_{k + 1} is empty; its cross-entropy term is skipped",
                          EmptySampleWarning, stacklevel=3)
            continue
        if labels[rows].max() >= lg.shape[1] or labels[rows].min() < 0:
            raise ShapeError(f"label outside classifier {k + 1}'s space")
        sub = nc.take_rows(lg, rows)
        nll = nc.neg(nc.pick(nc.log_softmax(sub, axis=-1), labels[rows]))
        term = nc.mean(nll)
        total = term if total is None else nc.add(total, term)
    return total if total is not None else nc.Tensor(0.0)


def pco_loss(bank: ClassifierBank, pairs: RelationBatch, epoch: SampledEpoch) -> nc.Tensor:
    """Sum over classifiers of the mean cross-entropy on each classifier's sampled set."""
    return pco_from_logits(bank.all_logits(pairs), np.asarray(pairs.labels), epoch)


def ckd_from_logits(logits: list[nc.Tensor], matching: MatchingSet, epoch: SampledEpoch) -> nc.Tensor:
    if len(matching) == 0:
        return nc.Tensor(0.0)
    total = None
    for m, n in matching:
        rows = epoch.indices(n - 1)
        if rows.size == 0:
            warnings.warn(f"D_{n} is empty; distillation term ({m},{n}) is skipped",
                          EmptySampleWarning, stacklevel=3)
            continue
        size_m = logits[m - 1].shape[1]
        teacher_logits = logits[m - 1].data[rows]
        z = teacher_logits - teacher_logits.max(axis=1, keepdims=True)
        teacher = np.exp(z)
        teacher /= teacher.sum(axis=1, keepdims=True)
        student = nc.log_softmax(slice_logits(nc.take_rows(logits[n - 1], rows), size_m), axis=-1)
        per_pair = nc.neg(nc.sum(nc.mul(student, nc.Tensor(teacher)), axis=-1))
        term = nc.mean(per_pair)
        total = term if total is None else nc.add(total, term)
    if total is None:
        return nc.Tensor(0.0)
    return nc.scale(total, 1.0 / len(matching))


def ckd_loss(bank: ClassifierBank, matching: MatchingSet, pairs: RelationBatch,
             epoch: SampledEpoch) -> nc.Tensor:
    """Mean over matched ``(m, n)`` of ``-sum w_m log w_n_sliced`` on ``D_n``.

    The teacher distribution ``w_m`` is a constant target: no gradient reaches
    classifier ``m`` through this loss.
    """
    if any(n > bank.K for _, n in matching):
        raise ConfigError(f"matching set refers to classifiers beyond K={bank.K}")
    return ckd_from_logits(bank.all_logits(pairs), matching, epoch)


@dataclass
class LossReport:
    pco: float
    ckd: float
    total: float
    alpha: float
    objective: nc.Tensor | None = None


def combine(pco: nc.Tensor, ckd: nc.Tensor, alpha: float) -> LossReport:
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    objective = nc.add(pco, nc.scale(ckd, alpha)) if alpha else pco
    return LossReport(pco.item(), ckd.item(), objective.item(), alpha, objective)


def gcl_loss(bank: ClassifierBank, pairs: RelationBatch, epoch: SampledEpoch,
             matching: MatchingSet, alpha: float = 1.0) -> LossReport:
    """Cross-entropy over all classifiers plus ``alpha`` times the distillation loss."""
    logits = bank.all_logits(pairs)
    labels = np.asarray(pairs.labels)
    pco = pco_from_logits(logits, labels, epoch)
    ckd = ckd_from_logits(logits, matching, epoch) if alpha else nc.Tensor(0.0)
    return combine(pco, ckd, alpha)
