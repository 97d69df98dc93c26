"""Median re-sampling: per-classifier under-sampling of frequent predicates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .grouping import GroupPartition


def median_count(counts: Sequence[int]) -> int:
    """Count at 1-based position ``ceil(n/2)`` of a descending count list.

    For odd ``n`` this is the ordinary median (9 classes -> the 5th); for even
    ``n`` it is the upper of the two middle counts.
    """
    if len(counts) == 0:
        raise ConfigError("median of an empty classification space")
    return counts[math.ceil(len(counts) / 2) - 1]


def sampling_rates(counts: Sequence[int], median: int) -> list[float]:
    """Keep-probability per class: ``median / count`` above the median, else 1."""
    return [median / c if median < c else 1.0 for c in counts]


@dataclass(frozen=True)
class SamplingPlan:
    """Median and per-class keep rates for each classifier's space."""

    medians: tuple[int, ...]
    rates: tuple[tuple[float, ...], ...]

    @property
    def K(self) -> int:
        return len(self.rates)

    def rate(self, k: int, class_index: int) -> float:
        return self.rates[k][class_index]

    @classmethod
    def from_partition(cls, partition: GroupPartition) -> "SamplingPlan":
        counts = partition.vocab.counts
        medians, rates = [], []
        for size in partition.space_sizes():
            space = counts[:size]
            med = median_count(space)
            medians.append(med)
            rates.append(tuple(sampling_rates(space, med)))
        return cls(tuple(medians), tuple(rates))

    @classmethod
    def uniform(cls, partition: GroupPartition) -> "SamplingPlan":
        """Keep everything (used when re-sampling is switched off)."""
        medians = cls.from_partition(partition).medians
        return cls(medians, tuple((1.0,) * s for s in partition.space_sizes()))


@dataclass(frozen=True)
class SampledEpoch:
    """Boolean membership of every sample in each classifier's set ``D_k``."""

    masks: tuple[np.ndarray, ...]
    seed: int

    @property
    def K(self) -> int:
        return len(self.masks)

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.masks[k])

    def sizes(self) -> list[int]:
        return [int(m.sum()) for m in self.masks]


def draw_epoch(labels: Sequence[int], plan: SamplingPlan, seed: int) -> SampledEpoch:
    """Bernoulli-select each sample into every ``D_k`` with its class's rate.

    ``labels`` are vocabulary indices. A sample enters ``D_k`` only if its
    label lies in classifier ``k``'s space; rate-1 classes are kept in full.
    """
    labels = np.asarray(labels, dtype=np.intp)
    n_classes = len(plan.rates[-1])
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise DataError(f"label {bad} outside vocabulary of {n_classes} classes")
    rng = np.random.default_rng(seed)
    masks = []
    for rates in plan.rates:
        table = np.zeros(n_classes)
        table[: len(rates)] = rates
        u = rng.random(labels.size)
        masks.append(u < table[labels])
    return SampledEpoch(tuple(masks), seed)
