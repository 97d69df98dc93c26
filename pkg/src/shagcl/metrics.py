"""Recall@K and mean Recall@K over ranked triplet predictions.

A triplet is ``(subject index, predicate class, object index)``. Each image
contributes a list of predicted triplets ranked by score and a set of
ground-truth triplets. Mean recall first computes, per predicate class, the
recall of that class's ground truth in every image containing it, averages
those over images, then averages uniformly over classes.
"""

from __future__ import annotations

import csv
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Sequence

from .errors import EmptySampleWarning

Triplet = tuple[int, int, int]


@dataclass
class ImagePredictions:
    """Triplets for one image, sorted by descending score."""

    triplets: list[Triplet]
    scores: list[float]

    def __post_init__(self):
        if len(self.triplets) != len(self.scores):
            raise ValueError("triplets and scores differ in length")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be sorted non-increasing")
        if len(set(self.triplets)) != len(self.triplets):
            raise ValueError("duplicate triplet in one image")

    @classmethod
    def rank(cls, triplets: Sequence[Triplet], scores: Sequence[float]) -> "ImagePredictions":
        """Sort by score descending; equal scores keep input order."""
        order = sorted(range(len(scores)), key=lambda i: -scores[i])
        return cls([tuple(triplets[i]) for i in order], [float(scores[i]) for i in order])

    def top(self, k: int) -> set:
        return set(self.triplets[:k])


def _check_k(k: int):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


def recall_at_k(preds: Sequence[ImagePredictions], gt: Sequence[set], k: int) -> float:
    """Fraction of ground-truth triplets found in the top ``k``, averaged over images."""
    _check_k(k)
    values = []
    for p, g in zip(preds, gt, strict=True):
        if not g:
            warnings.warn("image without ground-truth triplets skipped", EmptySampleWarning,
                          stacklevel=2)
            continue
        values.append(len(p.top(k) & set(g)) / len(g))
    return sum(values) / len(values) if values else 0.0


@dataclass
class MeanRecall:
    value: float
    per_class: dict  # class -> recall averaged over images containing it
    occurrences: dict  # class -> number of ground-truth triplets


def mean_recall_at_k(preds: Sequence[ImagePredictions], gt: Sequence[set], k: int,
                     classes: Sequence[Hashable] | None = None) -> MeanRecall:
    """Per-predicate recall averaged over images, then averaged over classes.

    Only classes with at least one ground-truth occurrence enter the mean. When
    ``classes`` is given the per-class table follows that order.
    """
    _check_k(k)
    sums: dict = defaultdict(float)
    images: dict = defaultdict(int)
    occurrences: dict = defaultdict(int)
    for p, g in zip(preds, gt, strict=True):
        if not g:
            continue
        hits = p.top(k) & set(g)
        by_class: dict = defaultdict(lambda: [0, 0])
        for t in g:
            by_class[t[1]][1] += 1
            if t in hits:
                by_class[t[1]][0] += 1
        for c, (matched, total) in by_class.items():
            sums[c] += matched / total
            images[c] += 1
            occurrences[c] += total
    order = [c for c in classes if c in images] if classes is not None else sorted(images)
    per_class = {c: sums[c] / images[c] for c in order}
    value = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return MeanRecall(value, per_class, {c: occurrences[c] for c in order})


def write_per_class_csv(path, names: Sequence[str], tables: dict, occurrences: dict):
    """Write ``class,count,recall_at_<k>...`` rows for classes that occur in the ground truth.

    ``tables`` maps each ``k`` to a class-index -> recall dict; ``occurrences``
    maps class index -> ground-truth count.
    """
    ks = sorted(tables)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "count"] + [f"recall_at_{k}" for k in ks])
        for idx, name in enumerate(names):
            if idx not in occurrences:
                continue
            w.writerow([name, occurrences[idx]] + [f"{tables[k][idx]:.6f}" for k in ks])
