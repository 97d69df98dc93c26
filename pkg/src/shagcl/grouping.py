"""Predicate class grouping and cumulative classification spaces."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, ParseError, VocabError


@dataclass(frozen=True)
class PredicateVocabulary:
    """Predicate classes ordered by training-instance count, most frequent first."""

    names: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.counts):
            raise VocabError("names and counts differ in length")
        if len(set(self.names)) != len(self.names):
            raise VocabError("duplicate predicate name")
        if any(c < 1 for c in self.counts):
            raise VocabError("predicate counts must be >= 1")
        if any(a < b for a, b in zip(self.counts, self.counts[1:])):
            raise VocabError("counts must be sorted non-increasing; use sort_vocabulary")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise VocabError(f"unknown predicate {name!r}") from None

    def count(self, i: int) -> int:
        return self.counts[i]

    def items(self) -> list[tuple[str, int]]:
        return list(zip(self.names, self.counts))


def sort_vocabulary(raw: Iterable[tuple[str, int]]) -> PredicateVocabulary:
    """Sort ``(name, count)`` pairs by descending count; ties keep input order."""
    raw = list(raw)
    seen = set()
    for name, count in raw:
        if name in seen:
            raise VocabError(f"duplicate predicate name {name!r}")
        seen.add(name)
        if int(count) != count or count <= 0:
            raise VocabError(f"count for {name!r} must be a positive integer, got {count!r}")
    ordered = sorted(raw, key=lambda item: -item[1])
    return PredicateVocabulary(tuple(n for n, _ in ordered), tuple(int(c) for _, c in ordered))


def _as_threshold(mu) -> Fraction:
    try:
        value = Fraction(mu) if not isinstance(mu, float) else Fraction(str(mu))
    except (TypeError, ValueError):
        raise ConfigError(f"mu must be a real number, got {mu!r}") from None
    if value < 1:
        raise ConfigError(f"mu must be >= 1, got {mu}")
    return value


@dataclass(frozen=True)
class GroupPartition:
    """Contiguous groups over a vocabulary plus their cumulative prefixes.

    ``groups[k]`` is a ``range`` of vocabulary indices; ``spaces[k]`` is the
    prefix ``range(0, groups[k].stop)``, i.e. the union of groups ``0..k``.
    """

    vocab: PredicateVocabulary
    mu: Fraction
    groups: tuple[range, ...]

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def spaces(self) -> tuple[range, ...]:
        return tuple(range(0, g.stop) for g in self.groups)

    def space_sizes(self) -> list[int]:
        return [g.stop for g in self.groups]

    def group_of(self, class_index: int) -> int:
        for k, g in enumerate(self.groups):
            if class_index in g:
                return k
        raise IndexError(f"class {class_index} outside vocabulary of {len(self.vocab)}")

    def group_names(self, k: int) -> list[str]:
        return [self.vocab.names[i] for i in self.groups[k]]

    def ratio(self, k: int) -> float:
        g = self.groups[k]
        return self.vocab.counts[g.start] / self.vocab.counts[g.stop - 1]


def partition_predicates(vocab: PredicateVocabulary, mu) -> GroupPartition:
    """Split a sorted vocabulary into groups whose max/min count ratio is at most ``mu``.

    Walks the classes in order and opens a new group at class ``i`` whenever the
    count of the current group's first class exceeds ``mu`` times ``Count(i)``
    (strict inequality: equality stays in the group).
    """
    threshold = _as_threshold(mu)
    if len(vocab) == 0:
        raise ConfigError("cannot partition an empty vocabulary")
    starts = [0]
    cur = 0
    for i, count in enumerate(vocab.counts):
        if vocab.counts[cur] > threshold * count:
            cur = i
            starts.append(i)
    bounds = starts + [len(vocab)]
    groups = tuple(range(a, b) for a, b in zip(bounds, bounds[1:]))
    return GroupPartition(vocab, threshold, groups)


def classification_space(partition: GroupPartition, k: int) -> list[str]:
    """Class names handled by classifier ``k`` (1-based), in vocabulary order."""
    if not 1 <= k <= partition.K:
        raise IndexError(f"classifier index {k} outside 1..{partition.K}")
    return list(partition.vocab.names[: partition.groups[k - 1].stop])


def read_counts_csv(path: str | Path) -> list[tuple[str, int]]:
    """Read a ``name,count`` frequency fixture."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["name", "count"]:
            raise ParseError(f"{path}: expected header 'name,count'", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((row["name"].strip(), int(row["count"])))
            except (TypeError, ValueError, AttributeError):
                raise ParseError(f"{path}: bad row {row!r}", line=lineno) from None
    if not rows:
        raise ParseError(f"{path}: no rows")
    return rows


def write_counts_csv(path: str | Path, items: Sequence[tuple[str, int]]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "count"])
        w.writerows(items)
