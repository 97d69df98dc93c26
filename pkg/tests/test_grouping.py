from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shagcl.errors import ConfigError, ParseError, VocabError
from shagcl.grouping import (PredicateVocabulary, classification_space, partition_predicates,
                             read_counts_csv, sort_vocabulary, write_counts_csv)

from conftest import vocab_from_counts


def groups(counts, mu):
    return [list(g) for g in partition_predicates(vocab_from_counts(counts), mu).groups]


def test_worked_example_two_groups():
    # 100 > 4*40 is false; 100 > 4*12 opens group 2 at p3; 12 > 4*3 is false
    assert groups([100, 40, 12, 11, 3], 4) == [[0, 1], [2, 3, 4]]


def test_boundary_is_strict():
    assert groups([100, 25], 4) == [[0, 1]]
    assert groups([100, 24], 4) == [[0], [1]]


def test_singleton_and_two_class_split():
    assert groups([10], 7) == [[0]]
    assert groups([100, 10], 4) == [[0], [1]]


def test_mu_one_on_strictly_decreasing_counts_gives_singletons():
    assert len(groups([9, 7, 5, 3, 1], 1)) == 5


def test_mu_below_one_rejected():
    with pytest.raises(ConfigError):
        partition_predicates(vocab_from_counts([3, 2]), 0.5)


def test_float_mu_uses_decimal_value():
    # 0.1 is not exact in binary; the threshold is read as the decimal 2.1
    assert groups([21, 10], 2.1) == [[0, 1]]
    assert partition_predicates(vocab_from_counts([5]), 2.1).mu == Fraction(21, 10)


def test_classification_spaces_are_prefixes():
    part = partition_predicates(vocab_from_counts([100, 40, 12, 11, 3]), 4)
    assert classification_space(part, 1) == ["p0", "p1"]
    assert classification_space(part, 2) == ["p0", "p1", "p2", "p3", "p4"]
    assert part.space_sizes() == [2, 5]
    with pytest.raises(IndexError):
        classification_space(part, 3)
    with pytest.raises(IndexError):
        classification_space(part, 0)


def test_vocabulary_validation():
    with pytest.raises(VocabError):
        PredicateVocabulary(("a", "b"), (1, 2))
    with pytest.raises(VocabError):
        sort_vocabulary([("a", 3), ("a", 2)])
    with pytest.raises(VocabError):
        sort_vocabulary([("a", 3), ("b", 0)])


def test_sort_is_stable_on_ties():
    v = sort_vocabulary([("x", 2), ("y", 5), ("z", 2)])
    assert v.names == ("y", "x", "z")


def test_counts_csv_roundtrip(tmp_path):
    path = tmp_path / "counts.csv"
    write_counts_csv(path, [("on", 50), ("has", 20)])
    assert read_counts_csv(path) == [("on", 50), ("has", 20)]
    bad = tmp_path / "bad.csv"
    bad.write_text("label,n\non,3\n")
    with pytest.raises(ParseError):
        read_counts_csv(bad)


counts_strategy = st.lists(st.integers(1, 10_000), min_size=1, max_size=60).map(
    lambda xs: sorted(xs, reverse=True))


@settings(max_examples=200, deadline=None)
@given(counts_strategy, st.integers(2, 20))
def test_ratio_bound_and_cover(counts, mu2):
    mu = Fraction(mu2, 2)
    gs = groups(counts, mu)
    assert [i for g in gs for i in g] == list(range(len(counts)))
    for g in gs:
        assert max(counts[i] for i in g) <= mu * min(counts[i] for i in g)


@settings(max_examples=200, deadline=None)
@given(counts_strategy, st.integers(2, 20), st.integers(0, 10))
def test_larger_mu_never_adds_groups(counts, mu2, extra):
    small, large = Fraction(mu2, 2), Fraction(mu2 + extra, 2)
    assert len(groups(counts, large)) <= len(groups(counts, small))


@settings(max_examples=100, deadline=None)
@given(counts_strategy, st.randoms())
def test_tied_names_do_not_move_boundaries(counts, random):
    names = [f"n{i}" for i in range(len(counts))]
    shuffled = list(zip(names, counts))
    random.shuffle(shuffled)
    a = partition_predicates(sort_vocabulary(zip(names, counts)), 4)
    b = partition_predicates(sort_vocabulary(shuffled), 4)
    assert a.groups == b.groups
