import math
import warnings

import numpy as np
import pytest

from shagcl import numcore as nc
from shagcl.errors import ConfigError, EmptySampleWarning
from shagcl.gcl import (RelationBatch, build_matching_set, ckd_from_logits, ckd_loss,
                        classifier_probs, combine, gcl_loss, pco_from_logits, pco_loss,
                        slice_distribution)
from shagcl.sampler import SampledEpoch, SamplingPlan, draw_epoch

from conftest import random_bank, random_pairs


def full_epoch(n, K):
    return SampledEpoch(tuple(np.ones(n, dtype=bool) for _ in range(K)), 0)


def logits(*rows):
    return nc.Tensor(np.array(rows, dtype=float))


def test_probability_closed_form():
    p = nc.softmax(logits([math.log(3), 0.0])).data
    np.testing.assert_allclose(p, [[0.75, 0.25]])


def test_classifier_probs_sum_to_one(rng):
    bank, _ = random_bank(rng, [100, 40, 12, 11, 3])
    pairs = random_pairs(rng, 7, 4, 3, 5)
    for k in (1, 2):
        np.testing.assert_allclose(classifier_probs(bank, k, pairs).data.sum(axis=1), 1.0,
                                   atol=1e-12)


def test_classifier_spaces_are_nested(rng):
    bank, part = random_bank(rng, [900, 300, 100, 30, 10, 3], mu=2)
    sizes = bank.sizes()
    assert sizes == part.space_sizes() and sizes == sorted(set(sizes)) and sizes[-1] == 6


def test_pco_closed_forms():
    labels = np.array([0])
    assert pco_from_logits([logits([0.0, 0, 0, 0])], labels, full_epoch(1, 1)).item() == \
        pytest.approx(math.log(4), abs=1e-12)
    assert pco_from_logits([logits([1000.0, 0])], labels, full_epoch(1, 1)).item() == \
        pytest.approx(0.0, abs=1e-12)


def test_pco_two_classifiers_hand_set():
    l1 = logits([0.0, 0.0], [math.log(3), 0.0])
    l2 = logits([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    labels = np.array([1, 0])
    epoch = SampledEpoch((np.array([True, True]), np.array([False, True])), 0)
    expected = (math.log(2) - math.log(0.75)) / 2 + math.log(3)
    assert pco_from_logits([l1, l2], labels, epoch).item() == pytest.approx(expected, abs=1e-12)


def test_ckd_closed_forms():
    q = build_matching_set(2, "adjacent")
    uniform = [logits([0.0, 0.0]), logits([0.0, 0.0, 5.0])]
    assert ckd_from_logits(uniform, q, full_epoch(1, 2)).item() == pytest.approx(math.log(2))
    hard = [logits([1000.0, 0.0]), logits([0.0, 0.0, -3.0])]
    assert ckd_from_logits(hard, q, full_epoch(1, 2)).item() == pytest.approx(math.log(2))
    assert ckd_from_logits([logits([1.0, 2.0])], build_matching_set(1), full_epoch(1, 1)).item() == 0


def test_ckd_includes_labels_outside_teacher_space():
    q = build_matching_set(2, "adjacent")
    lg = [logits([0.0, 0.0]), logits([0.0, 0.0, 9.0])]
    # the single pair lies in D_2 only; its label (2) is outside classifier 1's space
    epoch = SampledEpoch((np.array([False]), np.array([True])), 0)
    assert ckd_from_logits(lg, q, epoch).item() == pytest.approx(math.log(2))


def test_slice_distribution(rng):
    bank, _ = random_bank(rng, [100, 40, 12, 11, 3])
    pairs = random_pairs(rng, 6, 4, 3, 5)
    sliced = slice_distribution(bank, 2, 1, pairs).data
    full = classifier_probs(bank, 2, pairs).data[:, :2]
    np.testing.assert_allclose(sliced, full / full.sum(axis=1, keepdims=True), atol=1e-12)
    with pytest.raises(IndexError):
        slice_distribution(bank, 1, 1, pairs)
    with pytest.raises(IndexError):
        slice_distribution(bank, 3, 1, pairs)


def test_matching_sets():
    assert build_matching_set(4, "adjacent").pairs == ((1, 2), (2, 3), (3, 4))
    assert len(build_matching_set(4, "topdown")) == 6
    assert len(build_matching_set(1, "topdown")) == len(build_matching_set(1, "adjacent")) == 0
    assert set(build_matching_set(2, "topdown")) == set(build_matching_set(2, "adjacent"))
    with pytest.raises(ConfigError):
        build_matching_set(3, "sideways")
    with pytest.raises(ConfigError):
        build_matching_set(0)


def test_combine():
    rep = combine(nc.Tensor(2.0), nc.Tensor(0.5), 1.0)
    assert rep.total == 2.5
    rep = combine(nc.Tensor(2.0), nc.Tensor(0.5), 0.0)
    assert rep.total == 2.0
    with pytest.raises(ConfigError):
        combine(nc.Tensor(2.0), nc.Tensor(0.5), -1)


def test_teacher_receives_no_distillation_gradient(rng):
    bank, part = random_bank(rng, [100, 40, 12, 11, 3])
    pairs = random_pairs(rng, 20, 4, 3, 5)
    epoch = full_epoch(20, 2)
    nc.backward(ckd_loss(bank, build_matching_set(2), pairs, epoch))
    teacher = bank.classifier(1).parameters()
    student = bank.classifier(2).parameters()
    assert all(p.grad is None or not p.grad.any() for p in teacher)
    assert any(p.grad is not None and p.grad.any() for p in student)


def test_losses_non_negative(rng):
    for trial in range(20):
        bank, part = random_bank(rng, [500, 200, 40, 30, 8, 2], mu=3)
        pairs = random_pairs(rng, 15, 4, 3, 6)
        epoch = draw_epoch(pairs.labels, SamplingPlan.from_partition(part), trial)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptySampleWarning)
            rep = gcl_loss(bank, pairs, epoch, build_matching_set(part.K))
        assert rep.pco >= 0 and rep.ckd >= 0


def test_empty_sample_set_warns_and_skips(rng):
    bank, _ = random_bank(rng, [100, 40, 12, 11, 3])
    pairs = random_pairs(rng, 3, 4, 3, 5)
    epoch = SampledEpoch((np.zeros(3, dtype=bool), np.ones(3, dtype=bool)), 0)
    with pytest.warns(EmptySampleWarning):
        value = pco_loss(bank, pairs, epoch).item()
    only_second = pco_from_logits([bank.logits(2, pairs)], pairs.labels,
                                  SampledEpoch((np.ones(3, dtype=bool),), 0)).item()
    assert value == pytest.approx(only_second)


def test_relation_batch_length(rng):
    pairs = random_pairs(rng, 4, 2, 2, 3)
    assert isinstance(pairs, RelationBatch) and len(pairs) == 4
