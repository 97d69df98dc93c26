import numpy as np
import pytest

from shagcl import numcore as nc
from shagcl.gcl import ClassifierBank, RelationBatch
from shagcl.grouping import PredicateVocabulary, partition_predicates

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str, status: str | None = None):
    status = status or ("PASS" if ok else "FAIL")
    line = f"criterion {number:2d}: {status}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def zipf_counts(rng, m, s=1.2, top=None):
    top = top if top is not None else int(rng.integers(50, 5000))
    ranks = np.arange(1, m + 1)
    raw = top * ranks ** (-s) * rng.uniform(0.7, 1.3, size=m)
    return sorted((max(1, int(c)) for c in raw), reverse=True)


def vocab_from_counts(counts):
    return PredicateVocabulary(tuple(f"p{i}" for i in range(len(counts))), tuple(counts))


def random_bank(rng, counts, mu=4, feature_dim=4, union_dim=3):
    partition = partition_predicates(vocab_from_counts(counts), mu)
    return ClassifierBank(partition, feature_dim, union_dim, rng), partition


def random_pairs(rng, n_pairs, feature_dim, union_dim, num_classes, grad=False):
    def t(*shape):
        return nc.Tensor(rng.normal(size=shape), requires_grad=grad)
    labels = rng.integers(0, num_classes, size=n_pairs)
    return RelationBatch(t(n_pairs, feature_dim), t(n_pairs, feature_dim), t(n_pairs, union_dim), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
