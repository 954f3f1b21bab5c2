import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skelsafe.safety import DEFAULT_GRID, accepted_count, auroc, ece, per_class_accuracy, risk_coverage


def brute_auroc(s_id, s_ood):
    total = sum(Fraction(1) if o > i else Fraction(1, 2) if o == i else Fraction(0)
                for i, o in itertools.product(s_id, s_ood))
    return float(total / (len(s_id) * len(s_ood)))


def test_auroc_examples():
    assert auroc([0.1, 0.2], [0.3, 0.4]) == 1.0
    assert auroc([0.5] * 3, [0.5] * 4) == 0.5
    assert auroc([0.9, 0.8], [0.85, 0.1]) == brute_auroc([0.9, 0.8], [0.85, 0.1]) == 0.25
    with pytest.raises(ValueError):
        auroc([], [1.0])


@given(st.lists(st.integers(0, 6), min_size=1, max_size=30), st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_auroc_matches_pair_count_with_ties(a, b):
    assert abs(auroc(a, b) - brute_auroc(a, b)) < 1e-12


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=25), st.lists(st.floats(-1e6, 1e6), min_size=1,
                                                                                  max_size=25))
def test_auroc_complement(a, b):
    assert abs(auroc(a, b) + auroc(b, a) - 1.0) < 1e-12


def test_risk_coverage_hand_example():
    c = risk_coverage([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0], [0.5, 1.0])
    assert c.at(0.5) == (0.5, 0.25)
    assert c.at(1.0) == (0.5, 0.5)
    assert list(c.accepted) == [2, 4]


def test_risk_coverage_all_correct_and_ties():
    c = risk_coverage(np.ones(10), np.ones(10, dtype=bool))
    assert np.all(c.risk == 0)
    # equal confidences: the lower index is accepted first
    c = risk_coverage([0.5, 0.5, 0.5, 0.5], [0, 1, 1, 1], [0.25, 0.5])
    assert c.risk.tolist() == [1.0, 0.5]
    with pytest.raises(ValueError):
        risk_coverage([], [])


def test_wsr_formula_against_reference_pair():
    assert 0.982 * 0.5 == pytest.approx(0.491, abs=1e-12)
    n = 1000
    correct = np.ones(n, dtype=bool)
    correct[:491] = False
    c = risk_coverage(-np.arange(n, dtype=float), correct)
    r, w = c.at(0.5)
    assert r == pytest.approx(0.982, abs=1e-12) and w == pytest.approx(0.491, abs=1e-12)


def test_accepted_count_uses_ceiling():
    assert accepted_count(0.15, 20) == 3
    assert accepted_count(0.5, 7) == 4
    assert accepted_count(0.01, 10) == 1


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60))
def test_risk_coverage_properties(rows):
    conf, ok = zip(*rows)
    c = risk_coverage(conf, ok, DEFAULT_GRID)
    assert c.wsr_identity_error() < 1e-12
    assert np.all((c.risk >= 0) & (c.risk <= 1))
    assert c.risk[-1] == pytest.approx(1 - np.mean(ok))


def test_ece_closed_forms():
    assert ece(np.ones(50), np.ones(50)).ece == 0.0
    b = ece(np.full(100, 0.9), np.arange(100) % 2 == 0)
    assert b.ece == pytest.approx(0.4, abs=1e-12)


def test_ece_bin_edges():
    b = ece(np.array([0.0, 1 / 3, 1.0]), np.array([1, 1, 1]), bins=3)
    assert b.count.tolist() == [1, 1, 1]
    assert ece([0.2], [1], bins=5).count.tolist() == [0, 1, 0, 0, 0]


def test_ece_calibrated_by_construction():
    rng = np.random.default_rng(0)
    conf = rng.uniform(0, 1, 100_000)
    assert ece(conf, rng.random(100_000) < conf, 15).ece < 0.02


def test_per_class_accuracy():
    labels = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2])
    preds = np.array([0, 1, 0, 1, 1, 2, 0, 0, 2])
    out = per_class_accuracy(preds, labels, ["a", "b", "c", "d"])
    assert out == {"a": 2 / 3, "b": 1.0, "c": 0.5, "d": None}
    assert per_class_accuracy(labels, labels, ["a", "b", "c"]) == {"a": 1.0, "b": 1.0, "c": 1.0}
