import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgp.errors import AllTied, DegenerateCovariance, InvalidPercent, ShapeMismatch, TooFewItems
from fgp.evalmetrics import (
    evaluate,
    kendall_tau,
    pca_points_csv,
    pca_project,
    precision_at_percent,
    top_count,
)

from metric_oracles import power_iteration_axes, precision_by_sets, tau_b_all_pairs


def test_tau_examples():
    assert kendall_tau([1, 2, 3], [10, 20, 30]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3, abs=1e-15)


def test_tau_errors():
    with pytest.raises(TooFewItems):
        kendall_tau([1], [1])
    with pytest.raises(AllTied):
        kendall_tau([1, 1, 1], [1, 2, 3])
    with pytest.raises(ShapeMismatch):
        kendall_tau([1, 2], [1, 2, 3])


def test_tau_with_ties_matches_scipy_convention():
    # 1,1,2 vs 1,2,3: one tied-in-x pair, two concordant pairs
    assert kendall_tau([1, 1, 2], [1, 2, 3]) == pytest.approx(2 / np.sqrt(2 * 3))


def test_tau_blocked_equals_unblocked(rng):
    x, y = rng.normal(size=300), rng.normal(size=300)
    assert kendall_tau(x, y, block=7) == kendall_tau(x, y)


def test_precision_examples():
    truth = np.arange(100.0)
    assert precision_at_percent(truth, truth, 5) == 1.0
    assert precision_at_percent(truth, -truth, 5) == 0.0
    pred = truth.copy()
    pred[[95, 96]] = -1.0  # two of the true top five drop out
    assert precision_at_percent(truth, pred, 5) == pytest.approx(0.6)


def test_top_count():
    assert top_count(100, 1) == 1
    assert top_count(10, 1) == 1
    assert top_count(960, 5) == 48
    assert top_count(30, 0.1) == 1
    assert top_count(1000, 0.3) == 3


@pytest.mark.parametrize("p", [0, -1, 100.5])
def test_invalid_percent(p):
    with pytest.raises(InvalidPercent):
        precision_at_percent([1, 2], [1, 2], p)


def test_precision_tie_break_is_stable():
    # three tied leaders; the top-1 set is the lowest index
    assert precision_at_percent([5, 5, 5, 1], [0, 0, 9, 0], 25) == 0.0
    assert precision_at_percent([5, 5, 5, 1], [9, 0, 0, 0], 25) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    x = rng.integers(0, 8, size=n).astype(float)
    y = rng.integers(0, 8, size=n).astype(float)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return
    assert abs(kendall_tau(x, y) - tau_b_all_pairs(x, y)) <= 1e-12
    for p in (1, 5, 10, 50):
        assert abs(precision_at_percent(x, y, p) - precision_by_sets(x, y, p)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tau_invariances(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert kendall_tau(x, x) == pytest.approx(1.0)
    assert kendall_tau(x, -x) == pytest.approx(-1.0)
    assert kendall_tau(x, y) == pytest.approx(kendall_tau(np.exp(x), y ** 3), abs=1e-12)
    assert precision_at_percent(x, y, 10) == precision_at_percent(x, 7.5 * y, 10)


def test_report_json_is_canonical():
    rep = evaluate([1, 2, 3, 4], [1, 3, 2, 4], percents=(25, 50), meta={"seed": 3})
    doc = json.loads(rep.to_json())
    assert doc["schema"] == "fgp-eval/1"
    assert doc["meta"] == {"seed": 3, "tau_variant": "tau-b"}
    assert doc["precision_at"] == {"25": 1.0, "50": 0.5}
    assert rep.to_json() == evaluate([1, 2, 3, 4], [1, 3, 2, 4], percents=(25, 50), meta={"seed": 3}).to_json()


def test_pca_line_has_zero_second_component():
    t = np.linspace(-1, 1, 10)
    pts, ratio = pca_project(np.c_[t, 2 * t], 2)
    assert ratio[1] == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(pts[:, 1], 0.0, atol=1e-12)


def test_pca_recovers_axis_aligned_coordinates():
    # uncorrelated by construction: covariance is diag(9/2, 1/2) up to scale
    X = np.array([[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]]) + [5.0, -2.0]
    pts, _ = pca_project(X, 2)
    centered = X - X.mean(axis=0)
    for j in range(2):
        assert np.allclose(np.abs(pts[:, j]), np.abs(centered[:, j]), atol=1e-8)


def test_pca_matches_power_iteration(rng):
    X = rng.normal(size=(50, 8)) @ np.diag(np.linspace(3, 0.2, 8))
    pts, ratio = pca_project(X, 2)
    axes = power_iteration_axes(X, 2)
    for j in range(2):
        if axes[np.flatnonzero(np.abs(axes[:, j]) > 1e-12)[0], j] < 0:
            axes[:, j] = -axes[:, j]
    ref = (X - X.mean(axis=0)) @ axes
    assert np.max(np.abs(pts - ref)) <= 1e-8
    ev = np.linalg.eigvalsh(np.cov(X, rowvar=False))[::-1]
    assert np.allclose(ratio, ev[:2] / ev.sum(), atol=1e-12)


def test_pca_rotation_invariance(rng):
    X = rng.normal(size=(30, 3)) * [3, 1, 0.3]
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    a, ra = pca_project(X, 2)
    b, rb = pca_project(X @ Q, 2)
    assert np.allclose(np.abs(a), np.abs(b), atol=1e-9)
    assert np.allclose(ra, rb)


def test_pca_errors():
    with pytest.raises(DegenerateCovariance):
        pca_project(np.ones((5, 3)), 2)
    with pytest.raises(TooFewItems):
        pca_project(np.ones((2, 3)), 2)


def test_pca_csv():
    text = pca_points_csv(["a", "b"], np.array([[0.5, 1.0], [-0.5, -1.0]]), truth=[0.9, None], seed=97)
    assert text.splitlines() == ["# seed=97", "id,x,y,truth_performance", "a,0.5,1.0,0.9", "b,-0.5,-1.0,"]
