"""Ranking metrics and PCA projection."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import AllTied, DegenerateCovariance, InvalidPercent, ShapeMismatch, TooFewItems

TAU_VARIANT = "tau-b"


def _pair(truth, pred):
    x = np.asarray(truth, dtype=float).ravel()
    y = np.asarray(pred, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeMismatch(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def kendall_tau(truth, pred, block=1024) -> float:
    """Tie-corrected Kendall rank correlation (tau-b)."""
    x, y = _pair(truth, pred)
    n = x.size
    if n < 2:
        raise TooFewItems(f"kendall_tau needs at least 2 items, got {n}")
    s = 0
    untied_x = 0
    untied_y = 0
    # blocked over rows so memory stays O(block * n)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        dx = np.sign(x[lo:hi, None] - x[None, :])
        dy = np.sign(y[lo:hi, None] - y[None, :])
        upper = np.arange(lo, hi)[:, None] < np.arange(n)[None, :]
        s += int(np.sum((dx * dy)[upper]))
        untied_x += int(np.count_nonzero(dx[upper]))
        untied_y += int(np.count_nonzero(dy[upper]))
    if untied_x == 0 or untied_y == 0:
        raise AllTied("one of the rankings is constant; tau is undefined")
    return s / math.sqrt(untied_x * untied_y)


def top_count(n: int, percent) -> int:
    frac = Fraction(str(percent)) if isinstance(percent, float) else Fraction(percent)
    return max(1, math.ceil(frac * n / 100))


def top_indices(values, count) -> np.ndarray:
    # stable descending order: ties keep ascending index order
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return np.asarray(order[:count], dtype=int)


def precision_at_percent(truth, pred, percent) -> float:
    x, y = _pair(truth, pred)
    if not (0 < float(percent) <= 100):
        raise InvalidPercent(f"percent must be in (0, 100], got {percent}")
    if x.size < 1:
        raise TooFewItems("precision_at_percent needs at least one item")
    c = top_count(x.size, percent)
    hits = np.intersect1d(top_indices(x, c), top_indices(y, c)).size
    return hits / c


@dataclass
class EvalReport:
    kendall_tau: float
    precision_at: dict
    n: int
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "schema": "fgp-eval/1",
            "kendall_tau": self.kendall_tau,
            "precision_at": {str(k): v for k, v in self.precision_at.items()},
            "n": self.n,
            "meta": {"tau_variant": TAU_VARIANT, **self.meta},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def evaluate(truth, pred, percents=(1, 5), meta=None) -> EvalReport:
    x, y = _pair(truth, pred)
    return EvalReport(
        kendall_tau=kendall_tau(x, y),
        precision_at={p: precision_at_percent(x, y, p) for p in percents},
        n=int(x.size),
        meta=dict(meta or {}),
    )


def pca_project(vectors, out_dim=2):
    """Project rows of ``vectors`` onto their top principal axes.

    Returns ``(points, explained_ratio)``. Each axis is sign-fixed so that
    its first nonzero loading is positive.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D array of vectors, got shape {X.shape}")
    if X.shape[0] < out_dim + 1:
        raise TooFewItems(f"need at least {out_dim + 1} vectors for a {out_dim}-D projection")
    if out_dim > X.shape[1]:
        raise ShapeMismatch(f"out_dim {out_dim} exceeds input dimension {X.shape[1]}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (X.shape[0] - 1)
    total = np.trace(cov)
    if not total > 0:
        raise DegenerateCovariance("all vectors are identical; covariance is zero")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:out_dim]
    evals = np.clip(evals[order], 0.0, None)
    axes = evecs[:, order]
    tol = 1e-12 * np.max(np.abs(axes))
    for j in range(out_dim):
        nz = np.flatnonzero(np.abs(axes[:, j]) > tol)
        if nz.size and axes[nz[0], j] < 0:
            axes[:, j] = -axes[:, j]
    return centered @ axes, evals / total


def pca_points_csv(ids, points, truth=None, seed=None) -> str:
    buf = io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    dims = points.shape[1]
    names = ["x", "y"] if dims == 2 else [f"pc{i + 1}" for i in range(dims)]
    w.writerow(["id", *names, "truth_performance"])
    for i, ident in enumerate(ids):
        t = "" if truth is None or truth[i] is None else repr(float(truth[i]))
        w.writerow([ident, *(repr(float(v)) for v in points[i]), t])
    return buf.getvalue()
