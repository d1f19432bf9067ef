"""Thresholded statistical comparisons of clouds against limit laws and curves.

Weak convergence is checked through characteristic functions on a small fixed
frequency grid; 1-D marginals through Kolmogorov-Smirnov distances; potential
convergence through sup errors on interior grids (a 0.05 margin is kept from
the cube boundary, where convergence is not guaranteed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .gradients import GradientAtomCloud, empirical_cf_grid, per_simplex_covariance
from .limits import LimitMeasureSpec

INTERIOR_MARGIN = 0.05
MAX_H_POINTS = 25


class DiagnosticsError(ValueError):
    """Invalid diagnostic input."""


@dataclass
class ConvergenceReport:
    """One thresholded metric: value, threshold, and replay metadata."""

    name: str
    metric: str
    value: float
    threshold: float
    passed: bool
    sample_sizes: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "metric": self.metric,
            "value": self.value,
            "threshold": self.threshold,
            "passed": bool(self.passed),
            "sample_sizes": self.sample_sizes,
            "seeds": list(self.seeds),
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def report_from_value(name: str, metric: str, value: float, threshold: float,
                      sample_sizes=None, seeds=None, extra=None) -> ConvergenceReport:
    return ConvergenceReport(name=name, metric=metric, value=float(value),
                             threshold=float(threshold),
                             passed=bool(value <= threshold),
                             sample_sizes=dict(sample_sizes or {}),
                             seeds=list(seeds or []), extra=dict(extra or {}))


def default_h_grid(d: int) -> np.ndarray:
    """Fixed CF frequency grid: 9 points on the axis in d=1, a thinned
    product intersected with ||h|| <= 4 in higher dimension (<= 25 points)."""
    axis1 = np.array([-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0])
    if d == 1:
        return axis1[:, None]
    axis = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    pts = pts[np.linalg.norm(pts, axis=1) <= 4.0]
    if pts.shape[0] > MAX_H_POINTS:
        order = np.argsort(np.linalg.norm(pts, axis=1), kind="stable")
        pts = pts[order[:MAX_H_POINTS]]
    return pts


def cf_sup_error(cloud: GradientAtomCloud, spec: LimitMeasureSpec,
                 h_grid: np.ndarray | None = None) -> float:
    """max over the grid of |empirical CF - limit CF| (0 at h = 0)."""
    H = default_h_grid(cloud.d) if h_grid is None else np.atleast_2d(h_grid)
    if not np.any(np.all(H == 0.0, axis=1)):
        raise DiagnosticsError("frequency grid must include 0")
    emp = empirical_cf_grid(cloud, H)
    ref = spec.cf_grid(H)
    return float(np.max(np.abs(emp - ref)))


def ks_distance(cloud: GradientAtomCloud, cdf) -> float:
    """Kolmogorov-Smirnov distance of a scalar cloud against a CDF callable."""
    x = cloud.scalar_atoms()
    order = np.argsort(x, kind="stable")
    x = x[order]
    c = np.cumsum(cloud.weights[order])
    f = np.asarray(cdf(x), dtype=float)
    upper = np.abs(f - c)
    lower = np.abs(f - np.concatenate([[0.0], c[:-1]]))
    return float(np.max(np.maximum(upper, lower)))


def interior_grid(d: int, points_per_axis: int = 41,
                  margin: float = INTERIOR_MARGIN) -> np.ndarray:
    """Tensor grid on [margin, 1-margin]^d for curve comparisons."""
    axis = np.linspace(margin, 1.0 - margin, points_per_axis)
    if d == 1:
        return axis[:, None]
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _evaluate(potential, grid: np.ndarray) -> np.ndarray:
    vals = potential(grid if grid.shape[1] > 1 else grid[:, 0])
    return np.asarray(vals, dtype=float).reshape(-1)


def curve_sup_error(potential_a, potential_b, grid: np.ndarray) -> float:
    """sup over an interior grid of |A - B| for two potential evaluators."""
    grid = np.atleast_2d(grid)
    return float(np.max(np.abs(_evaluate(potential_a, grid) - _evaluate(potential_b, grid))))


def correlation_from_cov(m: np.ndarray) -> np.ndarray:
    s = np.sqrt(np.diag(m))
    if np.any(s <= 0):
        raise DiagnosticsError("degenerate covariance: zero diagonal")
    return m / np.outer(s, s)


def covariance_error(cloud: GradientAtomCloud, simplex_index: int, u: np.ndarray,
                     target: np.ndarray) -> float:
    """max abs entry difference of correlation-normalized matrices."""
    emp = per_simplex_covariance(cloud, simplex_index, u)
    return float(np.max(np.abs(correlation_from_cov(emp)
                               - correlation_from_cov(np.asarray(target, dtype=float)))))
