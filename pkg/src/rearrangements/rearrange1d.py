"""Exact one-dimensional rearrangement: weighted sorting, Lorenz curve, Gini.

The monotone rearrangement of a discrete gradient measure is its quantile
function; integrating it gives the convex rearrangement.  The classical
Lorenz curve GL1 (the convex function whose derivative pushes Lebesgue
measure to the standard normal) is available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .gradients import GradientAtomCloud

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class RearrangeError(ValueError):
    """Invalid rearrangement input."""


@dataclass(frozen=True)
class QuantileFunction:
    """Right-continuous nondecreasing step function on (0,1).

    ``atoms`` are the sorted distinct values, ``weights`` their masses,
    ``cum`` the cumulative weights (cum[-1] == 1).
    """

    atoms: np.ndarray
    weights: np.ndarray
    cum: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.atoms) < 0):
            raise RearrangeError("quantile atoms must be nondecreasing")
        for a in (self.atoms, self.weights, self.cum):
            a.setflags(write=False)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0) or np.any(t >= 1):
            raise RearrangeError("quantile function is defined on (0,1)")
        idx = np.searchsorted(self.cum, t, side="left")
        return self.atoms[np.minimum(idx, self.atoms.size - 1)]

    def as_cloud(self) -> GradientAtomCloud:
        return GradientAtomCloud(atoms=self.atoms[:, None], weights=self.weights.copy())


@dataclass(frozen=True)
class ConvexCurve1D:
    """Piecewise-linear convex function on [0,1] with prescribed value at 0."""

    xs: np.ndarray    # breakpoints, xs[0] = 0, xs[-1] = 1
    ys: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.slopes) < 0):
            raise RearrangeError("curve is not convex: slopes decrease")
        for a in (self.xs, self.ys, self.slopes):
            a.setflags(write=False)

    def __call__(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.xs, self.ys)

    def derivative_cloud(self) -> GradientAtomCloud:
        w = np.diff(self.xs)
        keep = w > 0
        return GradientAtomCloud(atoms=self.slopes[keep][:, None], weights=w[keep] / w[keep].sum())

    def tangent_lines(self) -> tuple[np.ndarray, np.ndarray]:
        """(a, b) with curve(x) = max_j a_j x - b_j; supports of each linear piece."""
        a = self.slopes
        b = a * self.xs[1:] - self.ys[1:]
        return a, b


def monotone_rearrange_1d(cloud: GradientAtomCloud) -> QuantileFunction:
    """Quantile function of a scalar cloud: stable sort, exact ties merged."""
    values = cloud.scalar_atoms()
    if values.size == 0:
        raise RearrangeError("empty cloud")
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = cloud.weights[order]
    atoms, start = np.unique(v, return_index=True)
    weights = np.add.reduceat(w, start)
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return QuantileFunction(atoms=atoms, weights=weights, cum=cum)


def convex_rearrange_1d(q: QuantileFunction, offset: float = 0.0) -> ConvexCurve1D:
    """Integrate a quantile function: the convex curve with C(0) = offset."""
    xs = np.concatenate([[0.0], q.cum])
    ys = offset + np.concatenate([[0.0], np.cumsum(q.atoms * q.weights)])
    return ConvexCurve1D(xs=xs, ys=ys, slopes=q.atoms.copy())


def rearrangement_curve(cloud: GradientAtomCloud, offset: float = 0.0) -> ConvexCurve1D:
    """Monotone rearrangement followed by integration, in one step."""
    return convex_rearrange_1d(monotone_rearrange_1d(cloud), offset)


def lorenz_gl1(x) -> np.ndarray:
    """GL1(x) = integral of the standard normal quantile from 0 to x.

    Uses the exact antiderivative -pdf(quantile(x)); GL1(0) = GL1(1) = 0.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    if np.any(xv < 0) or np.any(xv > 1):
        raise RearrangeError("GL1 is defined on [0,1]")
    out = np.zeros_like(xv)
    interior = (xv > 0) & (xv < 1)
    q = ndtri(xv[interior])
    out[interior] = -np.exp(-0.5 * q * q) / _SQRT_2PI
    return float(out[0]) if scalar else out


def gini_raw(incomes) -> float:
    """Sum over k of (k/n) * total - C(k) for the sorted cumulative incomes C."""
    inc = np.asarray(incomes, dtype=float)
    if inc.size == 0 or np.any(inc < 0):
        raise RearrangeError("incomes must be nonnegative and nonempty")
    if not np.any(inc > 0):
        raise RearrangeError("at least one income must be positive")
    c = np.cumsum(np.sort(inc))
    n = inc.size
    k = np.arange(1, n + 1)
    return float(np.sum(k / n * c[-1] - c))


def gini(incomes) -> float:
    """Normalized inequality index in [0, 1): 2 * gini_raw / (n * total).

    Equals the classical mean-absolute-difference Gini; 0 iff all incomes equal.
    """
    inc = np.asarray(incomes, dtype=float)
    raw = gini_raw(inc)
    return 2.0 * raw / (inc.size * float(inc.sum()))
