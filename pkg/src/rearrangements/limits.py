"""Catalog of theoretical limit laws for the renormalized gradient measures.

Fixed Gaussian limits are given by a covariance matrix expressed in a simplex
basis u; mixture limits integrate a z-dependent covariance field over the
cube.  The module also provides the renormalizing-sequence catalog and the
closed-form ingredients of the 2-D product-min rearrangement (the mixture CDF
G, its quantile, and the convex curve C1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, roots_legendre

from .fields import FieldModel, model_by_name
from .gradients import (RenormalizationSchedule, power_schedule, sigma_schedule,
                        sqrt_schedule)
from .rearrange1d import lorenz_gl1

_SQRT_2PI = math.sqrt(2.0 * math.pi)
PSD_TOL = 1e-8


class LimitsError(ValueError):
    """Invalid limit-law construction or evaluation."""


def _gl_nodes(n: int, lo: float = 0.0, hi: float = 1.0):
    x, w = roots_legendre(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


@dataclass(frozen=True)
class LimitMeasureSpec:
    """A limit law: fixed Gaussian or Gaussian mixture over the cube.

    ``cov`` (fixed kind) or ``cov_field`` (mixture kind) is expressed in the
    orthonormal basis ``u``; characteristic functions take frequencies in
    canonical coordinates and transform internally.
    """

    name: str
    kind: str                    # "fixed" | "mixture"
    d: int
    u: np.ndarray                # (d, d) orthonormal basis, columns
    cov: np.ndarray = None       # type: ignore[assignment]
    cov_field: Callable[[np.ndarray], np.ndarray] = None  # type: ignore[assignment]
    quad_nodes: int = 64

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if not np.allclose(u.T @ u, np.eye(self.d), atol=1e-12):
            raise LimitsError("basis u must be orthonormal")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        if self.kind == "fixed":
            c = np.asarray(self.cov, dtype=float)
            if c.shape != (self.d, self.d) or not np.allclose(c, c.T, atol=1e-12):
                raise LimitsError("fixed covariance must be symmetric (d, d)")
            w = np.linalg.eigvalsh(c)
            if w.min() < -PSD_TOL * max(np.trace(c), 1.0):
                raise LimitsError(f"fixed covariance not PSD: min eigenvalue {w.min():.3e}")
            c.setflags(write=False)
            object.__setattr__(self, "cov", c)
        elif self.kind != "mixture":
            raise LimitsError(f"unknown limit kind {self.kind!r}")

    def covariance_canonical(self) -> np.ndarray:
        if self.kind != "fixed":
            raise LimitsError("canonical covariance only defined for fixed Gaussians")
        return self.u @ self.cov @ self.u.T

    def cf(self, h) -> float:
        """Characteristic function at canonical frequency h (real-valued)."""
        h = np.asarray(h, dtype=float).reshape(-1)
        if self.kind == "fixed":
            s = self.covariance_canonical()
            return float(np.exp(-0.5 * h @ s @ h))
        return mixture_cf(self, h)

    def cf_grid(self, H) -> np.ndarray:
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return np.array([self.cf(h) for h in H])


def limit_levy(d: int) -> LimitMeasureSpec:
    """Fixed Gaussian: unit diagonal, off-diagonal 1 - sqrt(2)/2, any straight basis."""
    if d < 1:
        raise LimitsError(f"dimension must be >= 1, got {d}")
    c = 1.0 - math.sqrt(2.0) / 2.0
    cov = np.full((d, d), c)
    np.fill_diagonal(cov, 1.0)
    return LimitMeasureSpec(name=f"levy{d}", kind="fixed", d=d, u=np.eye(d), cov=cov)


def rotated_basis() -> np.ndarray:
    s = 1.0 / math.sqrt(2.0)
    return np.array([[s, -s], [s, s]])


def limit_additive_rotated(convention: str = "matched") -> LimitMeasureSpec:
    """Fixed Gaussian limit of the additive field on the rotated germ, in basis u.

    Conventions for the renormalization b_n^2 differ by a factor 2 and scale
    the covariance accordingly; both give correlation 1/2.  "matched" uses
    b_n^2 = n/sqrt(2) and covariance [[2,1],[1,2]]; "paper" uses
    b_n^2 = sqrt(2)*n and covariance [[1,1/2],[1/2,1]].
    """
    if convention == "matched":
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    elif convention == "paper":
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    else:
        raise LimitsError(f"unknown convention {convention!r}; use 'matched' or 'paper'")
    return LimitMeasureSpec(name="additive-rotated", kind="fixed", d=2,
                            u=rotated_basis(), cov=cov)


def limit_gl(d: int) -> LimitMeasureSpec:
    """Standard Gaussian limit; the rearrangement potential is the Lorenz curve sum."""
    if d < 1:
        raise LimitsError(f"dimension must be >= 1, got {d}")
    return LimitMeasureSpec(name=f"gl{d}", kind="fixed", d=d, u=np.eye(d), cov=np.eye(d))


def gl_potential(d: int):
    """Callable z -> sum_i GL1(z_i), the separable rearrangement of gl(d)."""
    def phi(z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.sum(lorenz_gl1(z.ravel()).reshape(z.shape), axis=1)

    return phi


def chentsov_limit_cov(u, z) -> np.ndarray:
    """Limit covariance at z for the product-min field, in the simplex basis u.

    Entry (i,j) is <l(z), u_ij> where l(z) drops one coordinate from the
    product and u_ij = min(u_i, u_j) - min(u_i, 0) - min(u_j, 0) componentwise.
    """
    U = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1)
    d = z.shape[0]
    if U.shape != (d, d):
        raise LimitsError(f"basis must be ({d},{d})")
    if not np.allclose(U.T @ U, np.eye(d), atol=1e-12):
        raise LimitsError("basis u must be orthonormal")
    prod = np.prod(z)
    lz = np.empty(d)
    for i in range(d):
        lz[i] = np.prod(np.delete(z, i))
    cols = U.T  # row i is u^i
    neg = np.minimum(cols, 0.0)
    lam = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            uij = np.minimum(cols[i], cols[j]) - neg[i] - neg[j]
            lam[i, j] = lz @ uij
    lam = 0.5 * (lam + lam.T)
    w = np.linalg.eigvalsh(lam)
    if w.min() < -PSD_TOL * max(abs(np.trace(lam)), 1.0):
        raise LimitsError(
            f"limit covariance at z={z} not PSD (min eigenvalue {w.min():.3e}); "
            "the basis is outside the validity region")
    return lam


def chentsov_mixture_spec(d: int = 2, u=None, quad_nodes: int = 64) -> LimitMeasureSpec:
    """Gaussian-mixture limit of the product-min field over the cube."""
    U = np.eye(d) if u is None else np.asarray(u, dtype=float)
    return LimitMeasureSpec(name=f"chentsov{d}-standard", kind="mixture", d=d, u=U,
                            cov_field=lambda z: chentsov_limit_cov(U, z),
                            quad_nodes=quad_nodes)


def mixture_cf(spec: LimitMeasureSpec, h, quad_nodes: int | None = None) -> float:
    """CF of a Gaussian mixture by tensorized Gauss-Legendre quadrature."""
    if spec.kind != "mixture":
        raise LimitsError("mixture_cf needs a mixture spec")
    h = np.asarray(h, dtype=float).reshape(-1)
    if h.shape[0] != spec.d:
        raise LimitsError(f"frequency must have dimension {spec.d}")
    m = spec.quad_nodes if quad_nodes is None else quad_nodes
    x, w = _gl_nodes(m)
    grids = np.meshgrid(*([x] * spec.d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w] * spec.d), indexing="ij")
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    hu = spec.u.T @ h
    vals = np.array([math.exp(-0.5 * hu @ spec.cov_field(z) @ hu) for z in pts])
    return float(wts @ vals)


def chentsov2d_product_cf(h) -> float:
    """Closed form for the d=2 straight-germ mixture: g(h1) g(h2)."""
    h = np.asarray(h, dtype=float).reshape(-1)

    def g(t):
        if abs(t) < 1e-8:
            return 1.0 - t * t / 6.0
        return 2.0 * (1.0 - math.exp(-0.5 * t * t)) / (t * t)

    return g(h[0]) * g(h[1])


_G_NODES = 160


def chentsov2d_G(a) -> np.ndarray:
    """CDF of the variance mixture N(0, x), x ~ U(0,1).

    G(a) = int_0^1 Phi(a/sqrt(x)) dx, evaluated after x = s^2 so the
    integrand is smooth; G(-a) = 1 - G(a) exactly.
    """
    a = np.asarray(a, dtype=float)
    scalar = a.ndim == 0
    av = np.atleast_1d(a).astype(float)
    s, w = _gl_nodes(_G_NODES)
    pos = np.abs(av)
    with np.errstate(divide="ignore"):
        ratio = pos[:, None] / s[None, :]
    vals = 2.0 * (s * w)[None, :] * ndtr(ratio)
    gpos = np.sum(vals, axis=1)
    out = np.where(av >= 0, gpos, 1.0 - gpos)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def chentsov2d_G_inv(t: float) -> float:
    """Quantile of G on (0,1) by bracketed root finding."""
    if not 0.0 < t < 1.0:
        raise LimitsError(f"quantile defined on (0,1), got {t}")
    if t == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while chentsov2d_G(lo) > t:
        lo *= 2.0
        if lo < -64:
            raise LimitsError("quantile bracket expansion failed")
    while chentsov2d_G(hi) < t:
        hi *= 2.0
        if hi > 64:
            raise LimitsError("quantile bracket expansion failed")
    return float(brentq(lambda x: chentsov2d_G(x) - t, lo, hi, xtol=1e-12))


def chentsov2d_C1(x) -> np.ndarray:
    """Convex curve with derivative G^{-1}: C1(x) = int_0^x G^{-1}(t) dt.

    Computed as the partial first moment of the mixture density:
    C1(x) = -int_0^1 sqrt(s) pdf(q / sqrt(s)) ds with q = G^{-1}(x).
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x).astype(float)
    if np.any(xv < 0) or np.any(xv > 1):
        raise LimitsError("C1 is defined on [0,1]")
    s, w = _gl_nodes(_G_NODES)
    out = np.zeros_like(xv)
    interior = (xv > 0) & (xv < 1)
    for i in np.flatnonzero(interior):
        q = chentsov2d_G_inv(float(xv[i]))
        pdf = np.exp(-0.5 * q * q / s) / _SQRT_2PI
        out[i] = -float(np.sum(w * np.sqrt(s) * pdf))
    return float(out[0]) if scalar else out


def chentsov2d_potential():
    """Callable z -> C1(z1) + C1(z2), the separable limit rearrangement."""
    def phi(z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return chentsov2d_C1(z[:, 0]) + chentsov2d_C1(z[:, 1])

    return phi


SPEC_CATALOG = {
    "gl1": lambda: limit_gl(1),
    "gl2": lambda: limit_gl(2),
    "levy2": lambda: limit_levy(2),
    "additive-rotated": limit_additive_rotated,
    "additive-rotated-paper": lambda: limit_additive_rotated("paper"),
    "chentsov2-standard": chentsov_mixture_spec,
}


def spec_by_name(name: str) -> LimitMeasureSpec:
    try:
        return SPEC_CATALOG[name]()
    except KeyError:
        raise LimitsError(
            f"unknown limit spec {name!r}; available: {', '.join(sorted(SPEC_CATALOG))}") from None


def bn_schedule(model: str | FieldModel, germ_name: str | None = None,
                alpha: float | None = None,
                convention: str = "matched") -> RenormalizationSchedule:
    """Renormalizing sequence for a model/germ pair.

    Brownian motion uses the sigma rule n*sigma(1/n) (= sqrt(n)); fBm uses
    n^{1 - alpha/2}; the Levy and product-min fields use sqrt(n).  The
    additive field on the rotated germ uses b_n = (n/sqrt(2))^{1/2} under the
    matched convention, (sqrt(2) n)^{1/2} under the alternate one.
    """
    name = model.name if isinstance(model, FieldModel) else model
    base = name.split("(")[0]
    if base == "brownian":
        m = model if isinstance(model, FieldModel) else model_by_name("brownian")
        return sigma_schedule(m)
    if base == "fbm":
        if alpha is None:
            if isinstance(model, FieldModel):
                alpha = float(name[name.index("(") + 1:-1])
            else:
                raise LimitsError("fbm schedule needs alpha")
        return power_schedule(1.0, 1.0 - alpha / 2.0)
    if base in ("levy", "chentsov"):
        return sqrt_schedule()
    if base == "additive":
        if germ_name == "rotated-2d":
            if convention == "matched":
                return power_schedule(2.0 ** -0.25, 0.5)
            if convention == "paper":
                return power_schedule(2.0 ** 0.25, 0.5)
            raise LimitsError(f"unknown convention {convention!r}")
        return sqrt_schedule()
    if base == "sawtooth":
        return power_schedule(1.0, 0.0)
    raise LimitsError(f"no schedule catalog entry for model {name!r}")
