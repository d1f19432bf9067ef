"""Seeded exact samplers for the Gaussian fields under study.

Every sampler is a pure function of (model, points, seed): the random stream
is derived by hashing the model name, the seed and an optional replicate tag,
so replicates are independent and order-insensitive.  Paths and sheets use
exact constructions (cumulative increments); everything else goes through a
dense symmetric factorization of the Gram matrix.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

PSD_TOL = 1e-8          # eigenvalues >= -PSD_TOL * trace are clipped to zero
GENERIC_MAX_POINTS = 5000


class FieldError(ValueError):
    """Invalid model parameters or covariance failure."""


def seed_stream(*parts) -> np.random.Generator:
    """Deterministic generator derived by hashing the given parts."""
    h = hashlib.sha256(repr(parts).encode()).digest()
    words = [int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence(words))


def derive_seed(master_seed: int, *parts) -> int:
    """Child seed for a replicate, stable under reordering of the batch."""
    h = hashlib.sha256(repr((master_seed,) + parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


@dataclass(frozen=True)
class FieldModel:
    """A centred Gaussian field: name, dimension, covariance, and smoothness data.

    ``covariance(Z, W)`` is vectorized over leading axes of the (..., d) point
    arrays.  ``sigma2`` is the increment variance t -> E X(t)^2 for 1-D
    stationary-increment models, ``theta`` describes where the covariance
    fails to be C^1.
    """

    name: str
    d: int
    covariance: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sigma2: Callable[[np.ndarray], np.ndarray] = None  # type: ignore[assignment]
    theta: str = ""

    def gram(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self.covariance(p[:, None, :], p[None, :, :])

    def sigma(self, t):
        if self.sigma2 is None:
            raise FieldError(f"model {self.name!r} has no stationary-increment sigma^2")
        return np.sqrt(self.sigma2(t))


@dataclass(frozen=True)
class FieldSample:
    """One seeded realization of a field on a fixed vertex set."""

    points: np.ndarray   # (N, d)
    values: np.ndarray   # (N,)
    seed: int
    model_name: str

    def __post_init__(self):
        if self.values.shape[0] != self.points.shape[0]:
            raise FieldError("values and points must have equal length")
        self.points.setflags(write=False)
        self.values.setflags(write=False)


def model_brownian() -> FieldModel:
    """Standard Brownian motion on [0,1]: Gamma(s,t) = min(s,t)."""
    def cov(z, w):
        return np.minimum(z[..., 0], w[..., 0])

    return FieldModel(name="brownian", d=1, covariance=cov,
                      sigma2=lambda t: np.asarray(t, dtype=float),
                      theta="diagonal")


def model_fbm(alpha: float) -> FieldModel:
    """Fractional Brownian motion with sigma^2(t) = |t|^alpha, 0 < alpha < 2."""
    if not 0.0 < alpha < 2.0:
        raise FieldError(f"fBm exponent must be in (0,2), got {alpha}")

    def cov(z, w):
        s, t = z[..., 0], w[..., 0]
        return 0.5 * (np.abs(s)**alpha + np.abs(t)**alpha - np.abs(s - t)**alpha)

    return FieldModel(name=f"fbm({alpha:g})", d=1, covariance=cov,
                      sigma2=lambda t: np.abs(np.asarray(t, dtype=float))**alpha,
                      theta="diagonal")


def model_levy(d: int) -> FieldModel:
    """Levy field: Gamma(z,w) = (|z| + |w| - |z-w|)/2 with Euclidean norms."""
    if d < 1:
        raise FieldError(f"dimension must be >= 1, got {d}")

    def cov(z, w):
        return 0.5 * (np.linalg.norm(z, axis=-1) + np.linalg.norm(w, axis=-1)
                      - np.linalg.norm(z - w, axis=-1))

    return FieldModel(name=f"levy({d})", d=d, covariance=cov,
                      sigma2=(lambda t: np.abs(np.asarray(t, dtype=float))) if d == 1 else None,
                      theta="diagonal")


def model_chentsov(d: int) -> FieldModel:
    """Chentsov field: Gamma(z,w) = prod_i min(z_i, w_i) on the positive orthant."""
    if d < 1:
        raise FieldError(f"dimension must be >= 1, got {d}")

    def cov(z, w):
        return np.prod(np.minimum(z, w), axis=-1)

    return FieldModel(name=f"chentsov({d})", d=d, covariance=cov,
                      theta="coordinate-equality union")


def model_additive() -> FieldModel:
    """X(x,y) = W(x) + W(y) for one Brownian motion W."""
    def cov(z, w):
        x, y = z[..., 0], z[..., 1]
        xp, yp = w[..., 0], w[..., 1]
        return (np.minimum(x, xp) + np.minimum(x, yp)
                + np.minimum(y, xp) + np.minimum(y, yp))

    return FieldModel(name="additive", d=2, covariance=cov,
                      theta="coordinate-equality union")


def model_by_name(name: str, **params) -> FieldModel:
    if name == "brownian":
        return model_brownian()
    if name == "fbm":
        return model_fbm(float(params["alpha"]))
    if name == "levy":
        return model_levy(int(params.get("dim", 2)))
    if name == "chentsov":
        return model_chentsov(int(params.get("dim", 2)))
    if name == "additive":
        return model_additive()
    raise FieldError(f"unknown model {name!r}; available: brownian, fbm, levy, chentsov, additive")


def _psd_factor(gram: np.ndarray) -> np.ndarray:
    """Lower-triangular-ish factor L with L L^T = gram, clipping tiny negatives."""
    try:
        return np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(gram)
    floor = -PSD_TOL * max(float(np.trace(gram)), 1.0)
    if w.min() < floor:
        raise FieldError(
            f"covariance Gram matrix is not PSD: min eigenvalue {w.min():.3e} < {floor:.3e}")
    return v * np.sqrt(np.clip(w, 0.0, None))


class DenseGaussianSampler:
    """Factor the Gram matrix once, then draw i.i.d. realizations cheaply."""

    def __init__(self, model: FieldModel, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != model.d:
            raise FieldError(f"points must be (N,{model.d}) for model {model.name!r}")
        if pts.shape[0] > GENERIC_MAX_POINTS:
            raise FieldError(
                f"generic sampler limited to {GENERIC_MAX_POINTS} points, got {pts.shape[0]}")
        self.model = model
        self.points = pts
        self._factor = _psd_factor(model.gram(pts))

    def draw(self, seed: int) -> FieldSample:
        rng = seed_stream(self.model.name, "generic", seed)
        values = self._factor @ rng.standard_normal(self.points.shape[0])
        return FieldSample(points=self.points, values=values, seed=seed,
                           model_name=self.model.name)


def sample_generic(model: FieldModel, points, seed: int) -> FieldSample:
    """Exact joint Gaussian sample via dense factorization (desk-scale guard)."""
    return DenseGaussianSampler(model, points).draw(seed)


class Path1DSampler:
    """Exact 1-D path sampler via cumulative increments from 0.

    Brownian increments are independent; other stationary-increment models
    factor the (grid-sized) increment covariance once.
    """

    def __init__(self, model: FieldModel, grid):
        g = np.asarray(grid, dtype=float).reshape(-1)
        if model.d != 1:
            raise FieldError(f"model {model.name!r} is not 1-D")
        if np.any(np.diff(g) <= 0):
            raise FieldError("grid must be strictly increasing")
        if g[0] < 0 or g[-1] > 1:
            raise FieldError("grid must lie in [0,1]")
        self.model = model
        self.grid = g
        anchored = g if g[0] == 0.0 else np.concatenate([[0.0], g])
        self._drop_zero = g[0] != 0.0
        steps = np.diff(anchored)
        if model.name == "brownian":
            self._scale = np.sqrt(steps)
            self._factor = None
        else:
            p = anchored.reshape(-1, 1)
            gram = model.gram(p)
            # increment covariance from the rectangle rule on Gamma
            inc = gram[1:, 1:] - gram[1:, :-1] - gram[:-1, 1:] + gram[:-1, :-1]
            self._factor = _psd_factor(inc)
            self._scale = None

    def draw(self, seed: int) -> FieldSample:
        rng = seed_stream(self.model.name, "path1d", seed)
        m = self.grid.shape[0] - (0 if self._drop_zero else 1)
        noise = rng.standard_normal(m)
        inc = self._scale * noise if self._factor is None else self._factor @ noise
        values = np.concatenate([[0.0], np.cumsum(inc)])
        if self._drop_zero:
            values = values[1:]
        return FieldSample(points=self.grid.reshape(-1, 1), values=values, seed=seed,
                           model_name=self.model.name)


def sample_path_1d(model: FieldModel, grid, seed: int) -> FieldSample:
    """Exact sample of a 1-D model on a sorted grid in [0,1]."""
    return Path1DSampler(model, grid).draw(seed)


def sample_chentsov_2d(m: int, seed: int) -> FieldSample:
    """Chentsov sheet on the (m+1) x (m+1) grid via cumulative rectangle increments.

    X(i/m, j/m) = sum of i.i.d. N(0, 1/m^2) rectangle increments, so
    E X(z) X(w) = prod min exactly at grid points; X vanishes on the axes.
    Points are ordered row-major in (i, j).
    """
    if m < 1:
        raise FieldError(f"grid subdivisions must be >= 1, got {m}")
    rng = seed_stream("chentsov(2)", "sheet", seed)
    inc = rng.standard_normal((m, m)) / m
    values = np.zeros((m + 1, m + 1))
    values[1:, 1:] = np.cumsum(np.cumsum(inc, axis=0), axis=1)
    axis = np.arange(m + 1) / m
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([xx.ravel(), yy.ravel()])
    return FieldSample(points=points, values=values.ravel(), seed=seed,
                       model_name="chentsov(2)")


class AdditiveSampler:
    """X(x,y) = W(x) + W(y) from a single Brownian path on the union of coordinates."""

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != 2:
            raise FieldError("additive model needs 2-D points")
        coords = np.unique(np.round(pts.ravel(), 12))
        coords = coords[coords > 0.0]
        self.points = pts
        self._grid = coords
        self._ix = np.searchsorted(coords, np.round(pts[:, 0], 12))
        self._iy = np.searchsorted(coords, np.round(pts[:, 1], 12))

    def draw(self, seed: int) -> FieldSample:
        rng = seed_stream("additive", "path", seed)
        steps = np.diff(np.concatenate([[0.0], self._grid]))
        w = np.concatenate([[0.0], np.cumsum(np.sqrt(steps) * rng.standard_normal(steps.size))])
        # index 0 is W(0) = 0; positive coordinates shift by one
        wx = w[np.where(self.points[:, 0] > 0, self._ix + 1, 0)]
        wy = w[np.where(self.points[:, 1] > 0, self._iy + 1, 0)]
        return FieldSample(points=self.points, values=wx + wy, seed=seed,
                           model_name="additive")


def sawtooth_values(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic sawtooth on {k/n}: piecewise linear, slopes alternate +1/-1."""
    if n < 1:
        raise FieldError(f"need n >= 1, got {n}")
    grid = np.arange(n + 1) / n
    values = (np.arange(n + 1) % 2) / n
    return grid, values


def make_sampler(model: FieldModel, points):
    """Pick the exact sampler for a model and vertex set; reusable across seeds."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if model.d == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        if np.array_equal(order, np.arange(pts.shape[0])):
            return Path1DSampler(model, pts[:, 0])

        class _Reordered:
            def __init__(self, inner, inv):
                self._inner, self._inv = inner, inv

            def draw(self, seed):
                s = self._inner.draw(seed)
                return FieldSample(points=pts, values=s.values[self._inv], seed=seed,
                                   model_name=s.model_name)

        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        return _Reordered(Path1DSampler(model, pts[order, 0]), inv)
    if model.name == "additive":
        return AdditiveSampler(pts)
    if model.name == "chentsov(2)":
        grid_sampler = _chentsov_grid_sampler(pts)
        if grid_sampler is not None:
            return grid_sampler
    return DenseGaussianSampler(model, pts)


def _chentsov_grid_sampler(pts: np.ndarray):
    """Exact sheet sampler when the points form a full uniform (m+1)^2 grid."""
    coords = np.unique(np.round(pts.ravel(), 12))
    m = coords.size - 1
    if m < 1 or not np.allclose(coords, np.arange(m + 1) / m, atol=1e-9):
        return None
    if pts.shape[0] != (m + 1) ** 2:
        return None
    ij = np.round(pts * m).astype(int)
    if not np.allclose(pts, ij / m, atol=1e-9):
        return None
    flat = ij[:, 0] * (m + 1) + ij[:, 1]
    if np.unique(flat).size != pts.shape[0]:
        return None

    class _Sheet:
        def draw(self, seed):
            s = sample_chentsov_2d(m, seed)
            return FieldSample(points=pts, values=s.values[flat], seed=seed,
                               model_name=s.model_name)

    return _Sheet()


def sample_on(model: FieldModel, points, seed: int) -> FieldSample:
    """Sample a model on an arbitrary vertex set with the best exact sampler."""
    return make_sampler(model, points).draw(seed)
