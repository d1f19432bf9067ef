"""Simplices, germs of triangulations, and scaled interior refinements of the unit cube.

The approximation scheme lives on triangulations generated by a small set of
simplices (a germ) whose lattice translates tile space.  Scaling a germ by 1/n
and keeping the translates wholly inside [0,1]^d produces the refinement cells
on which piecewise-affine interpolants and their gradients are built.
Boundary-crossing translates are dropped (weights are renormalized downstream),
which loses at most O(1/n) of the cube's volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORTHONORMAL_TOL = 1e-12
# coordinates are deduplicated on this many decimals; vertex separations at
# desk scale (n <= 4096) stay far above it
_DEDUP_DECIMALS = 9


class GeometryError(ValueError):
    """Invalid geometric input (degenerate simplex, unsupported germ, ...)."""


def _as_array(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class Domain:
    """The unit cube [0,1]^d with a distinguished starting point z0."""

    d: int
    z0: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.d < 1:
            raise GeometryError(f"dimension must be >= 1, got {self.d}")
        z0 = np.zeros(self.d) if self.z0 is None else _as_array(self.z0, "z0")
        if z0.shape != (self.d,):
            raise GeometryError(f"z0 must have shape ({self.d},), got {z0.shape}")
        if np.any(z0 < 0) or np.any(z0 > 1):
            raise GeometryError("z0 must lie in [0,1]^d")
        z0.setflags(write=False)
        object.__setattr__(self, "z0", z0)

    @property
    def volume(self) -> float:
        return 1.0

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= -tol) & (p <= 1.0 + tol), axis=1)


@dataclass(frozen=True)
class Simplex:
    """A d-simplex given by d+1 affinely independent vertices.

    The first vertex is the apex; for regular simplices built from an
    orthonormal basis u the edges from the apex are l*u^i and ``basis`` keeps u.
    """

    vertices: np.ndarray        # (d+1, d), row 0 is the apex
    basis: np.ndarray = None    # type: ignore[assignment]  # (d, d), columns u^i, optional

    def __post_init__(self):
        v = _as_array(self.vertices, "vertices")
        if v.ndim != 2 or v.shape[0] != v.shape[1] + 1:
            raise GeometryError(f"need (d+1, d) vertices, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if self.basis is not None:
            b = _as_array(self.basis, "basis")
            b.setflags(write=False)
            object.__setattr__(self, "basis", b)
        if abs(np.linalg.det(self.edge_matrix)) < 1e-14:
            raise GeometryError("degenerate simplex: vertices are affinely dependent")

    @property
    def d(self) -> int:
        return self.vertices.shape[1]

    @property
    def apex(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def edge_matrix(self) -> np.ndarray:
        """Columns are the edges v_i - v_0 from the apex."""
        return (self.vertices[1:] - self.vertices[0]).T

    @property
    def volume(self) -> float:
        return abs(np.linalg.det(self.edge_matrix)) / math.factorial(self.d)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Containment test via barycentric coordinates (inclusive boundary)."""
        p = np.atleast_2d(points)
        lam = np.linalg.solve(self.edge_matrix, (p - self.apex).T).T
        return (np.all(lam >= -tol, axis=1)) & (lam.sum(axis=1) <= 1.0 + tol)

    def barycentric(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.linalg.solve(self.edge_matrix, (p - self.apex).T).T


def make_regular_simplex(z0, u, l: float) -> Simplex:
    """Simplex with apex z0 and edges l*u^i for an orthonormal basis u.

    ``u`` is given column-wise: u[:, i] is the i-th basis vector.
    """
    z0 = _as_array(z0, "z0")
    u = _as_array(u, "u")
    d = z0.shape[0]
    if u.shape != (d, d):
        raise GeometryError(f"basis must be ({d},{d}), got {u.shape}")
    if not np.allclose(u.T @ u, np.eye(d), atol=ORTHONORMAL_TOL, rtol=0.0):
        raise GeometryError("basis is not orthonormal within 1e-12")
    if not l > 0:
        raise GeometryError(f"side length must be positive, got {l}")
    vertices = np.vstack([z0, z0 + l * u.T])
    return Simplex(vertices=vertices, basis=u)


@dataclass(frozen=True)
class GermOfTriangulation:
    """A finite simplex set whose lattice translates tile R^d."""

    simplices: tuple
    lattice_basis: np.ndarray   # (d, d), columns generate the lattice
    name: str = "germ"

    def __post_init__(self):
        b = _as_array(self.lattice_basis, "lattice_basis")
        d = self.simplices[0].d
        if b.shape != (d, d) or abs(np.linalg.det(b)) < 1e-14:
            raise GeometryError("lattice basis must be d linearly independent vectors")
        b.setflags(write=False)
        object.__setattr__(self, "lattice_basis", b)
        object.__setattr__(self, "simplices", tuple(self.simplices))

    @property
    def d(self) -> int:
        return self.simplices[0].d

    @property
    def covolume(self) -> float:
        return abs(np.linalg.det(self.lattice_basis))

    def tiling_check(self, n_points: int = 10_000, rng=None, margin: float = 1e-9) -> bool:
        """Sample the fundamental cell; every point must lie in exactly one translate.

        Points within ``margin`` of any simplex boundary are nudged away
        (boundaries have measure zero).  Raises GeometryError on failure.
        """
        rng = np.random.default_rng(0) if rng is None else rng
        d = self.d
        B = self.lattice_basis
        pts = (B @ rng.random((d, n_points))).T

        # lattice offsets that can reach the fundamental cell
        radius = max(np.linalg.norm(s.vertices, axis=1).max() for s in self.simplices)
        corners = B @ np.array(np.meshgrid(*[[0.0, 1.0]] * d)).reshape(d, -1)
        span = np.linalg.solve(B, corners)
        lo = np.floor(span.min(axis=1) - radius * np.abs(np.linalg.inv(B)).sum(axis=1)).astype(int) - 1
        hi = np.ceil(span.max(axis=1) + radius * np.abs(np.linalg.inv(B)).sum(axis=1)).astype(int) + 1
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
        ks = np.stack([g.ravel() for g in grids], axis=1)
        offsets = ks @ B.T

        counts = np.zeros(n_points, dtype=int)
        near_boundary = np.zeros(n_points, dtype=bool)
        for s in self.simplices:
            E = s.edge_matrix
            for off in offsets:
                lam = np.linalg.solve(E, (pts - (s.apex + off)).T).T
                lam_sum = lam.sum(axis=1)
                inside = np.all(lam > margin, axis=1) & (lam_sum < 1.0 - margin)
                close = (np.any(np.abs(lam) <= margin, axis=1)
                         | (np.abs(1.0 - lam_sum) <= margin)) & np.all(lam > -margin, axis=1)
                counts += inside
                near_boundary |= close & ~inside
        ok = near_boundary | (counts == 1)
        if not np.all(ok):
            bad = np.flatnonzero(~ok)[:5]
            raise GeometryError(
                f"tiling violated for {np.count_nonzero(~ok)} of {n_points} sample points "
                f"(first counts: {counts[bad].tolist()})")
        return True


def standard_germ(d: int) -> GermOfTriangulation:
    """Built-in germ on the integer lattice: [0,1] in d=1, the split unit square in d=2."""
    if d == 1:
        t = make_regular_simplex(np.zeros(1), np.eye(1), 1.0)
        return GermOfTriangulation((t,), np.eye(1), name="standard-1d")
    if d == 2:
        t0 = make_regular_simplex(np.zeros(2), np.eye(2), 1.0)
        # point reflection of t0 through (1/2, 1/2); basis -e
        t1 = make_regular_simplex(np.array([1.0, 1.0]), -np.eye(2), 1.0)
        return GermOfTriangulation((t0, t1), np.eye(2), name="standard-2d")
    raise GeometryError(
        f"no built-in germ for d={d}; available: standard-1d, standard-2d, rotated-2d")


def rotated_germ() -> GermOfTriangulation:
    """The d=2 germ rotated by 45 degrees, with lattice u1*Z + u2*Z."""
    s = 1.0 / math.sqrt(2.0)
    u = np.array([[s, -s], [s, s]])  # columns u1=(1,1)/sqrt2, u2=(-1,1)/sqrt2
    t0 = make_regular_simplex(np.zeros(2), u, 1.0)
    t1 = make_regular_simplex(np.array([0.0, math.sqrt(2.0)]), -u, 1.0)
    return GermOfTriangulation((t0, t1), u, name="rotated-2d")


GERM_CATALOG = {
    "standard-1d": lambda: standard_germ(1),
    "standard-2d": lambda: standard_germ(2),
    "rotated-2d": rotated_germ,
}


def germ_by_name(name: str) -> GermOfTriangulation:
    try:
        return GERM_CATALOG[name]()
    except KeyError:
        raise GeometryError(
            f"unknown germ {name!r}; available: {', '.join(sorted(GERM_CATALOG))}") from None


@dataclass(frozen=True)
class RefinementCells:
    """Level-n translates of the germ simplices lying wholly inside [0,1]^d.

    Cells are stored flat; ``simplex_index`` tags each cell with its germ
    simplex (the per-simplex families H_n).  ``vertices`` holds the
    deduplicated cell-vertex coordinates, ``cell_vertices`` indexes into it
    with the apex first, matching the germ simplex vertex order.
    """

    germ: GermOfTriangulation
    n: int
    simplex_index: np.ndarray   # (N,) int
    offsets: np.ndarray         # (N, d) lattice offsets gamma
    vertices: np.ndarray        # (V, d) unique scaled vertex coordinates
    cell_vertices: np.ndarray   # (N, d+1) int indices into vertices
    cell_volumes: np.ndarray    # (N,)

    def __post_init__(self):
        for name in ("simplex_index", "offsets", "vertices", "cell_vertices", "cell_volumes"):
            getattr(self, name).setflags(write=False)

    @property
    def n_cells(self) -> int:
        return self.simplex_index.shape[0]

    @property
    def d(self) -> int:
        return self.germ.d

    @property
    def total_volume(self) -> float:
        return float(self.cell_volumes.sum())

    def family(self, i: int) -> np.ndarray:
        """Indices of the cells translated from germ simplex i."""
        return np.flatnonzero(self.simplex_index == i)

    def scaled_edge_matrix(self, i: int) -> np.ndarray:
        return self.germ.simplices[i].edge_matrix / self.n

    def apexes(self) -> np.ndarray:
        return self.vertices[self.cell_vertices[:, 0]]


def enumerate_interior_cells(germ: GermOfTriangulation, n: int,
                             domain: Domain | None = None) -> RefinementCells:
    """All translates (gamma + T)/n contained in [0,1]^d, grouped by germ simplex."""
    if n < 1:
        raise GeometryError(f"refinement level must be >= 1, got {n}")
    d = germ.d
    if domain is not None and domain.d != d:
        raise GeometryError("domain dimension does not match germ")
    B = germ.lattice_basis
    Binv = np.linalg.inv(B)
    tol = 1e-9

    sim_idx, offs, verts, vols = [], [], [], []
    for i, s in enumerate(germ.simplices):
        v = s.vertices  # (d+1, d)
        # componentwise bounds for gamma: 0 <= gamma + v_j <= n for all j
        glo = -v.min(axis=0)
        ghi = n - v.max(axis=0)
        if np.any(ghi < glo - tol):
            continue
        # bounding box in lattice coordinates k = Binv @ gamma
        corners = np.array(np.meshgrid(*zip(glo, ghi))).reshape(d, -1)
        kspan = Binv @ corners
        klo = np.floor(kspan.min(axis=1)).astype(int) - 1
        khi = np.ceil(kspan.max(axis=1)).astype(int) + 1
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(klo, khi)], indexing="ij")
        ks = np.stack([g.ravel() for g in grids], axis=1)
        gamma = ks @ B.T  # (M, d)
        cell_verts = gamma[:, None, :] + v[None, :, :]  # (M, d+1, d)
        keep = np.all((cell_verts >= -tol) & (cell_verts <= n + tol), axis=(1, 2))
        if not np.any(keep):
            continue
        gamma = gamma[keep]
        sim_idx.append(np.full(gamma.shape[0], i, dtype=int))
        offs.append(gamma)
        verts.append(cell_verts[keep] / n)
        vols.append(np.full(gamma.shape[0], s.volume / n**d))

    if not sim_idx:
        raise GeometryError(f"no interior cells for germ {germ.name!r} at level n={n}")

    simplex_index = np.concatenate(sim_idx)
    offsets = np.concatenate(offs)
    cell_verts = np.concatenate(verts)             # (N, d+1, d)
    cell_volumes = np.concatenate(vols)

    flat = cell_verts.reshape(-1, d)
    keys = np.round(flat, _DEDUP_DECIMALS)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    # representative coordinates: first occurrence of each key
    first = np.full(uniq.shape[0], -1, dtype=int)
    order = np.arange(flat.shape[0])[::-1]
    first[inverse[order]] = order
    vertices = flat[first]
    cell_vertices = inverse.reshape(-1, d + 1)

    return RefinementCells(germ=germ, n=n, simplex_index=simplex_index, offsets=offsets,
                           vertices=vertices, cell_vertices=cell_vertices,
                           cell_volumes=cell_volumes)


def affine_gradient(simplex: Simplex, values) -> np.ndarray:
    """Gradient of the affine function interpolating ``values`` at the vertices.

    Solves <g, v_i - v_0> = values_i - values_0 for i = 1..d.
    """
    vals = _as_array(values, "values")
    if vals.shape != (simplex.d + 1,):
        raise GeometryError(f"need {simplex.d + 1} vertex values, got shape {vals.shape}")
    E = simplex.edge_matrix
    try:
        return np.linalg.solve(E.T, vals[1:] - vals[0])
    except np.linalg.LinAlgError as exc:
        raise GeometryError("degenerate simplex: singular edge system") from exc


def gradient_in_basis(gradient: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Coordinates of a canonical gradient in the orthonormal basis u (columns)."""
    return u.T @ np.asarray(gradient, dtype=float)
