"""Renormalized gradient clouds of piecewise-affine interpolants.

One atom per interior refinement cell: the affine-interpolant gradient over
that cell divided by b_n, weighted by the cell's share of the interior volume.
Atoms are stored in canonical coordinates; views in a simplex basis u are
computed on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import FieldModel, FieldSample
from .geometry import GermOfTriangulation, RefinementCells

WEIGHT_TOL = 1e-12


class GradientError(ValueError):
    """Invalid cloud construction input."""


@dataclass(frozen=True)
class RenormalizationSchedule:
    """A positive renormalizing sequence n -> b_n."""

    rule: str
    fn: Callable[[int], float]
    label: str = ""

    def __call__(self, n: int) -> float:
        b = float(self.fn(n))
        if not b > 0:
            raise GradientError(f"schedule {self.rule!r} gave b_n = {b} at n = {n}")
        return b


def power_schedule(c: float = 1.0, beta: float = 0.5) -> RenormalizationSchedule:
    """b_n = c * n^beta."""
    if c <= 0:
        raise GradientError(f"power schedule needs c > 0, got {c}")
    return RenormalizationSchedule(rule="power", fn=lambda n: c * n**beta,
                                   label=f"{c:g}*n^{beta:g}")


def sqrt_schedule() -> RenormalizationSchedule:
    """b_n = sqrt(n)."""
    return RenormalizationSchedule(rule="power", fn=lambda n: math.sqrt(n), label="sqrt(n)")


def sigma_schedule(model: FieldModel) -> RenormalizationSchedule:
    """b_n = n * sigma(1/n) for a stationary-increment 1-D model."""
    if model.sigma2 is None:
        raise GradientError(f"model {model.name!r} has no sigma^2; sigma rule unavailable")
    return RenormalizationSchedule(rule="sigma", fn=lambda n: n * float(model.sigma(1.0 / n)),
                                   label=f"n*sigma(1/n)[{model.name}]")


def explicit_schedule(values) -> RenormalizationSchedule:
    """b_n looked up from an explicit mapping or sequence (1-based)."""
    if isinstance(values, dict):
        table = {int(k): float(v) for k, v in values.items()}
        fn = lambda n: table[n]
    else:
        arr = np.asarray(values, dtype=float)
        fn = lambda n: float(arr[n - 1])
    return RenormalizationSchedule(rule="explicit", fn=fn, label="explicit")


@dataclass(frozen=True)
class GradientAtomCloud:
    """Weighted atoms in R^d: the empirical measure of the renormalized gradient.

    ``simplex_index`` tags each atom with its germ simplex family,
    ``offsets`` with the originating lattice offset; ``bases`` holds the
    per-family orthonormal bases when the cloud came from regular simplices.
    """

    atoms: np.ndarray                 # (N, d)
    weights: np.ndarray               # (N,)
    simplex_index: np.ndarray = None  # type: ignore[assignment]
    offsets: np.ndarray = None        # type: ignore[assignment]
    bases: tuple = None               # type: ignore[assignment]

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.shape[0] != weights.shape[0]:
            raise GradientError("atoms and weights must have equal length")
        if atoms.shape[0] == 0:
            raise GradientError("empty cloud")
        if np.any(weights <= 0):
            raise GradientError("weights must be positive")
        if abs(math.fsum(weights.tolist()) - 1.0) > WEIGHT_TOL:
            raise GradientError(f"weights must sum to 1 within {WEIGHT_TOL}")
        si = (np.zeros(atoms.shape[0], dtype=int) if self.simplex_index is None
              else np.asarray(self.simplex_index, dtype=int))
        for a in (atoms, weights, si):
            a.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "simplex_index", si)
        if self.offsets is not None:
            off = np.asarray(self.offsets, dtype=float)
            off.setflags(write=False)
            object.__setattr__(self, "offsets", off)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def scalar_atoms(self) -> np.ndarray:
        if self.d != 1:
            raise GradientError(f"cloud is {self.d}-dimensional, expected scalar atoms")
        return self.atoms[:, 0]

    def in_basis(self, u: np.ndarray) -> np.ndarray:
        """Atom coordinates in the orthonormal basis u (columns)."""
        return self.atoms @ np.asarray(u, dtype=float)

    def family(self, i: int) -> "GradientAtomCloud":
        sel = self.simplex_index == i
        if not np.any(sel):
            raise GradientError(f"no atoms in simplex family {i}")
        w = self.weights[sel]
        return GradientAtomCloud(atoms=self.atoms[sel], weights=w / w.sum(),
                                 simplex_index=self.simplex_index[sel],
                                 offsets=None if self.offsets is None else self.offsets[sel],
                                 bases=self.bases)

    def marginal(self, axis: int) -> "GradientAtomCloud":
        return GradientAtomCloud(atoms=self.atoms[:, [axis]], weights=self.weights,
                                 simplex_index=self.simplex_index)

    def sorted_measure(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms lexicographically sorted with weights, for measure comparisons."""
        order = np.lexsort(self.atoms.T[::-1])
        return self.atoms[order], self.weights[order]


def cloud_from_atoms(atoms, weights=None) -> GradientAtomCloud:
    """Convenience constructor; equal weights when none are given."""
    a = np.asarray(atoms, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    w = np.full(a.shape[0], 1.0 / a.shape[0]) if weights is None else np.asarray(weights, float)
    w = w / math.fsum(w.tolist())
    return GradientAtomCloud(atoms=a, weights=w)


def build_cloud(sample: FieldSample, cells: RefinementCells, b) -> GradientAtomCloud:
    """One atom per interior cell: affine gradient / b_n, weight = volume share.

    ``b`` is a RenormalizationSchedule (evaluated at cells.n) or a positive number.
    """
    if sample.points.shape[0] != cells.vertices.shape[0]:
        raise GradientError(
            f"sample has {sample.points.shape[0]} values but the refinement needs "
            f"{cells.vertices.shape[0]} vertex values")
    if not np.allclose(sample.points, cells.vertices, atol=1e-9):
        raise GradientError("sample vertex set does not match the refinement vertices")
    bn = b(cells.n) if isinstance(b, RenormalizationSchedule) else float(b)
    if not bn > 0:
        raise GradientError(f"renormalization must be positive, got {bn}")

    vals = sample.values[cells.cell_vertices]          # (N, d+1)
    deltas = vals[:, 1:] - vals[:, :1]                 # (N, d)
    atoms = np.empty((cells.n_cells, cells.d))
    for i in range(len(cells.germ.simplices)):
        sel = cells.family(i)
        if sel.size == 0:
            continue
        E = cells.scaled_edge_matrix(i)
        atoms[sel] = np.linalg.solve(E.T, deltas[sel].T).T / bn
    total = math.fsum(cells.cell_volumes.tolist())
    weights = cells.cell_volumes / total
    bases = tuple(s.basis for s in cells.germ.simplices)
    return GradientAtomCloud(atoms=atoms, weights=weights,
                             simplex_index=cells.simplex_index.copy(),
                             offsets=cells.offsets.copy(), bases=bases)


def per_simplex_covariance(cloud: GradientAtomCloud, simplex_index: int,
                           u: np.ndarray | None = None) -> np.ndarray:
    """Weighted second-moment matrix of one simplex family, in basis u.

    The atoms are centred at zero by construction (gradients of a centred
    field), so the second moment is the covariance estimate.
    """
    fam = cloud.family(simplex_index)
    a = fam.atoms if u is None else fam.in_basis(u)
    m = (a * fam.weights[:, None]).T @ a
    return 0.5 * (m + m.T)


def pooled_covariance(cloud: GradientAtomCloud, u: np.ndarray | None = None) -> np.ndarray:
    a = cloud.atoms if u is None else cloud.in_basis(u)
    m = (a * cloud.weights[:, None]).T @ a
    return 0.5 * (m + m.T)


def empirical_cf(cloud: GradientAtomCloud, h) -> complex:
    """Characteristic function of the cloud at frequency h."""
    h = np.asarray(h, dtype=float).reshape(-1)
    if h.shape[0] != cloud.d:
        raise GradientError(f"frequency must have dimension {cloud.d}")
    phase = cloud.atoms @ h
    return complex(np.sum(cloud.weights * np.exp(1j * phase)))


def empirical_cf_grid(cloud: GradientAtomCloud, h_grid: np.ndarray) -> np.ndarray:
    """Vectorized empirical CF on an (M, d) grid of frequencies."""
    H = np.atleast_2d(np.asarray(h_grid, dtype=float))
    phases = cloud.atoms @ H.T                          # (N, M)
    return (cloud.weights[None, :] @ np.exp(1j * phases)).ravel()


def theoretical_cell_covariance(model: FieldModel, apex, u, n: int, b: float) -> np.ndarray:
    """Exact covariance of the renormalized gradient over one cell, in basis u.

    Entry (i,j) is (n/b)^2 times the rectangle increment of the model
    covariance along the scaled edges u^i/n, u^j/n from the apex.
    """
    z = np.asarray(apex, dtype=float)
    U = np.asarray(u, dtype=float)
    d = z.shape[0]
    zi = z[None, :] + U.T[:, :] / n                     # (d, d): z + u^i/n
    g = model.covariance
    big = g(zi[:, None, :], zi[None, :, :])             # Gamma(z+ui/n, z+uj/n)
    zi_z = g(zi, np.broadcast_to(z, (d, d)))            # Gamma(z+ui/n, z)
    zz = g(z, z)
    cov = (n / b) ** 2 * (big - zi_z[:, None] - zi_z[None, :] + zz)
    return 0.5 * (cov + cov.T)
