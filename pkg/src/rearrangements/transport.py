"""Semi-discrete optimal transport from Lebesgue measure on the unit cube.

The monotone map onto a finite atom cloud is the gradient of the max-affine
potential phi(z) = max_j <z, y_j> - psi_j; the dual weights psi are found by
maximizing the concave Kantorovich functional with a damped gradient-only
ascent: limited-memory quasi-Newton directions built from gradient history
(no Hessian assembly) with monotone Armijo backtracking.

Cell volumes are exact in d <= 2: power-diagram cells are built by clipping
the cube against the bisector half-planes of the regular-triangulation
neighbours (all-pairs fallback), batched across cells.  In d >= 3 volumes are
estimated on a fixed low-discrepancy sample shared across iterations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import Domain
from .gradients import GradientAtomCloud
from .rearrange1d import ConvexCurve1D

MERGE_DECIMALS = 12          # atoms equal after rounding here are merged
MIN_TOL_EXACT = 1e-8         # d <= 2, exact cell volumes
MIN_TOL_MC = 1e-3            # d >= 3, Monte Carlo volumes
_MC_LOG2_SAMPLES = 20


class TransportError(RuntimeError):
    """Solver failure (non-convergence, invalid input)."""


@dataclass(frozen=True)
class SemiDiscretePotential:
    """Dual weights defining the Laguerre cells / the monotone map onto the atoms."""

    atoms: np.ndarray        # (k, d)
    psi: np.ndarray          # (k,)
    weights: np.ndarray      # (k,) target masses (post-merge)
    domain: Domain
    mass_residual: float     # max_j |vol(cell_j) - w_j| at the returned iterate
    iterations: int
    converged: bool
    merged: int = 0          # number of atoms removed by duplicate merging

    def __post_init__(self):
        for name in ("atoms", "psi", "weights"):
            getattr(self, name).setflags(write=False)

    @property
    def k(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class ConvexPotential:
    """Max-affine convex function phi(z) = max_j(<z, y_j> - psi_j) + const."""

    atoms: np.ndarray
    psi: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        self.atoms.setflags(write=False)
        self.psi.setflags(write=False)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        scalar = z.ndim == 1
        pts = np.atleast_2d(z)
        out = np.empty(pts.shape[0])
        for lo in range(0, pts.shape[0], 65536):
            chunk = pts[lo:lo + 65536]
            out[lo:lo + 65536] = np.max(chunk @ self.atoms.T - self.psi, axis=1)
        out += self.const
        return float(out[0]) if scalar else out

    def gradient(self, z) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(z, dtype=float))
        idx = np.argmax(pts @ self.atoms.T - self.psi, axis=1)
        return self.atoms[idx]


# ---------------------------------------------------------------------------
# batched convex-polygon machinery (d = 2)
# ---------------------------------------------------------------------------

def _clip_batch(V, count, normals, offsets):
    """Sutherland-Hodgman step for all cells at once: keep <n, z> <= c.

    V is (C, Vmax, 2) with the first ``count`` slots valid, CCW.  Cells whose
    half-plane is disabled pass (n, c) = (0, 1).
    """
    C, Vmax, _ = V.shape
    rows = np.arange(C)[:, None]
    idx = np.arange(Vmax)[None, :]
    valid = idx < count[:, None]
    s = offsets[:, None] - np.einsum("cvd,cd->cv", V, normals)
    nxt = (idx + 1) % np.maximum(count, 1)[:, None]
    Vn = V[rows, nxt]
    sn = s[rows, nxt]
    inside = s >= 0.0
    emit_v = valid & inside
    cross = valid & (inside != (sn >= 0.0))
    denom = s - sn
    t = np.where(cross, s / np.where(denom == 0.0, 1.0, denom), 0.0)
    X = V + t[..., None] * (Vn - V)

    flags = np.empty((C, 2 * Vmax), dtype=bool)
    flags[:, 0::2] = emit_v
    flags[:, 1::2] = cross
    cand = np.empty((C, 2 * Vmax, 2))
    cand[:, 0::2] = V
    cand[:, 1::2] = X

    out_w = Vmax + 2
    pos = np.cumsum(flags, axis=1) - 1
    if np.any(pos[:, -1] >= out_w):
        raise TransportError("polygon clipping overflow (degenerate cell geometry)")
    slot = np.where(flags, pos, out_w)
    newV = np.zeros((C, out_w + 1, 2))
    np.put_along_axis(newV[..., 0], slot, cand[..., 0], axis=1)
    np.put_along_axis(newV[..., 1], slot, cand[..., 1], axis=1)
    return newV[:, :out_w], flags.sum(axis=1)


def _shrink(V, count):
    w = max(int(count.max(initial=0)), 3)
    return V[:, :w], count


def _poly_areas(V, count):
    C, Vmax, _ = V.shape
    rows = np.arange(C)[:, None]
    idx = np.arange(Vmax)[None, :]
    valid = idx < count[:, None]
    nxt = (idx + 1) % np.maximum(count, 1)[:, None]
    Vn = V[rows, nxt]
    cr = V[..., 0] * Vn[..., 1] - V[..., 1] * Vn[..., 0]
    return 0.5 * np.sum(np.where(valid, cr, 0.0), axis=1)


def _poly_half_sq_moments(V, count, centers):
    """Exact integral of |z - y|^2 / 2 over each polygon (fan + midpoint rule)."""
    C, Vmax, _ = V.shape
    total = np.zeros(C)
    v0 = V[:, 0]
    for i in range(1, Vmax - 1):
        use = count >= i + 2
        a, b2 = V[:, i], V[:, i + 1]
        area = 0.5 * ((a[:, 0] - v0[:, 0]) * (b2[:, 1] - v0[:, 1])
                      - (a[:, 1] - v0[:, 1]) * (b2[:, 0] - v0[:, 0]))
        acc = np.zeros(C)
        for m in ((v0 + a) / 2, (a + b2) / 2, (b2 + v0) / 2):
            acc += 0.5 * np.sum((m - centers) ** 2, axis=1)
        total += np.where(use, area * acc / 3.0, 0.0)
    return total


def _all_pairs_neighbors(k: int):
    nbr = np.empty((k, max(k - 1, 1)), dtype=int)
    for j in range(k):
        nbr[j, :k - 1] = [i for i in range(k) if i != j]
    nbr_valid = np.zeros_like(nbr, dtype=bool)
    nbr_valid[:, :k - 1] = True
    hidden = np.zeros(k, dtype=bool)
    return nbr, nbr_valid, hidden


def _regular_neighbors(atoms: np.ndarray, kphi: np.ndarray):
    """Adjacency of the power diagram via the lower hull of lifted atoms."""
    k = atoms.shape[0]
    if k <= 3:
        return _all_pairs_neighbors(k)
    lift = np.sum(atoms**2, axis=1) - 2.0 * kphi
    pts = np.column_stack([atoms, lift])
    hull = None
    for opts in ("Qt", "Qt QJ"):
        try:
            hull = ConvexHull(pts, qhull_options=opts)
            break
        except QhullError:
            continue
    if hull is None:
        return _all_pairs_neighbors(k)
    lower = hull.equations[:, 2] < -1e-12
    tris = hull.simplices[lower]
    if tris.size == 0:
        return _all_pairs_neighbors(k)
    adj = [set() for _ in range(k)]
    for a, b, c in tris:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    on_hull = np.zeros(k, dtype=bool)
    on_hull[np.unique(tris)] = True
    deg = max(max(len(s) for s in adj), 1)
    nbr = np.zeros((k, deg), dtype=int)
    nbr_valid = np.zeros((k, deg), dtype=bool)
    for j, s in enumerate(adj):
        lst = sorted(s)
        nbr[j, :len(lst)] = lst
        nbr_valid[j, :len(lst)] = True
    return nbr, nbr_valid, ~on_hull


def _cells_2d(atoms: np.ndarray, kphi: np.ndarray, all_pairs: bool = False):
    """Polygons of all Laguerre cells clipped to the unit square."""
    k = atoms.shape[0]
    psi = 0.5 * np.sum(atoms**2, axis=1) - kphi
    if all_pairs:
        nbr, nbr_valid, hidden = _all_pairs_neighbors(k)
    else:
        nbr, nbr_valid, hidden = _regular_neighbors(atoms, kphi)
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    V = np.broadcast_to(square, (k, 4, 2)).copy()
    count = np.full(k, 4)
    count[hidden] = 0
    for t in range(nbr.shape[1]):
        j = nbr[:, t]
        ok = nbr_valid[:, t]
        n = np.where(ok[:, None], atoms[j] - atoms, 0.0)
        c = np.where(ok, psi[j] - psi, 1.0)
        V, count = _clip_batch(V, count, n, c)
        V, count = _shrink(V, count)
    return V, count


# ---------------------------------------------------------------------------
# d = 1 cells: upper envelope of lines on [0,1]
# ---------------------------------------------------------------------------

def _envelope_1d(y: np.ndarray, psi: np.ndarray):
    """Active pieces of max_j (y_j x - psi_j): (indices, piece start points)."""
    order = np.argsort(y, kind="stable")
    js: list[int] = []
    xs: list[float] = []
    for j in order:
        x_new = -math.inf
        while js:
            top = js[-1]
            denom = y[j] - y[top]
            if denom <= 0:
                # equal slopes: keep the lower psi
                if psi[j] < psi[top]:
                    js.pop()
                    xs.pop()
                    continue
                x_new = math.inf
                break
            x_new = (psi[j] - psi[top]) / denom
            if x_new <= xs[-1]:
                js.pop()
                xs.pop()
                continue
            break
        if x_new == math.inf:
            continue
        if not js:
            x_new = -math.inf
        js.append(int(j))
        xs.append(x_new)
    return js, xs


def _cells_1d(atoms1, psi):
    """Exact cell intervals on [0,1] per atom: (lo, hi) arrays."""
    k = atoms1.shape[0]
    lo = np.zeros(k)
    hi = np.zeros(k)
    js, xs = _envelope_1d(atoms1, psi)
    for i, j in enumerate(js):
        a = xs[i]
        b = xs[i + 1] if i + 1 < len(js) else math.inf
        lo[j] = min(max(a, 0.0), 1.0)
        hi[j] = min(max(b, 0.0), 1.0)
    return lo, hi


def _exact_kphi_1d(atoms1: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Closed-form dual for d=1: boundaries at cumulative weights."""
    order = np.argsort(atoms1, kind="stable")
    y = atoms1[order]
    c = np.cumsum(weights[order])
    psi = np.empty_like(y)
    psi[0] = 0.0
    psi[1:] = np.cumsum(c[:-1] * np.diff(y))
    out = np.empty_like(psi)
    out[order] = 0.5 * y**2 - psi
    return out


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

class _Geometry2D:
    def __init__(self, atoms):
        self.atoms = atoms

    def volumes(self, kphi):
        V, count = _cells_2d(self.atoms, kphi)
        return _poly_areas(V, count), (V, count)

    def dual(self, kphi, weights, geom):
        V, count = geom
        vols = _poly_areas(V, count)
        mom = _poly_half_sq_moments(V, count, self.atoms)
        return float(weights @ kphi + mom.sum() - kphi @ vols)

    def cost(self, kphi):
        V, count = _cells_2d(self.atoms, kphi)
        return float(_poly_half_sq_moments(V, count, self.atoms).sum())


class _Geometry1D:
    def __init__(self, atoms):
        self.atoms = atoms[:, 0]

    def volumes(self, kphi):
        psi = 0.5 * self.atoms**2 - kphi
        lo, hi = _cells_1d(self.atoms, psi)
        return hi - lo, (lo, hi)

    def dual(self, kphi, weights, geom):
        lo, hi = geom
        mom = ((hi - self.atoms) ** 3 - (lo - self.atoms) ** 3) / 6.0
        return float(weights @ kphi + mom.sum() - kphi @ (hi - lo))

    def cost(self, kphi):
        psi = 0.5 * self.atoms**2 - kphi
        lo, hi = _cells_1d(self.atoms, psi)
        return float((((hi - self.atoms) ** 3 - (lo - self.atoms) ** 3) / 6.0).sum())


class _GeometryMC:
    """Fixed low-discrepancy sample in the cube; shared across iterations."""

    def __init__(self, atoms, log2_samples=_MC_LOG2_SAMPLES):
        from scipy.stats import qmc

        self.atoms = atoms
        d = atoms.shape[1]
        sob = qmc.Sobol(d, scramble=False)
        self.sample = sob.random_base2(log2_samples)
        self._n = self.sample.shape[0]

    def _assign(self, kphi):
        psi = 0.5 * np.sum(self.atoms**2, axis=1) - kphi
        idx = np.empty(self._n, dtype=int)
        best = np.empty(self._n)
        for lo in range(0, self._n, 65536):
            sl = slice(lo, min(lo + 65536, self._n))
            scores = self.sample[sl] @ self.atoms.T - psi
            idx[sl] = np.argmax(scores, axis=1)
            best[sl] = np.max(scores, axis=1)
        return idx, best

    def volumes(self, kphi):
        idx, _ = self._assign(kphi)
        vols = np.bincount(idx, minlength=self.atoms.shape[0]) / self._n
        return vols, idx

    def dual(self, kphi, weights, geom):
        idx = geom
        y = self.atoms[idx]
        integrand = 0.5 * np.sum((self.sample - y) ** 2, axis=1) - kphi[idx]
        return float(weights @ kphi + integrand.mean())

    def cost(self, kphi):
        idx, _ = self._assign(kphi)
        y = self.atoms[idx]
        return float(np.mean(0.5 * np.sum((self.sample - y) ** 2, axis=1)))


def _merge_atoms(atoms, weights):
    keys = np.round(atoms, MERGE_DECIMALS)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    if uniq.shape[0] == atoms.shape[0]:
        return atoms, weights, 0
    k = uniq.shape[0]
    w = np.zeros(k)
    np.add.at(w, inv, weights)
    merged = np.zeros((k, atoms.shape[1]))
    np.add.at(merged, inv, atoms * weights[:, None])
    merged /= w[:, None]
    n_merged = atoms.shape[0] - k
    warnings.warn(f"merged {n_merged} duplicate atoms (weights summed)", stacklevel=3)
    return merged, w, n_merged


def _geometry_for(atoms):
    d = atoms.shape[1]
    if d == 1:
        return _Geometry1D(atoms)
    if d == 2:
        return _Geometry2D(atoms)
    return _GeometryMC(atoms)


def _quasi_newton_direction(g: np.ndarray, past_s: list, past_y: list, k: int) -> np.ndarray:
    """Two-loop recursion over the stored (step, gradient-change) pairs.

    Falls back to a conservatively scaled gradient when no history exists;
    the last pair fixes the initial scaling (Barzilai-Borwein).
    """
    q = g.copy()
    stack = []
    for s, y in zip(reversed(past_s), reversed(past_y)):
        rho = 1.0 / float(s @ y)
        a = rho * float(s @ q)
        stack.append((a, rho, s, y))
        q -= a * y
    if past_s:
        s, y = past_s[-1], past_y[-1]
        q *= float(s @ y) / float(y @ y)
    else:
        q *= 1.0 / (2.0 * k)
    for a, rho, s, y in reversed(stack):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def solve_semidiscrete(cloud: GradientAtomCloud, domain: Domain | None = None,
                       tol: float | None = None, max_iter: int = 20000,
                       memory: int = 10, trace: list | None = None) -> SemiDiscretePotential:
    """Dual ascent until every Laguerre-cell volume matches its atom weight.

    ``tol`` bounds the mass residual max_j |vol_j - w_j| (defaults: 1e-8 for
    d <= 2 where volumes are exact, 1e-3 for d >= 3 Monte Carlo volumes).
    ``trace``, when given, collects the accepted dual objective values.
    """
    d = cloud.d
    domain = Domain(d) if domain is None else domain
    if domain.d != d:
        raise TransportError(f"domain dimension {domain.d} != cloud dimension {d}")
    min_tol = MIN_TOL_EXACT if d <= 2 else MIN_TOL_MC
    tol = min_tol if tol is None else float(tol)
    if tol < min_tol:
        raise TransportError(f"tolerance {tol:g} below the floor {min_tol:g} for d={d}")

    atoms, weights, merged = _merge_atoms(cloud.atoms.copy(), cloud.weights.copy())
    k = atoms.shape[0]
    if k == 1:
        return SemiDiscretePotential(atoms=atoms, psi=np.zeros(1), weights=weights,
                                     domain=domain, mass_residual=0.0, iterations=0,
                                     converged=True, merged=merged)

    geom_engine = _geometry_for(atoms)
    kphi = _exact_kphi_1d(atoms[:, 0], weights) if d == 1 else np.zeros(k)

    vols, geom = geom_engine.volumes(kphi)
    F = geom_engine.dual(kphi, weights, geom)
    g = weights - vols
    res = float(np.max(np.abs(g)))
    if trace is not None:
        trace.append(F)

    past_s: list = []
    past_y: list = []
    damp = 1.0
    it = 0
    while res > tol and it < max_iter:
        it += 1
        direction = _quasi_newton_direction(g, past_s, past_y, k)
        slope = float(direction @ g)
        if slope <= 0.0:
            direction = g.copy()
            slope = float(g @ g)
            past_s.clear()
            past_y.clear()
        a = damp
        accepted = False
        for _ in range(60):
            kphi_new = kphi + a * direction
            vols_new, geom_new = geom_engine.volumes(kphi_new)
            F_new = geom_engine.dual(kphi_new, weights, geom_new)
            if F_new >= F + 1e-4 * a * slope:
                accepted = True
                break
            a *= 0.5
        if not accepted:
            break
        g_new = weights - vols_new
        s = a * direction
        y = g - g_new
        if float(s @ y) > 1e-16:
            past_s.append(s)
            past_y.append(y)
            if len(past_s) > memory:
                past_s.pop(0)
                past_y.pop(0)
        kphi, vols, F, g = kphi_new, vols_new, F_new, g_new
        res = float(np.max(np.abs(g)))
        # standard safeguard: damp the next trial step while some cell is empty
        damp = 0.5 if np.any((vols <= 0) & (weights > 0)) else 1.0
        if trace is not None:
            trace.append(F)

    psi = 0.5 * np.sum(atoms**2, axis=1) - kphi
    psi = psi - psi.min()
    pot = SemiDiscretePotential(atoms=atoms, psi=psi, weights=weights, domain=domain,
                                mass_residual=res, iterations=it, converged=res <= tol,
                                merged=merged)
    if not pot.converged:
        err = TransportError(
            f"semi-discrete ascent did not reach tol={tol:g} within {max_iter} iterations "
            f"(mass residual {res:.3e}); the partial potential is attached")
        err.potential = pot
        raise err
    return pot


def laguerre_volumes(potential: SemiDiscretePotential) -> np.ndarray:
    """Exact (d <= 2) or Monte Carlo (d >= 3) volumes of the final cells."""
    kphi = 0.5 * np.sum(potential.atoms**2, axis=1) - potential.psi
    vols, _ = _geometry_for(potential.atoms).volumes(kphi)
    return vols


def brenier_map(potential: SemiDiscretePotential, z) -> np.ndarray:
    """Map points of the cube to their atoms by the argmax rule."""
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 1
    pts = np.atleast_2d(z)
    out = np.empty((pts.shape[0], potential.d))
    for lo in range(0, pts.shape[0], 65536):
        chunk = pts[lo:lo + 65536]
        idx = np.argmax(chunk @ potential.atoms.T - potential.psi, axis=1)
        out[lo:lo + 65536] = potential.atoms[idx]
    return out[0] if scalar else out


def convex_potential(potential: SemiDiscretePotential, z0=None,
                     offset: float = 0.0) -> ConvexPotential:
    """The convex rearrangement potential pinned to ``offset`` at z0."""
    z0 = potential.domain.z0 if z0 is None else np.asarray(z0, dtype=float)
    base = float(np.max(z0 @ potential.atoms.T - potential.psi))
    return ConvexPotential(atoms=potential.atoms.copy(), psi=potential.psi.copy(),
                           const=offset - base)


def transport_cost(potential: SemiDiscretePotential) -> float:
    """Quadratic transport cost integral of |z - M(z)|^2 / 2 over the cube."""
    kphi = 0.5 * np.sum(potential.atoms**2, axis=1) - potential.psi
    return _geometry_for(potential.atoms).cost(kphi)


def monotonicity_min(potential: SemiDiscretePotential, n_pairs: int = 10_000,
                     rng=None) -> float:
    """min over sampled pairs of <z - w, M(z) - M(w)> (>= 0 up to rounding)."""
    rng = np.random.default_rng(0) if rng is None else rng
    z = rng.random((n_pairs, potential.d))
    w = rng.random((n_pairs, potential.d))
    mz = brenier_map(potential, z)
    mw = brenier_map(potential, w)
    return float(np.min(np.sum((z - w) * (mz - mw), axis=1)))


def oplus_rearrangement(curves) -> ConvexPotential:
    """Separable potential sum_i C_i(z_i) as a max-affine function.

    Each input is a piecewise-linear convex curve; the affine pieces of the
    sum are all combinations of per-axis tangent lines, i.e. the product
    cloud of the marginal slope measures with summed intercepts.
    """
    curves = list(curves)
    if not curves:
        raise TransportError("need at least one curve")
    slopes, intercepts = zip(*(c.tangent_lines() for c in curves))
    grids = np.meshgrid(*slopes, indexing="ij")
    atoms = np.stack([g.ravel() for g in grids], axis=1)
    bgrids = np.meshgrid(*intercepts, indexing="ij")
    psi = np.stack([g.ravel() for g in bgrids], axis=1).sum(axis=1)
    return ConvexPotential(atoms=atoms, psi=psi, const=0.0)


def assignment_oracle(source_points, source_weights, cloud: GradientAtomCloud) -> float:
    """Exact LP transport cost between a discrete source and the cloud.

    Quadratic ground cost |s - y|^2 / 2; desk-scale guard on the sizes.
    """
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    s = np.atleast_2d(np.asarray(source_points, dtype=float))
    sw = np.asarray(source_weights, dtype=float).reshape(-1)
    if s.shape[0] > 2000:
        raise TransportError(f"assignment oracle limited to 2000 source points, got {s.shape[0]}")
    if cloud.n_atoms > 50:
        raise TransportError(f"assignment oracle limited to 50 atoms, got {cloud.n_atoms}")
    sw = sw / sw.sum()
    m, k = s.shape[0], cloud.n_atoms
    cost = 0.5 * np.sum((s[:, None, :] - cloud.atoms[None, :, :]) ** 2, axis=2).ravel()

    rows, cols, vals = [], [], []
    for i in range(m):
        rows.extend([i] * k)
        cols.extend(range(i * k, (i + 1) * k))
        vals.extend([1.0] * k)
    for j in range(k - 1):  # last column constraint is redundant
        rows.extend([m + j] * m)
        cols.extend(range(j, m * k, k))
        vals.extend([1.0] * m)
    A = coo_matrix((vals, (rows, cols)), shape=(m + k - 1, m * k))
    b = np.concatenate([sw, cloud.weights[:-1]])
    res = linprog(cost, A_eq=A.tocsr(), b_eq=b, bounds=(0, None), method="highs")
    if not res.success:
        raise TransportError(f"assignment oracle LP failed: {res.message}")
    return float(res.fun)
