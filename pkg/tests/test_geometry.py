import math

import numpy as np
import pytest

from rearrangements.geometry import (Domain, GeometryError, Simplex, affine_gradient,
                                     enumerate_interior_cells, germ_by_name,
                                     gradient_in_basis, make_regular_simplex,
                                     rotated_germ, standard_germ)


def test_regular_simplex_identity_basis():
    s = make_regular_simplex(np.zeros(2), np.eye(2), 1.0)
    assert np.allclose(s.vertices, [[0, 0], [1, 0], [0, 1]])
    assert s.volume == pytest.approx(0.5)


def test_regular_simplex_rotated_apex():
    # apex (0, sqrt2), basis -u with u = ((1,1)/sqrt2, (-1,1)/sqrt2)
    r = 1.0 / math.sqrt(2.0)
    u = np.array([[r, -r], [r, r]])
    s = make_regular_simplex(np.array([0.0, math.sqrt(2.0)]), -u, 1.0)
    expected = [[0.0, math.sqrt(2.0)],
                [-r, math.sqrt(2.0) - r],
                [r, math.sqrt(2.0) - r]]
    assert np.allclose(s.vertices, expected)


def test_regular_simplex_1d_segment():
    s = make_regular_simplex(np.zeros(1), np.eye(1), 0.25)
    assert np.allclose(s.vertices, [[0.0], [0.25]])


def test_regular_simplex_rejects_non_orthonormal():
    with pytest.raises(GeometryError):
        make_regular_simplex(np.zeros(2), np.array([[1.0, 0.1], [0.0, 1.0]]), 1.0)


def test_degenerate_simplex_rejected():
    with pytest.raises(GeometryError):
        Simplex(vertices=np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))


def test_standard_germ_1d():
    g = standard_germ(1)
    assert len(g.simplices) == 1
    assert np.allclose(g.lattice_basis, np.eye(1))
    g.tiling_check(2000)


def test_standard_germ_2d_point_reflection():
    g = standard_germ(2)
    assert len(g.simplices) == 2
    # second simplex is the reflection of the first through (1/2, 1/2)
    reflected = np.sort(1.0 - g.simplices[0].vertices, axis=0)
    assert np.allclose(np.sort(g.simplices[1].vertices, axis=0), reflected)
    g.tiling_check(5000)


def test_standard_germ_unsupported_dimension():
    with pytest.raises(GeometryError, match="standard-2d"):
        standard_germ(3)


def test_rotated_germ_lattice_and_tiling():
    g = rotated_germ()
    r = 1.0 / math.sqrt(2.0)
    assert np.allclose(g.lattice_basis[:, 0], [r, r])
    assert np.allclose(g.lattice_basis[:, 1], [-r, r])
    assert g.covolume == pytest.approx(1.0)
    g.tiling_check(5000)


def test_germ_catalog_lookup():
    assert germ_by_name("standard-1d").name == "standard-1d"
    with pytest.raises(GeometryError, match="rotated-2d"):
        germ_by_name("nope")


def test_interior_cells_1d():
    cells = enumerate_interior_cells(standard_germ(1), 4)
    assert cells.n_cells == 4
    assert cells.total_volume == pytest.approx(1.0)
    starts = np.sort(cells.apexes()[:, 0])
    assert np.allclose(starts, [0.0, 0.25, 0.5, 0.75])


def test_interior_cells_standard_2d_no_boundary_loss():
    # straight germ at level n: 2 n^2 cells of volume 1/(2 n^2), no loss
    cells = enumerate_interior_cells(standard_germ(2), 2)
    assert cells.n_cells == 8
    assert cells.total_volume == pytest.approx(1.0)
    cells4 = enumerate_interior_cells(standard_germ(2), 4)
    assert cells4.n_cells == 32
    assert np.allclose(cells4.cell_volumes, 1.0 / 32)


def test_interior_cells_rotated_deficit():
    # rotated cells clip at the boundary: per-translate-pair volume 1/n^2
    germ = rotated_germ()
    cells = enumerate_interior_cells(germ, 4)
    assert np.allclose(cells.cell_volumes, 1.0 / (2 * 16))
    assert cells.total_volume >= 1.0 - 4.0 / 4.0
    deficits = {}
    for n in (4, 8, 16, 32, 64):
        deficits[n] = 1.0 - enumerate_interior_cells(germ, n).total_volume
        # germ constant bounded by 4 across the tested range
        assert n * deficits[n] <= 4.0
    seq = [deficits[n] for n in (4, 8, 16, 32, 64)]
    assert all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))


def test_cells_inside_cube_and_disjoint():
    rng = np.random.default_rng(0)
    for name in ("standard-2d", "rotated-2d"):
        cells = enumerate_interior_cells(germ_by_name(name), 8)
        assert np.all(cells.vertices >= -1e-9) and np.all(cells.vertices <= 1 + 1e-9)
        # sampled points lie in at most one cell
        pts = rng.random((2000, 2))
        counts = np.zeros(2000, dtype=int)
        for i in range(cells.n_cells):
            idx = cells.cell_vertices[i]
            simplex = Simplex(vertices=cells.vertices[idx])
            counts += simplex.contains(pts, tol=-1e-9)
        assert counts.max() <= 1


def test_no_cells_error():
    germ = rotated_germ()
    with pytest.raises(GeometryError, match="no interior cells"):
        enumerate_interior_cells(germ, 1)


def test_affine_gradient_unit_triangle():
    s = make_regular_simplex(np.zeros(2), np.eye(2), 1.0)
    g = affine_gradient(s, [0.0, 0.7, -0.4])
    assert np.allclose(g, [0.7, -0.4])


def test_affine_gradient_scaling():
    n = 16
    s = make_regular_simplex(np.zeros(2), np.eye(2), 1.0 / n)
    g = affine_gradient(s, [0.0, 0.7, -0.4])
    assert np.allclose(g, [n * 0.7, n * -0.4])


def test_affine_gradient_reproduces_vertex_values():
    rng = np.random.default_rng(5)
    for _ in range(20):
        verts = rng.normal(size=(3, 2))
        try:
            s = Simplex(vertices=verts)
        except GeometryError:
            continue
        vals = rng.normal(size=3)
        g = affine_gradient(s, vals)
        recon = vals[0] + (verts[1:] - verts[0]) @ g
        assert np.allclose(recon, vals[1:], atol=1e-9)


def test_affine_gradient_exact_on_affine_functions():
    rng = np.random.default_rng(11)
    a = rng.normal(size=2)
    b = 0.3
    cells = enumerate_interior_cells(rotated_germ(), 8)
    for i in rng.choice(cells.n_cells, size=10, replace=False):
        verts = cells.vertices[cells.cell_vertices[i]]
        s = Simplex(vertices=verts)
        g = affine_gradient(s, verts @ a + b)
        assert np.allclose(g, a, atol=1e-12)


def test_gradient_in_basis():
    r = 1.0 / math.sqrt(2.0)
    u = np.array([[r, -r], [r, r]])
    g = np.array([1.0, 1.0])
    assert np.allclose(gradient_in_basis(g, u), [math.sqrt(2.0), 0.0])


def test_domain_validation():
    d = Domain(2)
    assert np.allclose(d.z0, 0.0)
    with pytest.raises(GeometryError):
        Domain(2, z0=np.array([1.5, 0.0]))
