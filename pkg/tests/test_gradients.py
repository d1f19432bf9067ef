import math

import numpy as np
import pytest

from rearrangements.fields import (FieldSample, model_brownian, model_levy,
                                   sample_on, sawtooth_values, derive_seed)
from rearrangements.geometry import enumerate_interior_cells, standard_germ
from rearrangements.gradients import (GradientAtomCloud, GradientError, build_cloud,
                                      cloud_from_atoms, empirical_cf, empirical_cf_grid,
                                      explicit_schedule, per_simplex_covariance,
                                      pooled_covariance, power_schedule, sigma_schedule,
                                      sqrt_schedule, theoretical_cell_covariance)


def brownian_cloud(n, seed):
    cells = enumerate_interior_cells(standard_germ(1), n)
    sample = sample_on(model_brownian(), cells.vertices, seed)
    return build_cloud(sample, cells, sqrt_schedule())


def sawtooth_cloud(n, b=1.0):
    cells = enumerate_interior_cells(standard_germ(1), n)
    grid, vals = sawtooth_values(n)
    sample = FieldSample(points=cells.vertices,
                         values=vals[np.round(cells.vertices[:, 0] * n).astype(int)],
                         seed=0, model_name="sawtooth")
    return build_cloud(sample, cells, b)


def test_schedules():
    assert sqrt_schedule()(16) == pytest.approx(4.0)
    assert power_schedule(1.0, 0.4)(100) == pytest.approx(100**0.4)
    assert sigma_schedule(model_brownian())(4096) == pytest.approx(64.0)
    assert explicit_schedule({8: 3.0})(8) == 3.0
    # catalog rules nondecreasing in n
    for sched in (sqrt_schedule(), power_schedule(2.0, 0.4), sigma_schedule(model_brownian())):
        bs = [sched(n) for n in range(1, 50)]
        assert all(b2 >= b1 for b1, b2 in zip(bs, bs[1:]))


def test_cloud_invariants():
    with pytest.raises(GradientError):
        GradientAtomCloud(atoms=np.zeros((2, 1)), weights=np.array([0.5, 0.6]))
    with pytest.raises(GradientError):
        GradientAtomCloud(atoms=np.zeros((2, 1)), weights=np.array([1.0, 0.0]))


def test_constant_field_gives_zero_atoms():
    cells = enumerate_interior_cells(standard_germ(2), 4)
    sample = FieldSample(points=cells.vertices, values=np.zeros(cells.vertices.shape[0]),
                         seed=0, model_name="zero")
    cloud = build_cloud(sample, cells, 1.0)
    assert np.allclose(cloud.atoms, 0.0)
    assert cloud.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_brownian_cloud_atoms_are_scaled_increments():
    n = 64
    cells = enumerate_interior_cells(standard_germ(1), n)
    sample = sample_on(model_brownian(), cells.vertices, 7)
    cloud = build_cloud(sample, cells, sqrt_schedule())
    vals = sample.values[np.argsort(sample.points[:, 0])]
    expected = math.sqrt(n) * np.diff(vals)
    assert np.allclose(np.sort(cloud.atoms[:, 0]), np.sort(expected))


def test_sawtooth_cloud_two_atoms():
    cloud = sawtooth_cloud(8)
    atoms = np.sort(cloud.atoms[:, 0])
    assert np.allclose(atoms[:4], -1.0, atol=1e-12)
    assert np.allclose(atoms[4:], 1.0, atol=1e-12)
    assert np.allclose(cloud.weights, 1.0 / 8)


def test_scaling_halves_atoms_exactly():
    cloud1 = sawtooth_cloud(8, b=1.0)
    cloud2 = sawtooth_cloud(8, b=2.0)
    assert np.array_equal(cloud1.atoms / 2.0, cloud2.atoms)


def test_mass_renormalized_after_boundary_drop():
    from rearrangements.geometry import rotated_germ
    cells = enumerate_interior_cells(rotated_germ(), 8)
    assert cells.total_volume < 1.0
    sample = sample_on(model_levy(2), cells.vertices, 1)
    cloud = build_cloud(sample, cells, sqrt_schedule())
    assert math.fsum(cloud.weights.tolist()) == pytest.approx(1.0, abs=1e-12)


def test_permutation_invariance_as_measure():
    cloud = brownian_cloud(32, seed=5)
    rng = np.random.default_rng(0)
    perm = rng.permutation(cloud.n_atoms)
    shuffled = GradientAtomCloud(atoms=cloud.atoms[perm], weights=cloud.weights[perm])
    a1, w1 = cloud.sorted_measure()
    a2, w2 = shuffled.sorted_measure()
    assert np.array_equal(a1, a2) and np.array_equal(w1, w2)


def test_missing_vertex_error():
    cells = enumerate_interior_cells(standard_germ(1), 8)
    bad = FieldSample(points=cells.vertices[:-1], values=np.zeros(cells.vertices.shape[0] - 1),
                      seed=0, model_name="zero")
    with pytest.raises(GradientError, match="vertex"):
        build_cloud(bad, cells, 1.0)


def test_per_simplex_covariance_trivial():
    cloud = cloud_from_atoms(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    m = per_simplex_covariance(cloud, 0, np.eye(2))
    assert np.allclose(m, np.diag([1.0, 0.0]))


def test_per_simplex_covariance_matches_theory_for_levy():
    # within one simplex the renormalized gradient covariance is exactly the
    # limit matrix for the distance-type field; check the empirical estimate
    n = 24
    cells = enumerate_interior_cells(standard_germ(2), n)
    model = model_levy(2)
    target = theoretical_cell_covariance(model, np.array([0.4, 0.6]), np.eye(2), n,
                                         math.sqrt(n))
    C = 1.0 - math.sqrt(2.0) / 2.0
    assert np.allclose(target, [[1.0, C], [C, 1.0]], atol=1e-12)

    acc = np.zeros((2, 2))
    reps = 40
    for r in range(reps):
        sample = sample_on(model, cells.vertices, derive_seed(30, r))
        cloud = build_cloud(sample, cells, sqrt_schedule())
        acc += per_simplex_covariance(cloud, 0, np.eye(2))
    acc /= reps
    assert np.max(np.abs(acc - target)) <= 0.06


def test_empirical_cf_basics():
    cloud = cloud_from_atoms(np.array([[-1.0], [1.0]]))
    assert empirical_cf(cloud, [0.0]) == pytest.approx(1.0)
    assert empirical_cf(cloud, [math.pi]).real == pytest.approx(-1.0)
    assert abs(empirical_cf(cloud, [0.7])) <= 1.0 + 1e-12


def test_empirical_cf_brownian_near_gaussian():
    cloud = brownian_cloud(4096, seed=9)
    val = empirical_cf(cloud, [1.0])
    assert abs(val - math.exp(-0.5)) <= 0.05


def test_cf_grid_matches_scalar():
    cloud = brownian_cloud(64, seed=1)
    H = np.array([[0.0], [0.5], [-2.0]])
    grid_vals = empirical_cf_grid(cloud, H)
    for h, v in zip(H, grid_vals):
        assert v == pytest.approx(empirical_cf(cloud, h))


def test_basis_views():
    r = 1.0 / math.sqrt(2.0)
    u = np.array([[r, -r], [r, r]])
    cloud = cloud_from_atoms(np.array([[1.0, 1.0], [-1.0, -1.0]]))
    au = cloud.in_basis(u)
    assert np.allclose(np.abs(au[:, 0]), math.sqrt(2.0))
    assert np.allclose(au[:, 1], 0.0)
    m = pooled_covariance(cloud, u)
    assert np.allclose(m, np.diag([2.0, 0.0]))
