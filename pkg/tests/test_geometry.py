import numpy as np
import pytest

from diffsim.errors import DegenerateCenter, DegenerateSpectrum, RankDeficient
from diffsim.geometry import (
    best_center,
    build_frame,
    coefficients,
    eigensystem,
    gram_schmidt,
    lie_bracket_residual,
    max_direction,
    metric,
    orthonormal_directions,
    random_min_eigenvectors,
    tangent_vector,
    theta_block,
)


def test_basis_for_small_example():
    fr = build_frame(np.array([2.0, 1.0, -3.0]), 0)
    np.testing.assert_array_equal(fr.basis, [[-1.0, 2.0, 0.0], [3.0, 0.0, 2.0]])
    np.testing.assert_allclose(fr.basis @ fr.grad, 0.0)


def test_basis_with_other_center():
    g = np.array([1.0, -4.0, 2.0, 0.5])
    fr = build_frame(g, best_center(g))
    assert fr.center_axis == 1
    np.testing.assert_array_equal(fr.others, [0, 2, 3])
    np.testing.assert_allclose(fr.basis @ g, 0.0)
    assert fr.p0 == -4.0


def test_tangent_coefficient_round_trip(rng):
    g = rng.normal(size=5)
    fr = build_frame(g, best_center(g))
    v = rng.normal(size=4)
    np.testing.assert_allclose(coefficients(fr, tangent_vector(fr, v)), v)


def test_theta_block_and_metric():
    p = np.array([2.0, 1.0, -1.0])
    np.testing.assert_array_equal(theta_block(p), [[5.0, -1.0], [-1.0, 5.0]])
    m = metric(build_frame(np.array([2.0, 1.0, -1.0]), 0))
    assert m.grad_norm_sq == 6.0 and m.p0_sq == 4.0
    assert m.g[0, 0] == 6.0 and np.all(m.g[0, 1:] == 0)


def test_eigenpairs_satisfy_definition(rng):
    for n in range(3, 9):
        g = rng.normal(size=n)
        fr = build_frame(g, best_center(g))
        eig = eigensystem(fr)
        G = metric(fr).g
        np.testing.assert_allclose(G @ eig.xi0, eig.lambda_max * eig.xi0, atol=1e-12)
        np.testing.assert_allclose(G @ eig.xi1, eig.lambda_max * eig.xi1, atol=1e-12)
        for xi in eig.xi_min:
            np.testing.assert_allclose(G @ xi, eig.lambda_min * xi, atol=1e-12)
        assert eig.xi_min.shape == (n - 2, n)


def test_pivot_avoids_small_component():
    fr = build_frame(np.array([3.0, 1e-9, 1.0, 2.0]), 0)
    eig = eigensystem(fr)
    assert eig.pivot != 1
    assert np.linalg.matrix_rank(eig.xi_min) == 2


def test_degenerate_cases():
    with pytest.raises(DegenerateCenter):
        build_frame(np.array([0.0, 1.0, 1.0]), 0)
    with pytest.raises(DegenerateSpectrum):
        eigensystem(build_frame(np.array([1.0, 0.0, 0.0]), 0))
    with pytest.raises(IndexError):
        build_frame(np.ones(3), 3)


def test_zetas_are_minimal_and_directions_orthonormal(rng):
    g = rng.normal(size=6)
    fr = build_frame(g, best_center(g))
    eig = eigensystem(fr)
    zetas = random_min_eigenvectors(fr, count=2000, seed=3, eig=eig)
    G = metric(fr).g
    np.testing.assert_allclose(zetas @ G, eig.lambda_min * zetas, atol=1e-10)
    dirs = orthonormal_directions(fr, zetas)
    np.testing.assert_allclose(dirs @ dirs.T, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(dirs @ max_direction(eig), 0.0, atol=1e-12)


def test_gram_schmidt_drops_dependent_vectors():
    out = gram_schmidt(np.array([[1.0, 0, 0], [2.0, 0, 0], [1.0, 1.0, 0]]))
    np.testing.assert_allclose(out, [[1, 0, 0], [0, 1, 0]])
    with pytest.raises(RankDeficient):
        fr = build_frame(np.array([1.0, 1.0, 1.0, 1.0]), 0)
        orthonormal_directions(fr, np.array([[0, 1.0, -1.0, 0]]))


def test_integrability_on_analytic_potential(curvilinear3):
    x = np.array([2.0, 1.0, -0.5])
    assert lie_bracket_residual(curvilinear3, x, 1, 2, fd_step=None) < 1e-12
    assert lie_bracket_residual(curvilinear3, x, 1, 2) < 1e-7
