import io
import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffsim import _pykernels, data, kernels
from diffsim.curves import geodesic, rho_curve
from diffsim.geometry import (
    best_center,
    build_frame,
    coefficients,
    eigensystem,
    metric,
    tangent_vector,
)
from diffsim.neighbors import Dataset, nearest_arrays
from diffsim.pipeline import PipelineConfig, principal_axis_at, rank_minimal

finite = st.floats(-10, 10, allow_nan=False, width=64)


def gradients(min_dim=3, max_dim=10):
    return st.integers(min_dim, max_dim).flatmap(
        lambda n: arrays(np.float64, n, elements=finite).filter(
            lambda g: np.max(np.abs(g)) > 1e-3 and np.sum(g * g) - np.max(g * g) > 1e-6 * np.sum(g * g)))


@given(gradients())
def test_basis_orthogonal_to_gradient(g):
    fr = build_frame(g, best_center(g))
    assert np.all(np.abs(fr.basis @ g) <= 1e-12 * np.sum(g * g))


@given(gradients(), st.data())
def test_coefficients_invert_tangents(g, draw):
    fr = build_frame(g, best_center(g))
    v = draw.draw(arrays(np.float64, len(g) - 1, elements=finite))
    np.testing.assert_allclose(coefficients(fr, tangent_vector(fr, v)), v, atol=1e-9 * (1 + np.abs(v).max()))


@given(gradients())
def test_closed_form_spectrum(g):
    fr = build_frame(g, best_center(g))
    eig = eigensystem(fr)
    n = len(g)
    closed = np.sort([eig.lambda_max] * 2 + [eig.lambda_min] * (n - 2))
    np.testing.assert_allclose(np.linalg.eigvalsh(metric(fr).g), closed, rtol=1e-9, atol=1e-9 * eig.lambda_max)
    assert eig.lambda_min <= eig.lambda_max


@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_transform_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=n - 1) * 0.2
    y = rng.normal(size=(8, n)) * 3
    np.testing.assert_allclose(data.inverse_transform(data.transform(y, c), c), y, atol=1e-9)
    assert abs(np.linalg.det(data.transform_jacobian(y[0], c)) - 1.0) < 1e-9


@given(st.integers(1, 60), st.integers(1, 40), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_nearest_is_exact(N, k, seed, grid):
    k = min(k, N)
    rng = np.random.default_rng(seed)
    dim = 2 if seed % 2 else 35
    pts = rng.integers(-2, 3, size=(N, dim)).astype(float) if grid else rng.normal(size=(N, dim))
    x = rng.integers(-1, 2, size=dim).astype(float)
    ids, dist = nearest_arrays(Dataset(pts), x, k)
    d = np.sqrt(((pts - x) ** 2).sum(1))
    ref = np.lexsort((np.arange(N), d))[:k]
    np.testing.assert_array_equal(ids, ref)


@given(st.integers(1, 400), st.integers(1, 8), st.floats(0.01, 5.0), st.integers(0, 2 ** 32 - 1))
def test_backends_agree(N, n, beta, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(N, n))
    x = rng.normal(size=n)
    a = kernels.kernel_stats(s, x, beta, True)
    b = _pykernels.kernel_stats(s, x, beta, True)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-11, atol=1e-300)


@given(st.dictionaries(st.integers(0, 50), st.one_of(st.floats(0, 100), st.just(math.inf)), min_size=1))
def test_rank_minimal_is_sorted_prefix(totals):
    finite_ids = [d for d, t in totals.items() if math.isfinite(t)]
    out = rank_minimal(totals, len(finite_ids))
    assert sorted(out) == sorted(finite_ids)
    vals = [totals[d] for d in out]
    assert vals == sorted(vals)


@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))))
def test_idx_round_trip(arr):
    buf = io.BytesIO()
    head = bytes([0, 0, 8, 3]) + b"".join(int(d).to_bytes(4, "big") for d in arr.shape)
    buf.write(head + arr.tobytes())
    buf.seek(0)
    np.testing.assert_array_equal(data.parse_idx(buf), arr)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.floats(0.5, 3.0), st.floats(0.1, 3.0), st.integers(0, 2 ** 32 - 1))
def test_geodesic_length_identity(s1, s2, seed):
    pot = data.gaussian_potential(3, np.array([s1, s2, 1.0]))
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=3) * np.array([s1, s2, 1.0])
    g = pot.gradient(x0)
    if np.linalg.norm(x0) < 0.2 or np.sort(np.abs(g))[-2] < 1e-3 * np.abs(g).max():
        return
    fr = build_frame(g, best_center(g))
    v0 = rng.normal(size=2)
    path = geodesic(pot, x0, np.zeros(3), v0, center_axis=fr.center_axis)
    assert abs(path.total_riem - path.total_euclid) <= 1e-3 * path.total_euclid
    assert path.tangency < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.5, 3.0), st.floats(0.2, 2.0), st.integers(0, 2 ** 32 - 1))
def test_rho_riemannian_length_is_potential_gap(s1, s2, scale, seed):
    pot = data.gaussian_potential(3, np.array([s1, s2, 1.0]))
    x0 = np.random.default_rng(seed).normal(size=3) * scale
    if np.linalg.norm(pot.gradient(x0)) < 1e-3:
        return
    path = rho_curve(pot, x0, rtol=1e-9, atol=1e-11)
    gap = pot.potential(path.end) - pot.potential(x0)
    assert abs(path.total_riem - gap) <= 1e-5 * gap + 1e-9


@settings(max_examples=10, deadline=None)
@given(st.floats(1.2, 3.0), st.floats(0.3, 1.0), st.integers(0, 1000))
def test_refined_axis_never_longer_than_fast(s_wide, s_narrow, seed):
    pot = data.gaussian_potential(3, np.array([s_narrow, s_wide, 0.5 * s_narrow]))
    cfg = PipelineConfig(step_one_starts=12, step_one_iters=100)
    ax = principal_axis_at(pot, np.zeros(3), 1.0, cfg=cfg, seed=seed)
    assert ax.refined_length <= ax.fast_length + 1e-12
    # the shortest inward curve runs along the widest axis
    assert abs(ax.axis_point[1]) > 0.99
