"""Frame fields built from a gradient: basis vectors, metric, and its eigensystem.

Notation follows the centering convention: ``P[0]`` is the gradient component
on the chosen center axis, ``P[1:]`` the remaining components in ascending
axis order. Basis vector ``V_i`` (i >= 1) carries ``-P[i]`` on the center
axis and ``P[0]`` on the axis of ``P[i]``; every ``V_i`` is orthogonal to the
gradient. Coefficient vectors ``v`` live in R^(n-1) and map to ambient
tangents through ``sum_i v[i-1] V_i``.
"""
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import DegenerateCenter, DegenerateSpectrum, RankDeficient

EPS_CENTER = 1e-3
SPECTRUM_TOL = 1e-10
GS_DROP = 1e-8
ZETA_STRIDE = 200


@dataclass(frozen=True)
class Frame:
    center_axis: int
    grad: np.ndarray  # ambient order
    p_components: np.ndarray  # centered order: P0 first
    others: np.ndarray  # ambient axis of P[i], i >= 1
    basis: np.ndarray  # (n-1, n) ambient rows V_1 .. V_{n-1}

    @property
    def dim(self):
        return self.grad.shape[0]

    @property
    def p0(self):
        return self.p_components[0]


@dataclass(frozen=True)
class MetricEval:
    g: np.ndarray
    grad_norm_sq: float
    p0_sq: float


@dataclass(frozen=True)
class EigenSystem:
    lambda_max: float
    lambda_min: float
    xi0: np.ndarray
    xi1: np.ndarray
    xi_min: np.ndarray  # (n-2, n)
    pivot: int


def other_axes(n, center_axis):
    return np.array([k for k in range(n) if k != center_axis], dtype=int)


def is_degenerate_center(grad, center_axis, eps=EPS_CENTER):
    scale = np.max(np.abs(grad))
    return not (scale > 0 and abs(grad[center_axis]) >= eps * scale)


def best_center(grad):
    return int(np.argmax(np.abs(grad)))


def build_frame(grad, center_axis, eps_center=EPS_CENTER):
    grad = np.asarray(grad, dtype=np.float64)
    n = grad.shape[0]
    if not 0 <= center_axis < n:
        raise IndexError(f"center axis {center_axis} out of range for n={n}")
    if is_degenerate_center(grad, center_axis, eps_center):
        raise DegenerateCenter(
            f"|P0| = {abs(grad[center_axis]):.3e} too small on axis {center_axis}"
        )
    others = other_axes(n, center_axis)
    p = np.concatenate([[grad[center_axis]], grad[others]])
    basis = np.zeros((n - 1, n))
    rows = np.arange(n - 1)
    basis[rows, center_axis] = -p[1:]
    basis[rows, others] = p[0]
    return Frame(center_axis=center_axis, grad=grad.copy(), p_components=p, others=others, basis=basis)


def tangent_vector(frame, v):
    """Ambient tangent sum_i v_i V_i for a coefficient vector v in R^(n-1)."""
    return np.asarray(v) @ frame.basis


def coefficients(frame, tangent):
    """Inverse of :func:`tangent_vector` for vectors orthogonal to the gradient."""
    return np.asarray(tangent)[frame.others] / frame.p0


def theta_block(p):
    """P0^2 I + p p^T for the centered components p = (P0, P1, ...)."""
    q = p[1:]
    return p[0] ** 2 * np.eye(q.shape[0]) + np.outer(q, q)


def metric(frame):
    p = frame.p_components
    n = p.shape[0]
    g = np.zeros((n, n))
    gn2 = float(p @ p)
    g[0, 0] = gn2
    g[1:, 1:] = theta_block(p)
    return MetricEval(g=g, grad_norm_sq=gn2, p0_sq=float(p[0] ** 2))


def _pivot(q, eps=EPS_CENTER):
    # q = (P1..P_{n-1}); the first Theta slot unless its component is too small
    scale = np.max(np.abs(q))
    if abs(q[0]) >= eps * scale:
        return 1
    return 1 + int(np.argmax(np.abs(q)))


def eigensystem(frame, tol=SPECTRUM_TOL):
    """Closed-form eigenpairs: |grad U|^2 twice, P0^2 with multiplicity n-2."""
    p = frame.p_components
    n = p.shape[0]
    q = p[1:]
    gn2 = float(p @ p)
    if q @ q <= tol * gn2:
        raise DegenerateSpectrum("all non-center components vanish; eigenvalues merge")
    xi0 = np.zeros(n)
    xi0[0] = 1.0
    xi1 = np.concatenate([[0.0], q])
    piv = _pivot(q)
    rest = [k for k in range(1, n) if k != piv]
    xi_min = np.zeros((len(rest), n))
    for row, k in enumerate(rest):
        xi_min[row, piv] = -p[k]
        xi_min[row, k] = p[piv]
    return EigenSystem(
        lambda_max=gn2, lambda_min=float(p[0] ** 2), xi0=xi0, xi1=xi1, xi_min=xi_min, pivot=piv
    )


def default_zeta_count(n):
    return max(10000, ZETA_STRIDE * (n - 2))


def random_min_eigenvectors(frame, count=None, seed=0, stride=ZETA_STRIDE, eig=None):
    """Random +/-1 combinations of the minimal eigenvectors, thinned by norm rank.

    ``count`` combinations are drawn, sorted by Euclidean norm, and every
    ``stride``-th entry of the sorted list is kept.
    """
    eig = eigensystem(frame) if eig is None else eig
    m = eig.xi_min.shape[0]
    if count is None:
        count = default_zeta_count(frame.dim)
    if count < m:
        raise ValueError(f"count must be at least n-2 = {m}")
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(count, m))
    zetas = signs @ eig.xi_min
    order = np.argsort(np.linalg.norm(zetas, axis=1), kind="stable")
    stride = max(1, min(stride, count // max(m, 1)))
    return zetas[order][stride - 1::stride]


def gram_schmidt(vectors, limit=None, drop=GS_DROP):
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Vectors whose residual after projection falls below ``drop`` times their
    original norm are discarded. Stops after ``limit`` accepted vectors.
    """
    basis: List[np.ndarray] = []
    for vec in np.atleast_2d(np.asarray(vectors, dtype=np.float64)):
        norm0 = np.linalg.norm(vec)
        if norm0 == 0:
            continue
        u = vec.copy()
        for _ in range(2):
            for b in basis:
                u -= (b @ u) * b
        nu = np.linalg.norm(u)
        if nu < drop * norm0:
            continue
        basis.append(u / nu)
        if limit is not None and len(basis) == limit:
            break
    return np.array(basis).reshape(len(basis), -1)


def orthonormal_directions(frame, zetas, drop=GS_DROP):
    """Orthonormal basis (n-2 rows, in (rho, Theta) coordinates) of the min eigenspace."""
    need = frame.dim - 2
    out = gram_schmidt(zetas, limit=need, drop=drop)
    if out.shape[0] < need:
        raise RankDeficient(f"Gram-Schmidt kept {out.shape[0]} of {need} directions")
    return out


def max_direction(eig):
    return eig.xi1 / np.linalg.norm(eig.xi1)


def _jacobian_fd(field, x, h):
    n = x.shape[0]
    jac = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        jac[k] = (field.gradient(x + e) - field.gradient(x - e)) / (2 * h)
    return jac  # jac[k, m] = d grad_m / d x_k


def lie_bracket_residual(field, x, i, j, fd_step=1e-5, center_axis=0):
    """Magnitude of the bracket [V_i/P0, V_j/P0] (its only component is on the center axis).

    First derivatives of the gradient come from central differences with
    ``fd_step``; pass ``fd_step=None`` to use ``field.hessian`` instead.
    ``i`` and ``j`` index the centered components, 1..n-1.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = field.gradient(x)
    n = grad.shape[0]
    if is_degenerate_center(grad, center_axis):
        raise DegenerateCenter("P0 too small for the bracket computation")
    if not (1 <= i < n and 1 <= j < n):
        raise IndexError("bracket indices run over 1..n-1")
    axes = np.concatenate([[center_axis], other_axes(n, center_axis)])
    jac = field.hessian(x) if fd_step is None else _jacobian_fd(field, x, fd_step)
    P = grad[axes]
    # D[a][b] = d P_b / d x^(axis of P_a)
    D = jac[np.ix_(axes, axes)]
    bracket = (
        P[0] * (D[j, i] - D[i, j])
        + P[i] * (D[0, j] - D[j, 0])
        + P[j] * (D[i, 0] - D[0, i])
    )
    return abs(bracket) / P[0] ** 2
