"""Gaussian-kernel estimates of the log-density gradient and mean-shift ascent.

The density estimate is mu(x) ~ sum_k exp(-beta |s_k - x|^2). Its stationary
potential U satisfies mu ~ exp(2U), so grad U = beta * (weighted_mean(x) - x).
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import NonConvergence, UnderflowError
from .kernels import kernel_stats
from .kernels import kernel_weights as _weights

KERNEL_FLOOR = 1e-300


@dataclass(frozen=True)
class KernelContext:
    """Smoothing parameter plus the active sample; immutable and shareable.

    Besides the free functions below, a context exposes ``gradient``,
    ``hessian`` and ``potential`` of U so it can drive the curve integrators
    interchangeably with an analytic potential.
    """

    beta: float
    sample: np.ndarray
    floor: float = KERNEL_FLOOR

    def __post_init__(self):
        s = np.array(self.sample, dtype=np.float64, order="C", copy=True)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("sample must be a nonempty (N, n) array")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("sample contains non-finite values")
        s.setflags(write=False)
        object.__setattr__(self, "sample", s)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def dim(self):
        return self.sample.shape[1]

    def _stats(self, x, second):
        x = _as_point(x, self.dim)
        ksum, first, m2 = kernel_stats(self.sample, x, self.beta, second)
        if not ksum >= self.floor:
            raise UnderflowError(f"kernel sum {ksum:.3e} below floor {self.floor:.1e}")
        return x, ksum, first, m2

    def gradient(self, x):
        x, ksum, first, _ = self._stats(x, False)
        return self.beta * (first / ksum - x)

    def hessian(self, x):
        return self.gradient_and_hessian(x)[1]

    def gradient_and_hessian(self, x):
        # H = beta * (2 beta * weighted covariance - I)
        x, ksum, first, m2 = self._stats(x, True)
        shift = first / ksum - x
        cov = m2 / ksum - np.outer(shift, shift)
        hess = self.beta * (2.0 * self.beta * cov - np.eye(self.dim))
        return self.beta * shift, 0.5 * (hess + hess.T)

    def potential(self, x):
        """U(x) up to an additive constant: half the log kernel sum."""
        x, ksum, _, _ = self._stats(x, False)
        return 0.5 * np.log(ksum)


@dataclass(frozen=True)
class GradientEval:
    point: np.ndarray
    du: np.ndarray
    kernel_sum: float
    jacobian: Optional[np.ndarray] = field(default=None)


def _as_point(x, dim):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ValueError(f"expected a point of dimension {dim}, got shape {x.shape}")
    return x


def kernel_weights(ctx, x):
    """exp(-beta |s_k - x|^2) for every sample point."""
    return _weights(ctx.sample, _as_point(x, ctx.dim), ctx.beta)


def grad_u(ctx, x, jacobian=False):
    """Unnormalized gradient DU(x) = sum_k K_k s_k - x sum_k K_k.

    With ``jacobian=True`` the matrix d_i DU_j is attached as well.
    """
    x = _as_point(x, ctx.dim)
    ksum, first, m2 = kernel_stats(ctx.sample, x, ctx.beta, jacobian)
    du = first - x * ksum
    jac = None
    if jacobian:
        jac = 2.0 * ctx.beta * m2 - ksum * np.eye(ctx.dim)
    return GradientEval(point=x, du=du, kernel_sum=ksum, jacobian=jac)


def grad_u_jacobian(ctx, x):
    return grad_u(ctx, x, jacobian=True).jacobian


def _checked(ev, floor):
    if not ev.kernel_sum >= floor:
        raise UnderflowError(f"kernel sum {ev.kernel_sum:.3e} below floor {floor:.1e}")
    return ev


def grad_log_density(ctx, x):
    """Gradient of log mu at x, i.e. 2 beta (weighted mean - x)."""
    ev = _checked(grad_u(ctx, x), ctx.floor)
    return 2.0 * ctx.beta * ev.du / ev.kernel_sum


def mean_shift_step(ctx, x):
    """Kernel-weighted mean of the sample around x (fixed-point update)."""
    x = _as_point(x, ctx.dim)
    ksum, first, _ = kernel_stats(ctx.sample, x, ctx.beta, False)
    if not ksum >= ctx.floor:
        raise UnderflowError(f"kernel sum {ksum:.3e} below floor {ctx.floor:.1e}")
    return first / ksum


ContextSource = Union[KernelContext, Callable]


def _ascend(ctx, x, tol, max_iter):
    for _ in range(max_iter):
        nxt = mean_shift_step(ctx, x)
        moved = np.linalg.norm(nxt - x)
        x = nxt
        if moved < tol:
            return x
    raise NonConvergence(f"mean shift did not settle within {max_iter} iterations", x)


def gradient_ascent(ctx_source: ContextSource, x0, tol=1e-6, max_iter=500, max_rounds=20):
    """Climb to a mode of the kernel density estimate by mean-shift iteration.

    Parameters
    ----------
    ctx_source : KernelContext or callable
        Either a fixed context, or a resampling rule ``x -> (ids, ctx)`` that
        fetches a fresh sample around the current iterate. With a rule, the
        ascent is repeated until the fetched id set stops changing or a
        round no longer moves the iterate.
    x0 : array_like
        Starting point.
    tol : float
        Stop once a mean-shift step moves less than this (Euclidean).
    max_iter : int
        Mean-shift iterations allowed per round.
    max_rounds : int
        Resampling rounds allowed when ``ctx_source`` is a rule.

    Raises
    ------
    NonConvergence
        Carries the last iterate in ``.last``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x0, dtype=np.float64).copy()
    if isinstance(ctx_source, KernelContext):
        return _ascend(ctx_source, x, tol, max_iter)

    ids, ctx = ctx_source(x)
    for _ in range(max_rounds):
        prev = x
        x = _ascend(ctx, x, tol, max_iter)
        new_ids, new_ctx = ctx_source(x)
        if new_ids == ids or np.linalg.norm(x - prev) < tol:
            return x
        ids, ctx = new_ids, new_ctx
    raise NonConvergence(f"resampled ascent still moving after {max_rounds} rounds", x)
