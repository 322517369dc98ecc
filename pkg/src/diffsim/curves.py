"""Curve integrators: rho curves, constrained geodesics, transverse flows.

Every integrator takes a *field*: any object with ``gradient(x)`` and
``gradient_and_hessian(x)`` for the potential U (a :class:`KernelContext`
or an analytic :class:`SyntheticPotential`).

Geodesics on the integral manifold are solved in multiplier form. With
center axis p, P = grad U, and coefficients v in R^(n-1), the ambient
tangent is F = sum_i v_i V_i. The multipliers lam (one per ambient axis)
determine v algebraically,

    v_i = (lam_(axis i) - P_i (P . lam) / |P|^2) / P_0,

and evolve by

    lam' = (P . w + lam_p) H w + H[:, p] (P_0 |v|^2 - v . lam_others),

where w is v embedded on the non-center axes and H the Hessian of U. The
gauge lam -> lam + c P leaves v unchanged; starting from lam = F satisfies
sum_j P_j lam_j = 0.
"""
import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import CubicSpline

from .errors import DegenerateCenter, StationaryStart, StepCollapse
from .geometry import EPS_CENTER, best_center, build_frame, is_degenerate_center, other_axes, theta_block

RTOL = 1e-6
ATOL = 1e-8
GRAD_FLOOR = 1e-6
SUBSTEPS = 4
MAX_RECENTER = 200


@dataclass
class CurvePath:
    kind: str
    points: np.ndarray
    params: np.ndarray
    euclid_len: np.ndarray
    riem_len: np.ndarray
    center_history: List[Tuple[float, int]] = field(default_factory=list)
    centers: Optional[np.ndarray] = None
    v_history: Optional[np.ndarray] = None
    tangents: Optional[np.ndarray] = None
    grads: Optional[np.ndarray] = None
    complete: bool = True
    reason: str = ""
    tangency: float = 0.0

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def end(self):
        return self.points[-1]

    @property
    def total_euclid(self):
        return float(self.euclid_len[-1])

    @property
    def total_riem(self):
        return float(self.riem_len[-1])


class _Cache:
    """Remembers the last few gradient/Hessian evaluations (FSAL stages repeat)."""

    def __init__(self, fieldobj, size=8):
        self.field = fieldobj
        self.size = size
        self.store = {}

    def gh(self, x):
        key = x.tobytes()
        hit = self.store.get(key)
        if hit is None:
            hit = self.field.gradient_and_hessian(x)
            if len(self.store) >= self.size:
                self.store.pop(next(iter(self.store)))
            self.store[key] = hit
        return hit

    def g(self, x):
        hit = self.store.get(x.tobytes())
        return hit[0] if hit is not None else self.field.gradient(x)


def _sample_solution(sol, substeps):
    """Solver nodes with ``substeps`` evenly spaced points inside each step."""
    t = sol.t
    if t.size < 2:
        return t
    frac = np.arange(substeps) / substeps
    inner = (t[:-1, None] + np.diff(t)[:, None] * frac[None, :]).reshape(-1)
    return np.concatenate([inner, t[-1:]])


def _strict(params, *arrays):
    keep = np.concatenate([[True], np.diff(params) > 0])
    return (params[keep],) + tuple(a[keep] if a is not None else None for a in arrays)


# ---------------------------------------------------------------------------
# rho curves
# ---------------------------------------------------------------------------


def rho_curve(
    fieldobj,
    x0,
    direction="inward",
    target_length=None,
    target_point=None,
    target_radius=1e-6,
    target_potential=None,
    grad_floor=GRAD_FLOOR,
    max_step=np.inf,
    rtol=RTOL,
    atol=ATOL,
    t_limit=1e8,
    substeps=SUBSTEPS,
):
    """Integral curve of +grad U (inward) or -grad U (outward).

    The flow is integrated in its natural time with two extra states: the
    Euclidean length (speed |grad U|) and the Riemannian length (speed
    |grad U|^2, i.e. |grad U| per unit Euclidean length). The returned path
    is parametrized by Euclidean arc length.

    Stops when |grad U| drops below ``grad_floor`` (a mode), after
    ``target_length`` of Euclidean length, within ``target_radius`` of
    ``target_point``, or on the level set U = ``target_potential``.
    """
    if direction not in ("inward", "outward"):
        raise ValueError("direction must be 'inward' or 'outward'")
    sign = 1.0 if direction == "inward" else -1.0
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.shape[0]
    g0 = fieldobj.gradient(x0)
    if np.linalg.norm(g0) < grad_floor:
        raise StationaryStart("start point is already stationary")

    def rhs(_t, y):
        g = fieldobj.gradient(y[:n])
        gn = math.sqrt(g @ g)
        out = np.empty(n + 2)
        out[:n] = sign * g
        out[n] = gn
        out[n + 1] = gn * gn
        return out

    events = []

    def at_mode(_t, y):
        return np.linalg.norm(fieldobj.gradient(y[:n])) - grad_floor

    at_mode.terminal = True
    at_mode.direction = -1
    events.append(at_mode)
    if target_length is not None:
        def at_length(_t, y):
            return y[n] - target_length

        at_length.terminal = True
        at_length.direction = 1
        events.append(at_length)
    if target_point is not None:
        tp = np.asarray(target_point, dtype=np.float64)

        def at_point(_t, y):
            return np.linalg.norm(y[:n] - tp) - target_radius

        at_point.terminal = True
        at_point.direction = -1
        events.append(at_point)
    if target_potential is not None:
        def at_level(_t, y):
            return fieldobj.potential(y[:n]) - target_potential

        at_level.terminal = True
        events.append(at_level)

    y0 = np.concatenate([x0, [0.0, 0.0]])
    sol = solve_ivp(rhs, (0.0, t_limit), y0, method="RK45", rtol=rtol, atol=atol,
                    max_step=max_step, events=events, dense_output=True)
    if sol.status == -1:
        raise StepCollapse(f"rho curve integration failed: {sol.message}")
    ts = _sample_solution(sol, substeps)
    Y = sol.sol(ts).T
    Y[0] = y0
    Y[-1] = sol.y[:, -1]
    pts, s, r = Y[:, :n], Y[:, n], Y[:, n + 1]
    s, pts, r = _strict(s, pts, r)
    grads = np.array([fieldobj.gradient(p) for p in pts])
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    tangents = sign * grads / np.where(norms > 0, norms, 1.0)
    names = [e.__name__ for e in events]
    fired = [names[i] for i, te in enumerate(sol.t_events) if te.size]
    reason = {"at_mode": "mode", "at_length": "length", "at_point": "point", "at_level": "level"}[fired[0]] if fired else "limit"
    return CurvePath(kind="rho", points=pts, params=s - s[0], euclid_len=s, riem_len=r,
                     tangents=tangents, grads=grads, centers=np.full(len(s), -1),
                     complete=sol.status == 1, reason=reason)


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeodesicState:
    x: np.ndarray
    lam: np.ndarray  # one multiplier per ambient axis
    v: np.ndarray
    center_axis: int


def solve_v(grad, center_axis, lam):
    """Coefficients v from the multipliers (the algebraic half of the system)."""
    others = other_axes(grad.shape[0], center_axis)
    proj = (grad @ lam) / (grad @ grad)
    return (lam[others] - grad[others] * proj) / grad[center_axis]


def geodesic_initial_state(frame, x0, v0):
    """Multipliers in the gauge sum_j P_j lam_j = 0, reproducing v0."""
    v0 = np.asarray(v0, dtype=np.float64)
    if v0.shape != (frame.dim - 1,) or not np.all(np.isfinite(v0)):
        raise ValueError("v0 must be a finite vector of length n-1")
    lam = v0 @ frame.basis
    return GeodesicState(x=np.array(x0, dtype=np.float64), lam=lam,
                         v=solve_v(frame.grad, frame.center_axis, lam), center_axis=frame.center_axis)


def _ambient(v, grad, center_axis, others):
    w = np.zeros(grad.shape[0])
    w[others] = v
    F = grad[center_axis] * w
    F[center_axis] = -(grad[others] @ v)
    return w, F


def geodesic_rhs(grad, hess, center_axis, lam):
    """(x', lam', Euclidean speed, Riemannian speed) at one state."""
    n = grad.shape[0]
    others = other_axes(n, center_axis)
    v = solve_v(grad, center_axis, lam)
    w, F = _ambient(v, grad, center_axis, others)
    p0 = grad[center_axis]
    hw = hess @ w
    dlam = (grad @ w + lam[center_axis]) * hw + hess[:, center_axis] * (p0 * (v @ v) - v @ lam[others])
    G = theta_block(np.concatenate([[p0], grad[others]]))
    riem = math.sqrt(max(v @ G @ v, 0.0))
    return F, dlam, math.sqrt(F @ F), riem


def euclidean_angle(x, origin, x0):
    a = np.asarray(x) - origin
    b = np.asarray(x0) - origin
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return 2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))


def geodesic(
    fieldobj,
    x0,
    origin,
    v0,
    stop_angle=np.pi / 2,
    center_axis=None,
    lam_shift=0.0,
    unit_speed=True,
    max_length=None,
    max_step=np.inf,
    rtol=RTOL,
    atol=ATOL,
    eps_center=EPS_CENTER,
    max_recenter=MAX_RECENTER,
    substeps=SUBSTEPS,
):
    """Geodesic of the dissimilarity metric inside the integral manifold.

    Parameters
    ----------
    fieldobj : field
        Supplies grad U and its Hessian.
    x0, origin : array_like
        Start point and the reference point for the angle stop.
    v0 : array_like
        Initial coefficients (length n-1) in the frame centered on
        ``center_axis`` (default: the largest gradient component).
    stop_angle : float
        Terminate once the Euclidean angle between x - origin and x0 - origin
        reaches this value.
    lam_shift : float
        Adds ``lam_shift * P(x0)`` to the initial multipliers (gauge check).
    unit_speed : bool
        Rescale v0 so the curve is traversed at unit Euclidean speed; the
        parameter is then Euclidean arc length.
    max_length : float, optional
        Give up (path flagged incomplete) beyond this Euclidean length.
        Defaults to 4 pi |x0 - origin|.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    n = x0.shape[0]
    radius = np.linalg.norm(x0 - origin)
    if radius == 0:
        raise ValueError("origin coincides with the start point")
    cache = _Cache(fieldobj)
    g0 = cache.g(x0)
    center = best_center(g0) if center_axis is None else center_axis
    frame = build_frame(g0, center, eps_center)
    v0 = np.asarray(v0, dtype=np.float64)
    if unit_speed:
        speed = np.linalg.norm(v0 @ frame.basis)
        if speed == 0:
            raise ValueError("v0 gives a zero initial tangent")
        v0 = v0 / speed
    state = geodesic_initial_state(frame, x0, v0)
    lam = state.lam + lam_shift * g0
    if max_length is None:
        max_length = 4.0 * np.pi * radius

    def rhs(_t, y, p):
        g, h = cache.gh(y[:n])
        F, dlam, es, rs = geodesic_rhs(g, h, p, y[n:2 * n])
        return np.concatenate([F, dlam, [es, rs]])

    def make_events(p, sgn):
        # signed, so a component that flips inside one step still registers a crossing
        def degenerate(_t, y, *_):
            g = cache.g(y[:n])
            return sgn * g[p] - eps_center * np.max(np.abs(g))

        degenerate.terminal = True
        degenerate.direction = -1

        def angle(_t, y, *_):
            return euclidean_angle(y[:n], origin, x0) - stop_angle

        angle.terminal = True
        angle.direction = 1

        def too_long(_t, y, *_):
            return y[2 * n] - max_length

        too_long.terminal = True
        too_long.direction = 1
        return [degenerate, angle, too_long]

    segments = []
    history = [(0.0, center)]
    t0 = 0.0
    y = np.concatenate([x0, lam, [0.0, 0.0]])
    complete, reason = False, "recenter-limit"
    for _ in range(max_recenter + 1):
        sol = solve_ivp(rhs, (t0, t0 + 1e3 * max_length + 1.0), y, method="RK45", args=(center,),
                        rtol=rtol, atol=atol, max_step=max_step, events=make_events(center, math.copysign(1.0, cache.g(y[:n])[center])),
                        dense_output=True)
        if sol.status == -1:
            raise StepCollapse(f"geodesic integration failed: {sol.message}")
        segments.append((sol, center))
        y = sol.y[:, -1].copy()
        t0 = float(sol.t[-1])
        fired = [i for i, te in enumerate(sol.t_events) if te.size]
        if not fired:
            reason = "limit"
            break
        if 1 in fired:
            complete, reason = True, "angle"
            break
        if 2 in fired:
            reason = "length"
            break
        x = y[:n]
        g, h = cache.gh(x)
        F, _, _, _ = geodesic_rhs(g, h, center, y[n:2 * n])
        new = best_center(g)
        if new == center:
            raise DegenerateCenter("gradient vanished along the geodesic")
        center = new
        y[n:2 * n] = F  # gauge reset: multipliers equal the ambient tangent
        history.append((t0, center))

    return _assemble_geodesic(segments, cache, n, substeps, history, complete, reason)


def _assemble_geodesic(segments, cache, n, substeps, history, complete, reason):
    ts, pts, lams, svals, rvals, cents = [], [], [], [], [], []
    for k, (sol, center) in enumerate(segments):
        t = _sample_solution(sol, substeps)
        Y = sol.sol(t)
        Y[:, 0] = sol.y[:, 0]
        Y[:, -1] = sol.y[:, -1]
        if k > 0:
            # the first node repeats the previous segment's end
            t, Y = t[1:], Y[:, 1:]
        ts.append(t)
        pts.append(Y[:n].T)
        lams.append(Y[n:2 * n].T)
        svals.append(Y[2 * n])
        rvals.append(Y[2 * n + 1])
        cents.append(np.full(t.size, center))
    t = np.concatenate(ts)
    X = np.concatenate(pts)
    L = np.concatenate(lams)
    s = np.concatenate(svals)
    r = np.concatenate(rvals)
    c = np.concatenate(cents)
    t, X, L, s, r, c = _strict(t, X, L, s, r, c)
    V = np.empty((t.size, n - 1))
    F = np.empty((t.size, n))
    G = np.empty((t.size, n))
    worst = 0.0
    for i in range(t.size):
        g = cache.g(X[i])
        G[i] = g
        V[i] = solve_v(g, c[i], L[i])
        F[i] = _ambient(V[i], g, c[i], other_axes(n, c[i]))[1]
        denom = np.linalg.norm(F[i]) * np.linalg.norm(g)
        if denom > 0:
            worst = max(worst, abs(F[i] @ g) / denom)
    return CurvePath(kind="geodesic", points=X, params=t, euclid_len=s, riem_len=r,
                     center_history=history, centers=c, v_history=V, tangents=F, grads=G,
                     complete=complete, reason=reason, tangency=worst)


# ---------------------------------------------------------------------------
# transverse flows
# ---------------------------------------------------------------------------


class CoefficientFunction:
    """Interpolated coefficient functions of a computed geodesic.

    Stores cubic splines of the geodesic's ambient tangent F(t) and of the
    gradient along it; the coefficients for any valid center q are
    F(t)[others(q)] / P_q(t), which for the geodesic's own center are the
    recorded v(t).
    """

    def __init__(self, path):
        if path.tangents is None or path.grads is None:
            raise ValueError("coefficient functions need a path with tangent and gradient history")
        self.t_max = float(path.params[-1])
        self._F = CubicSpline(path.params, path.tangents, axis=0)
        self._P = CubicSpline(path.params, path.grads, axis=0)
        self._hist = sorted(path.center_history)
        self.dim = path.dim

    def center(self, t):
        c = self._hist[0][1]
        for tc, axis in self._hist:
            if tc <= t:
                c = axis
        return c

    def switch_times(self):
        return [tc for tc, _ in self._hist[1:]]

    def tangent(self, t):
        return self._F(t)

    def grad(self, t):
        return self._P(t)

    def v(self, t, q=None):
        q = self.center(t) if q is None else q
        return self._F(t)[other_axes(self.dim, q)] / self._P(t)[q]


def _pick_center(gx, preferred, gsrc, eps=EPS_CENTER):
    # hysteresis: keep the preferred axis only while clearly above the event threshold
    ok = not is_degenerate_center(gx, preferred, 2 * eps)
    if ok and (gsrc is None or not is_degenerate_center(gsrc, preferred, 2 * eps)):
        return preferred
    score = np.abs(gx) / np.max(np.abs(gx))
    if gsrc is not None:
        score = np.minimum(score, np.abs(gsrc) / np.max(np.abs(gsrc)))
    return int(np.argmax(score))


def transverse_flow(
    fieldobj,
    x,
    coeffs,
    t_max,
    center_axis=None,
    max_step=np.inf,
    rtol=RTOL,
    atol=ATOL,
    eps_center=EPS_CENTER,
    substeps=SUBSTEPS,
    max_recenter=MAX_RECENTER,
):
    """Flow x' = sum_i v_i(t) V_i(x) from ``x`` for parameter time ``t_max``.

    ``coeffs`` is a :class:`CoefficientFunction` or a plain callable
    ``t -> v`` paired with a fixed ``center_axis``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    plain = not isinstance(coeffs, CoefficientFunction)
    if plain and center_axis is None:
        raise ValueError("a plain coefficient callable needs center_axis")
    if not plain and t_max > coeffs.t_max * (1 + 1e-9):
        raise ValueError(f"coefficients only defined up to t={coeffs.t_max}")
    t_max = float(t_max if plain else min(t_max, coeffs.t_max))

    def coeff(t, q):
        return np.asarray(coeffs(t), dtype=np.float64) if plain else coeffs.v(t, q)

    def rhs(t, y, q):
        g = fieldobj.gradient(y[:n])
        _, F = _ambient(coeff(t, q), g, q, other_axes(n, q))
        return np.concatenate([F, [math.sqrt(F @ F)]])

    def make_event(q, sgn):
        def degenerate(_t, y, *_):
            g = fieldobj.gradient(y[:n])
            return sgn * g[q] - eps_center * np.max(np.abs(g))

        degenerate.terminal = True
        degenerate.direction = -1
        return degenerate

    bounds = [0.0] + ([] if plain else [tc for tc in coeffs.switch_times() if 0 < tc < t_max]) + [t_max]
    segments, history = [], []
    y = np.concatenate([x, [0.0]])
    t0 = 0.0
    switches = 0
    for b in bounds[1:]:
        while t0 < b:
            gx = fieldobj.gradient(y[:n])
            if plain:
                q = center_axis
            else:
                q = _pick_center(gx, coeffs.center(t0 + 1e-12 * max(1.0, b)), coeffs.grad(t0), eps_center)
            history.append((t0, q))
            events = [] if plain else [make_event(q, math.copysign(1.0, gx[q]))]
            sol = solve_ivp(rhs, (t0, b), y, method="RK45", args=(q,), rtol=rtol, atol=atol,
                            max_step=max_step, events=events, dense_output=True)
            if sol.status == -1:
                raise StepCollapse(f"transverse flow failed: {sol.message}")
            segments.append((sol, q))
            y = sol.y[:, -1].copy()
            t0 = float(sol.t[-1])
            if sol.status == 1:
                switches += 1
                if switches > max_recenter:
                    raise DegenerateCenter("transverse flow keeps losing its center axis")
    ts, pts, lens, cents = [], [], [], []
    for k, (sol, q) in enumerate(segments):
        t = _sample_solution(sol, substeps)
        Y = sol.sol(t) if t.size > 1 else sol.y
        Y[:, 0] = sol.y[:, 0]
        Y[:, -1] = sol.y[:, -1]
        if k > 0:
            t, Y = t[1:], Y[:, 1:]
        ts.append(t)
        pts.append(Y[:n].T)
        lens.append(Y[n])
        cents.append(np.full(t.size, q))
    t = np.concatenate(ts)
    X = np.concatenate(pts)
    s = np.concatenate(lens)
    c = np.concatenate(cents)
    if t.size == 1:
        t, X, s, c = np.array([0.0, t_max]), np.vstack([X, X]), np.array([0.0, s[-1]]), np.repeat(c, 2)
    t, X, s, c = _strict(t, X, s, c)
    return CurvePath(kind="transverse", points=X, params=t, euclid_len=s, riem_len=s.copy(),
                     center_history=history, centers=c)


def flow_point(fieldobj, x, coeffs, t, **kw):
    """End point of a transverse flow for parameter time ``t`` (0 returns x)."""
    if t == 0:
        return np.asarray(x, dtype=np.float64).copy()
    return transverse_flow(fieldobj, x, coeffs, t, **kw).end


# ---------------------------------------------------------------------------
# lengths and dumps
# ---------------------------------------------------------------------------


def riemannian_speed(grad, xdot):
    """Speed of an ambient velocity: |grad U| on the unit-normal part, Euclidean on the rest."""
    gn2 = grad @ grad
    radial = xdot @ grad
    tang = xdot - (radial / gn2) * grad if gn2 > 0 else xdot
    return math.sqrt(radial * radial + tang @ tang)


def riemannian_length(fieldobj, path):
    """Riemannian length by trapezoid rule on the path's own parameter grid.

    Uses the stored tangents when present, otherwise chord midpoints.
    """
    if path.points.shape[0] < 2:
        raise ValueError("a path needs at least two points")
    if path.tangents is not None:
        grads = path.grads if path.grads is not None else [fieldobj.gradient(p) for p in path.points]
        speeds = np.array([riemannian_speed(g, d) for g, d in zip(grads, path.tangents)])
        return float(trapezoid(speeds, path.params))
    total = 0.0
    for a, b in zip(path.points[:-1], path.points[1:]):
        total += riemannian_speed(fieldobj.gradient(0.5 * (a + b)), b - a)
    return total


def write_curve_csv(path, curve):
    n = curve.dim
    centers = curve.centers if curve.centers is not None else np.full(len(curve.params), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["euclid_len", "riem_len", "center_axis"])
        for i in range(len(curve.params)):
            w.writerow([repr(float(curve.params[i]))] + [repr(float(v)) for v in curve.points[i]]
                       + [repr(float(curve.euclid_len[i])), repr(float(curve.riem_len[i])), int(centers[i])])
