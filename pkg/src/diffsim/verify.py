"""Self-checks on analytic potentials, run by the ``verify`` command."""
import numpy as np

from . import _pykernels, kernels
from .curves import geodesic, rho_curve
from .data import box_grid, curvilinear_potential, gaussian_potential, verify_stationarity
from .geometry import best_center, build_frame, eigensystem, metric


def _check(name, value, tol):
    return {"name": name, "value": float(value), "tol": tol, "passed": bool(value <= tol)}


def check_stationarity():
    pot = curvilinear_potential(3)
    grid = box_grid(np.zeros(3), np.full(3, 4.0), 4)
    return _check("stationarity", verify_stationarity(pot, grid), 1e-5)


def check_spectrum(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (3, 5, 8):
        g = rng.normal(size=n)
        fr = build_frame(g, best_center(g))
        eig = eigensystem(fr)
        closed = np.sort([eig.lambda_max] * 2 + [eig.lambda_min] * (n - 2))
        worst = max(worst, np.max(np.abs(np.linalg.eigvalsh(metric(fr).g) - closed)) / eig.lambda_max)
    return _check("metric_spectrum", worst, 1e-10)


def check_rho_length():
    pot = gaussian_potential(3, np.array([2.0, 1.0, 0.5]))
    x0 = np.array([1.5, -0.8, 0.4])
    path = rho_curve(pot, x0, rtol=1e-9, atol=1e-11)
    exact = pot.potential(path.end) - pot.potential(x0)
    return _check("rho_length", abs(path.total_riem - exact) / exact, 1e-5)


def check_level_set():
    pot = gaussian_potential(3, np.array([2.0, 1.0, 0.5]))
    x0 = np.array([1.5, -0.8, 0.4])
    fr = build_frame(pot.gradient(x0), best_center(pot.gradient(x0)))
    path = geodesic(pot, x0, np.zeros(3), np.array([1.0, 0.5]), center_axis=fr.center_axis,
                    rtol=1e-9, atol=1e-11)
    u0 = pot.potential(x0)
    drift = max(abs(pot.potential(p) - u0) for p in path.points)
    return _check("geodesic_level_set", drift / abs(u0), 1e-6)


def check_backends(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(300, 6))
    x = rng.normal(size=6)
    a = kernels.kernel_stats(s, x, 0.7, True)
    b = _pykernels.kernel_stats(s, x, 0.7, True)
    diff = max(float(np.max(np.abs(np.asarray(u) - np.asarray(v)) / (1.0 + np.abs(np.asarray(v)))))
               for u, v in zip(a, b))
    return _check("backend_agreement", diff, 1e-10)


def run_checks(seed=0):
    return [check_stationarity(), check_spectrum(seed), check_rho_length(), check_level_set(),
            check_backends(seed)]
