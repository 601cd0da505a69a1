"""Shared numerical kernels: Nelder-Mead simplex minimization,
Richardson-extrapolated derivatives, and condition-guarded linear solves.

All functions are pure and deterministic given their inputs; objective
callbacks must themselves be reentrant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .exceptions import IllConditioned, NonFiniteObjective

#: condition-number ceiling for linear solves
COND_LIMIT = 1e12


@dataclass(frozen=True)
class OptimizerTrace:
    iterations: int
    best_value: float
    simplex_spread: float
    converged: bool
    n_evaluations: int


def nelder_mead(f, x0, value_tol: float = 1e-8, param_tol: float = 1e-6,
                max_evals: int | None = None, initial_scale: float = 0.05):
    """Minimize ``f`` with a deterministic Nelder-Mead simplex.

    The initial simplex is x0 plus unit steps of 0.05*(|x0_j| + 0.1) along
    each coordinate, so runs are reproducible without any seed. Convergence
    requires the simplex value spread below ``value_tol`` and the parameter
    spread below ``param_tol``; the evaluation budget is 500 per dimension.
    Hitting the budget is not an error: the best point so far is returned
    with ``converged=False`` in the trace.

    Returns (x_best, OptimizerTrace).
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    dim = x0.shape[0]
    if max_evals is None:
        max_evals = 500 * dim
    n_evals = [0]

    def wrapped(x):
        n_evals[0] += 1
        value = f(x)
        # NaN would poison simplex ordering; +inf is just a terrible point
        return np.inf if not np.isfinite(value) else float(value)

    f0 = f(x0)
    if not np.isfinite(f0):
        raise NonFiniteObjective(f"objective is {f0!r} at the starting point")

    simplex = np.empty((dim + 1, dim))
    simplex[0] = x0
    for j in range(dim):
        step = initial_scale * (abs(x0[j]) + 0.1)
        simplex[j + 1] = x0
        simplex[j + 1, j] += step

    result = scipy.optimize.minimize(
        wrapped, x0, method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "fatol": value_tol,
            "xatol": param_tol,
            "maxfev": max_evals,
            "adaptive": False,
        },
    )
    sim, fsim = result.final_simplex
    spread = float(np.max(np.abs(fsim - fsim[0]))) if np.all(np.isfinite(fsim)) else np.inf
    converged = bool(result.success) and np.isfinite(result.fun)
    trace = OptimizerTrace(
        iterations=int(result.nit), best_value=float(result.fun),
        simplex_spread=spread, converged=converged, n_evaluations=n_evals[0],
    )
    return np.asarray(result.x, dtype=float), trace


def _richardson_partial(func, x, j, base_step, levels, ratio):
    """Richardson-extrapolated central difference of ``func`` along x_j.

    ``func`` may be scalar- or vector-valued; the extrapolation runs
    elementwise. The step starts at base_step*(|x_j| + 1e-4) and shrinks by
    ``ratio`` at each of ``levels`` levels.
    """
    x = np.asarray(x, dtype=float)
    h0 = base_step * (abs(x[j]) + 1e-4)
    table = []
    for m in range(levels):
        h = h0 / ratio ** m
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.asarray(func(xp), dtype=float)
        fm = np.asarray(func(xm), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteObjective(
                f"non-finite objective at probe point (component {j}, step {h:g})"
            )
        table.append((fp - fm) / (2.0 * h))
    fac = ratio ** 2
    for i in range(1, levels):
        weight = fac ** i
        table = [
            (weight * table[m + 1] - table[m]) / (weight - 1.0)
            for m in range(len(table) - 1)
        ]
    return table[0]


def richardson_gradient(f, x, base_step: float = 1e-2, levels: int = 4,
                        ratio: float = 2.0) -> np.ndarray:
    """Gradient of scalar f by central differences with Richardson
    extrapolation (4 levels, step ratio 2, h0 = 1e-2*(|x_j| + 1e-4))."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return np.array([
        _richardson_partial(f, x, j, base_step, levels, ratio) for j in range(x.shape[0])
    ], dtype=float)


def richardson_jacobian(func, x, base_step: float = 1e-2, levels: int = 4,
                        ratio: float = 2.0) -> np.ndarray:
    """Jacobian (rows = outputs, columns = inputs) of a vector function."""
    x = np.asarray(x, dtype=float).reshape(-1)
    cols = [
        _richardson_partial(func, x, j, base_step, levels, ratio)
        for j in range(x.shape[0])
    ]
    return np.column_stack(cols)


def richardson_hessian(f, x, base_step: float = 1e-2, levels: int = 4,
                       ratio: float = 2.0) -> np.ndarray:
    """Hessian of scalar f: Richardson differentiation applied to each
    component of the Richardson gradient, then symmetrized as (H + H')/2."""
    def grad(z):
        return richardson_gradient(f, z, base_step=base_step, levels=levels, ratio=ratio)

    hess = richardson_jacobian(grad, x, base_step=base_step, levels=levels, ratio=ratio)
    return 0.5 * (hess + hess.T)


def condition_number(a: np.ndarray) -> float:
    """2-norm condition estimate (SVD based; matrices here are small)."""
    try:
        return float(np.linalg.cond(a))
    except np.linalg.LinAlgError:
        return np.inf


def solve(a: np.ndarray, b: np.ndarray, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Solve a @ x = b by pivoted LU, refusing near-singular systems."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(a)):
        raise IllConditioned("matrix contains non-finite entries")
    cond = condition_number(a)
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditioned(f"condition estimate {cond:.3g} exceeds {cond_limit:g}")
    return scipy.linalg.solve(a, b)


def inverse(a: np.ndarray, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Inverse via the guarded solve, symmetrized for symmetric input."""
    a = np.asarray(a, dtype=float)
    inv = solve(a, np.eye(a.shape[0]), cond_limit=cond_limit)
    if np.allclose(a, a.T, rtol=1e-12, atol=0.0):
        inv = 0.5 * (inv + inv.T)
    return inv
