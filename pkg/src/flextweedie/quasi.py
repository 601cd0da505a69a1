"""Quasi-likelihood estimation.

The quasi-score handles the regression coefficients and the Pearson
estimating function the dispersion pair (delta, p); both need only the
first two moments, so any real power is allowed (including p < 0 and
p in (0,1), where no density exists). Standard errors come from the
inverse Godambe information (sandwich). The weight derivatives under the
log link reduce to closed forms:

    W_delta = 1/C,   W_p = log(mu)/C,   with C = exp(delta) mu^p,

and the lambda-beta sensitivity rows follow as -p sum(x) and
-p sum(log(mu) x).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, FitResult, ThetaVector, initial_theta, mean_vector
from .exceptions import IllConditioned, NoConvergence, NumericOverflow, TweedieError
from .numerics import solve

_MAX_ITER = 200
_TOL = 1e-6


@dataclass(frozen=True)
class EFEvaluation:
    """Estimating-function stack with its sensitivity and variability.

    The upper-right Q x 2 block of the sensitivity is exactly zero (the
    insensitivity property), which is what lets the chaser update beta and
    lambda with two separate equations.
    """

    u_beta: np.ndarray
    u_lambda: np.ndarray
    sensitivity: np.ndarray
    variability: np.ndarray


def _moments(theta: ThetaVector, data: Dataset):
    mu = mean_vector(theta, data)
    c = theta.phi * mu ** theta.power
    if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
        row = int(np.argmax(~(np.isfinite(c) & (c > 0.0))))
        raise NumericOverflow(f"variance function overflowed at row {row}", row=row)
    return mu, c


def quasi_score_beta(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Quasi-score for beta: sum_i (dmu_i/dbeta) (y_i - mu_i)/C_i.

    Identical to the likelihood score for beta, but defined for any real
    power since only the mean and variance enter.
    """
    mu, c = _moments(theta, data)
    return data.X.T @ (mu * (data.y - mu) / c)


def _per_obs_beta(theta: ThetaVector, data: Dataset, mu, c) -> np.ndarray:
    return data.X * (mu * (data.y - mu) / c)[:, None]


def _per_obs_lambda(theta: ThetaVector, data: Dataset, mu, c) -> np.ndarray:
    resid = (data.y - mu) ** 2 - c
    w_delta = 1.0 / c
    w_p = np.log(mu) / c
    return np.column_stack([w_delta * resid, w_p * resid])


def pearson_score_lambda(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Pearson estimating function for (delta, p), built from squared
    residuals with mean C_i; unbiased at the truth."""
    mu, c = _moments(theta, data)
    return _per_obs_lambda(theta, data, mu, c).sum(axis=0)


def quasi_sensitivity(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Joint (Q+2) x (Q+2) sensitivity, block lower-triangular.

    Raises IllConditioned when (delta, p) are not jointly identifiable,
    which happens exactly when mu is constant over the sample.
    """
    mu, c = _moments(theta, data)
    q, n = data.q, data.n
    log_mu = np.log(mu)
    s = np.zeros((q + 2, q + 2))
    m = (data.X * (mu ** 2 / c)[:, None]).T @ data.X
    s[:q, :q] = -0.5 * (m + m.T)
    sum_log = float(log_mu.sum())
    sum_log2 = float((log_mu ** 2).sum())
    det = n * sum_log2 - sum_log ** 2
    if det < 1e-10 * n * max(1.0, sum_log2):
        raise IllConditioned(
            "(delta, p) not jointly identifiable: log(mu) is (numerically) constant"
        )
    s[q:, q:] = -np.array([[n, sum_log], [sum_log, sum_log2]])
    p = theta.power
    s[q, :q] = -p * data.X.sum(axis=0)
    s[q + 1, :q] = -p * (data.X * log_mu[:, None]).sum(axis=0)
    return s


def quasi_variability(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Joint variability: analytic beta block (equal to minus the beta
    sensitivity), empirical uncentered sums elsewhere."""
    mu, c = _moments(theta, data)
    q = data.q
    v = np.zeros((q + 2, q + 2))
    m = (data.X * (mu ** 2 / c)[:, None]).T @ data.X
    v[:q, :q] = 0.5 * (m + m.T)
    u_lam = _per_obs_lambda(theta, data, mu, c)
    u_bet = _per_obs_beta(theta, data, mu, c)
    v[q:, q:] = u_lam.T @ u_lam
    cross = u_lam.T @ u_bet
    v[q:, :q] = cross
    v[:q, q:] = cross.T
    return v


def evaluate_estimating_functions(theta: ThetaVector, data: Dataset) -> EFEvaluation:
    mu, c = _moments(theta, data)
    return EFEvaluation(
        u_beta=_per_obs_beta(theta, data, mu, c).sum(axis=0),
        u_lambda=_per_obs_lambda(theta, data, mu, c).sum(axis=0),
        sensitivity=quasi_sensitivity(theta, data),
        variability=quasi_variability(theta, data),
    )


def godambe_vcov(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Inverse Godambe information S^-1 V S^-T.

    Its beta block collapses to the inverse Fisher information (the
    Cramer-Rao bound for the regression coefficients).
    """
    s = quasi_sensitivity(theta, data)
    v = quasi_variability(theta, data)
    s_inv_v = solve(s, v)
    j_inv = solve(s, s_inv_v.T).T
    return 0.5 * (j_inv + j_inv.T)


def _ef_norm(theta: ThetaVector, data: Dataset) -> float:
    try:
        mu, c = _moments(theta, data)
    except NumericOverflow:
        return np.inf
    u_b = _per_obs_beta(theta, data, mu, c).sum(axis=0)
    u_l = _per_obs_lambda(theta, data, mu, c).sum(axis=0)
    stacked = np.concatenate([u_b, u_l])
    return float(np.linalg.norm(stacked)) if np.all(np.isfinite(stacked)) else np.inf


def _partial_result(theta, data, iterations):
    q = theta.q
    return FitResult(
        theta=theta, vcov=np.full((q + 2, q + 2), np.nan),
        se=np.full(q + 2, np.nan), converged=False, iterations=iterations,
        method="QMLE",
    )


def fit_modified_chaser(data: Dataset, theta0: ThetaVector | None = None,
                        tol: float = _TOL, max_iter: int = _MAX_ITER) -> FitResult:
    """Modified chaser: beta <- beta - S_beta^-1 U_beta, then
    lambda <- lambda - S_lambda^-1 U_lambda at the fresh beta.

    Each half-step is halved (up to 10 times) while the stacked
    estimating-function norm increases. Convergence is declared when the
    largest applied update is below 1e-6.
    """
    if theta0 is None:
        theta0 = initial_theta(data, "QMLE")
    theta = theta0
    norm = _ef_norm(theta, data)
    if not np.isfinite(norm):
        raise NoConvergence(
            "estimating functions not finite at the starting point",
            result=_partial_result(theta, data, 0),
        )
    for it in range(1, max_iter + 1):
        theta_prev = theta
        try:
            mu, c = _moments(theta, data)
            s = quasi_sensitivity(theta, data)
            u_beta = _per_obs_beta(theta, data, mu, c).sum(axis=0)
            step_beta = -solve(s[:data.q, :data.q], u_beta)
            theta, norm = _try_step(
                data, theta, norm,
                lambda sc: theta.replace(beta=theta.beta + sc * step_beta))
            u_lambda = pearson_score_lambda(theta, data)
            s_lambda = quasi_sensitivity(theta, data)[data.q:, data.q:]
            step_lambda = -solve(s_lambda, u_lambda)
            base = theta
            theta, norm = _try_step(
                data, theta, norm,
                lambda sc: base.replace(delta=base.delta + sc * step_lambda[0],
                                        power=base.power + sc * step_lambda[1]))
        except (IllConditioned, NumericOverflow) as err:
            raise NoConvergence(
                f"chaser update failed at iteration {it}: {err}",
                result=_partial_result(theta, data, it),
            ) from err
        applied = np.max(np.abs(theta.as_array() - theta_prev.as_array()))
        if applied < tol:
            break
    else:
        raise NoConvergence(
            f"modified chaser did not converge in {max_iter} iterations",
            result=_partial_result(theta, data, max_iter),
        )
    try:
        vcov = godambe_vcov(theta, data)
    except TweedieError as err:
        raise NoConvergence(
            f"sandwich variance unavailable at the solution: {err}",
            result=_partial_result(theta, data, it),
        ) from err
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.diag(vcov))
    return FitResult(theta=theta, vcov=vcov, se=se, converged=True,
                     iterations=it, method="QMLE")


def _try_step(data, theta, norm, proposal):
    """Accept the proposal at the largest halving scale that does not
    increase the estimating-function norm; after 10 halvings take the
    smallest step anyway (pure Newton near the solution always passes)."""
    scale = 1.0
    candidate = None
    for _ in range(10):
        candidate = proposal(scale)
        new_norm = _ef_norm(candidate, data)
        if new_norm <= norm * (1.0 + 1e-10) + 1e-300:
            return candidate, new_norm
        scale *= 0.5
    new_norm = _ef_norm(candidate, data)
    if not np.isfinite(new_norm):
        raise NumericOverflow("estimating functions diverged during step halving")
    return candidate, new_norm
