"""Gaussian pseudo-likelihood estimation.

The objective is the Gaussian log-likelihood with mean mu_i and variance
C_i = exp(delta) mu_i^p; only the first two moments matter, so any real
power is allowed. Its analytic gradient, the expected negative Hessian
(sensitivity), a joint Newton scoring fitter and the sandwich variance
live here. The beta-p sensitivity cross block is (p/2) sum(x log(mu)),
the value consistent with differentiating the score (confirmed against a
Monte-Carlo Hessian in the test suite).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, FitResult, ThetaVector, initial_theta, mean_vector
from .exceptions import NoConvergence, NumericOverflow, TweedieError
from .numerics import solve

_LOG_2PI = math.log(2.0 * math.pi)
_MAX_ITER = 200
_TOL = 1e-6


@dataclass(frozen=True)
class PseudoSensitivity:
    """Expected negative Hessian of the pseudo-log-likelihood.

    Symmetric, with S_delta = n/2 and S_p = sum(log(mu)^2)/2 exactly.
    """

    matrix: np.ndarray
    q: int

    @property
    def beta_block(self) -> np.ndarray:
        return self.matrix[:self.q, :self.q]

    @property
    def lambda_block(self) -> np.ndarray:
        return self.matrix[self.q:, self.q:]


def _moments(theta: ThetaVector, data: Dataset):
    mu = mean_vector(theta, data)
    c = theta.phi * mu ** theta.power
    if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
        row = int(np.argmax(~(np.isfinite(c) & (c > 0.0))))
        raise NumericOverflow(f"variance function overflowed at row {row}", row=row)
    return mu, c


def pseudo_loglik(theta: ThetaVector, data: Dataset) -> float:
    """Gaussian log-likelihood at (mu_i, C_i):

    -(n/2) log(2 pi) - n delta/2 - (1/2) sum[p log(mu_i) + (y_i-mu_i)^2/C_i].
    """
    mu, c = _moments(theta, data)
    n = data.n
    return float(
        -0.5 * n * _LOG_2PI - 0.5 * n * theta.delta
        - 0.5 * np.sum(theta.power * np.log(mu) + (data.y - mu) ** 2 / c)
    )


def _per_obs_score(theta: ThetaVector, data: Dataset, mu, c) -> np.ndarray:
    """n x (Q+2) matrix of per-observation score contributions."""
    p = theta.power
    y = data.y
    log_mu = np.log(mu)
    r2c = (y - mu) ** 2 / c
    beta_weight = -0.5 * p + 0.5 * p * r2c + (y - mu) * mu / c
    out = np.empty((data.n, data.q + 2))
    out[:, :data.q] = data.X * beta_weight[:, None]
    out[:, data.q] = -0.5 + 0.5 * r2c
    out[:, data.q + 1] = -0.5 * log_mu + 0.5 * log_mu * r2c
    return out


def pseudo_score(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Exact gradient of the pseudo-log-likelihood, length Q+2."""
    mu, c = _moments(theta, data)
    return _per_obs_score(theta, data, mu, c).sum(axis=0)


def pseudo_sensitivity(theta: ThetaVector, data: Dataset) -> PseudoSensitivity:
    """Analytic expected negative Hessian, all blocks in closed form."""
    mu, c = _moments(theta, data)
    p = theta.power
    q, n = data.q, data.n
    log_mu = np.log(mu)
    s = np.zeros((q + 2, q + 2))
    w = 0.5 * p ** 2 + mu ** (2.0 - p) / theta.phi
    m = (data.X * w[:, None]).T @ data.X
    s[:q, :q] = 0.5 * (m + m.T)
    s_beta_delta = 0.5 * p * data.X.sum(axis=0)
    s_beta_p = 0.5 * p * (data.X * log_mu[:, None]).sum(axis=0)
    s[:q, q] = s_beta_delta
    s[q, :q] = s_beta_delta
    s[:q, q + 1] = s_beta_p
    s[q + 1, :q] = s_beta_p
    s[q, q] = 0.5 * n
    s[q + 1, q + 1] = 0.5 * float((log_mu ** 2).sum())
    s_dp = 0.5 * float(log_mu.sum())
    s[q, q + 1] = s_dp
    s[q + 1, q] = s_dp
    return PseudoSensitivity(matrix=s, q=q)


def pseudo_sandwich_vcov(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Sandwich S^-1 V S^-1 with the empirical V = sum of per-observation
    score outer products."""
    mu, c = _moments(theta, data)
    s = pseudo_sensitivity(theta, data).matrix
    scores = _per_obs_score(theta, data, mu, c)
    v = scores.T @ scores
    s_inv_v = solve(s, v)
    vcov = solve(s, s_inv_v.T).T
    return 0.5 * (vcov + vcov.T)


def _safe_pll(theta: ThetaVector, data: Dataset) -> float:
    try:
        return pseudo_loglik(theta, data)
    except NumericOverflow:
        return -np.inf


def _partial_result(theta, data, iterations):
    q = theta.q
    return FitResult(
        theta=theta, vcov=np.full((q + 2, q + 2), np.nan),
        se=np.full(q + 2, np.nan), converged=False, iterations=iterations,
        method="PMLE",
    )


def fit_pseudo_newton(data: Dataset, theta0: ThetaVector | None = None,
                      tol: float = _TOL, max_iter: int = _MAX_ITER,
                      fix_power: bool = False) -> FitResult:
    """Joint Newton scoring on all Q+2 parameters.

    beta and lambda must move together because the sensitivity cross
    blocks are non-zero. Step halving guards against objective decreases.
    With ``fix_power`` the power stays at its starting value and only
    (beta, delta) are updated (useful for pinning a known member, e.g.
    the Gaussian at p=0).
    """
    if theta0 is None:
        theta0 = initial_theta(data, "PMLE")
    theta = theta0
    ll = _safe_pll(theta, data)
    if not np.isfinite(ll):
        raise NoConvergence(
            "pseudo-log-likelihood not finite at the starting point",
            result=_partial_result(theta, data, 0),
        )
    free = np.arange(data.q + 2 - (1 if fix_power else 0))
    for it in range(1, max_iter + 1):
        try:
            u = pseudo_score(theta, data)[free]
            s = pseudo_sensitivity(theta, data).matrix[np.ix_(free, free)]
            step = solve(s, u)
        except (NumericOverflow, TweedieError) as err:
            raise NoConvergence(
                f"pseudo Newton update failed at iteration {it}: {err}",
                result=_partial_result(theta, data, it),
            ) from err
        full_step = np.zeros(data.q + 2)
        full_step[free] = step
        base = theta
        scale = 1.0
        accept_tol = 1e-8 * (1.0 + abs(ll))
        for _ in range(10):
            candidate = ThetaVector.from_array(base.as_array() + scale * full_step)
            ll_new = _safe_pll(candidate, data)
            if ll_new >= ll - accept_tol:
                break
            scale *= 0.5
        else:
            candidate = ThetaVector.from_array(base.as_array() + scale * full_step)
            ll_new = _safe_pll(candidate, data)
            if not np.isfinite(ll_new):
                raise NoConvergence(
                    f"pseudo Newton diverged at iteration {it}",
                    result=_partial_result(theta, data, it),
                )
        theta, ll = candidate, ll_new
        if np.max(np.abs(scale * full_step)) < tol:
            break
    else:
        raise NoConvergence(
            f"pseudo Newton scoring did not converge in {max_iter} iterations",
            result=_partial_result(theta, data, max_iter),
        )
    try:
        if fix_power:
            vcov = np.full((data.q + 2, data.q + 2), np.nan)
            mu, c = _moments(theta, data)
            s = pseudo_sensitivity(theta, data).matrix[np.ix_(free, free)]
            scores = _per_obs_score(theta, data, mu, c)[:, free]
            v = scores.T @ scores
            block = solve(s, solve(s, v).T).T
            vcov[np.ix_(free, free)] = 0.5 * (block + block.T)
        else:
            vcov = pseudo_sandwich_vcov(theta, data)
    except TweedieError as err:
        raise NoConvergence(
            f"sandwich variance unavailable at the solution: {err}",
            result=_partial_result(theta, data, it),
        ) from err
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.diag(vcov))
    return FitResult(theta=theta, vcov=vcov, se=se, converged=True,
                     iterations=it, method="PMLE")
