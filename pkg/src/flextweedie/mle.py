"""Maximum-likelihood fitting.

The regression score and Fisher block are analytic; the dispersion block
(delta, p) only exists through the series density, so its score and
information come from Richardson differentiation. Two fitters are exposed:
the two-step Newton scoring iteration, which alternates beta and lambda
updates exploiting their orthogonality, and the recommended profile fit,
which runs Nelder-Mead over (delta, p) on the profile log-likelihood with
an inner Newton solve for beta.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, FitResult, ThetaVector, initial_theta, mean_vector, validate_support
from .density import log_likelihood
from .exceptions import (
    CatastrophicCancellation,
    DensityRegionUnstable,
    DomainError,
    IllConditioned,
    NoConvergence,
    NumericOverflow,
    SeriesNotConverged,
    SupportViolation,
    TweedieError,
)
from .numerics import inverse, nelder_mead, richardson_gradient, richardson_hessian, solve

#: power clamp used while iterating (numeric lambda derivatives need
#: interior points of the density region)
P_MIN = 1.0 + 1e-6
P_MAX = 5.0

_DENSITY_ERRORS = (
    SupportViolation, DomainError, SeriesNotConverged,
    CatastrophicCancellation, NumericOverflow,
)


@dataclass(frozen=True)
class MleInternals:
    """Analytic beta blocks and numeric lambda blocks at one theta."""

    score_beta: np.ndarray
    fisher_beta: np.ndarray
    score_lambda_numeric: np.ndarray
    fisher_lambda_numeric: np.ndarray


def score_beta(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Analytic score for beta: sum_i x_i mu_i^(1-p) (y_i - mu_i) / phi."""
    validate_support(theta.power, data.y, "MLE")
    mu = mean_vector(theta, data)
    w = mu ** (1.0 - theta.power) * (data.y - mu) / theta.phi
    return data.X.T @ w


def fisher_beta(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Fisher information block for beta: X' diag(mu^(2-p)/phi) X."""
    mu = mean_vector(theta, data)
    w = mu ** (2.0 - theta.power) / theta.phi
    f = (data.X * w[:, None]).T @ data.X
    return 0.5 * (f + f.T)


def _lambda_step_guard(power: float, step: float) -> bool:
    """True when Richardson probes around ``power`` stay inside one density
    region: no approach of p=1 within the step and no straddling of p=2.

    ``step`` should be the largest total probe offset (2h for nested
    Hessian differences).
    """
    lo, hi = power - step, power + step
    if lo <= 1.0:
        return False
    if lo < 2.0 < hi or power == 2.0:
        return False
    return True


def numeric_lambda_derivatives(theta: ThetaVector, data: Dataset):
    """Richardson score and observed information for (delta, p) at fixed beta.

    Returns (score 2-vector, information 2x2, symmetric). Probes that would
    cross p=2 or approach p=1 shrink the step once and then raise
    DensityRegionUnstable, since derivatives across those boundaries are
    meaningless.
    """
    validate_support(theta.power, data.y, "MLE")
    p = theta.power
    scale = 1.0
    h = 1e-2 * (abs(p) + 1e-4)
    if not _lambda_step_guard(p, 2.0 * h):
        scale = 0.5
        if not _lambda_step_guard(p, 2.0 * h * scale):
            raise DensityRegionUnstable(
                f"numeric (delta,p) derivatives unreliable at p={p:g}: probe points "
                "cross p=2 or approach p=1 within the step size"
            )

    def f(lam):
        return log_likelihood(theta.replace(delta=lam[0], power=lam[1]), data)

    lam0 = np.array([theta.delta, p])
    base = 1e-2 * scale
    score = richardson_gradient(f, lam0, base_step=base)
    hess = richardson_hessian(f, lam0, base_step=base)
    info = -0.5 * (hess + hess.T)
    return score, info


def mle_internals(theta: ThetaVector, data: Dataset) -> MleInternals:
    u_lambda, f_lambda = numeric_lambda_derivatives(theta, data)
    return MleInternals(
        score_beta=score_beta(theta, data),
        fisher_beta=fisher_beta(theta, data),
        score_lambda_numeric=u_lambda,
        fisher_lambda_numeric=f_lambda,
    )


def _safe_loglik(theta: ThetaVector, data: Dataset) -> float:
    try:
        return log_likelihood(theta, data)
    except _DENSITY_ERRORS:
        return -np.inf


def _newton_beta(theta: ThetaVector, data: Dataset, tol: float, max_iter: int = 50):
    """Inner Newton scoring for beta at fixed lambda; returns (theta, n_iter).

    Step halving monitors the score norm, which needs no series evaluation.
    """
    norm = np.linalg.norm(score_beta(theta, data))
    for it in range(1, max_iter + 1):
        u = score_beta(theta, data)
        f = fisher_beta(theta, data)
        step = solve(f, u)
        scale = 1.0
        for _ in range(10):
            candidate = theta.replace(beta=theta.beta + scale * step)
            try:
                new_norm = np.linalg.norm(score_beta(candidate, data))
            except NumericOverflow:
                new_norm = np.inf
            if np.isfinite(new_norm) and new_norm <= norm * (1.0 + 1e-8) + 1e-300:
                break
            scale *= 0.5
        theta = theta.replace(beta=theta.beta + scale * step)
        norm = np.linalg.norm(score_beta(theta, data))
        if np.max(np.abs(scale * step)) < tol:
            return theta, it
    raise NoConvergence(f"inner beta Newton scoring stalled after {max_iter} iterations")


def profile_loglik(lam, data: Dataset, beta_start: np.ndarray | None = None,
                   tol: float = 1e-8):
    """Profile log-likelihood at lambda = (delta, p): maximize over beta by
    Newton scoring, then evaluate the full likelihood at (beta_hat, lambda).

    Returns (value, beta_hat).
    """
    delta, power = float(lam[0]), float(lam[1])
    if beta_start is None:
        beta_start = initial_theta(data, "MLE").beta
    theta = ThetaVector(beta=beta_start, delta=delta, power=power)
    validate_support(power, data.y, "MLE")
    theta, _ = _newton_beta(theta, data, tol=tol)
    return log_likelihood(theta, data), theta.beta


def _halving_step(data, theta, proposal, ll_old, max_halvings: int = 10):
    """Try proposal, halving toward theta while the likelihood decreases.

    ``proposal`` maps a scale in (0, 1] to a candidate theta. Returns
    (theta_new, ll_new, accepted_scale); scale 0 means nothing improved.
    """
    tol = 1e-8 * (1.0 + abs(ll_old))
    scale = 1.0
    for _ in range(max_halvings):
        candidate = proposal(scale)
        ll_new = _safe_loglik(candidate, data)
        if ll_new >= ll_old - tol:
            return candidate, ll_new, scale
        scale *= 0.5
    return theta, ll_old, 0.0


def _partial_result(theta, data, iterations, loglik, messages=()):
    q = theta.q
    nan_mat = np.full((q + 2, q + 2), np.nan)
    return FitResult(
        theta=theta, vcov=nan_mat, se=np.full(q + 2, np.nan), converged=False,
        iterations=iterations, method="MLE", loglik=loglik, messages=messages,
    )


def fit_mle_two_step(data: Dataset, theta0: ThetaVector | None = None,
                     tol: float = 1e-6, max_iter: int = 100) -> FitResult:
    """Two-step Newton scoring: beta via the analytic Fisher block, lambda
    via numeric Richardson blocks, alternating (the blocks are orthogonal).

    Known to struggle for small powers; failures surface as NoConvergence
    carrying the best-so-far result rather than being masked.
    """
    if theta0 is None:
        theta0 = initial_theta(data, "MLE")
    theta = theta0.replace(power=float(np.clip(theta0.power, P_MIN, P_MAX)))
    validate_support(theta.power, data.y, "MLE")
    ll = _safe_loglik(theta, data)
    if not np.isfinite(ll):
        raise NoConvergence(
            "log-likelihood not finite at the starting point",
            result=_partial_result(theta, data, 0, None),
        )
    f_lambda = None
    for it in range(1, max_iter + 1):
        theta_prev = theta
        u_beta = score_beta(theta, data)
        f_beta = fisher_beta(theta, data)
        step_beta = solve(f_beta, u_beta)
        theta, ll, _ = _halving_step(
            data, theta, lambda s: theta.replace(beta=theta.beta + s * step_beta), ll
        )
        try:
            u_lambda, f_lambda = numeric_lambda_derivatives(theta, data)
            step_lambda = solve(f_lambda, u_lambda)
        except TweedieError as err:
            raise NoConvergence(
                f"lambda update failed at iteration {it}: {err}",
                result=_partial_result(theta, data, it, ll),
            ) from err
        base = theta

        def lam_proposal(s):
            delta = base.delta + s * step_lambda[0]
            power = float(np.clip(base.power + s * step_lambda[1], P_MIN, P_MAX))
            return base.replace(delta=delta, power=power)

        theta, ll, _ = _halving_step(data, theta, lam_proposal, ll)
        applied = np.max(np.abs(theta.as_array() - theta_prev.as_array()))
        if applied < tol:
            break
    else:
        raise NoConvergence(
            f"two-step Newton scoring did not converge in {max_iter} iterations",
            result=_partial_result(theta, data, max_iter, ll),
        )

    f_beta = fisher_beta(theta, data)
    vcov = np.zeros((data.q + 2, data.q + 2))
    vcov[:data.q, :data.q] = inverse(f_beta)
    messages = []
    try:
        _, f_lambda = numeric_lambda_derivatives(theta, data)
        vcov[data.q:, data.q:] = inverse(f_lambda)
    except TweedieError as err:
        vcov[data.q:, data.q:] = np.nan
        messages.append(f"standard errors for (delta, p) unavailable: {err}")
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.diag(vcov))
    return FitResult(
        theta=theta, vcov=vcov, se=se, converged=True, iterations=it,
        method="MLE", loglik=ll, messages=tuple(messages),
    )


def fit_mle_profile(data: Dataset, theta0: ThetaVector | None = None,
                    inner_tol: float = 1e-8) -> FitResult:
    """Profile-likelihood fit: Nelder-Mead over (delta, p) on the negative
    profile log-likelihood; the fast and stable default.

    The power is clamped to [1+1e-6, 5] wherever the optimizer probes.
    When the numeric lambda information is unavailable near a region
    boundary (p close to 1 or 2), the (delta, p) standard errors are
    reported as NaN with a warning message on the result.
    """
    if theta0 is None:
        theta0 = initial_theta(data, "MLE")
    p0 = float(np.clip(theta0.power, P_MIN, P_MAX))
    validate_support(p0, data.y, "MLE")
    warm = {"beta": theta0.beta}

    def objective(lam):
        power = float(np.clip(lam[1], P_MIN, P_MAX))
        try:
            value, beta_hat = profile_loglik((lam[0], power), data,
                                             beta_start=warm["beta"], tol=inner_tol)
        except (NoConvergence, IllConditioned, *_DENSITY_ERRORS):
            return np.inf
        warm["beta"] = beta_hat
        return -value

    lam_opt, trace = nelder_mead(objective, np.array([theta0.delta, p0]))
    delta_hat = float(lam_opt[0])
    power_hat = float(np.clip(lam_opt[1], P_MIN, P_MAX))
    try:
        loglik, beta_hat = profile_loglik((delta_hat, power_hat), data,
                                          beta_start=warm["beta"], tol=inner_tol)
    except (NoConvergence, IllConditioned, *_DENSITY_ERRORS) as err:
        raise NoConvergence(
            f"profile fit failed to re-solve beta at the optimum: {err}",
            result=_partial_result(
                ThetaVector(warm["beta"], delta_hat, power_hat), data,
                trace.iterations, None),
        ) from err
    theta = ThetaVector(beta=beta_hat, delta=delta_hat, power=power_hat)

    vcov = np.zeros((data.q + 2, data.q + 2))
    vcov[:data.q, :data.q] = inverse(fisher_beta(theta, data))
    messages = []
    try:
        _, f_lambda = numeric_lambda_derivatives(theta, data)
        vcov[data.q:, data.q:] = inverse(f_lambda)
    except TweedieError as err:
        # p close to 1 or 2: the lambda information cannot be computed
        vcov[data.q:, data.q:] = np.nan
        messages.append(f"standard errors for (delta, p) unavailable: {err}")
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.diag(vcov))
    result = FitResult(
        theta=theta, vcov=vcov, se=se, converged=trace.converged,
        iterations=trace.iterations, method="MLE", loglik=loglik,
        messages=tuple(messages),
    )
    if not trace.converged:
        raise NoConvergence(
            f"profile Nelder-Mead hit the evaluation budget "
            f"({trace.n_evaluations} evaluations)", result=result,
        )
    return result
