"""Scikit-learn style front end.

``TweedieRegressor`` wraps the three fitting engines behind the usual
fit/predict/get_params surface so the model composes with pipelines,
cross-validation and friends. The engines themselves stay importable as
plain functions for anyone who wants the full variance matrices.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import Dataset, ThetaVector, initial_theta
from .exceptions import NoConvergence
from .mle import fit_mle_profile
from .pseudo import fit_pseudo_newton
from .quasi import fit_modified_chaser

_ENGINES = {
    "mle": fit_mle_profile,
    "qmle": fit_modified_chaser,
    "pmle": fit_pseudo_newton,
}


class TweedieRegressor(RegressorMixin, BaseEstimator):
    """Tweedie regression with a log link and an estimated power parameter.

    Parameters
    ----------
    method : {"qmle", "pmle", "mle"}, default="qmle"
        Estimation method: quasi-likelihood (quasi-score plus Pearson
        estimating functions), Gaussian pseudo-likelihood, or exact maximum
        likelihood via the series density. The default works for any real
        power and never needs the density.
    fit_intercept : bool, default=True
        Prepend a ones column to X before fitting.
    start_power, start_delta : float or None
        Optional overrides for the starting power and log-dispersion.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Coefficients on the log scale (excluding the intercept).
    intercept_ : float
        Intercept on the log scale (0.0 when fit_intercept=False).
    power_, dispersion_, delta_ : float
        Estimated power, dispersion phi and log-dispersion delta.
    se_ : ndarray of shape (n_features + ... + 2,)
        Standard errors for (all coefficients, delta, power).
    vcov_ : ndarray
        Full variance matrix in the same ordering.
    result_ : FitResult
        The engine-level result object.
    converged_ : bool
    """

    def __init__(self, method: str = "qmle", fit_intercept: bool = True,
                 start_power: float | None = None, start_delta: float | None = None):
        self.method = method
        self.fit_intercept = fit_intercept
        self.start_power = start_power
        self.start_delta = start_delta

    def _build_dataset(self, X, y) -> Dataset:
        names = [f"x{j + 1}" for j in range(X.shape[1])]
        if self.fit_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
            names = ["intercept", *names]
        return Dataset(y=y, X=X, names=tuple(names))

    def fit(self, X, y):
        method = str(self.method).lower()
        if method not in _ENGINES:
            raise ValueError(f"method must be one of {sorted(_ENGINES)}, got {self.method!r}")
        X, y = check_X_y(X, y, y_numeric=True)
        data = self._build_dataset(X, y)
        theta0 = initial_theta(data, method.upper())
        if self.start_power is not None or self.start_delta is not None:
            theta0 = ThetaVector(
                beta=theta0.beta,
                delta=theta0.delta if self.start_delta is None else float(self.start_delta),
                power=theta0.power if self.start_power is None else float(self.start_power),
            )
        try:
            result = _ENGINES[method](data, theta0)
        except NoConvergence as err:
            if err.result is None:
                raise
            warnings.warn(f"{method} fit did not converge: {err}", ConvergenceWarning)
            result = err.result
        self.result_ = result
        self.n_features_in_ = X.shape[1]
        beta = result.theta.beta
        if self.fit_intercept:
            self.intercept_ = float(beta[0])
            self.coef_ = np.asarray(beta[1:], dtype=float)
        else:
            self.intercept_ = 0.0
            self.coef_ = np.asarray(beta, dtype=float)
        self.delta_ = float(result.theta.delta)
        self.dispersion_ = float(result.theta.phi)
        self.power_ = float(result.theta.power)
        self.se_ = np.asarray(result.se, dtype=float)
        self.vcov_ = np.asarray(result.vcov, dtype=float)
        self.converged_ = bool(result.converged)
        self.n_iter_ = int(result.iterations)
        self.loglik_ = result.loglik
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return np.exp(self.intercept_ + X @ self.coef_)
