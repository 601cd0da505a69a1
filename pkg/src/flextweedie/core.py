"""Domain types shared by every estimator: data container, parameter
vectors, the log link and the mean/variance mapping, and support checks.

All types are immutable value objects after construction; operations are
pure functions, so everything here is safe to share between threads.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from .exceptions import InvalidInput, NumericOverflow, SupportViolation

#: |eta| beyond which exp(eta) is treated as overflow rather than silently
#: producing inf/0 inside an iterative fitter.
ETA_LIMIT = 700.0

_RANK_RTOL = 1e-10


class SupportClass(enum.Enum):
    """Support of a Tweedie distribution as a function of the power."""

    REAL_LINE = "real_line"
    NON_NEGATIVE_WITH_MASS_AT_ZERO = "non_negative_with_mass_at_zero"
    STRICTLY_POSITIVE = "strictly_positive"
    SCALED_COUNTS = "scaled_counts"


def support_class(power: float) -> SupportClass:
    """Map a power parameter to its support class.

    Total on the reals: powers in (0, 1) or below 0 fall in the
    second-moment-only regime and map to the real line.
    """
    if power == 1.0:
        return SupportClass.SCALED_COUNTS
    if 1.0 < power < 2.0:
        return SupportClass.NON_NEGATIVE_WITH_MASS_AT_ZERO
    if power >= 2.0:
        return SupportClass.STRICTLY_POSITIVE
    return SupportClass.REAL_LINE


@dataclass(frozen=True)
class TweedieParams:
    """Single-observation parametrization (mean, dispersion, power)."""

    mu: float
    phi: float
    power: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise InvalidInput(f"mu must be positive and finite, got {self.mu}")
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise InvalidInput(f"phi must be positive and finite, got {self.phi}")
        if not np.isfinite(self.power):
            raise InvalidInput(f"power must be finite, got {self.power}")

    def variance(self) -> float:
        """Var(Y) = phi * mu**power."""
        return self.phi * self.mu ** self.power

    def support_class(self) -> SupportClass:
        return support_class(self.power)

    def canonical(self) -> float:
        """Canonical parameter: mu**(1-p)/(1-p) for p != 1, log(mu) at p=1."""
        if self.power == 1.0:
            return float(np.log(self.mu))
        return self.mu ** (1.0 - self.power) / (1.0 - self.power)

    def cumulant(self) -> float:
        """Cumulant function value: mu**(2-p)/(2-p) for p != 2, log(mu) at p=2."""
        if self.power == 2.0:
            return float(np.log(self.mu))
        return self.mu ** (2.0 - self.power) / (2.0 - self.power)


@dataclass(frozen=True)
class ThetaVector:
    """Full parameter state (beta, delta, power) with phi = exp(delta)."""

    beta: np.ndarray
    delta: float
    power: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "power", float(self.power))

    @property
    def phi(self) -> float:
        """Dispersion on the natural scale; positive by construction."""
        return float(np.exp(self.delta))

    @property
    def q(self) -> int:
        return self.beta.shape[0]

    def as_array(self) -> np.ndarray:
        """Stacked (beta..., delta, power) vector of length Q+2."""
        return np.concatenate([self.beta, [self.delta, self.power]])

    @staticmethod
    def from_array(values: np.ndarray) -> "ThetaVector":
        values = np.asarray(values, dtype=float).reshape(-1)
        return ThetaVector(beta=values[:-2], delta=values[-2], power=values[-1])

    def replace(self, beta=None, delta=None, power=None) -> "ThetaVector":
        return ThetaVector(
            beta=self.beta if beta is None else beta,
            delta=self.delta if delta is None else delta,
            power=self.power if power is None else power,
        )


@dataclass(frozen=True)
class Dataset:
    """Response vector with its n x Q design matrix and column names.

    The design matrix is fully user supplied: no formula language and no
    automatic intercept (callers prepend a ones column themselves).
    """

    y: np.ndarray
    X: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise InvalidInput("X must be a 2-d matrix")
        n, q = X.shape
        if y.shape[0] != n:
            raise InvalidInput(f"y has {y.shape[0]} rows but X has {n}")
        if not (n >= q >= 1):
            raise InvalidInput(f"need n >= Q >= 1, got n={n}, Q={q}")
        if not np.all(np.isfinite(y)):
            raise InvalidInput("y contains non-finite entries")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("X contains non-finite entries")
        names = tuple(self.names) if self.names else tuple(f"x{j}" for j in range(q))
        if len(names) != q:
            raise InvalidInput(f"{len(names)} names for {q} columns")
        # Pivoted QR rank check: deficiency is a hard load error because all
        # three estimators invert Q x Q sensitivity blocks.
        _, r, _ = scipy.linalg.qr(X, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        if diag.size == 0 or diag[0] == 0.0 or diag.min() < _RANK_RTOL * diag[0]:
            raise InvalidInput("X is rank deficient (relative tolerance 1e-10)")
        y = y.copy()
        X = X.copy()
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Point estimates with variance matrix and convergence diagnostics."""

    theta: ThetaVector
    vcov: np.ndarray
    se: np.ndarray
    converged: bool
    iterations: int
    method: str
    loglik: float | None = None
    messages: tuple = field(default=())

    def __post_init__(self):
        vcov = np.asarray(self.vcov, dtype=float)
        se = np.asarray(self.se, dtype=float).reshape(-1)
        vcov = vcov.copy()
        se = se.copy()
        vcov.setflags(write=False)
        se.setflags(write=False)
        object.__setattr__(self, "vcov", vcov)
        object.__setattr__(self, "se", se)
        object.__setattr__(self, "messages", tuple(self.messages))

    def parameter_names(self, data: Dataset | None = None) -> list:
        base = list(data.names) if data is not None else [f"b{j}" for j in range(self.theta.q)]
        return base + ["delta", "power"]


def linkinv(eta: float) -> float:
    """Inverse log link: exp(eta)."""
    eta = float(eta)
    if not np.isfinite(eta):
        raise InvalidInput(f"eta must be finite, got {eta}")
    return float(np.exp(eta))


def mean_vector(theta: ThetaVector, data: Dataset) -> np.ndarray:
    """Fitted means mu_i = exp(x_i' beta), guarded against exp overflow."""
    if theta.q != data.q:
        raise InvalidInput(f"beta has {theta.q} entries but X has {data.q} columns")
    eta = data.X @ theta.beta
    bad = np.abs(eta) > ETA_LIMIT
    if bad.any():
        row = int(np.argmax(bad))
        raise NumericOverflow(
            f"linear predictor magnitude {eta[row]:.3g} exceeds {ETA_LIMIT:g} at row {row}",
            row=row,
        )
    return np.exp(eta)


def validate_support(power: float, y: np.ndarray, method: str) -> None:
    """Check that the response lies in the support implied by the power.

    Maximum likelihood needs the density, so it rejects powers without one
    and responses off the support. The quasi- and pseudo-likelihood methods
    only use the first two moments and accept any real response and power.
    """
    method = method.upper()
    if method in ("QMLE", "PMLE"):
        return
    if method != "MLE":
        raise InvalidInput(f"unknown method {method!r}")
    y = np.asarray(y, dtype=float)
    if 0.0 < power < 1.0:
        raise SupportViolation(
            f"p={power:g} has no density: p in (0,1) excluded", rule="p in (0,1) excluded"
        )
    if power < 0.0:
        raise SupportViolation(
            f"p={power:g} has no tractable density for likelihood fitting",
            rule="p < 0 excluded for MLE",
        )
    if 1.0 <= power < 2.0:
        bad = y < 0.0
        rule = "y >= 0 required for 1 <= p < 2"
    elif power >= 2.0:
        bad = y <= 0.0
        rule = "y > 0 required for p >= 2"
    else:  # power == 0: Gaussian, all reals fine
        return
    if bad.any():
        index = int(np.argmax(bad))
        raise SupportViolation(
            f"response y[{index}]={y[index]:g} violates: {rule}", index=index, rule=rule
        )


def initial_theta(data: Dataset, method: str) -> ThetaVector:
    """Starting values shared by all fitters.

    beta0 comes from a least-squares fit of log(y + c) on X with c half the
    smallest positive response (entries below c are clipped so the log stays
    finite for zero or negative data). The starting power is 1.5, except 0.5
    for quasi/pseudo fits of responses with negative values; delta0 is the
    log mean squared Pearson residual at (beta0, p0).
    """
    y = data.y
    positive = y[y > 0]
    c = 0.5 * float(positive.min()) if positive.size else 1.0
    z = np.log(np.maximum(y + c, c))
    beta0, *_ = np.linalg.lstsq(data.X, z, rcond=None)
    p0 = 1.5
    if method.upper() in ("QMLE", "PMLE") and (y < 0).any():
        p0 = 0.5
    theta = ThetaVector(beta=beta0, delta=0.0, power=p0)
    mu = mean_vector(theta, data)
    phi0 = float(np.mean((y - mu) ** 2 / mu ** p0))
    delta0 = float(np.log(max(phi0, 1e-10)))
    return theta.replace(delta=delta0)


def load_csv(path, response: str, covariates, intercept: bool = True) -> Dataset:
    """Load a Dataset from a headed CSV, selecting columns by name.

    Decimal point '.', UTF-8; a missing field or an absent column is a load
    error. With ``intercept`` a leading ones column named "intercept" is
    prepended.
    """
    frame = pd.read_csv(path, encoding="utf-8")
    covariates = list(covariates)
    missing = [c for c in [response, *covariates] if c not in frame.columns]
    if missing:
        raise InvalidInput(f"column(s) not in CSV: {', '.join(missing)}")
    sub = frame[[response, *covariates]]
    if sub.isna().any().any():
        rows = sub.index[sub.isna().any(axis=1)].tolist()
        raise InvalidInput(f"missing fields in CSV at row(s) {rows[:5]}")
    y = sub[response].to_numpy(dtype=float)
    X = sub[covariates].to_numpy(dtype=float) if covariates else np.empty((len(y), 0))
    names = list(covariates)
    if intercept:
        X = np.column_stack([np.ones(len(y)), X]) if X.size else np.ones((len(y), 1))
        names = ["intercept", *names]
    return Dataset(y=y, X=X, names=tuple(names))
