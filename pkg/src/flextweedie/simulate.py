"""Random-variate generation and the replicated study harness.

Variates: exact samplers for the Gaussian, scaled Poisson, compound
Poisson (Poisson count of gamma summands), gamma and inverse Gaussian
members, plus heavy-tailed t and slash generators for misspecification
studies. The study harness simulates replicated datasets, fits each
requested method, and summarizes bias, coverage and efficiency.

Per-replicate RNG streams are derived from the study seed with a
counter-based SeedSequence split, so replicates never share a stream,
results are independent of execution order, and the whole study is
bit-reproducible for a given seed.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .core import Dataset, TweedieParams
from .exceptions import ConfigError, InsufficientReplicates, TweedieError, UnsupportedPower
from .mle import fit_mle_profile
from .pseudo import fit_pseudo_newton
from .quasi import fit_modified_chaser

RNG_NAME = "pcg64(seedsequence-spawn)"

#: power/dispersion pairs for the standard simulation scenarios, keyed as
#: p<power tag>-<small|medium|large> by coefficient of variation (15/50/80%)
SCENARIO_PRESETS = {
    "p0-small": (0.0, 75.0), "p0-medium": (0.0, 850.0), "p0-large": (0.0, 2100.0),
    "p101-small": (1.01, 1.5), "p101-medium": (1.01, 15.0), "p101-large": (1.01, 40.0),
    "p15-small": (1.5, 0.2), "p15-medium": (1.5, 2.0), "p15-large": (1.5, 5.3),
    "p2-small": (2.0, 0.023), "p2-medium": (2.0, 0.25), "p2-large": (2.0, 0.65),
    "p3-small": (3.0, 0.0003), "p3-medium": (3.0, 0.0034), "p3-large": (3.0, 0.0083),
}
DEFAULT_BETA = (2.0, 0.8, -1.5)

_FITTERS = {
    "mle": fit_mle_profile,
    "qmle": fit_modified_chaser,
    "pmle": fit_pseudo_newton,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario: data-generating process, replication plan
    and the estimation methods to compare."""

    n: int
    beta: tuple
    power: float
    phi: float
    n_reps: int
    seed: int
    generator: str = "tweedie"
    df: float = 2.0
    heavy_tail_dispersion: float = 1.0
    methods: tuple = ("mle", "qmle", "pmle")
    nominal_level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "methods", tuple(str(m).lower() for m in self.methods))
        if self.n < len(self.beta) + 1:
            raise ConfigError(f"n={self.n} too small for {len(self.beta)} coefficients")
        if self.n_reps < 1:
            raise ConfigError(f"n_reps must be >= 1, got {self.n_reps}")
        if self.generator not in ("tweedie", "student_t", "slash"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if not 0.0 < self.nominal_level < 1.0:
            raise ConfigError(f"nominal_level must be in (0,1), got {self.nominal_level}")
        unknown = [m for m in self.methods if m not in _FITTERS]
        if unknown:
            raise ConfigError(f"unknown method(s): {', '.join(unknown)}")
        if self.generator == "tweedie":
            if self.phi <= 0:
                raise ConfigError(f"phi must be positive, got {self.phi}")
            p = self.power
            if not (p in (0.0, 1.0, 2.0, 3.0) or 1.0 < p < 2.0):
                raise ConfigError(
                    f"tweedie generator supports p in {{0,1}} u (1,2) u {{2,3}}, got {p}"
                )
        else:
            if self.df <= 0:
                raise ConfigError(f"df must be positive, got {self.df}")
            if self.heavy_tail_dispersion <= 0:
                raise ConfigError("heavy_tail_dispersion must be positive")

    @staticmethod
    def from_preset(name: str, n: int, n_reps: int, seed: int, **overrides) -> "ScenarioConfig":
        if name not in SCENARIO_PRESETS:
            raise ConfigError(f"unknown preset {name!r}; options: {sorted(SCENARIO_PRESETS)}")
        power, phi = SCENARIO_PRESETS[name]
        fields = dict(n=n, beta=DEFAULT_BETA, power=power, phi=phi,
                      n_reps=n_reps, seed=seed)
        fields.update(overrides)
        return ScenarioConfig(**fields)


@dataclass(frozen=True)
class ReplicateRecord:
    rep: int
    method: str
    estimates: tuple
    se: tuple
    converged: bool


@dataclass(frozen=True)
class ParamSummary:
    method: str
    param: str
    mean_bias: float
    mean_se: float
    empirical_sd: float
    coverage_rate: float
    efficiency: float
    n_converged: int


@dataclass(frozen=True)
class StudySummary:
    rows: tuple
    replicates: tuple
    param_names: tuple
    truth: tuple
    methods: tuple
    n_reps: int
    seed: int
    nominal_level: float
    rng_name: str = RNG_NAME
    generator: str = "tweedie"
    extra: tuple = field(default=())


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _inverse_gaussian(rng: np.random.Generator, mu, lam, size) -> np.ndarray:
    """Transformation-with-rejection sampler: chi-square transform of a
    normal, then a uniform pick between the two roots."""
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (size,))
    nu = rng.standard_normal(size)
    w = nu ** 2
    x = mu + mu ** 2 * w / (2.0 * lam) - (mu / (2.0 * lam)) * np.sqrt(
        4.0 * mu * lam * w + (mu * w) ** 2
    )
    u = rng.uniform(size=size)
    take_x = u <= mu / (mu + x)
    return np.where(take_x, x, mu ** 2 / x)


def _rtweedie_mu(rng: np.random.Generator, mu: np.ndarray, phi: float, power: float) -> np.ndarray:
    """Tweedie draws with a per-observation mean vector."""
    mu = np.asarray(mu, dtype=float)
    n = mu.shape[0]
    if power == 0.0:
        return mu + np.sqrt(phi) * rng.standard_normal(n)
    if power == 1.0:
        return phi * rng.poisson(mu / phi, size=n).astype(float)
    if 1.0 < power < 2.0:
        lam = mu ** (2.0 - power) / (phi * (2.0 - power))
        tau = (2.0 - power) / (power - 1.0)
        gam = phi * (power - 1.0) * mu ** (power - 1.0)
        counts = rng.poisson(lam)
        out = np.zeros(n)
        hit = counts > 0
        if hit.any():
            # a Poisson count of iid gamma(tau, gam) summands is gamma(N tau, gam)
            out[hit] = rng.gamma(counts[hit] * tau, gam[hit])
        return out
    if power == 2.0:
        return rng.gamma(1.0 / phi, phi * mu, size=n)
    if power == 3.0:
        return _inverse_gaussian(rng, mu, 1.0 / phi, n)
    raise UnsupportedPower(
        f"simulation supports p in {{0,1}} u (1,2) u {{2,3}}, got p={power:g}"
    )


def rtweedie(params: TweedieParams, n: int, seed) -> np.ndarray:
    """n iid Tweedie draws with mean mu and variance phi*mu^p."""
    rng = _rng(seed)
    return _rtweedie_mu(rng, np.full(n, params.mu), params.phi, params.power)


def r_heavy_tail(mu, dispersion: float, family: str, seed, df: float = 2.0) -> np.ndarray:
    """Heavy-tailed draws y_i = mu_i + sqrt(dispersion) * Z_i with Z a
    standard t(df) or standard slash (normal over uniform) variate."""
    rng = _rng(seed)
    mu = np.asarray(mu, dtype=float)
    n = mu.shape[0]
    if family == "student_t":
        if df <= 0:
            raise ConfigError(f"df must be positive, got {df}")
        z = rng.standard_t(df, size=n)
    elif family == "slash":
        z = rng.standard_normal(n) / rng.uniform(size=n)
    else:
        raise ConfigError(f"unknown heavy-tail family {family!r}")
    return mu + np.sqrt(dispersion) * z


def design_matrix(n: int):
    """Study covariates: intercept, a sequence from -1 to 1, and an
    alternating two-level factor."""
    x1 = np.linspace(-1.0, 1.0, n)
    x2 = (np.arange(n) % 2).astype(float)
    X = np.column_stack([np.ones(n), x1, x2])
    return X, ("intercept", "x1", "x2")


def _replicate_seed(config: ScenarioConfig, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=config.seed, spawn_key=(rep,))


def simulate_dataset(config: ScenarioConfig, rep: int) -> Dataset:
    """The dataset of one replicate (deterministic in (config.seed, rep))."""
    X, names = design_matrix(config.n)
    beta = np.asarray(config.beta, dtype=float)
    if X.shape[1] != beta.shape[0]:
        raise ConfigError(
            f"beta has {beta.shape[0]} entries but the design has {X.shape[1]} columns"
        )
    mu = np.exp(X @ beta)
    rng = np.random.default_rng(_replicate_seed(config, rep))
    if config.generator == "tweedie":
        y = _rtweedie_mu(rng, mu, config.phi, config.power)
    else:
        y = r_heavy_tail(mu, config.heavy_tail_dispersion, config.generator, rng,
                         df=config.df)
    return Dataset(y=y, X=X, names=names)


def _fit_one(method: str, data: Dataset):
    try:
        return _FITTERS[method](data)
    except TweedieError as err:
        result = getattr(err, "result", None)
        return result  # may be None: nothing usable at all


def _replicate_records(config: ScenarioConfig, rep: int) -> list:
    data = simulate_dataset(config, rep)
    n_par = len(config.beta) + 2
    records = []
    for method in config.methods:
        result = _fit_one(method, data)
        if result is None:
            est = (float("nan"),) * n_par
            se = (float("nan"),) * n_par
            ok = False
        else:
            est = tuple(float(v) for v in result.theta.as_array())
            se = tuple(float(v) for v in result.se)
            ok = bool(result.converged) and all(
                np.isfinite(v) for v in (*est, *se)
            )
        records.append(ReplicateRecord(rep=rep, method=method, estimates=est,
                                       se=se, converged=ok))
    return records


def _study_jobs(n_jobs, n_reps: int) -> int:
    if n_jobs is None:
        n_jobs = int(os.environ.get("TWEEDIE_THREADS", "1") or "1")
    return max(1, min(int(n_jobs), n_reps))


def run_study(config: ScenarioConfig, n_jobs: int | None = None) -> StudySummary:
    """Simulate, fit and summarize ``config.n_reps`` replicates.

    Fit failures are counted, never fatal. Replicates are embarrassingly
    parallel; set ``n_jobs`` (or the TWEEDIE_THREADS environment variable)
    to spread them over processes. Results are identical either way.
    """
    n_jobs = _study_jobs(n_jobs, config.n_reps)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            chunks = pool.map(_replicate_records, [config] * config.n_reps,
                              range(config.n_reps), chunksize=max(1, config.n_reps // (4 * n_jobs)))
            records = [rec for chunk in chunks for rec in chunk]
    else:
        records = [rec for rep in range(config.n_reps)
                   for rec in _replicate_records(config, rep)]
    records.sort(key=lambda r: (r.rep, config.methods.index(r.method)))
    return summarize_study(config, tuple(records))


def _truth_vector(config: ScenarioConfig) -> np.ndarray:
    if config.generator == "tweedie":
        lam = [np.log(config.phi), config.power]
    else:
        lam = [np.nan, np.nan]  # no Tweedie truth under t/slash data
    return np.array([*config.beta, *lam])


def summarize_study(config: ScenarioConfig, records: tuple) -> StudySummary:
    _, names = design_matrix(config.n)
    param_names = (*names, "delta", "power")
    truth = _truth_vector(config)
    z = float(scipy.stats.norm.ppf(0.5 * (1.0 + config.nominal_level)))
    by_method = {m: [r for r in records if r.method == m] for m in config.methods}
    variances = {}
    for method, recs in by_method.items():
        good = [r for r in recs if r.converged]
        est = np.array([r.estimates for r in good]) if good else np.empty((0, truth.size))
        variances[method] = (
            np.var(est, axis=0, ddof=1) if est.shape[0] >= 2 else np.full(truth.size, np.nan)
        )
    rows = []
    for method, recs in by_method.items():
        good = [r for r in recs if r.converged]
        n_conv = len(good)
        est = np.array([r.estimates for r in good]) if good else np.empty((0, truth.size))
        ses = np.array([r.se for r in good]) if good else np.empty((0, truth.size))
        for j, param in enumerate(param_names):
            if n_conv == 0:
                bias = sd = mean_se = cover = float("nan")
            else:
                bias = float(np.mean(est[:, j]) - truth[j])
                sd = float(np.std(est[:, j], ddof=1)) if n_conv >= 2 else float("nan")
                mean_se = float(np.mean(ses[:, j]))
                lo = est[:, j] - z * ses[:, j]
                hi = est[:, j] + z * ses[:, j]
                cover = float(np.mean((lo <= truth[j]) & (truth[j] <= hi)))
            eff = float("nan")
            if "mle" in by_method and method != "mle":
                ref_var = variances["mle"][j]
                own_var = variances[method][j]
                if np.isfinite(ref_var) and np.isfinite(own_var) and own_var > 0:
                    eff = float(ref_var / own_var)
            elif method == "mle":
                eff = 1.0 if n_conv >= 2 else float("nan")
            rows.append(ParamSummary(
                method=method, param=param, mean_bias=bias, mean_se=mean_se,
                empirical_sd=sd, coverage_rate=cover, efficiency=eff,
                n_converged=n_conv,
            ))
    return StudySummary(
        rows=tuple(rows), replicates=tuple(records), param_names=param_names,
        truth=tuple(float(t) for t in truth), methods=config.methods,
        n_reps=config.n_reps, seed=config.seed,
        nominal_level=config.nominal_level, generator=config.generator,
    )


def summarize_efficiency(study: StudySummary, reference: str) -> dict:
    """Per-parameter variance ratios var_ref / var_method over converged
    replicates; the reference needs at least 30 converged replicates."""
    reference = reference.lower()
    if reference not in study.methods:
        raise InsufficientReplicates(f"reference method {reference!r} not in study")
    by_method = {m: [r for r in study.replicates if r.method == m and r.converged]
                 for m in study.methods}
    if len(by_method[reference]) < 30:
        raise InsufficientReplicates(
            f"only {len(by_method[reference])} converged replicates for {reference!r}"
        )
    ref_var = np.var(np.array([r.estimates for r in by_method[reference]]),
                     axis=0, ddof=1)
    out = {}
    for method, recs in by_method.items():
        if len(recs) < 30:
            raise InsufficientReplicates(
                f"only {len(recs)} converged replicates for {method!r}"
            )
        var = np.var(np.array([r.estimates for r in recs]), axis=0, ddof=1)
        for j, param in enumerate(study.param_names):
            out[(method, param)] = float(ref_var[j] / var[j]) if var[j] > 0 else float("nan")
    return out
