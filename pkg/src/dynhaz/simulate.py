"""Synthetic discrete-time survival data with known true hazards.

Continuous event times are drawn from a proportional intensity

    lambda(s | x) = lambda0(s) * exp(eta(x(floor(s))))

with the covariate effect held piecewise-constant between integer times,
then discretized to U = ceil(time). The true discrete hazard is therefore

    h(u) = 1 - exp(-integral_{u-1}^{u} lambda(s | x) ds)
         = 1 - exp(-B_u * exp(eta(x(u-1))))

with B_u the baseline cumulative-hazard increment over (u-1, u].

Factors follow the benchmark design: covariate scenario (#time-invariant,
#time-varying), AR(1) autocorrelation strength, signal-to-noise via a
global coefficient scale, baseline distribution (exponential / weibull /
gompertz), covariate relationship (linear / nonlinear / interaction),
censoring rate, sample size and horizon. The baseline scale is calibrated
by bisection so the marginal event probability by T hits a target, and
the geometric censoring parameter by bisection to the target censoring
fraction; both calibrations use a fixed internal Monte Carlo stream so
identical factor settings share identical data-generating constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import pandas as pd

from .data import CovariateKind, CovariateSpec, GenericDataset, SubjectRecord
from .errors import DynhazError

__all__ = [
    "SimConfig",
    "SimOutput",
    "gen_covariates",
    "gen_times",
    "generate",
    "gen_testsets",
    "generate_study",
]

_AUTOCORR = ("strong", "weak")
_SNR = ("high", "low")
_DISTRIBUTIONS = ("exponential", "weibull", "gompertz")
_RELATIONSHIPS = ("linear", "nonlinear", "interaction")

_CALIBRATION_SEED = 271828182845
_CALIBRATION_SIZE = 8192
_HAZARD_EPS = 1e-12
_ETA_CLIP = 50.0


@dataclass(frozen=True)
class SimConfig:
    """Factor levels plus the generator constants they parameterize.

    Everything below ``seed`` is a fixed constant of this generator,
    exposed for overriding; the named factor levels only select among
    them.
    """

    n: int = 1000
    T: int = 4
    scenario: tuple[int, int] = (2, 4)  # (#time-invariant, #time-varying)
    autocorr: str = "strong"
    snr: str = "high"
    distribution: str = "weibull"
    relationship: str = "interaction"
    censor_rate: float = 0.10
    seed: int = 0
    test_size: int = 1000
    # generator constants
    rho_strong: float = 0.9
    rho_weak: float = 0.3
    cross_corr: float = 0.0
    coef_scale_high: float = 2.0
    coef_scale_low: float = 0.5
    base_coef: float = 0.2
    quad_coef: float = 0.1
    interaction_coef: float = 0.3
    weibull_shape: float = 1.5
    gompertz_rate: float = 0.15
    # None resolves per censoring level: administrative censoring at T puts
    # a floor of P(U > T) under the total censoring fraction, so the 10%
    # level needs a high event probability, while the 50% level needs mild
    # enough hazards that at least half the subjects survive period 1
    marginal_event_prob: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        nti, ntv = self.scenario
        if nti < 0 or ntv < 0 or nti + ntv < 1:
            raise ValueError("scenario needs a nonnegative count pair with p >= 1")
        if self.autocorr not in _AUTOCORR:
            raise ValueError(f"autocorr must be one of {_AUTOCORR}")
        if self.snr not in _SNR:
            raise ValueError(f"snr must be one of {_SNR}")
        if self.distribution not in _DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {_DISTRIBUTIONS}")
        if self.relationship not in _RELATIONSHIPS:
            raise ValueError(f"relationship must be one of {_RELATIONSHIPS}")
        if not 0.0 < self.censor_rate < 1.0:
            raise ValueError("censor_rate must be in (0, 1)")
        if self.marginal_event_prob is not None and not 0.0 < self.marginal_event_prob < 1.0:
            raise ValueError("marginal_event_prob must be in (0, 1)")
        if not -0.99 < self.cross_corr < 0.99:
            raise ValueError("cross_corr must be in (-0.99, 0.99)")

    @property
    def p(self) -> int:
        nti, ntv = self.scenario
        return nti + ntv

    @property
    def n_tv(self) -> int:
        return self.scenario[1]

    @property
    def rho(self) -> float:
        return self.rho_strong if self.autocorr == "strong" else self.rho_weak

    @property
    def coef_scale(self) -> float:
        return self.coef_scale_high if self.snr == "high" else self.coef_scale_low

    @property
    def event_prob_target(self) -> float:
        if self.marginal_event_prob is not None:
            return self.marginal_event_prob
        return 0.92 if self.censor_rate <= 0.25 else 0.80

    def covariate_specs(self) -> tuple[CovariateSpec, ...]:
        """Schema: time-varying covariates first (as in the generic layout),
        then the time-invariant ones, named X1..Xp."""
        kinds = [CovariateKind.TIME_VARYING] * self.n_tv
        kinds += [CovariateKind.TIME_INVARIANT] * self.scenario[0]
        return tuple(
            CovariateSpec(f"X{k + 1}", kind) for k, kind in enumerate(kinds)
        )

    def canonical(self) -> "SimConfig":
        """This config with the fields the calibrated DGP constants do not
        depend on (seed and sizes) normalized away; used as a cache key."""
        return replace(self, seed=0, n=1, test_size=1)


@dataclass(frozen=True)
class SimOutput:
    """A generated dataset plus its true hazards.

    ``true_hazard`` has shape (n, T); entry (i, u-1) is h_i(u), defined
    (finite) exactly for the at-risk periods u <= tau_i.
    """

    dataset: GenericDataset
    true_hazard: np.ndarray

    def truth_frame(self) -> pd.DataFrame:
        rows = []
        for i, s in enumerate(self.dataset.subjects):
            for u in range(1, s.tau + 1):
                rows.append((s.id, u, self.true_hazard[i, u - 1]))
        return pd.DataFrame(rows, columns=["subject", "u", "true_hazard"])


def _coef_signs(p: int) -> np.ndarray:
    return np.array([1.0 if k % 2 == 0 else -1.0 for k in range(p)])


def _eta(cfg: SimConfig, x: np.ndarray) -> np.ndarray:
    """Log relative intensity for one time slice of covariates (n, p)."""
    s = _coef_signs(cfg.p)
    scale = cfg.coef_scale
    beta = scale * cfg.base_coef * s
    if cfg.relationship == "linear":
        eta = x @ beta
    elif cfg.relationship == "nonlinear":
        gamma = scale * cfg.quad_coef * s
        eta = np.sin(x) @ beta + (x * x - 1.0) @ gamma
    else:  # interaction
        eta = x @ beta
        if cfg.p >= 2:
            eta = eta + scale * cfg.interaction_coef * x[:, 0] * x[:, 1]
    return np.clip(eta, -_ETA_CLIP, _ETA_CLIP)


def _baseline_shape(cfg: SimConfig) -> np.ndarray:
    """Unit-scale cumulative-baseline increments B_u over (u-1, u]."""
    u = np.arange(1, cfg.T + 1, dtype=float)
    if cfg.distribution == "exponential":
        return np.ones(cfg.T)
    if cfg.distribution == "weibull":
        kappa = cfg.weibull_shape
        return u**kappa - (u - 1) ** kappa
    b = cfg.gompertz_rate
    return (np.exp(b * u) - np.exp(b * (u - 1))) / b


def gen_covariates(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Covariate paths (n, p, T); stationary AR(1) for the time-varying
    block, constants for the rest, standard normal marginals throughout."""
    return _gen_paths(cfg, rng, cfg.n)


def _gen_paths(cfg: SimConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    p, ntv = cfg.p, cfg.n_tv
    c = cfg.cross_corr
    cov = np.full((p, p), c) + (1.0 - c) * np.eye(p)
    chol = np.linalg.cholesky(cov)
    paths = np.empty((n, p, cfg.T))
    paths[:, :, 0] = rng.standard_normal((n, p)) @ chol.T
    rho = cfg.rho
    innov_scale = np.sqrt(1.0 - rho * rho)
    chol_tv = chol[:ntv, :ntv] if ntv else None
    for t in range(1, cfg.T):
        paths[:, :, t] = paths[:, :, t - 1]
        if ntv:
            eps = rng.standard_normal((n, ntv)) @ chol_tv.T
            paths[:, :ntv, t] = rho * paths[:, :ntv, t - 1] + innov_scale * eps
    return paths


def _eta_matrix(cfg: SimConfig, paths: np.ndarray) -> np.ndarray:
    return np.column_stack([_eta(cfg, paths[:, :, j]) for j in range(cfg.T)])


@lru_cache(maxsize=64)
def _calibrated(cfg: SimConfig) -> tuple[float, float]:
    """(baseline scale, censor q) for a canonical config; MC bisection."""
    rng = np.random.default_rng(np.random.SeedSequence(_CALIBRATION_SEED))
    paths = _gen_paths(cfg, rng, _CALIBRATION_SIZE)
    eta = _eta_matrix(cfg, paths)
    bshape = _baseline_shape(cfg)
    weights = np.exp(eta) @ bshape  # total unit-scale integrated hazard by T

    target = cfg.event_prob_target
    lo, hi = 1e-12, 1e8
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if float(np.mean(1.0 - np.exp(-mid * weights))) < target:
            lo = mid
        else:
            hi = mid
    scale = float(np.sqrt(lo * hi))

    # uncensored discrete event times for the same sample
    cum = np.cumsum(np.exp(eta) * (scale * bshape)[None, :], axis=1)
    e = rng.exponential(size=_CALIBRATION_SIZE)
    U = 1 + (e[:, None] > cum).sum(axis=1)  # T+1 means: survives past T

    floor = float(np.mean(U > cfg.T))
    ceil_ = float(np.mean(U >= 2))
    if not floor - 0.005 <= cfg.censor_rate <= ceil_:
        raise DynhazError(
            f"censor_rate {cfg.censor_rate} unreachable: administrative "
            f"censoring alone yields {floor:.3f} (raise marginal_event_prob) "
            f"and early censoring can reach at most {ceil_:.3f}"
        )

    def censor_fraction(q: float) -> float:
        # P(V < U) with V = min(G, T), G geometric(q)
        early = 1.0 - (1.0 - q) ** np.clip(U - 1, 0, None)
        return float(np.mean(np.where(U > cfg.T, 1.0, early)))

    qlo, qhi = 0.0, 1.0 - 1e-12
    for _ in range(200):
        qmid = 0.5 * (qlo + qhi)
        if censor_fraction(qmid) < cfg.censor_rate:
            qlo = qmid
        else:
            qhi = qmid
    q = 0.5 * (qlo + qhi)
    return scale, q


def dgp_constants(cfg: SimConfig) -> tuple[np.ndarray, float, float]:
    """(baseline increments B_1..B_T, baseline scale, censoring q)."""
    scale, q = _calibrated(cfg.canonical())
    return _baseline_shape(cfg) * scale, scale, q


def gen_times(cfg: SimConfig, paths: np.ndarray, rng: np.random.Generator):
    """Draw (U, V, tau, delta, true_hazard) for covariate paths.

    U is the discrete event time (T+1 encodes survival past the horizon),
    V the censoring time from a geometric distribution truncated at T, so
    subjects surviving past T are administratively censored at T. The
    returned true hazards are the (n, T) matrix for every period, clamped
    to the open unit interval against floating-point saturation.
    """
    n = paths.shape[0]
    B, _, q = dgp_constants(cfg)
    eta = _eta_matrix(cfg, paths)
    increments = np.exp(eta) * B[None, :]
    hazards = np.clip(1.0 - np.exp(-increments), _HAZARD_EPS, 1.0 - _HAZARD_EPS)

    cum = np.cumsum(increments, axis=1)
    e = rng.exponential(size=n)
    U = 1 + (e[:, None] > cum).sum(axis=1)

    if q <= 1e-12:
        V = np.full(n, cfg.T, dtype=np.int64)
    else:
        V = np.minimum(rng.geometric(q, size=n), cfg.T).astype(np.int64)

    tau = np.minimum(U, V).astype(np.int64)
    delta = (U <= V).astype(np.int64)
    return U.astype(np.int64), V, tau, delta, hazards


def _to_output(cfg: SimConfig, paths, tau, delta, hazards, prefix: str) -> SimOutput:
    specs = cfg.covariate_specs()
    subjects = []
    for i in range(paths.shape[0]):
        subjects.append(
            SubjectRecord(
                id=f"{prefix}{i + 1:05d}",
                tau=int(tau[i]),
                delta=int(delta[i]),
                values=paths[i, :, : int(tau[i])].copy(),
            )
        )
    masked = hazards.copy()
    masked[np.arange(cfg.T)[None, :] >= np.asarray(tau)[:, None]] = np.nan
    return SimOutput(GenericDataset(specs, tuple(subjects)), masked)


def generate(cfg: SimConfig) -> SimOutput:
    """One training sample of size cfg.n."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
    paths = _gen_paths(cfg, rng, cfg.n)
    _, _, tau, delta, hazards = gen_times(cfg, paths, rng)
    return _to_output(cfg, paths, tau, delta, hazards, prefix="tr")


def gen_testsets(cfg: SimConfig) -> dict[int, SimOutput]:
    """T test sets; set k holds cfg.test_size subjects still at risk at k.

    Subjects are rejection-sampled: both the event and the censoring time
    must exceed k-1, so every retained subject carries covariates through
    t = k-1 and a defined true hazard at u = k.
    """
    out: dict[int, SimOutput] = {}
    for k in range(1, cfg.T + 1):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, k)))
        kept: list[tuple] = []
        need = cfg.test_size
        batch = max(4 * cfg.test_size, 1000)
        while need > 0:
            paths = _gen_paths(cfg, rng, batch)
            _, _, tau, delta, hazards = gen_times(cfg, paths, rng)
            ok = np.flatnonzero(tau >= k)[:need]
            for i in ok:
                kept.append((paths[i], tau[i], delta[i], hazards[i]))
            need -= len(ok)
        paths = np.stack([r[0] for r in kept])
        tau = np.array([r[1] for r in kept])
        delta = np.array([r[2] for r in kept])
        hazards = np.stack([r[3] for r in kept])
        out[k] = _to_output(cfg, paths, tau, delta, hazards, prefix=f"te{k}-")
    return out


def generate_study(cfg: SimConfig) -> tuple[SimOutput, dict[int, SimOutput]]:
    """Training sample plus the per-period test sets."""
    return generate(cfg), gen_testsets(cfg)
