"""Discrete-time proportional odds model fitted by IRLS.

The model regresses the logit of the per-period hazard on one indicator
per discrete time point (no global intercept) plus the covariate values:

    logit h(u) = alpha_u + beta' x

Fitting a logistic regression to a person-period table maximizes the
corresponding Bernoulli likelihood. The time indicators make the alpha_u
the per-period baseline log-odds; with no covariates the MLE reproduces
the empirical per-period hazards exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, RankDeficientError, SeparationError
from .person_period import TrainingTable

__all__ = ["DtpoModel", "build_design", "fit_irls", "fit", "predict_hazard"]

FORMAT_VERSION = 1

_COEF_NORM_LIMIT = 1e4
_PROB_EPS = 1e-12


@dataclass(frozen=True)
class DtpoModel:
    """Per-period intercepts plus covariate coefficients.

    ``gamma`` is only present when the model was fitted with current-time
    indicator columns (one coefficient per t = 1..T-1, t = 0 reference);
    predictions then need the query t.
    """

    alpha: np.ndarray
    beta: np.ndarray
    covariate_names: tuple[str, ...]
    T: int
    gamma: np.ndarray | None = None
    separation: bool = False

    def __post_init__(self):
        if len(self.alpha) != self.T:
            raise ValueError("alpha must have one entry per time point")
        if len(self.beta) != len(self.covariate_names):
            raise ValueError("beta must have one entry per covariate")
        if self.gamma is not None and len(self.gamma) != self.T - 1:
            raise ValueError("gamma must have one entry per t = 1..T-1")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "dtpo",
            "T": self.T,
            "alpha": [float(a) for a in self.alpha],
            "beta": [float(b) for b in self.beta],
            "gamma": None if self.gamma is None else [float(g) for g in self.gamma],
            "covariate_names": list(self.covariate_names),
            "separation": self.separation,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DtpoModel":
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported dtpo format_version {payload.get('format_version')!r}"
            )
        gamma = payload.get("gamma")
        return cls(
            alpha=np.asarray(payload["alpha"], dtype=float),
            beta=np.asarray(payload["beta"], dtype=float),
            covariate_names=tuple(payload["covariate_names"]),
            T=int(payload["T"]),
            gamma=None if gamma is None else np.asarray(gamma, dtype=float),
            separation=bool(payload.get("separation", False)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DtpoModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _logistic(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))


def build_design(table: TrainingTable, T: int, include_t: bool = False):
    """Design matrix with D_1..D_T one-hot on u, then the covariates.

    ``include_t`` appends indicator columns for t = 1..T-1 (t = 0 is the
    reference; a full set would be collinear with the time dummies).
    """
    u = table.u
    if u.min() < 1 or u.max() > T:
        raise ValueError(f"rows have u outside 1..{T}")
    n = len(table)
    dummies = np.zeros((n, T))
    dummies[np.arange(n), u - 1] = 1.0
    cols = [dummies, table.covariates]
    if include_t:
        tdum = np.zeros((n, T - 1))
        for t in range(1, T):
            tdum[:, t - 1] = (table.t == t).astype(float)
        cols.append(tdum)
    design = np.hstack(cols)
    return design, table.y.astype(np.float64)


def _deviance(y, mu):
    mu = np.clip(mu, _PROB_EPS, 1 - _PROB_EPS)
    return -2.0 * float(np.sum(y * np.log(mu) + (1 - y) * np.log(1 - mu)))


def fit_irls(
    design: np.ndarray,
    y: np.ndarray,
    T: int,
    tol: float = 1e-8,
    max_iter: int = 100,
    covariate_names=None,
    strict: bool = True,
    n_t_dummies: int = 0,
) -> DtpoModel:
    """Maximize the Bernoulli-logit likelihood by IRLS with step-halving.

    The first T design columns are the time indicators; the rest are
    covariates. ``strict=False`` downgrades separation and non-convergence
    to warnings so benchmark comparisons can keep running on a clamped
    model; rank deficiency always raises.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, ncol = design.shape
    if ncol < T:
        raise ValueError("design has fewer columns than time points")
    if np.linalg.matrix_rank(design) < ncol:
        raise RankDeficientError(
            f"design matrix is rank deficient ({ncol} columns)"
        )

    separation = False
    if y.min() == y.max():
        msg = f"response is single-class (all y={int(y[0])}): likelihood has no finite maximum"
        if strict:
            raise SeparationError(msg)
        warnings.warn(msg)
        separation = True

    coef = np.zeros(ncol)
    eta = design @ coef
    mu = _logistic(eta)
    dev = _deviance(y, mu)
    converged = False
    for _ in range(max_iter):
        w = np.clip(mu * (1 - mu), 1e-10, None)
        z = eta + (y - mu) / w
        wx = design * w[:, None]
        new_coef = np.linalg.solve(design.T @ wx, wx.T @ z)

        # step-halving keeps the deviance non-increasing
        step = 1.0
        for _ in range(30):
            trial = coef + step * (new_coef - coef)
            trial_eta = design @ trial
            trial_mu = _logistic(trial_eta)
            trial_dev = _deviance(y, trial_mu)
            if trial_dev <= dev * (1 + 1e-12) + 1e-12:
                break
            step /= 2.0
        coef, eta, mu = trial, trial_eta, trial_mu
        prev_dev, dev = dev, trial_dev

        if np.max(np.abs(coef)) > _COEF_NORM_LIMIT:
            msg = (
                f"coefficient norm exceeded {_COEF_NORM_LIMIT:g}: "
                "complete or quasi-complete separation"
            )
            if strict:
                raise SeparationError(msg)
            warnings.warn(msg)
            separation = True
            converged = True
            break
        if abs(prev_dev - dev) < tol * (abs(prev_dev) + 1e-10):
            converged = True
            break

    if not converged:
        msg = f"IRLS did not converge in {max_iter} iterations"
        if strict:
            raise ConvergenceError(msg)
        warnings.warn(msg)

    p = ncol - T - n_t_dummies
    names = (
        tuple(covariate_names)
        if covariate_names is not None
        else tuple(f"x{k + 1}" for k in range(p))
    )
    if len(names) != p:
        raise ValueError("covariate_names length does not match design columns")
    return DtpoModel(
        alpha=coef[:T],
        beta=coef[T : T + p],
        covariate_names=names,
        T=T,
        gamma=coef[T + p :] if n_t_dummies else None,
        separation=separation,
    )


def fit(
    table: TrainingTable,
    T: int | None = None,
    include_t: bool = False,
    tol: float = 1e-8,
    max_iter: int = 100,
    strict: bool = True,
) -> DtpoModel:
    """Build the design from a person-period table and fit by IRLS."""
    T = int(table.u.max()) if T is None else T
    design, y = build_design(table, T, include_t=include_t)
    model = fit_irls(
        design, y, T,
        tol=tol, max_iter=max_iter,
        covariate_names=table.covariate_names, strict=strict,
        n_t_dummies=T - 1 if include_t else 0,
    )
    return model


def predict_hazard(model: DtpoModel, x, u: int, t: int | None = None) -> float:
    """logistic(alpha_u + beta' x), clamped strictly inside (0, 1)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(model.beta),):
        raise ValueError(
            f"expected {len(model.beta)} covariates, got shape {x.shape}"
        )
    return float(predict_hazard_matrix(model, x[None, :], u, t=t)[0])


def predict_hazard_matrix(
    model: DtpoModel, X: np.ndarray, u: int, t: int | None = None
) -> np.ndarray:
    if not 1 <= u <= model.T:
        raise ValueError(f"u must be in 1..{model.T}, got {u}")
    eta = model.alpha[u - 1] + np.asarray(X, dtype=float) @ model.beta
    if model.gamma is not None:
        if t is None:
            raise ValueError("model was fitted with t indicators; pass t")
        if not 0 <= t < u:
            raise ValueError(f"need 0 <= t < u, got t={t}")
        if t >= 1:
            eta = eta + model.gamma[t - 1]
    return np.clip(_logistic(eta), _PROB_EPS, 1 - _PROB_EPS)
