"""Fit and query the five dynamic hazard estimation strategies.

A :class:`ModelBundle` holds every model one method needs to answer all
estimation problems (t, u) with 0 <= t < u <= T:

* ``separate``    - one forest per (t, u) pair, T(T+1)/2 models
* ``poolt``       - one forest per t (u pooled as a feature), T models
* ``superpp``     - one forest on the stacked table (u, t features)
* ``superpp0``    - the stacked forest restricted to baseline snapshots
* ``superppdtpo`` - the proportional odds model on the stacked table

Bundles may be built against a horizon T larger than the data's max tau
(as when a small training sample never reaches the design horizon); keys
whose risk set is empty are recorded as absent and querying them raises
instead of silently falling back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import dtpo
from .data import GenericDataset
from .errors import DynhazError, MissingModelError
from .forest import ForestConfig, HazardForest, fit_matrix
from .person_period import (
    TrainingTable,
    build_poolt,
    build_separate,
    build_superpp,
    build_superpp0,
)

__all__ = [
    "MethodKind",
    "ModelBundle",
    "HazardCurve",
    "fit_bundle",
    "estimate_hazard",
    "estimate_hazard_batch",
    "estimate_curve",
    "hazard_to_curve",
]

FORMAT_VERSION = 1


class MethodKind(str, Enum):
    SEPARATE = "separate"
    POOLT = "poolt"
    SUPERPP = "superpp"
    SUPERPP0 = "superpp0"
    SUPERPP_DTPO = "superppdtpo"

    @property
    def is_forest(self) -> bool:
        return self is not MethodKind.SUPERPP_DTPO


def expected_keys(method: MethodKind, T: int) -> list[tuple]:
    """Model keys for a method: (t, u) tuples, (t,) tuples, or one ()."""
    if method is MethodKind.SEPARATE:
        return [(t, u) for t in range(T) for u in range(t + 1, T + 1)]
    if method is MethodKind.POOLT:
        return [(t,) for t in range(T)]
    return [()]


@dataclass(frozen=True)
class HazardCurve:
    """Hazards for u = t+1..T and the survival/event-probability recursion.

    Conditional on being at risk after the origin: S(t) = 1,
    S(u) = S(u-1) * (1 - h(u)) and P(event at u) = S(u-1) - S(u).
    """

    t: int
    hazard: dict[int, float]
    survival: dict[int, float]
    event_prob: dict[int, float]


def hazard_to_curve(t: int, hazards) -> HazardCurve:
    hazards = [float(h) for h in hazards]
    for h in hazards:
        if not 0.0 <= h <= 1.0:
            raise ValueError(f"hazard {h} outside [0, 1]")
    hazard: dict[int, float] = {}
    survival: dict[int, float] = {}
    event_prob: dict[int, float] = {}
    s_prev = 1.0
    for offset, h in enumerate(hazards):
        u = t + 1 + offset
        s = s_prev * (1.0 - h)
        hazard[u] = h
        survival[u] = s
        event_prob[u] = s_prev - s
        s_prev = s
    return HazardCurve(t=t, hazard=hazard, survival=survival, event_prob=event_prob)


@dataclass(frozen=True)
class ModelBundle:
    """Every fitted model of one method, keyed per estimation problem.

    ``models`` has an entry for every expected key; absent models hold
    None with the reason in ``missing``.
    """

    method: MethodKind
    T: int
    covariate_names: tuple[str, ...]
    forest_config: ForestConfig | None
    models: dict
    missing: dict = field(default_factory=dict)
    superpp0_include_t: bool = True

    def __post_init__(self):
        expected = expected_keys(self.method, self.T)
        if sorted(self.models) != sorted(expected):
            raise ValueError(
                f"{self.method.value} bundle must have exactly the keys "
                f"{expected}"
            )

    @property
    def model_count(self) -> int:
        return len(self.models)

    def model_for(self, t: int, u: int):
        if self.method is MethodKind.SEPARATE:
            key = (t, u)
        elif self.method is MethodKind.POOLT:
            key = (t,)
        else:
            key = ()
        model = self.models[key]
        if model is None:
            raise MissingModelError(
                f"{self.method.value} model for key {key} is absent: "
                f"{self.missing.get(key, 'unknown reason')}"
            )
        return model

    # ---- serialization ----

    @staticmethod
    def _key_str(key: tuple) -> str:
        return "all" if key == () else ",".join(str(k) for k in key)

    @staticmethod
    def _str_key(s: str) -> tuple:
        return () if s == "all" else tuple(int(v) for v in s.split(","))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "model_bundle",
            "method": self.method.value,
            "T": self.T,
            "covariate_names": list(self.covariate_names),
            "forest_config": None if self.forest_config is None else self.forest_config.to_dict(),
            "superpp0_include_t": self.superpp0_include_t,
            "models": {
                self._key_str(k): (None if m is None else m.to_dict())
                for k, m in sorted(self.models.items())
            },
            "missing": {self._key_str(k): v for k, v in sorted(self.missing.items())},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelBundle":
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported bundle format_version {payload.get('format_version')!r}"
            )
        method = MethodKind(payload["method"])
        models = {}
        for ks, m in payload["models"].items():
            key = cls._str_key(ks)
            if m is None:
                models[key] = None
            elif m.get("kind") == "dtpo":
                models[key] = dtpo.DtpoModel.from_dict(m)
            else:
                models[key] = HazardForest.from_dict(m)
        cfg = payload.get("forest_config")
        return cls(
            method=method,
            T=int(payload["T"]),
            covariate_names=tuple(payload["covariate_names"]),
            forest_config=None if cfg is None else ForestConfig(**cfg),
            models=models,
            missing={cls._str_key(k): v for k, v in payload.get("missing", {}).items()},
            superpp0_include_t=bool(payload.get("superpp0_include_t", True)),
        )

    def save(self, path) -> None:
        import sys

        payload = self.to_dict()
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 50_000))
        try:
            with open(path, "w") as fh:
                json.dump(payload, fh)
        finally:
            sys.setrecursionlimit(limit)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _derived_config(config: ForestConfig, key: tuple) -> ForestConfig:
    """Seed each model from (base seed, key) so bundles are reproducible
    and independent of fit order."""
    derived = int(np.random.SeedSequence((config.seed,) + key).generate_state(1, np.uint64)[0])
    return ForestConfig(
        num_trees=config.num_trees,
        mtry=config.mtry,
        min_node_size=config.min_node_size,
        max_depth=config.max_depth,
        seed=derived,
        bootstrap=config.bootstrap,
    )


def _fit_table_forest(table: TrainingTable, config: ForestConfig) -> HazardForest:
    return fit_matrix(table.feature_matrix(), table.y, table.feature_names, config)


def fit_bundle(
    ds: GenericDataset,
    method: MethodKind,
    forest_config: ForestConfig | None = None,
    T: int | None = None,
    superpp0_include_t: bool = True,
    dtpo_include_t: bool = False,
) -> ModelBundle:
    """Train all models of one method on a dataset.

    ``T`` may exceed the dataset horizon; estimation problems whose risk
    set is then empty get an absent model. The DTPO fit is tolerant
    (separation downgrades to a warning) so comparisons keep running,
    but a structurally unfittable design is recorded as absent.
    """
    method = MethodKind(method)
    T = ds.T if T is None else int(T)
    if T < ds.T:
        raise ValueError(f"bundle horizon T={T} below dataset horizon {ds.T}")
    config = forest_config or ForestConfig()
    models: dict = {}
    missing: dict = {}

    if method is MethodKind.SEPARATE:
        for t in range(T):
            for u in range(t + 1, T + 1):
                key = (t, u)
                if u > ds.T:
                    models[key] = None
                    missing[key] = f"no subject at risk at u={u}"
                    continue
                table = build_separate(ds, t, u)
                models[key] = _fit_table_forest(table, _derived_config(config, key))
    elif method is MethodKind.POOLT:
        for t in range(T):
            key = (t,)
            if t > ds.T - 1:
                models[key] = None
                missing[key] = f"no subject at risk beyond t={t}"
                continue
            table = build_poolt(ds, t)
            models[key] = _fit_table_forest(table, _derived_config(config, key))
    elif method is MethodKind.SUPERPP:
        table = build_superpp(ds)
        models[()] = _fit_table_forest(table, _derived_config(config, ()))
    elif method is MethodKind.SUPERPP0:
        table = build_superpp0(ds, include_t=superpp0_include_t)
        models[()] = _fit_table_forest(table, _derived_config(config, ()))
    else:  # SUPERPP_DTPO
        table = build_superpp(ds)
        try:
            models[()] = dtpo.fit(table, T=T, include_t=dtpo_include_t, strict=False)
        except (DynhazError, np.linalg.LinAlgError) as exc:
            models[()] = None
            missing[()] = str(exc)

    return ModelBundle(
        method=method,
        T=T,
        covariate_names=ds.covariate_names,
        forest_config=config if method.is_forest else None,
        models=models,
        missing=missing,
        superpp0_include_t=superpp0_include_t,
    )


def _feature_block(bundle: ModelBundle, X: np.ndarray, t: int, u: int) -> np.ndarray:
    n = X.shape[0]
    method = bundle.method
    cols = [X]
    if method in (MethodKind.POOLT, MethodKind.SUPERPP, MethodKind.SUPERPP0):
        cols.append(np.full((n, 1), float(u)))
    if method is MethodKind.SUPERPP or (
        method is MethodKind.SUPERPP0 and bundle.superpp0_include_t
    ):
        cols.append(np.full((n, 1), float(t)))
    return np.hstack(cols)


def estimate_hazard_batch(
    bundle: ModelBundle,
    X_t: np.ndarray,
    t: int,
    u: int,
    X0: np.ndarray | None = None,
) -> np.ndarray:
    """Hazard estimates at (t, u) for many subjects at once.

    ``X_t`` holds covariate snapshots at t (one row per subject); Superpp0
    additionally needs the baseline snapshots ``X0`` unless t == 0.
    """
    if not 0 <= t < u <= bundle.T:
        raise ValueError(f"need 0 <= t < u <= T={bundle.T}, got (t, u)=({t}, {u})")
    X_t = np.asarray(X_t, dtype=float)
    if X_t.ndim != 2 or X_t.shape[1] != len(bundle.covariate_names):
        raise ValueError(
            f"snapshot matrix must be (n, {len(bundle.covariate_names)})"
        )
    model = bundle.model_for(t, u)
    if bundle.method is MethodKind.SUPERPP_DTPO:
        return dtpo.predict_hazard_matrix(model, X_t, u, t=t)
    if bundle.method is MethodKind.SUPERPP0:
        if X0 is None:
            if t != 0:
                raise ValueError("superpp0 needs baseline snapshots X0 when t > 0")
            X0 = X_t
        X0 = np.asarray(X0, dtype=float)
        feats = _feature_block(bundle, X0, t, u)
    else:
        feats = _feature_block(bundle, X_t, t, u)
    return model.predict_hazard_matrix(feats)


def _history_matrix(history) -> np.ndarray:
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[None, :]
    return history


def estimate_hazard(bundle: ModelBundle, history, t: int, u: int) -> float:
    """Hazard at future time u given covariate history up to t.

    ``history`` is a (t+1, p) array of snapshots for times 0..t (a single
    p-vector is accepted when t = 0).
    """
    history = _history_matrix(history)
    if history.shape[0] < t + 1:
        raise ValueError(
            f"history must cover snapshots 0..{t}, got {history.shape[0]} rows"
        )
    x_t = history[t][None, :]
    x_0 = history[0][None, :]
    return float(estimate_hazard_batch(bundle, x_t, t, u, X0=x_0)[0])


def estimate_curve(bundle: ModelBundle, history, t: int) -> HazardCurve:
    """Hazard/survival/event-probability curve from origin t to T."""
    hazards = [estimate_hazard(bundle, history, t, u) for u in range(t + 1, bundle.T + 1)]
    return hazard_to_curve(t, hazards)
