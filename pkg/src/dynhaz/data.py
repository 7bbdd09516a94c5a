"""Discrete-time survival datasets with time-varying covariates.

A dataset holds one record per subject: an integer event-or-censoring time
``tau`` in ``{1..T}``, an event indicator ``delta``, and per-covariate value
sequences observed at ``t = 0..tau-1``. Covariate values at ``t >= tau`` are
unavailable by convention, including at the event time itself.

The wide CSV format has one row per subject with columns
``id,tau,delta`` followed by covariate columns. A time-varying covariate
``X1`` is stored as ``X1_0,X1_1,...``; a time-invariant covariate may be
stored either as a single bare column (``X2``) or in the suffixed form with
a constant value. Unavailable cells hold the literal string ``NA``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataValidationError

__all__ = [
    "CovariateKind",
    "CovariateSpec",
    "SubjectRecord",
    "GenericDataset",
    "load_generic",
    "write_generic",
    "covariate_snapshot",
    "at_risk",
]

_RESERVED_COLUMNS = ("id", "tau", "delta")
_SUFFIX_RE = re.compile(r"^(.*)_(\d+)$")


class CovariateKind(str, Enum):
    TIME_INVARIANT = "time_invariant"
    TIME_VARYING = "time_varying"


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: CovariateKind

    @property
    def time_varying(self) -> bool:
        return self.kind is CovariateKind.TIME_VARYING


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: (tau, delta) plus covariate values for t = 0..tau-1.

    ``values`` has shape ``(p, tau)``; time-invariant covariates repeat
    their constant in every column.
    """

    id: str
    tau: int
    delta: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 2:
            raise ValueError("subject values must be a (p, tau) array")


@dataclass(frozen=True)
class GenericDataset:
    """Immutable collection of subjects sharing one covariate schema."""

    specs: tuple[CovariateSpec, ...]
    subjects: tuple[SubjectRecord, ...]
    T: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "subjects", tuple(self.subjects))
        violations = _validate(self.specs, self.subjects)
        if violations:
            raise DataValidationError(violations)
        object.__setattr__(self, "T", max(s.tau for s in self.subjects))

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.specs)

    @property
    def p(self) -> int:
        return len(self.specs)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def _ids(self) -> np.ndarray:
        return np.array([s.id for s in self.subjects], dtype=object)

    @cached_property
    def _tau(self) -> np.ndarray:
        return np.array([s.tau for s in self.subjects], dtype=np.int64)

    @cached_property
    def _delta(self) -> np.ndarray:
        return np.array([s.delta for s in self.subjects], dtype=np.int64)

    @cached_property
    def _values3d(self) -> np.ndarray:
        """(n, p, T) values with NaN where unavailable (t >= tau)."""
        out = np.full((self.n, self.p, self.T), np.nan)
        for i, s in enumerate(self.subjects):
            out[i, :, : s.tau] = s.values
        return out

    def tau_array(self) -> np.ndarray:
        return self._tau.copy()

    def delta_array(self) -> np.ndarray:
        return self._delta.copy()

    def snapshot_matrix(self, t: int, subject_index: np.ndarray) -> np.ndarray:
        """Covariate snapshots at time t for the given subject positions."""
        out = self._values3d[subject_index, :, t]
        if np.isnan(out).any():
            bad = subject_index[np.isnan(out).any(axis=1)][0]
            raise ValueError(
                f"covariate snapshot at t={t} unavailable for subject "
                f"{self.subjects[bad].id} (tau={self.subjects[bad].tau})"
            )
        return out


def covariate_snapshot(subject: SubjectRecord, t: int) -> np.ndarray:
    """Vector of the latest covariate values as of time ``t``.

    Defined exactly on ``0 <= t <= tau - 1``; covariates at or after the
    event/censoring time are unavailable.
    """
    if not 0 <= t <= subject.tau - 1:
        raise ValueError(
            f"covariate snapshot at t={t} unavailable for subject "
            f"{subject.id} (tau={subject.tau})"
        )
    return subject.values[:, t].copy()


def at_risk(subject: SubjectRecord, u: int) -> bool:
    """True iff the subject may still experience the event at period ``u``.

    Equivalent to: neither the event nor censoring occurred strictly
    before ``u``.
    """
    if u < 1:
        raise ValueError(f"risk periods start at u=1, got u={u}")
    return u <= subject.tau


def _validate(specs, subjects) -> list[tuple[str | None, str]]:
    violations: list[tuple[str | None, str]] = []
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        violations.append((None, "duplicate covariate names"))
    if not subjects:
        violations.append((None, "dataset has no subjects"))
        return violations
    seen_ids: set[str] = set()
    p = len(specs)
    for s in subjects:
        if s.id in seen_ids:
            violations.append((s.id, "duplicate subject id"))
        seen_ids.add(s.id)
        if s.tau < 1:
            violations.append((s.id, f"tau must be >= 1, got {s.tau}"))
            continue
        if s.delta not in (0, 1):
            violations.append((s.id, f"delta must be 0 or 1, got {s.delta}"))
        if s.values.shape != (p, s.tau):
            violations.append(
                (s.id, f"expected covariate array of shape ({p}, {s.tau}), "
                       f"got {s.values.shape}")
            )
            continue
        if not np.all(np.isfinite(s.values)):
            bad = np.argwhere(~np.isfinite(s.values))
            k, t = bad[0]
            violations.append(
                (s.id, f"covariate {specs[k].name} missing or non-finite at t={t} "
                       f"(values required for every t < tau)")
            )
        for k, spec in enumerate(specs):
            if not spec.time_varying and s.tau > 1:
                col = s.values[k]
                if np.isfinite(col).all() and not np.all(col == col[0]):
                    violations.append(
                        (s.id, f"time-invariant covariate {spec.name} varies over t")
                    )
    return violations


def _parse_header(columns: Sequence[str]) -> tuple[list[CovariateSpec], dict[str, list[tuple[int, str]]]]:
    """Map CSV columns to covariate specs.

    Returns the specs in column order and, per covariate, the (t, column)
    pairs holding its values. Bare columns are time-invariant; suffixed
    column groups are time-varying unless overridden by the caller.
    """
    problems: list[tuple[str | None, str]] = []
    order: list[str] = []
    columns_by_name: dict[str, list[tuple[int, str]]] = {}
    bare: set[str] = set()
    for col in columns:
        if col in _RESERVED_COLUMNS:
            continue
        m = _SUFFIX_RE.match(col)
        if m:
            name, t = m.group(1), int(m.group(2))
            if name not in columns_by_name:
                order.append(name)
                columns_by_name[name] = []
            columns_by_name[name].append((t, col))
        else:
            if col in columns_by_name:
                problems.append((None, f"column {col!r} duplicates covariate {col!r}"))
            order.append(col)
            columns_by_name[col] = [(0, col)]
            bare.add(col)
    for name in order:
        if name in bare:
            continue
        ts = sorted(t for t, _ in columns_by_name[name])
        if ts != list(range(len(ts))):
            problems.append(
                (None, f"covariate {name!r} has non-contiguous time columns {ts}")
            )
    if problems:
        raise DataValidationError(problems)
    specs = [
        CovariateSpec(
            name,
            CovariateKind.TIME_INVARIANT if name in bare else CovariateKind.TIME_VARYING,
        )
        for name in order
    ]
    return specs, columns_by_name


def load_generic(path, specs: Iterable[CovariateSpec] | None = None) -> GenericDataset:
    """Load and validate a wide-format CSV.

    ``specs`` may be passed to declare covariate kinds explicitly (e.g. a
    time-invariant covariate stored in suffixed columns); by default bare
    columns load as time-invariant and suffixed groups as time-varying.
    """
    df = pd.read_csv(path, dtype={"id": str}, na_values=["NA"], keep_default_na=False)
    missing = [c for c in _RESERVED_COLUMNS if c not in df.columns]
    if missing:
        raise DataValidationError([(None, f"missing required columns: {missing}")])
    inferred, columns_by_name = _parse_header(df.columns)
    if specs is not None:
        specs = list(specs)
        if [s.name for s in specs] != [s.name for s in inferred]:
            raise DataValidationError(
                [(None, "declared covariate names do not match file columns: "
                        f"{[s.name for s in specs]} vs {[s.name for s in inferred]}")]
            )
        for declared, found in zip(specs, inferred):
            if declared.time_varying and not found.time_varying:
                raise DataValidationError(
                    [(None, f"covariate {declared.name!r} declared time-varying but "
                            "stored as a single column")]
                )
    else:
        specs = inferred

    violations: list[tuple[str | None, str]] = []
    subjects = []
    for _, row in df.iterrows():
        sid = str(row["id"])
        try:
            tau = int(row["tau"])
            delta = int(row["delta"])
        except (TypeError, ValueError):
            violations.append((sid, "tau and delta must be integers"))
            continue
        if tau < 1:
            violations.append((sid, f"tau must be >= 1, got {tau}"))
            continue
        values = np.full((len(specs), tau), np.nan)
        ok = True
        for k, spec in enumerate(specs):
            cells = dict(columns_by_name[spec.name])
            max_t = max(cells)
            for t in range(tau):
                col = cells.get(min(t, max_t) if not spec.time_varying else t)
                if col is None:
                    violations.append(
                        (sid, f"covariate {spec.name} has no column for t={t} "
                              f"but tau={tau}")
                    )
                    ok = False
                    break
                values[k, t] = row[col]
            if not ok:
                break
            # cells beyond availability must be NA
            for t, col in sorted(cells.items()):
                if t >= tau and not pd.isna(row[col]):
                    violations.append(
                        (sid, f"covariate {spec.name} has a value at t={t} "
                              f"but values beyond t=tau-1={tau - 1} are unavailable")
                    )
        if ok:
            subjects.append(SubjectRecord(sid, tau, delta, values))

    if violations:
        raise DataValidationError(violations)
    try:
        return GenericDataset(tuple(specs), tuple(subjects))
    except DataValidationError:
        raise


def write_generic(dataset: GenericDataset, path) -> None:
    """Write the wide CSV form; inverse of :func:`load_generic`."""
    T = dataset.T
    columns: dict[str, list] = {
        "id": [s.id for s in dataset.subjects],
        "tau": [s.tau for s in dataset.subjects],
        "delta": [s.delta for s in dataset.subjects],
    }
    for k, spec in enumerate(dataset.specs):
        if spec.time_varying:
            for t in range(T):
                columns[f"{spec.name}_{t}"] = [
                    s.values[k, t] if t < s.tau else np.nan for s in dataset.subjects
                ]
        else:
            columns[spec.name] = [s.values[k, 0] for s in dataset.subjects]
    pd.DataFrame(columns).to_csv(path, index=False, na_rep="NA")
