"""Counting-process reformatting of survival datasets into training tables.

Every estimation strategy trains on some slice of the same underlying
person-period expansion: one row per subject per (current time t, future
time u) pair with t < u at which the subject is still at risk. The row
outcome y is 1 exactly when the subject's event happened at u, and the
features are the covariate snapshot at t.

Builders:

* ``build_separate(ds, t, u)`` - the single (t, u) cell.
* ``build_poolt(ds, t)``      - all horizons for one t, with u as a feature.
* ``build_superpp(ds)``       - the full stacked table, with u and t features.
* ``build_superpp0(ds)``      - same rows as superpp but baseline snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import GenericDataset
from .errors import EmptyRiskSetError

__all__ = [
    "PersonPeriodRow",
    "TrainingTable",
    "build_separate",
    "build_poolt",
    "build_superpp",
    "build_superpp0",
]


@dataclass(frozen=True)
class PersonPeriodRow:
    id: str
    y: int
    features: np.ndarray
    u: int
    t: int


@dataclass(frozen=True)
class TrainingTable:
    """Column-oriented person-period rows plus the model feature schema.

    ``covariates`` holds the snapshot values; whether ``u`` and ``t``
    additionally enter the feature matrix depends on the builder.
    Rows are ordered by (t, u, subject position), deterministically.
    """

    ids: np.ndarray
    y: np.ndarray
    covariates: np.ndarray
    t: np.ndarray
    u: np.ndarray
    covariate_names: tuple[str, ...]
    use_u: bool
    use_t: bool

    def __len__(self) -> int:
        return len(self.y)

    @property
    def feature_names(self) -> tuple[str, ...]:
        names = list(self.covariate_names)
        if self.use_u:
            names.append("u")
        if self.use_t:
            names.append("t")
        return tuple(names)

    def feature_matrix(self) -> np.ndarray:
        cols = [self.covariates]
        if self.use_u:
            cols.append(self.u[:, None].astype(float))
        if self.use_t:
            cols.append(self.t[:, None].astype(float))
        return np.ascontiguousarray(np.hstack(cols))

    def rows(self) -> Iterator[PersonPeriodRow]:
        feats = self.feature_matrix()
        for i in range(len(self)):
            yield PersonPeriodRow(
                id=self.ids[i], y=int(self.y[i]), features=feats[i],
                u=int(self.u[i]), t=int(self.t[i]),
            )


def _cell_arrays(ds: GenericDataset, t: int, u: int, snapshot_t: int):
    """Rows of one (t, u) cell, features taken at snapshot_t."""
    tau = ds._tau
    delta = ds._delta
    idx = np.flatnonzero(tau >= u)  # at risk at u
    if idx.size == 0:
        raise EmptyRiskSetError(f"no subject at risk at u={u}")
    ids = ds._ids[idx]
    y = ((tau[idx] == u) & (delta[idx] == 1)).astype(np.int8)
    X = ds.snapshot_matrix(snapshot_t, idx)
    tt = np.full(idx.size, t, dtype=np.int64)
    uu = np.full(idx.size, u, dtype=np.int64)
    return ids, y, X, tt, uu


def _stack(parts, names, use_u, use_t) -> TrainingTable:
    ids = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    X = np.vstack([p[2] for p in parts])
    t = np.concatenate([p[3] for p in parts])
    u = np.concatenate([p[4] for p in parts])
    return TrainingTable(ids, y, X, t, u, names, use_u, use_t)


def _check_pair(ds: GenericDataset, t: int, u: int) -> None:
    if not 0 <= t < u <= ds.T:
        raise ValueError(f"need 0 <= t < u <= T={ds.T}, got (t, u)=({t}, {u})")


def build_separate(ds: GenericDataset, t: int, u: int) -> TrainingTable:
    """Local training table for one estimation problem (t, u)."""
    _check_pair(ds, t, u)
    part = _cell_arrays(ds, t, u, snapshot_t=t)
    return _stack([part], ds.covariate_names, use_u=False, use_t=False)


def build_poolt(ds: GenericDataset, t: int) -> TrainingTable:
    """Table pooling all horizons u = t+1..T for one t; u is a feature."""
    if not 0 <= t <= ds.T - 1:
        raise ValueError(f"need 0 <= t <= T-1={ds.T - 1}, got t={t}")
    parts = [_cell_arrays(ds, t, u, snapshot_t=t) for u in range(t + 1, ds.T + 1)]
    return _stack(parts, ds.covariate_names, use_u=True, use_t=False)


def build_superpp(ds: GenericDataset) -> TrainingTable:
    """Super person-period table over all (t, u); u and t are features."""
    parts = [
        _cell_arrays(ds, t, u, snapshot_t=t)
        for t in range(ds.T)
        for u in range(t + 1, ds.T + 1)
    ]
    return _stack(parts, ds.covariate_names, use_u=True, use_t=True)


def build_superpp0(ds: GenericDataset, include_t: bool = True) -> TrainingTable:
    """Superpp rows with every snapshot replaced by the baseline one.

    The (id, y, u, t) row multiset matches :func:`build_superpp` exactly;
    only the covariate values differ. ``include_t`` controls whether t
    stays in the feature schema.
    """
    parts = [
        _cell_arrays(ds, t, u, snapshot_t=0)
        for t in range(ds.T)
        for u in range(t + 1, ds.T + 1)
    ]
    return _stack(parts, ds.covariate_names, use_u=True, use_t=include_t)
