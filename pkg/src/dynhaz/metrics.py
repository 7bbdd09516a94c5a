"""Accuracy criteria for hazard estimates and per-(t, u) grid evaluation.

Three criteria compare an estimate hhat against the true hazard h:

* ADIST, the absolute difference |hhat - h|;
* ALOR, the absolute log odds ratio |ln((hhat (1-h)) / ((1-hhat) h))|;
* the C-index, the proportion of truth-ordered pairs whose estimates are
  ordered the same way (strict inequalities on both sides; undefined when
  the truths admit no ordered pair).

Estimates are clamped away from 0 and 1 before the log odds since forest
leaves can be exactly pure while true hazards are interior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from .data import GenericDataset
from .errors import MissingModelError
from .estimator import ModelBundle, estimate_hazard_batch

__all__ = ["EvalCell", "adist", "alor", "cindex", "evaluate_grid", "grid_frame"]

ALOR_CLAMP = 1e-6


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value


def adist(h: float, hhat: float) -> float:
    """Absolute difference between true and estimated hazard."""
    return abs(_check_unit("hhat", hhat) - _check_unit("h", h))


def alor(h: float, hhat: float) -> float:
    """Absolute log odds ratio; the estimate is clamped to the interior."""
    h = _check_unit("h", h)
    if h in (0.0, 1.0):
        raise ValueError("alor undefined for true hazard exactly 0 or 1")
    hhat = np.clip(_check_unit("hhat", hhat), ALOR_CLAMP, 1 - ALOR_CLAMP)
    return abs(float(np.log((hhat * (1 - h)) / ((1 - hhat) * h))))


def _alor_vec(h: np.ndarray, hhat: np.ndarray) -> np.ndarray:
    if np.any((h <= 0) | (h >= 1)):
        raise ValueError("alor undefined for true hazards outside (0, 1)")
    hc = np.clip(hhat, ALOR_CLAMP, 1 - ALOR_CLAMP)
    return np.abs(np.log((hc * (1 - h)) / ((1 - hc) * h)))


def cindex(h, hhat) -> float | None:
    """Concordance over ordered truth pairs; None when no pair is ordered.

    Ties in either vector contribute to neither numerator nor denominator.
    """
    h = np.asarray(h, dtype=float)
    hhat = np.asarray(hhat, dtype=float)
    if h.shape != hhat.shape or h.ndim != 1:
        raise ValueError("h and hhat must be 1-d arrays of equal length")
    if len(h) < 2:
        raise ValueError("cindex needs at least two hazards")
    truth = h[:, None] > h[None, :]
    denom = int(truth.sum())
    if denom == 0:
        return None
    conc = int((truth & (hhat[:, None] > hhat[None, :])).sum())
    return conc / denom


@dataclass(frozen=True)
class EvalCell:
    """Metrics of one estimation problem (t, u) over a test set."""

    t: int
    u: int
    n: int
    mean_adist: float | None
    mean_alor: float | None
    cindex: float | None
    error: str | None = None


def evaluate_grid(
    bundle: ModelBundle,
    test_sets: Mapping[int, GenericDataset],
    true_hazards: Mapping[int, np.ndarray],
) -> list[EvalCell]:
    """Evaluate every (t, u) cell of a bundle.

    ``test_sets[u]`` holds the subjects still at risk at u and
    ``true_hazards[u]`` their true hazard at u, aligned by position.
    Cells whose model is absent are reported with an error string rather
    than aborting the grid.
    """
    cells: list[EvalCell] = []
    for u in range(1, bundle.T + 1):
        if u not in test_sets or u not in true_hazards:
            raise ValueError(f"missing test set or true hazards for u={u}")
        ds = test_sets[u]
        h = np.asarray(true_hazards[u], dtype=float)
        if len(h) != ds.n:
            raise ValueError(f"true hazards for u={u} must align with the test set")
        all_idx = np.arange(ds.n)
        x0 = ds.snapshot_matrix(0, all_idx)
        for t in range(u):
            xt = x0 if t == 0 else ds.snapshot_matrix(t, all_idx)
            try:
                hhat = estimate_hazard_batch(bundle, xt, t, u, X0=x0)
            except MissingModelError as exc:
                cells.append(
                    EvalCell(t=t, u=u, n=0, mean_adist=None, mean_alor=None,
                             cindex=None, error=str(exc))
                )
                continue
            cells.append(
                EvalCell(
                    t=t,
                    u=u,
                    n=ds.n,
                    mean_adist=float(np.mean(np.abs(hhat - h))),
                    mean_alor=float(np.mean(_alor_vec(h, hhat))),
                    cindex=cindex(h, hhat),
                )
            )
    return cells


def grid_frame(cells: list[EvalCell], method: str) -> pd.DataFrame:
    """Grid output table: method,t,u,n,mean_adist,mean_alor,cindex.

    Undefined C-index cells stay blank and are flagged in the
    ``cindex_defined`` diagnostics column.
    """
    return pd.DataFrame(
        {
            "method": method,
            "t": [c.t for c in cells],
            "u": [c.u for c in cells],
            "n": [c.n for c in cells],
            "mean_adist": [c.mean_adist for c in cells],
            "mean_alor": [c.mean_alor for c in cells],
            "cindex": [c.cindex for c in cells],
            "cindex_defined": [int(c.cindex is not None) for c in cells],
            "error": [c.error if c.error is not None else "" for c in cells],
        }
    )
