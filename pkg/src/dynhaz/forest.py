"""Binary classification random forest with Hellinger-distance splitting.

Leaves store the event proportion of their training rows, so averaging the
reached leaf over trees yields a probability estimate of the hazard. The
split score for candidate children L/R is

    sqrt[ (sqrt(nL1/n1) - sqrt(nL0/n0))^2 + (sqrt(nR1/n1) - sqrt(nR0/n0))^2 ]

where n1/n0 are the parent's class totals. The score depends only on
within-class allocation proportions, which makes it insensitive to class
skew; it is undefined when a class is absent from the parent, so one-class
nodes become leaves.

Trees are grown on flat arrays inside numba kernels. All randomness per
tree comes from one splitmix64 stream seeded from (forest seed, tree
index), so fits are reproducible and independent of scheduling. Prediction
averages per-tree leaf proportions (rather than pooling terminal counts
across trees).
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numba
import numpy as np

from .person_period import TrainingTable

__all__ = ["ForestConfig", "HazardForest", "hellinger_distance", "fit", "fit_matrix"]

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyperparameters; only num_trees is prescribed by the method.

    ``mtry=None`` resolves to ceil(sqrt(p)) at fit time. ``max_depth=None``
    means unlimited; depth 0 is a root-only leaf. Nodes with at most
    ``min_node_size`` rows are not split.
    """

    num_trees: int = 500
    mtry: int | None = None
    min_node_size: int = 10
    max_depth: int | None = None
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative 64-bit integer")

    def resolve_mtry(self, p: int) -> int:
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(p))
        if not 1 <= mtry <= p:
            raise ValueError(f"mtry must be in [1, {p}], got {mtry}")
        return mtry

    def to_dict(self) -> dict:
        return {
            "num_trees": self.num_trees,
            "mtry": self.mtry,
            "min_node_size": self.min_node_size,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
        }


def hellinger_distance(nl1, nl0, nr1, nr0) -> float:
    """Hellinger split score from the four child-by-class counts.

    Undefined (raises) when either class is absent from the parent node;
    tree growth never attempts a split there.
    """
    if min(nl1, nl0, nr1, nr0) < 0:
        raise ValueError("counts must be nonnegative")
    if nl1 + nr1 <= 0 or nl0 + nr0 <= 0:
        raise ValueError(
            "Hellinger distance undefined: a class is absent from the parent node"
        )
    return float(_hellinger(float(nl1), float(nl0), float(nr1), float(nr0)))


@numba.njit(cache=True)
def _hellinger(nl1, nl0, nr1, nr0):
    n1 = nl1 + nr1
    n0 = nl0 + nr0
    a = np.sqrt(nl1 / n1) - np.sqrt(nl0 / n0)
    b = np.sqrt(nr1 / n1) - np.sqrt(nr0 / n0)
    return np.sqrt(a * a + b * b)


@numba.njit(cache=True)
def _splitmix64(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@numba.njit(cache=True)
def _grow_tree(X, y, g_order, mtry, min_node_size, max_depth, bootstrap, seed):
    """Grow one tree; returns flat node arrays trimmed to size.

    Split choice is the exhaustive argmax of the Hellinger score over the
    sampled features and the midpoints between consecutive distinct sorted
    values; ties resolve to the lowest feature index, then the smallest
    threshold (strictly-greater acceptance while scanning in ascending
    order).

    The bootstrap sample is materialized feature-major; its per-feature
    sorted id lists are derived from the forest-wide presort ``g_order``
    (one pass per feature) and kept partitioned in sync as nodes split,
    so no per-node sorting is needed.
    """
    n, p = X.shape
    state = seed
    m = n

    # bootstrap draw counts per original row; sample ids are assigned in
    # row order so copies of a row occupy a consecutive id range
    mult = np.zeros(n, np.int32)
    if bootstrap:
        for i in range(m):
            state, z = _splitmix64(state)
            mult[np.int64(z % np.uint64(n))] += 1
    else:
        for i in range(n):
            mult[i] = 1
    sid_start = np.empty(n + 1, np.int32)
    sid_start[0] = 0
    for r in range(n):
        sid_start[r + 1] = sid_start[r] + mult[r]

    Xs = np.empty((p, m), np.float64)
    ys = np.empty(m, np.int8)
    for r in range(n):
        for sid in range(sid_start[r], sid_start[r + 1]):
            ys[sid] = y[r]
            for f in range(p):
                Xs[f, sid] = X[r, f]

    sorted_ids = np.empty((p, m), np.int32)
    for f in range(p):
        pos = 0
        for j in range(n):
            r = g_order[f, j]
            for sid in range(sid_start[r], sid_start[r + 1]):
                sorted_ids[f, pos] = sid
                pos += 1

    cap = 2 * m + 2
    feat = np.full(cap, -1, np.int64)
    thresh = np.full(cap, np.nan)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.full(cap, np.nan)
    count = np.zeros(cap, np.int64)

    side = np.empty(m, np.uint8)
    scratch = np.empty(m, np.int32)
    feat_pool = np.empty(p, np.int64)
    # per-node tables of sqrt(k / n1) and sqrt(k / n0); identical IEEE
    # values to computing the square roots inline, at a fraction of the cost
    sqrt1 = np.empty(m + 1, np.float64)
    sqrt0 = np.empty(m + 1, np.float64)

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    n_nodes = 1

    while top >= 0:
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        top -= 1

        size = end - start
        n1 = 0
        for pos in range(start, end):
            n1 += ys[sorted_ids[0, pos]]
        count[node] = size
        value[node] = n1 / size

        pure = n1 == 0 or n1 == size
        depth_capped = max_depth >= 0 and depth >= max_depth
        if size <= min_node_size or pure or depth_capped:
            continue

        # sample mtry distinct features, scanned in ascending index order
        for k in range(p):
            feat_pool[k] = k
        kmax = mtry
        for k in range(kmax):
            state, z = _splitmix64(state)
            j = k + np.int64(z % np.uint64(p - k))
            tmp = feat_pool[k]
            feat_pool[k] = feat_pool[j]
            feat_pool[j] = tmp
        for a in range(1, kmax):
            key = feat_pool[a]
            b = a - 1
            while b >= 0 and feat_pool[b] > key:
                feat_pool[b + 1] = feat_pool[b]
                b -= 1
            feat_pool[b + 1] = key

        n0 = size - n1
        fn1 = float(n1)
        fn0 = float(n0)
        for kk in range(n1 + 1):
            sqrt1[kk] = np.sqrt(kk / fn1)
        for kk in range(n0 + 1):
            sqrt0[kk] = np.sqrt(kk / fn0)

        # maximize the squared Hellinger score (same argmax, fewer sqrts)
        best_gain = -1.0
        best_feat = -1
        best_thresh = 0.0
        for k in range(kmax):
            f = feat_pool[k]
            l1 = 0
            for pos in range(start, end - 1):
                sid = sorted_ids[f, pos]
                l1 += ys[sid]
                v = Xs[f, sid]
                vnext = Xs[f, sorted_ids[f, pos + 1]]
                if vnext > v:
                    l0 = (pos - start + 1) - l1
                    a = sqrt1[l1] - sqrt0[l0]
                    b = sqrt1[n1 - l1] - sqrt0[n0 - l0]
                    g = a * a + b * b
                    if g > best_gain:
                        best_gain = g
                        best_feat = f
                        best_thresh = 0.5 * (v + vnext)

        if best_feat < 0:
            continue  # sampled features constant within node

        nl = 0
        for pos in range(start, end):
            sid = sorted_ids[0, pos]
            if Xs[best_feat, sid] <= best_thresh:
                side[sid] = 1
                nl += 1
            else:
                side[sid] = 0
        for f in range(p):
            a = 0
            b = nl
            for pos in range(start, end):
                sid = sorted_ids[f, pos]
                if side[sid] == 1:
                    scratch[a] = sid
                    a += 1
                else:
                    scratch[b] = sid
                    b += 1
            for i in range(size):
                sorted_ids[f, start + i] = scratch[i]

        feat[node] = best_feat
        thresh[node] = best_thresh
        child_l = n_nodes
        child_r = n_nodes + 1
        left[node] = child_l
        right[node] = child_r
        n_nodes += 2

        top += 1
        stack_node[top] = child_l
        stack_start[top] = start
        stack_end[top] = start + nl
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = child_r
        stack_start[top] = start + nl
        stack_end[top] = end
        stack_depth[top] = depth + 1

    return (
        feat[:n_nodes].copy(),
        thresh[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
    )


@numba.njit(cache=True)
def _predict_matrix(packed, roots, X):
    # tree-major accumulation with one 40-byte record per node: each node
    # visit touches a single cache line
    n = X.shape[0]
    ntrees = roots.shape[0]
    out = np.zeros(n, np.float64)
    for b in range(ntrees):
        root = roots[b]
        for i in range(n):
            node = root
            f = packed[node, 0]
            while f >= 0.0:
                if X[i, np.int64(f)] <= packed[node, 1]:
                    node = np.int64(packed[node, 2])
                else:
                    node = np.int64(packed[node, 3])
                f = packed[node, 0]
            out[i] += packed[node, 4]
    return out / ntrees


@dataclass(frozen=True)
class HazardForest:
    """Fitted ensemble; immutable and safe for concurrent prediction.

    Nodes of all trees live in shared flat arrays; ``roots[b]`` is the
    root index of tree b and leaves have ``feat == -1``.
    """

    feature_names: tuple[str, ...]
    config: ForestConfig
    feat: np.ndarray
    thresh: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    roots: np.ndarray

    @property
    def num_trees(self) -> int:
        return len(self.roots)

    @cached_property
    def _packed(self) -> np.ndarray:
        packed = np.empty((len(self.feat), 5), np.float64)
        packed[:, 0] = self.feat
        packed[:, 1] = self.thresh
        packed[:, 2] = self.left
        packed[:, 3] = self.right
        packed[:, 4] = self.value
        return packed

    def _check_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"feature matrix must have {len(self.feature_names)} columns "
                f"({', '.join(self.feature_names)}), got shape {X.shape}"
            )
        return X

    def predict_hazard(self, x: Sequence[float]) -> float:
        """Mean over trees of the reached leaf's event proportion."""
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return float(self.predict_hazard_matrix(x)[0])

    def predict_hazard_matrix(self, X: np.ndarray) -> np.ndarray:
        X = self._check_matrix(X)
        return _predict_matrix(self._packed, self.roots, X)

    # ---- serialization (versioned JSON, trees as nested nodes) ----

    def _tree_to_nested(self, b: int) -> dict:
        memo: dict[int, dict] = {}
        stack = [(int(self.roots[b]), False)]
        while stack:
            node, expanded = stack.pop()
            if self.feat[node] < 0:
                memo[node] = {
                    "event_proportion": float(self.value[node]),
                    "count": int(self.count[node]),
                }
            elif expanded:
                memo[node] = {
                    "feature": int(self.feat[node]),
                    "threshold": float(self.thresh[node]),
                    "left": memo[int(self.left[node])],
                    "right": memo[int(self.right[node])],
                }
            else:
                stack.append((node, True))
                stack.append((int(self.left[node]), False))
                stack.append((int(self.right[node]), False))
        return memo[int(self.roots[b])]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "hellinger_forest",
            "feature_names": list(self.feature_names),
            "config": self.config.to_dict(),
            "trees": [self._tree_to_nested(b) for b in range(self.num_trees)],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "HazardForest":
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported forest format_version {payload.get('format_version')!r}"
            )
        config = ForestConfig(**payload["config"])
        feat, thresh, left, right, value, count, roots = [], [], [], [], [], [], []
        for nested in payload["trees"]:
            roots.append(len(feat))
            # allocate ids in a preorder walk without recursion
            stack = [(nested, -1, "root")]
            while stack:
                node, parent, side = stack.pop()
                nid = len(feat)
                if parent >= 0:
                    (left if side == "left" else right)[parent] = nid
                if "event_proportion" in node:
                    feat.append(-1)
                    thresh.append(float("nan"))
                    left.append(-1)
                    right.append(-1)
                    value.append(float(node["event_proportion"]))
                    count.append(int(node["count"]))
                else:
                    feat.append(int(node["feature"]))
                    thresh.append(float(node["threshold"]))
                    left.append(-1)
                    right.append(-1)
                    value.append(float("nan"))
                    count.append(0)
                    stack.append((node["right"], nid, "right"))
                    stack.append((node["left"], nid, "left"))
        return cls(
            feature_names=tuple(payload["feature_names"]),
            config=config,
            feat=np.asarray(feat, np.int64),
            thresh=np.asarray(thresh, np.float64),
            left=np.asarray(left, np.int64),
            right=np.asarray(right, np.int64),
            value=np.asarray(value, np.float64),
            count=np.asarray(count, np.int64),
            roots=np.asarray(roots, np.int64),
        )

    def save(self, path) -> None:
        payload = self.to_dict()
        limit = sys.getrecursionlimit()
        # json.dump recurses through nested nodes; deep trees need headroom
        sys.setrecursionlimit(max(limit, 4 * int(_max_tree_depth(self)) + 1000))
        try:
            with open(path, "w") as fh:
                json.dump(payload, fh)
        finally:
            sys.setrecursionlimit(limit)

    @classmethod
    def load(cls, path) -> "HazardForest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _max_tree_depth(forest: HazardForest) -> int:
    deepest = 0
    for b in range(forest.num_trees):
        stack = [(int(forest.roots[b]), 0)]
        while stack:
            node, d = stack.pop()
            deepest = max(deepest, d)
            if forest.feat[node] >= 0:
                stack.append((int(forest.left[node]), d + 1))
                stack.append((int(forest.right[node]), d + 1))
    return deepest


def _tree_seed(seed: int, b: int) -> np.uint64:
    return np.random.SeedSequence((seed, b)).generate_state(1, np.uint64)[0]


def fit_matrix(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    config: ForestConfig,
) -> HazardForest:
    """Fit a forest on a raw feature matrix and binary response."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int8)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, p) with one response per row")
    if X.shape[0] == 0:
        raise ValueError("cannot fit a forest on an empty table")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("response must be binary")
    p = X.shape[1]
    if len(feature_names) != p:
        raise ValueError("feature_names length must match X columns")
    mtry = config.resolve_mtry(p)
    max_depth = -1 if config.max_depth is None else config.max_depth
    g_order = np.empty((p, X.shape[0]), np.int32)
    for f in range(p):
        g_order[f] = np.argsort(X[:, f], kind="stable")

    parts = []
    for b in range(config.num_trees):
        parts.append(
            _grow_tree(
                X, y, g_order, mtry, config.min_node_size, max_depth,
                config.bootstrap, _tree_seed(config.seed, b),
            )
        )
    sizes = np.array([len(part[0]) for part in parts], dtype=np.int64)
    roots = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    offsets = np.repeat(roots, sizes)
    feat = np.concatenate([part[0] for part in parts])
    left = np.concatenate([part[2] for part in parts])
    right = np.concatenate([part[3] for part in parts])
    internal = feat >= 0
    left[internal] += offsets[internal]
    right[internal] += offsets[internal]
    return HazardForest(
        feature_names=tuple(feature_names),
        config=config,
        feat=feat,
        thresh=np.concatenate([part[1] for part in parts]),
        left=left,
        right=right,
        value=np.concatenate([part[4] for part in parts]),
        count=np.concatenate([part[5] for part in parts]),
        roots=roots,
    )


def fit(table: TrainingTable, config: ForestConfig) -> HazardForest:
    """Fit a hazard forest on a person-period training table."""
    return fit_matrix(table.feature_matrix(), table.y, table.feature_names, config)
