"""Random regression forests with leaf-membership weights.

Trees are grown CART-style on bootstrap resamples with multi-output
variance-reduction splits. Unlike a prediction-only forest, each tree keeps the
leaf of *every* training pair (in-bag or not), so a forest defines the weight
function

    w_i(x) = (1/M) * sum_m 1{x_i in leaf_m(x)} / #{training pairs in leaf_m(x)}

over the training set. Any conditional expectation E[g(Y) | X=x] is then
estimated as ``sum_i w_i(x) g(y_i)``, without refitting for each ``g``.
"""

from __future__ import annotations

import ast
import io
import math
from dataclasses import asdict, dataclass, replace
from functools import cached_property

import numpy as np
from numba import njit

from ._seeding import derive_seed

FOREST_FORMAT_VERSION = 1
_MAGIC = b"MDPFOREST"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf_size: int = 5
    mtry: int | None = None  # None -> ceil(sqrt(dim))
    bootstrap_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be positive")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        if not 0.0 < self.bootstrap_fraction:
            raise ValueError("bootstrap_fraction must be positive")

    def resolved_mtry(self, dim: int) -> int:
        m = math.ceil(math.sqrt(dim)) if self.mtry is None else self.mtry
        if m > dim:
            raise ValueError(f"mtry={m} exceeds predictor dimension {dim}")
        return m

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "ForestParams":
        return replace(self, seed=int(seed))


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _grow_tree(X, Y, w, max_depth, min_leaf, mtry, seed):
    """Grow one tree; returns node arrays plus the leaf of every training row.

    ``w`` holds bootstrap multiplicities. Split quality uses the weighted rows,
    while the size constraint applies both to weighted counts and to the raw
    number of training rows, so every leaf owns at least ``min_leaf`` rows.
    """
    np.random.seed(seed)
    n, d = X.shape
    r = Y.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    leaf_id = np.full(cap, -1, np.int64)
    train_leaf = np.empty(n, np.int64)

    idx = np.arange(n)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    n_leaves = 0

    feats = np.arange(d)
    chosen = np.empty(mtry, np.int64)
    vals = np.empty(n)
    sum_l = np.empty(r)
    sum_t = np.empty(r)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        cnt = end - start

        wt = 0.0
        for k in range(r):
            sum_t[k] = 0.0
        sq = 0.0
        for ii in range(start, end):
            i = idx[ii]
            wi = w[i]
            if wi > 0:
                wt += wi
                for k in range(r):
                    sum_t[k] += wi * Y[i, k]
                    sq += wi * Y[i, k] * Y[i, k]
        parent_sse = sq
        if wt > 0:
            for k in range(r):
                parent_sse -= sum_t[k] * sum_t[k] / wt

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        can_split = (
            depth < max_depth and cnt >= 2 * min_leaf and wt >= 2 * min_leaf and parent_sse > 1e-12 * (sq + 1e-300)
        )
        if can_split:
            # partial Fisher-Yates for the candidate features, then visit them in index order
            for k in range(d):
                feats[k] = k
            for k in range(mtry):
                j = k + np.random.randint(d - k)
                tmp = feats[k]
                feats[k] = feats[j]
                feats[j] = tmp
            for k in range(mtry):
                chosen[k] = feats[k]
            chosen.sort()
            base = 0.0
            for k in range(r):
                base += sum_t[k] * sum_t[k] / wt
            for c in range(mtry):
                f = chosen[c]
                for ii in range(cnt):
                    vals[ii] = X[idx[start + ii], f]
                order = np.argsort(vals[:cnt], kind="mergesort")
                for k in range(r):
                    sum_l[k] = 0.0
                wl = 0.0
                for pos in range(cnt - 1):
                    i = idx[start + order[pos]]
                    wi = w[i]
                    if wi > 0:
                        wl += wi
                        for k in range(r):
                            sum_l[k] += wi * Y[i, k]
                    v0 = vals[order[pos]]
                    v1 = vals[order[pos + 1]]
                    if v1 <= v0:
                        continue
                    nl = pos + 1
                    if nl < min_leaf or cnt - nl < min_leaf:
                        continue
                    wr = wt - wl
                    if wl < min_leaf or wr < min_leaf:
                        continue
                    score = 0.0
                    for k in range(r):
                        sr = sum_t[k] - sum_l[k]
                        score += sum_l[k] * sum_l[k] / wl + sr * sr / wr
                    gain = score - base
                    if gain > best_gain * (1.0 + 1e-12) + 1e-12 * parent_sse:
                        best_gain = gain
                        best_f = f
                        thr = 0.5 * (v0 + v1)
                        if not (thr < v1):
                            thr = v0
                        best_thr = thr

        if best_f < 0:
            leaf_id[node] = n_leaves
            for ii in range(start, end):
                train_leaf[idx[ii]] = n_leaves
            n_leaves += 1
            continue

        # partition idx[start:end] so that X[:, f] <= thr comes first (order preserved)
        lo = start
        tmp_idx = np.empty(cnt, np.int64)
        hi_n = 0
        for ii in range(start, end):
            i = idx[ii]
            if X[i, best_f] <= best_thr:
                idx[lo] = i
                lo += 1
            else:
                tmp_idx[hi_n] = i
                hi_n += 1
        for k in range(hi_n):
            idx[lo + k] = tmp_idx[k]

        feature[node] = best_f
        threshold[node] = best_thr
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        # push right first so the left subtree is numbered first
        st_node[sp] = r_node
        st_start[sp] = lo
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = l_node
        st_start[sp] = start
        st_end[sp] = lo
        st_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf_id[:n_nodes].copy(),
        train_leaf,
        n_leaves,
    )


@njit(cache=True)
def _apply(X, feature, threshold, left, right, leaf_id):
    m = X.shape[0]
    out = np.empty(m, np.int64)
    for i in range(m):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = leaf_id[node]
    return out


@njit(cache=True)
def _accumulate_leaf_means(values, train_leaf, leaf_sizes, query_leaf, out):
    """out[q, :] += mean of ``values`` over the training rows sharing query q's leaf."""
    n_leaves = leaf_sizes.shape[0]
    b = values.shape[1]
    sums = np.zeros((n_leaves, b), values.dtype)
    for i in range(values.shape[0]):
        lf = train_leaf[i]
        for k in range(b):
            sums[lf, k] += values[i, k]
    for lf in range(n_leaves):
        inv = leaf_sizes[lf]
        for k in range(b):
            sums[lf, k] = sums[lf, k] / inv
    for q in range(query_leaf.shape[0]):
        lf = query_leaf[q]
        for k in range(b):
            out[q, k] += sums[lf, k]


# ---------------------------------------------------------------------------
# Python-level objects


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_id: np.ndarray
    train_leaf: np.ndarray
    n_leaves: int

    @cached_property
    def leaf_sizes(self) -> np.ndarray:
        return np.bincount(self.train_leaf, minlength=self.n_leaves).astype(np.float64)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _apply(np.ascontiguousarray(X, dtype=float), self.feature, self.threshold, self.left, self.right, self.leaf_id)

    def leaf_members(self, leaf: int) -> np.ndarray:
        return np.flatnonzero(self.train_leaf == leaf)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    n_train: int
    dim: int
    params: ForestParams

    def weights(self, x: np.ndarray) -> np.ndarray:
        return leaf_weights(self, x)

    def weight_matrix(self, X: np.ndarray) -> np.ndarray:
        """Dense ``(m, n_train)`` weights; meant for small problems and checks."""
        X = _as_points(X, self.dim)
        W = np.zeros((X.shape[0], self.n_train))
        for tree in self.trees:
            ql = tree.apply(X)
            sizes = tree.leaf_sizes
            W += (ql[:, None] == tree.train_leaf[None, :]) / sizes[ql][:, None]
        return W / len(self.trees)

    def average(self, values: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Forest-weighted average of per-training-row ``values`` at query points.

        ``values`` is ``(n_train,)`` or ``(n_train, b)``, real or complex. Tree
        contributions are summed in tree order and divided by ``M`` at the end.
        """
        X = _as_points(X, self.dim)
        values = np.asarray(values)
        squeeze = values.ndim == 1
        if squeeze:
            values = values[:, None]
        if values.shape[0] != self.n_train:
            raise ValueError(f"expected {self.n_train} value rows, got {values.shape[0]}")
        dtype = np.complex128 if np.iscomplexobj(values) else np.float64
        values = np.ascontiguousarray(values, dtype=dtype)
        out = np.zeros((X.shape[0], values.shape[1]), dtype=dtype)
        for tree in self.trees:
            _accumulate_leaf_means(values, tree.train_leaf, tree.leaf_sizes, tree.apply(X), out)
        out /= len(self.trees)
        return out[:, 0] if squeeze else out

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        arrays = {
            "version": np.array([FOREST_FORMAT_VERSION]),
            "meta": np.array([self.n_train, self.dim, len(self.trees)]),
            "params": np.frombuffer(repr(self.params.to_dict()).encode(), dtype=np.uint8),
        }
        for m, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "leaf_id", "train_leaf"):
                arrays[f"{m}_{name}"] = getattr(t, name)
            arrays[f"{m}_n_leaves"] = np.array([t.n_leaves])
        buf = io.BytesIO()
        buf.write(_MAGIC)
        np.savez_compressed(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Forest":
        if not blob.startswith(_MAGIC):
            raise ValueError("not a serialized forest")
        with np.load(io.BytesIO(blob[len(_MAGIC):]), allow_pickle=False) as z:
            version = int(z["version"][0])
            if version != FOREST_FORMAT_VERSION:
                raise ValueError(f"unsupported forest format version {version}")
            n_train, dim, n_trees = (int(v) for v in z["meta"])
            params = ForestParams(**ast.literal_eval(z["params"].tobytes().decode()))
            trees = tuple(
                Tree(
                    z[f"{m}_feature"],
                    z[f"{m}_threshold"],
                    z[f"{m}_left"],
                    z[f"{m}_right"],
                    z[f"{m}_leaf_id"],
                    z[f"{m}_train_leaf"],
                    int(z[f"{m}_n_leaves"][0]),
                )
                for m in range(n_trees)
            )
        return cls(trees, n_train, dim, params)


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected predictor dimension {dim}, got shape {X.shape}")
    return np.ascontiguousarray(X)


def fit_forest(X: np.ndarray, Y: np.ndarray, params: ForestParams = ForestParams()) -> Forest:
    """Grow ``params.n_trees`` trees of predictors ``X`` (n, d) on responses ``Y``.

    ``Y`` may be a vector or an (n, r) matrix; splits minimize the summed
    within-child squared error over all response columns. Each tree sees a
    bootstrap resample of ``ceil(bootstrap_fraction * n)`` rows drawn with
    replacement, and considers ``mtry`` random coordinates per split. Ties in
    split quality go to the lower coordinate index, then the lower threshold.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Y = np.ascontiguousarray(Y)
    if X.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise ValueError("X must be (n, d) and Y must have n rows")
    n, d = X.shape
    if n < 2 * params.min_leaf_size:
        raise ValueError(f"need at least {2 * params.min_leaf_size} training pairs, got {n}")
    mtry = params.resolved_mtry(d)
    n_boot = max(1, math.ceil(params.bootstrap_fraction * n))
    trees = []
    for m in range(params.n_trees):
        tree_seed = derive_seed(params.seed, "tree", m)
        rng = np.random.default_rng(tree_seed)
        w = np.bincount(rng.integers(0, n, n_boot), minlength=n).astype(np.float64)
        out = _grow_tree(X, Y, w, params.max_depth, params.min_leaf_size, mtry, tree_seed % (2**32))
        trees.append(Tree(*out))
    return Forest(tuple(trees), n, d, params)


def leaf_weights(forest: Forest, x: np.ndarray) -> np.ndarray:
    """Weight of every training pair at a single query point ``x``.

    Returned densely as a length-``n_train`` vector; entries are nonnegative and
    sum to one.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != forest.dim:
        raise ValueError(f"expected a point of dimension {forest.dim}, got shape {x.shape}")
    return forest.weight_matrix(x[None, :])[0]


class ForestRegressor:
    """Scalar regression with a :class:`Forest` (prediction = weighted mean response)."""

    def __init__(self, params: ForestParams = ForestParams()):
        self.params = params
        self.forest: Forest | None = None
        self._y: np.ndarray | None = None
        self._constant: float | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ForestRegressor":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(y) == 0:
            raise ValueError("cannot fit on zero observations")
        if len(y) == 1:
            self._constant = float(y[0])
            self.forest, self._y = None, y.copy()
            return self
        self._constant = None
        if len(y) < 2 * self.params.min_leaf_size:
            # too little data for a split: a one-leaf forest gives the mean
            params = replace(self.params, min_leaf_size=max(1, len(y) // 2), max_depth=0)
        else:
            params = self.params
        self.forest = fit_forest(X, y, params)
        self._y = y.copy()
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self._constant is not None:
            return np.full(len(np.atleast_2d(X)), self._constant)
        if self.forest is None:
            raise RuntimeError("regressor is not fitted")
        return self.forest.average(self._y, X)


def tune_forest_params(
    X: np.ndarray,
    payload: np.ndarray,
    base: ForestParams,
    grid: dict | None = None,
    n_splits: int = 5,
    n_pilot: int = 5,
    seed: int = 0,
) -> ForestParams:
    """Pick forest hyperparameters by K-fold error of the real CCF part.

    For ``n_pilot`` Gaussian pilot frequencies the target is
    ``cos(freq . payload)``; each candidate forest is grown on the raw payload
    and scored by held-out squared error of its weighted average. Returns the
    best candidate (first one on ties).
    """
    X = np.asarray(X, dtype=float)
    payload = np.asarray(payload, dtype=float)
    if payload.ndim == 1:
        payload = payload[:, None]
    grid = grid or {"max_depth": [6, 12], "min_leaf_size": [5, 20]}
    rng = np.random.default_rng(seed)
    freqs = rng.standard_normal((n_pilot, payload.shape[1]))
    target = np.cos(payload @ freqs.T)
    folds = np.array_split(rng.permutation(len(X)), n_splits)
    keys = list(grid)
    best, best_err = base, math.inf
    for combo in np.array(np.meshgrid(*[grid[k] for k in keys], indexing="ij")).reshape(len(keys), -1).T:
        cand = replace(base, **{k: type(getattr(base, k) or 1)(v) for k, v in zip(keys, combo)})
        err = 0.0
        for hold in folds:
            train = np.setdiff1d(np.arange(len(X)), hold)
            f = fit_forest(X[train], payload[train], cand)
            err += float(np.sum((f.average(target[train], X[hold]) - target[hold]) ** 2))
        if err < best_err:
            best, best_err = cand, err
    return best
