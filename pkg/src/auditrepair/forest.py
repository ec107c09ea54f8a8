"""Random-forest classifier for binary callback labels.

Trees are grown to purity on bootstrap samples with Gini splits.  At each
node features are visited in a random order until ``max_features``
non-constant ones have been evaluated; candidate thresholds are midpoints
between consecutive distinct values present in the node.  Equal-gain
splits resolve to the lowest feature index, then the lowest threshold.

A fitted tree is a set of parallel arrays indexed by node id (root = 0):
``feature`` is -1 at leaves, ``value`` is the fraction of positive
bootstrap samples reaching the node.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import EmptyTrainingSet, ShapeMismatch
from .rng import child_seed, stream

FORMAT = "auditrepair-forest"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 50
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | None = None  # None -> ceil(sqrt(n_features))
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")

    def feature_subset_size(self, n_features: int) -> int:
        if self.max_features is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return max(1, min(int(self.max_features), n_features))


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int32),
        )


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    params: ForestParams
    n_features: int
    _packed: tuple = field(default=None, repr=False, compare=False)

    @property
    def n_estimators(self) -> int:
        return len(self.trees)

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "n_features": self.n_features,
            "params": asdict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a serialized forest (format={d.get('format')!r})")
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            params=ForestParams(**d["params"]),
            n_features=int(d["n_features"]),
        )


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _gini_proxy(pos, n):
    # n * gini / 2 for a binary node
    if n == 0:
        return 0.0
    return pos * (n - pos) / n


@numba.njit(cache=True, nogil=True)
def _grow_tree(codes, uniq, uniq_off, y, weight, max_features,
               min_samples_split, min_samples_leaf, seed):
    # one row per distinct bootstrap sample; weight is its multiplicity
    m, d = codes.shape
    np.random.seed(seed)
    total = 0
    for i in range(m):
        total += weight[i]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap, np.float64)
    n_samples = np.zeros(cap, np.int32)

    # node members as positions into rows/weight
    idx = np.arange(m)
    max_u = 0
    for f in range(d):
        u = uniq_off[f + 1] - uniq_off[f]
        if u > max_u:
            max_u = u
    hist_n = np.zeros(max_u, np.int64)
    hist_p = np.zeros(max_u, np.int64)
    feats = np.arange(d)
    buf_codes = np.empty(m, np.int64)
    buf_w = np.empty(m, np.int64)
    buf_p = np.empty(m, np.int64)

    n_words = (d + 63) // 64
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_const = np.zeros((cap, n_words), np.uint64)
    const = np.zeros(n_words, np.uint64)
    one = np.uint64(1)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        for w in range(n_words):
            const[w] = st_const[top, w]
        cnt = 0
        pos = 0
        for i in range(start, end):
            r = idx[i]
            cnt += weight[r]
            pos += weight[r] * y[r]
        value[node] = pos / cnt
        n_samples[node] = cnt
        if cnt < min_samples_split or pos == 0 or pos == cnt or cnt < 2 * min_samples_leaf:
            continue
        parent = _gini_proxy(pos, cnt)
        tol = 1e-12 * cnt
        n_members = end - start

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        best_c = 0
        visited = 0
        drawn = 0
        while drawn < d and visited < max_features:
            j = drawn + np.random.randint(d - drawn)
            tmp = feats[drawn]
            feats[drawn] = feats[j]
            feats[j] = tmp
            f = feats[drawn]
            drawn += 1
            if (const[f // 64] >> np.uint64(f % 64)) & one:
                continue
            off = uniq_off[f]
            nu = uniq_off[f + 1] - off
            # sweep candidate thresholds in ascending value order
            if n_members * 8 < nu:
                for i in range(n_members):
                    r = idx[start + i]
                    buf_codes[i] = codes[r, f]
                    buf_w[i] = weight[r]
                    buf_p[i] = weight[r] * y[r]
                order = np.argsort(buf_codes[:n_members], kind="mergesort")
                if buf_codes[order[0]] == buf_codes[order[n_members - 1]]:
                    const[f // 64] |= one << np.uint64(f % 64)
                    continue
                visited += 1
                nl = 0
                pl = 0
                for t in range(n_members - 1):
                    o = order[t]
                    nl += buf_w[o]
                    pl += buf_p[o]
                    c0 = buf_codes[o]
                    c1 = buf_codes[order[t + 1]]
                    if c0 == c1:
                        continue
                    nr = cnt - nl
                    if nl < min_samples_leaf or nr < min_samples_leaf:
                        continue
                    gain = parent - _gini_proxy(pl, nl) - _gini_proxy(pos - pl, nr)
                    thr = 0.5 * (uniq[off + c0] + uniq[off + c1])
                    if thr >= uniq[off + c1]:
                        thr = uniq[off + c0]
                    if gain > best_gain + tol or (
                        abs(gain - best_gain) <= tol and best_f >= 0
                        and (f < best_f or (f == best_f and thr < best_thr))
                    ):
                        best_gain = gain
                        best_f = f
                        best_thr = thr
                        best_c = c0
            else:
                for i in range(start, end):
                    r = idx[i]
                    c = codes[r, f]
                    hist_n[c] += weight[r]
                    hist_p[c] += weight[r] * y[r]
                nonempty = 0
                for c in range(nu):
                    if hist_n[c] > 0:
                        nonempty += 1
                if nonempty < 2:
                    for c in range(nu):
                        hist_n[c] = 0
                        hist_p[c] = 0
                    const[f // 64] |= one << np.uint64(f % 64)
                    continue
                visited += 1
                nl = 0
                pl = 0
                prev = -1
                for c in range(nu):
                    if hist_n[c] == 0:
                        continue
                    if prev >= 0:
                        nr = cnt - nl
                        if nl >= min_samples_leaf and nr >= min_samples_leaf:
                            gain = parent - _gini_proxy(pl, nl) - _gini_proxy(pos - pl, nr)
                            thr = 0.5 * (uniq[off + prev] + uniq[off + c])
                            if thr >= uniq[off + c]:
                                thr = uniq[off + prev]
                            if gain > best_gain + tol or (
                                abs(gain - best_gain) <= tol and best_f >= 0
                                and (f < best_f or (f == best_f and thr < best_thr))
                            ):
                                best_gain = gain
                                best_f = f
                                best_thr = thr
                                best_c = prev
                    nl += hist_n[c]
                    pl += hist_p[c]
                    prev = c
                for c in range(nu):
                    hist_n[c] = 0
                    hist_p[c] = 0

        if best_f < 0 or best_gain <= tol:
            continue
        lo = start
        hi = end - 1
        while lo <= hi:
            if codes[idx[lo], best_f] <= best_c:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # right pushed first so the left subtree is numbered depth-first
        st_node[top] = n_nodes + 1
        st_start[top] = lo
        st_end[top] = end
        for w in range(n_words):
            st_const[top, w] = const[w]
        top += 1
        st_node[top] = n_nodes
        st_start[top] = start
        st_end[top] = lo
        for w in range(n_words):
            st_const[top, w] = const[w]
        top += 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), n_samples[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _predict(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.zeros(n)
    # tree-major order keeps one tree's nodes hot in cache
    for t in range(n_trees):
        root = roots[t]
        for i in range(n):
            node = root
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = root + left[node]
                else:
                    node = root + right[node]
            out[i] += value[node]
    return out / n_trees


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _as_matrix(X) -> np.ndarray:
    values = getattr(X, "values", X)
    return np.ascontiguousarray(values, dtype=np.float64)


def _encode_codes(X):
    d = X.shape[1]
    uniq_parts, inverse, offsets = [], [], [0]
    for f in range(d):
        u, inv = np.unique(X[:, f], return_inverse=True)
        inverse.append(inv)
        uniq_parts.append(u)
        offsets.append(offsets[-1] + len(u))
    widest = max(len(u) for u in uniq_parts)
    dtype = np.uint8 if widest <= 256 else (np.uint16 if widest <= 65536 else np.int64)
    codes = np.empty(X.shape, dtype=dtype)
    for f, inv in enumerate(inverse):
        codes[:, f] = inv
    return codes, np.concatenate(uniq_parts), np.asarray(offsets, dtype=np.int64)


def fit_forest(X, y, params: ForestParams | None = None) -> ForestModel:
    """Fit ``params.n_estimators`` trees, each on its own bootstrap sample.

    Tree ``t`` draws its bootstrap from the stream ``(seed, t)`` and its
    feature order from a second, independent stream, so the fitted forest
    does not depend on ``n_jobs``.
    """
    params = params or ForestParams()
    X = _as_matrix(X)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ShapeMismatch(f"X must be 2-D, got shape {X.shape}")
    if len(X) != len(y):
        raise ShapeMismatch(f"X has {len(X)} rows but y has {len(y)} labels")
    if len(y) == 0:
        raise EmptyTrainingSet("no training rows")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be binary 0/1")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    y = y.astype(np.int64)
    n, d = X.shape
    codes, uniq, offsets = _encode_codes(X)
    mf = params.feature_subset_size(d)

    def grow(t):
        sample = stream(params.seed, "forest.bootstrap", t).integers(0, n, size=n)
        weight = np.bincount(sample, minlength=n)
        rows = np.flatnonzero(weight)
        arrays = _grow_tree(np.ascontiguousarray(codes[rows]), uniq, offsets, y[rows], weight[rows], mf,
                            params.min_samples_split, params.min_samples_leaf,
                            child_seed(params.seed, "forest.features", t) % (2**32))
        return Tree(*arrays)

    if params.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=params.n_jobs) as pool:
            trees = tuple(pool.map(grow, range(params.n_estimators)))
    else:
        trees = tuple(grow(t) for t in range(params.n_estimators))
    return ForestModel(trees=trees, params=params, n_features=d)


def _packed(model: ForestModel):
    if model._packed is None:
        roots = np.cumsum([0] + [t.n_nodes for t in model.trees[:-1]]).astype(np.int64)
        packed = (
            np.concatenate([t.feature for t in model.trees]).astype(np.int32),
            np.concatenate([t.threshold for t in model.trees]),
            np.concatenate([t.left for t in model.trees]).astype(np.int32),
            np.concatenate([t.right for t in model.trees]).astype(np.int32),
            np.concatenate([t.value for t in model.trees]),
            roots,
        )
        object.__setattr__(model, "_packed", packed)
    return model._packed


def predict_proba(model: ForestModel, X) -> np.ndarray:
    """Mean leaf posterior over the trees, one value in [0, 1] per row."""
    X = _as_matrix(X)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"model expects {model.n_features} columns, got shape {X.shape}")
    return _predict(X, *_packed(model))
