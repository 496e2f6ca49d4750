"""Binary random-forest classifier (maize vs. non-maize).

Trees are grown on bootstrap samples with Gini impurity and exact split
search over midpoints of consecutive unique values. A sample goes left when
``x[feature] <= threshold``. Each tree draws its randomness from a Philox
stream keyed on ``(seed, tree_index)``, so the trained forest does not depend
on how many workers build it.

Model file layout (little-endian)::

    magic      4s   b"GRF1"
    version    u16
    length     u64  number of bytes that follow
    kind       u8   0 = RH11, 1 = HARM20
    n_features u16
    labels     2 x (u16 length + utf-8)
    config     u32 n_trees, i32 max_features (-1 sqrt, -2 all), u32 min_samples_split,
               i32 max_depth (-1 unbounded), u64 seed
    metadata   u32 length + utf-8 JSON
    n_trees    u32
    per tree:  u32 node count, then nodes in pre-order:
               u8 tag 1 (internal) + u16 feature + f64 threshold, or
               u8 tag 0 (leaf) + u32 non-maize count + u32 maize count
"""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError, FormatError, TrainingError, ValidationError
from .features import FEATURE_DIMS

MAGIC = b"GRF1"
FORMAT_VERSION = 1
CLASS_LABELS = ("non-maize", "maize")
_KIND_CODES = {"RH11": 0, "HARM20": 1}
_MIN_DECREASE = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    """``max_features`` is ``"sqrt"``, ``"all"`` or a positive int."""

    n_trees: int = 100
    max_features: object = "sqrt"
    min_samples_split: int = 2
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.max_features not in ("sqrt", "all") and not (
                isinstance(self.max_features, (int, np.integer)) and self.max_features >= 1):
            raise ConfigError(f"bad max_features {self.max_features!r}")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1 or None")
        if not -(2 ** 63) <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        # negative seeds alias their two's-complement value
        object.__setattr__(self, "seed", int(self.seed) % 2 ** 64)

    def n_split_features(self, dim: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(dim)))
        if self.max_features == "all":
            return dim
        if self.max_features > dim:
            raise ConfigError(f"max_features={self.max_features} exceeds feature dimension {dim}")
        return int(self.max_features)

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "max_features": self.max_features,
                "min_samples_split": self.min_samples_split, "max_depth": self.max_depth,
                "seed": self.seed}


@dataclass(eq=False)
class Tree:
    """Array-encoded tree with nodes numbered in pre-order (root = 0).

    ``feature[i] == -1`` marks a leaf; ``counts[i]`` holds the bootstrap class
    counts (non-maize, maize) that reached node ``i``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_class(self) -> np.ndarray:
        return (self.counts[:, 1] > self.counts[:, 0]).astype(np.int8)

    def predict(self, X) -> np.ndarray:
        return _predict_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                             self.left, self.right, self.leaf_class())

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


@dataclass(eq=False)
class Forest:
    config: ForestConfig
    trees: list
    feature_kind: str
    class_labels: tuple = CLASS_LABELS
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return FEATURE_DIMS[self.feature_kind]

    def _packed(self):
        if getattr(self, "_pack_cache", None) is None:
            sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            self._pack_cache = (
                offsets,
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.leaf_class() for t in self.trees]),
            )
        return self._pack_cache

    def tree_votes(self, X) -> np.ndarray:
        """Per-tree class votes, shape ``(n_trees, n_samples)``."""
        X = self._check_X(X)
        return np.stack([t.predict(X) for t in self.trees]) if len(X) else np.zeros((len(self.trees), 0), np.int8)

    def maize_votes(self, X) -> np.ndarray:
        X = self._check_X(X)
        return _count_votes(X, *self._packed())

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(
                f"{self.feature_kind} forest expects {self.n_features} features, got shape {X.shape}")
        return np.ascontiguousarray(X)


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _splitmix64(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _gini(c0, c1):
    n = c0 + c1
    if n == 0.0:
        return 0.0
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - p0 * p0 - p1 * p1


@numba.njit(cache=True, nogil=True)
def _grow_tree(X, y, n_split_features, min_samples_split, max_depth, rng_state):
    m, d = X.shape
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    counts = np.zeros((cap, 2), np.int64)

    idx = np.arange(m)
    perm = np.arange(d)
    vals = np.empty(m, np.float64)
    labs = np.empty(m, np.int8)

    # stack entries: start, end, depth, parent, is_left
    stack = np.empty((cap, 5), np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = m
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    top = 1
    n_nodes = 0
    state = rng_state

    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        parent = stack[top, 3]
        is_left = stack[top, 4]

        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node

        c0 = 0
        c1 = 0
        for i in range(start, end):
            if y[idx[i]] == 1:
                c1 += 1
            else:
                c0 += 1
        counts[node, 0] = c0
        counts[node, 1] = c1
        size = end - start
        if c0 == 0 or c1 == 0 or size < min_samples_split or (max_depth >= 0 and depth >= max_depth):
            continue

        parent_gini = _gini(float(c0), float(c1))
        best_dec = _MIN_DECREASE
        best_f = -1
        best_thr = 0.0
        for j in range(d):
            perm[j] = j
        visited = 0
        j = 0
        while j < d and visited < n_split_features:
            state, r = _splitmix64(state)
            k = j + np.int64(r % np.uint64(d - j))
            tmp = perm[j]
            perm[j] = perm[k]
            perm[k] = tmp
            f = perm[j]
            j += 1

            for i in range(size):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals[:size], kind="mergesort")
            sv = vals[:size][order]
            if sv[0] == sv[size - 1]:
                continue
            visited += 1
            for i in range(size):
                labs[i] = y[idx[start + order[i]]]
            l0 = 0.0
            l1 = 0.0
            for i in range(size - 1):
                if labs[i] == 1:
                    l1 += 1.0
                else:
                    l0 += 1.0
                if sv[i] < sv[i + 1]:
                    nl = l0 + l1
                    nr = size - nl
                    r0 = c0 - l0
                    r1 = c1 - l1
                    child = (nl * _gini(l0, l1) + nr * _gini(r0, r1)) / size
                    dec = parent_gini - child
                    if dec > best_dec:
                        best_dec = dec
                        best_f = f
                        thr = 0.5 * (sv[i] + sv[i + 1])
                        if thr >= sv[i + 1]:
                            thr = sv[i]
                        best_thr = thr

        if best_f < 0:
            continue

        # partition idx[start:end] so that the left block is x <= thr
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[idx[lo], best_f] <= best_thr:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        # right pushed first so the left subtree is numbered next (pre-order)
        stack[top, 0] = lo
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 0
        top += 1
        stack[top, 0] = start
        stack[top, 1] = lo
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), counts[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, leaf_class):
    n = X.shape[0]
    out = np.empty(n, np.int8)
    for s in range(n):
        node = 0
        while feature[node] >= 0:
            if X[s, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[s] = leaf_class[node]
    return out


@numba.njit(cache=True, nogil=True)
def _count_votes(X, offsets, feature, threshold, left, right, leaf_class):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    votes = np.zeros(n, np.int64)
    for t in range(n_trees):
        base = offsets[t]
        for s in range(n):
            node = base
            while feature[node] >= 0:
                if X[s, feature[node]] <= threshold[node]:
                    node = base + left[node]
                else:
                    node = base + right[node]
            votes[s] += leaf_class[node]
    return votes


# ---------------------------------------------------------------------------
# training and prediction


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Independent stream for one tree: Philox keyed on ``(seed, tree_index)``."""
    key = np.array([int(seed) % 2 ** 64, int(tree_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _train_one(X, y, cfg, n_split, tree_index):
    rng = tree_rng(cfg.seed, tree_index)
    boot = rng.integers(0, len(X), size=len(X))
    state = np.uint64(rng.integers(0, 2 ** 64, dtype=np.uint64))
    depth = -1 if cfg.max_depth is None else cfg.max_depth
    arrays = _grow_tree(X[boot], y[boot], n_split, cfg.min_samples_split, depth, state)
    return Tree(*arrays)


def train_forest(X, y, cfg: ForestConfig = ForestConfig(), feature_kind: str | None = None,
                 workers: int = 1, metadata: dict | None = None) -> Forest:
    """Fit a random forest on boolean/0-1 labels (1 = maize).

    ``feature_kind`` defaults from the column count (11 -> RH11, 20 -> HARM20).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError(f"X must be 2-D with one row per label, got {X.shape} and {y.shape}")
    if len(X) < 2:
        raise TrainingError("need at least 2 samples")
    if not np.isfinite(X).all():
        raise ValidationError("feature matrix contains non-finite values")
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise ValidationError("labels must be binary")
    if np.unique(y).size < 2:
        raise TrainingError("training labels contain a single class")
    if feature_kind is None:
        by_dim = {v: k for k, v in FEATURE_DIMS.items()}
        if X.shape[1] not in by_dim:
            raise ValidationError(f"cannot infer feature kind from {X.shape[1]} columns")
        feature_kind = by_dim[X.shape[1]]
    if FEATURE_DIMS.get(feature_kind) != X.shape[1]:
        raise ValidationError(f"{feature_kind} expects {FEATURE_DIMS.get(feature_kind)} columns, got {X.shape[1]}")
    n_split = cfg.n_split_features(X.shape[1])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(lambda i: _train_one(X, y, cfg, n_split, i), range(cfg.n_trees)))
    else:
        trees = [_train_one(X, y, cfg, n_split, i) for i in range(cfg.n_trees)]
    return Forest(cfg, trees, feature_kind, CLASS_LABELS, dict(metadata or {}))


def predict_proba(forest: Forest, X) -> np.ndarray:
    """Fraction of trees voting maize."""
    return forest.maize_votes(X) / len(forest.trees)


def predict(forest: Forest, X) -> np.ndarray:
    """Majority vote (1 = maize); an exact tie goes to non-maize."""
    return (2 * forest.maize_votes(X) > len(forest.trees)).astype(np.int8)


# ---------------------------------------------------------------------------
# serialization


def _encode_max_features(v) -> int:
    return {"sqrt": -1, "all": -2}.get(v, v) if isinstance(v, str) else int(v)


def _decode_max_features(v: int):
    return {-1: "sqrt", -2: "all"}.get(v, v)


def serialize_forest(forest: Forest) -> bytes:
    cfg = forest.config
    body = bytearray()
    body += struct.pack("<BH", _KIND_CODES[forest.feature_kind], forest.n_features)
    for label in forest.class_labels:
        raw = label.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
    body += struct.pack("<IiIiQ", cfg.n_trees, _encode_max_features(cfg.max_features),
                        cfg.min_samples_split, -1 if cfg.max_depth is None else cfg.max_depth, cfg.seed)
    meta = json.dumps(forest.metadata, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(meta)) + meta
    body += struct.pack("<I", len(forest.trees))
    leaf_fmt = struct.Struct("<BII")
    node_fmt = struct.Struct("<BHd")
    for tree in forest.trees:
        body += struct.pack("<I", tree.n_nodes)
        for i in range(tree.n_nodes):
            if tree.feature[i] < 0:
                body += leaf_fmt.pack(0, int(tree.counts[i, 0]), int(tree.counts[i, 1]))
            else:
                body += node_fmt.pack(1, int(tree.feature[i]), float(tree.threshold[i]))
    return MAGIC + struct.pack("<HQ", FORMAT_VERSION, len(body)) + bytes(body)


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError(f"truncated model stream at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def text(self, length_fmt):
        (n,) = self.take(length_fmt)
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated string at byte {self.pos}")
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("invalid utf-8 in model stream") from None


def _decode_tree(r: _Reader, n_nodes: int, n_features: int) -> Tree:
    feature = np.full(n_nodes, -1, np.int32)
    threshold = np.zeros(n_nodes, np.float64)
    left = np.full(n_nodes, -1, np.int32)
    right = np.full(n_nodes, -1, np.int32)
    counts = np.zeros((n_nodes, 2), np.int64)
    pending = []  # internal nodes still waiting for their right child
    for i in range(n_nodes):
        if i > 0:
            if not pending:
                raise FormatError("pre-order node sequence has a detached node")
            parent = pending[-1]
            if left[parent] < 0:
                left[parent] = i
            else:
                right[parent] = i
                pending.pop()
        (tag,) = r.take("<B")
        if tag == 1:
            f, thr = r.take("<Hd")
            if f >= n_features:
                raise FormatError(f"feature index {f} out of range")
            feature[i] = f
            threshold[i] = thr
            pending.append(i)
        elif tag == 0:
            counts[i] = r.take("<II")
            if counts[i].sum() < 1:
                raise FormatError("leaf with no samples")
        else:
            raise FormatError(f"unknown node tag {tag}")
    if pending:
        raise FormatError("tree ends with incomplete internal nodes")
    return Tree(feature, threshold, left, right, counts)


def deserialize_forest(data: bytes) -> Forest:
    data = bytes(data)
    if len(data) < 14:
        raise FormatError("model stream too short")
    if data[:4] != MAGIC:
        raise FormatError("bad magic bytes")
    version, length = struct.unpack_from("<HQ", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model version {version}")
    if length != len(data) - 14:
        raise FormatError(f"length header says {length} bytes, stream has {len(data) - 14}")
    r = _Reader(data, 14)
    kind_code, n_features = r.take("<BH")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds or FEATURE_DIMS[kinds[kind_code]] != n_features:
        raise FormatError("inconsistent feature kind")
    labels = (r.text("<H"), r.text("<H"))
    n_trees, max_features, min_split, max_depth, seed = r.take("<IiIiQ")
    try:
        cfg = ForestConfig(n_trees, _decode_max_features(max_features), min_split,
                           None if max_depth < 0 else max_depth, seed)
    except ConfigError as exc:
        raise FormatError(f"invalid stored config: {exc}") from None
    try:
        metadata = json.loads(r.text("<I"))
    except json.JSONDecodeError:
        raise FormatError("invalid metadata JSON") from None
    (count,) = r.take("<I")
    if count != n_trees:
        raise FormatError(f"tree count {count} disagrees with config n_trees {n_trees}")
    trees = []
    for _ in range(count):
        (n_nodes,) = r.take("<I")
        if n_nodes < 1 or n_nodes > len(data):
            raise FormatError(f"implausible node count {n_nodes}")
        trees.append(_decode_tree(r, n_nodes, n_features))
    if r.pos != len(data):
        raise FormatError("trailing bytes after last tree")
    return Forest(cfg, trees, kinds[kind_code], labels, metadata)
