"""Node-classification datasets: the Chains benchmark and a plain-text format.

A dataset directory holds five whitespace-separated UTF-8 files::

    meta.txt      n p C
    edges.txt     one "i j" pair per line, 0-based
    features.txt  n lines of p reals
    labels.txt    n integers, -1 for unlabeled
    splits.txt    n lines, each one of train|val|test|none
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DatasetError,
    LabelRangeError,
    MaskOverlapError,
    MissingFileError,
    ParseError,
    RaggedRowsError,
)
from .graph import Graph, build_graph

SPLITS = ("train", "val", "test")
FILES = ("meta.txt", "edges.txt", "features.txt", "labels.txt", "splits.txt")


@dataclass(frozen=True)
class NodeDataset:
    graph: Graph
    X: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.validate()

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return int(self.X.shape[1])

    def mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
        return getattr(self, f"{split}_mask")

    def validate(self):
        n = self.graph.num_nodes
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise DatasetError(f"feature matrix has shape {self.X.shape}, expected {n} rows")
        if self.labels.shape != (n,):
            raise DatasetError(f"labels have shape {self.labels.shape}, expected ({n},)")
        masks = np.stack([self.train_mask, self.val_mask, self.test_mask])
        if masks.shape != (3, n):
            raise DatasetError("split masks must each have one entry per node")
        overlap = np.flatnonzero(masks.sum(axis=0) > 1)
        if overlap.size:
            node = int(overlap[0])
            raise MaskOverlapError(node, tuple(s for s, m in zip(SPLITS, masks[:, node]) if m))
        labeled = masks.any(axis=0)
        bad = labeled & ((self.labels < 0) | (self.labels >= self.num_classes))
        if bad.any():
            node = int(np.flatnonzero(bad)[0])
            raise LabelRangeError(
                f"node {node} is in a split but has label {int(self.labels[node])} "
                f"outside [0, {self.num_classes})")


@dataclass(frozen=True)
class ChainsSpec:
    num_chains: int = 20
    chain_length: int = 10
    num_classes: int = 2
    feature_dim: int = 100
    noise_std: float = 0.0
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.05, 0.10, 0.85)

    def validate(self):
        if self.chain_length < 2:
            raise ConfigError(f"chain_length must be >= 2, got {self.chain_length}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_chains < self.num_classes:
            raise ConfigError(f"num_chains ({self.num_chains}) must be >= num_classes ({self.num_classes})")
        if self.feature_dim < self.num_classes:
            raise ConfigError(f"feature_dim ({self.feature_dim}) must be >= num_classes ({self.num_classes})")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")


def gen_chains(spec: ChainsSpec) -> NodeDataset:
    """Disjoint labeled paths whose class is visible only at the first node."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    l, c = spec.chain_length, spec.num_classes
    n = spec.num_chains * l
    starts = np.arange(spec.num_chains) * l
    heads = (starts[:, None] + np.arange(l - 1)[None, :]).ravel()
    edges = np.stack([heads, heads + 1], axis=1)
    chain_class = np.arange(spec.num_chains) % c
    labels = np.repeat(chain_class, l).astype(np.int64)
    X = np.zeros((n, spec.feature_dim))
    X[starts, chain_class] = 1.0
    if spec.noise_std > 0:
        X += spec.noise_std * rng.standard_normal(X.shape)
    graph = build_graph(n, edges)
    train, val, test = _stratified_masks(labels, c, spec.split_fractions, rng)
    return NodeDataset(graph, X, labels, train, val, test, c)


def _stratified_masks(labels: np.ndarray, num_classes: int, fractions, rng: np.random.Generator):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError(f"need three non-negative split fractions, got {fractions}")
    total = sum(fractions)
    if total > 1.0 + 1e-9:
        raise ConfigError(f"split fractions sum to {total} > 1")
    n = labels.shape[0]
    masks = np.zeros((3, n), dtype=bool)
    needed = sum(f > 0 for f in fractions)
    for cls in range(num_classes):
        idx = np.flatnonzero(labels == cls)
        if idx.size < needed:
            raise ConfigError(
                f"class {cls} has {idx.size} labeled nodes, fewer than the {needed} splits that need one")
        idx = rng.permutation(idx)
        counts = [max(1, math.floor(f * idx.size + 0.5)) if f > 0 else 0 for f in fractions]
        if abs(total - 1.0) <= 1e-9:
            counts[2] = idx.size - counts[0] - counts[1] if fractions[2] > 0 else 0
        # shrink the largest split until the class fits
        while sum(counts) > idx.size:
            counts[int(np.argmax(counts))] -= 1
        if fractions[2] > 0 and counts[2] < 1:
            raise ConfigError(f"class {cls} has too few nodes for the requested split")
        lo = 0
        for s, k in enumerate(counts):
            masks[s, idx[lo:lo + k]] = True
            lo += k
    return masks[0], masks[1], masks[2]


def resplit(ds: NodeDataset, fractions, seed: int) -> NodeDataset:
    """New stratified train/val/test masks over the labeled nodes."""
    rng = np.random.default_rng(seed)
    train, val, test = _stratified_masks(ds.labels, ds.num_classes, fractions, rng)
    return NodeDataset(ds.graph, ds.X, ds.labels, train, val, test, ds.num_classes)


# -- plain-text format -------------------------------------------------------

def save_dataset(ds: NodeDataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "meta.txt").write_text(f"{ds.num_nodes} {ds.num_features} {ds.num_classes}\n", encoding="utf-8")
    (path / "edges.txt").write_text("".join(f"{i} {j}\n" for i, j in ds.graph.edges.tolist()),
                                    encoding="utf-8")
    (path / "features.txt").write_text(
        "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in ds.X), encoding="utf-8")
    (path / "labels.txt").write_text("".join(f"{int(y)}\n" for y in ds.labels), encoding="utf-8")
    names = np.full(ds.num_nodes, "none", dtype=object)
    for s in SPLITS:
        names[ds.mask(s)] = s
    (path / "splits.txt").write_text("".join(f"{s}\n" for s in names), encoding="utf-8")
    return path


def _lines(path: Path):
    """Yield ``(line_number, tokens)`` for every non-blank line."""
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if tokens:
                yield lineno, tokens


def _parse(path: Path, lineno: int, token: str, kind):
    try:
        return kind(token)
    except ValueError:
        raise ParseError(path, lineno, f"cannot parse {token!r} as {kind.__name__}") from None


def load_dataset(path) -> NodeDataset:
    path = Path(path)
    if not path.is_dir():
        raise MissingFileError(f"dataset directory not found: {path}")
    for name in FILES:
        if not (path / name).is_file():
            raise MissingFileError(f"missing dataset file: {path / name}")

    meta = list(_lines(path / "meta.txt"))
    if len(meta) != 1 or len(meta[0][1]) != 3:
        raise ParseError(path / "meta.txt", meta[0][0] if meta else 1, "expected a single line 'n p C'")
    lineno, tok = meta[0]
    n, p, c = (_parse(path / "meta.txt", lineno, t, int) for t in tok)
    if n <= 0 or p <= 0 or c <= 0:
        raise ParseError(path / "meta.txt", lineno, "n, p and C must be positive")

    edges = []
    for lineno, tok in _lines(path / "edges.txt"):
        if len(tok) != 2:
            raise ParseError(path / "edges.txt", lineno, f"expected 'i j', got {len(tok)} fields")
        i, j = (_parse(path / "edges.txt", lineno, t, int) for t in tok)
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(path / "edges.txt", lineno, f"node index out of range [0, {n})")
        edges.append((i, j))

    rows = []
    for lineno, tok in _lines(path / "features.txt"):
        if len(tok) != p:
            raise RaggedRowsError(path / "features.txt", lineno, f"expected {p} values, got {len(tok)}")
        rows.append([_parse(path / "features.txt", lineno, t, float) for t in tok])
    if len(rows) != n:
        raise RaggedRowsError(path / "features.txt", len(rows) + 1, f"expected {n} rows, got {len(rows)}")

    labels = []
    for lineno, tok in _lines(path / "labels.txt"):
        if len(tok) != 1:
            raise ParseError(path / "labels.txt", lineno, "expected one label per line")
        y = _parse(path / "labels.txt", lineno, tok[0], int)
        if y < -1 or y >= c:
            raise LabelRangeError(f"{path / 'labels.txt'}:{lineno}: label {y} outside [-1, {c})")
        labels.append(y)
    if len(labels) != n:
        raise ParseError(path / "labels.txt", len(labels) + 1, f"expected {n} labels, got {len(labels)}")

    masks = np.zeros((3, n), dtype=bool)
    count = 0
    for lineno, tok in _lines(path / "splits.txt"):
        names = [t for part in tok for t in part.split(",") if t]
        unknown = [t for t in names if t not in SPLITS + ("none",)]
        if unknown:
            raise ParseError(path / "splits.txt", lineno, f"unknown split {unknown[0]!r}")
        if count >= n:
            raise ParseError(path / "splits.txt", lineno, f"more than {n} split lines")
        hits = tuple(dict.fromkeys(t for t in names if t != "none"))
        if len(hits) > 1:
            raise MaskOverlapError(count, hits)
        for s in hits:
            masks[SPLITS.index(s), count] = True
        count += 1
    if count != n:
        raise ParseError(path / "splits.txt", count + 1, f"expected {n} lines, got {count}")

    graph = build_graph(n, edges)
    return NodeDataset(graph, np.asarray(rows, dtype=np.float64).reshape(n, p),
                       np.asarray(labels, dtype=np.int64), masks[0], masks[1], masks[2], c)
