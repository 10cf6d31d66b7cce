"""Undirected graphs and the degree-normalized incidence operator.

The normalized incidence matrix is ``G D̃^{-1/2} / sqrt(2)`` where ``G`` is the
signed m x n incidence matrix of an arbitrary edge orientation and ``D̃`` the
degree matrix of ``A + I``.  It is only ever applied edge-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import EmptyGraphError, InputError, ShapeError


@dataclass(frozen=True)
class Graph:
    num_nodes: int
    edges: np.ndarray  # (m, 2) int64, each row (i, j) with i < j
    aug_degrees: np.ndarray  # (n,) float64, 1 + number of incident edges

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix. Intended for small graphs and tests."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        if self.num_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a


def build_graph(num_nodes: int, raw_edges: Iterable[tuple[int, int]]) -> Graph:
    """Build a simple undirected graph, dropping self-loops and duplicate pairs."""
    num_nodes = int(num_nodes)
    if num_nodes <= 0:
        raise EmptyGraphError(f"graph must have at least one node, got num_nodes={num_nodes}")
    arr = np.asarray(list(raw_edges) if not isinstance(raw_edges, np.ndarray) else raw_edges,
                     dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError(f"edges must be pairs, got array of shape {arr.shape}")
    bad = (arr < 0) | (arr >= num_nodes)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0, 0])
        i, j = arr[row]
        raise InputError(f"edge #{row} ({i}, {j}) has a node index outside [0, {num_nodes})")

    arr = arr[arr[:, 0] != arr[:, 1]]
    arr = np.sort(arr, axis=1)
    edges = np.unique(arr, axis=0) if len(arr) else arr.reshape(0, 2)
    counts = np.bincount(edges.ravel(), minlength=num_nodes)
    return Graph(num_nodes, edges, 1.0 + counts.astype(np.float64))


@dataclass(frozen=True)
class OrientedIncidence:
    """Normalized incidence operator for one fixed orientation.

    Row ``k`` corresponds to ``oriented_edges[k] = (tail, head)`` and evaluates
    ``z[head] * s[head] - z[tail] * s[tail]`` with ``s = inv_sqrt_scale = 1 / sqrt(2 d̃)``.
    The operator is held as two compressed sparse matrices with two entries
    per edge, so every application costs O(m h) and sums in a fixed order.
    """

    num_nodes: int
    oriented_edges: np.ndarray  # (m, 2) int64 (tail, head)
    inv_sqrt_scale: np.ndarray  # (n,)
    orientation_seed: int
    _fwd: sp.csr_matrix = field(repr=False, compare=False, default=None)
    _adj: sp.csr_matrix = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        m = self.oriented_edges.shape[0]
        rows = np.repeat(np.arange(m), 2)
        cols = self.oriented_edges[:, ::-1].reshape(-1)  # head, tail per edge
        vals = np.tile([1.0, -1.0], m) * self.inv_sqrt_scale[cols]
        fwd = sp.csr_matrix((vals, (rows, cols)), shape=(m, self.num_nodes))
        object.__setattr__(self, "_fwd", fwd)
        object.__setattr__(self, "_adj", fwd.T.tocsr())

    @property
    def num_edges(self) -> int:
        return int(self.oriented_edges.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_edges, self.num_nodes)

    def flipped(self, edge_indices) -> "OrientedIncidence":
        """Same operator with the listed edges reversed (left-multiplication by E_k)."""
        oe = self.oriented_edges.copy()
        idx = np.atleast_1d(np.asarray(edge_indices, dtype=np.int64))
        oe[idx] = oe[idx][:, ::-1]
        return OrientedIncidence(self.num_nodes, oe, self.inv_sqrt_scale, self.orientation_seed)

    def grad(self, z: np.ndarray) -> np.ndarray:
        return apply_grad(self, z)

    def div(self, f: np.ndarray) -> np.ndarray:
        return apply_div(self, f)


def orient(graph: Graph, seed: int = 0) -> OrientedIncidence:
    """Randomly orient each edge; the choice is reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    flip = rng.random(graph.num_edges) < 0.5
    oe = graph.edges.copy()
    oe[flip] = oe[flip][:, ::-1]
    scale = 1.0 / np.sqrt(2.0 * graph.aug_degrees)
    return OrientedIncidence(graph.num_nodes, oe, scale, int(seed))


def apply_grad(inc: OrientedIncidence, z: np.ndarray) -> np.ndarray:
    """Edge differences of node features: the normalized incidence times ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != inc.num_nodes:
        raise ShapeError(f"apply_grad expects {inc.num_nodes} rows, got {z.shape[0]}")
    return inc._fwd @ z


def apply_div(inc: OrientedIncidence, f: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`apply_grad`, mapping edge values back onto nodes."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != inc.num_edges:
        raise ShapeError(f"apply_div expects {inc.num_edges} rows, got {f.shape[0]}")
    return inc._adj @ f


class NormEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm(
    apply: Callable[[np.ndarray], np.ndarray],
    apply_adjoint: Callable[[np.ndarray], np.ndarray],
    in_shape: tuple[int, ...],
    iters: int = 1000,
    tol: float = 1e-10,
    seed: int = 0,
) -> NormEstimate:
    """Largest singular value of a linear map by power iteration on ``A^T A``.

    ``in_shape`` is the shape of the map's input.  When the iteration budget
    runs out the best estimate so far is returned with ``converged=False``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(in_shape)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return NormEstimate(0.0, True, 0)
    v /= nv
    sigma = 0.0
    for it in range(1, iters + 1):
        w = apply_adjoint(apply(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return NormEstimate(0.0, True, it)
        new_sigma = float(np.sqrt(nw))
        v = w / nw
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return NormEstimate(new_sigma, True, it)
        sigma = new_sigma
    return NormEstimate(sigma, False, iters)


def incidence_norm(inc: OrientedIncidence, iters: int = 2000, tol: float = 1e-12) -> NormEstimate:
    if inc.num_edges == 0:
        return NormEstimate(0.0, True, 0)
    return spectral_norm(lambda v: apply_grad(inc, v), lambda f: apply_div(inc, f),
                         (inc.num_nodes,), iters=iters, tol=tol)


def matrix_norm(k: np.ndarray, iters: int = 1000, tol: float = 1e-10, seed: int = 0) -> NormEstimate:
    k = np.asarray(k, dtype=np.float64)
    return spectral_norm(lambda v: k @ v, lambda u: k.T @ u, (k.shape[1],),
                         iters=iters, tol=tol, seed=seed)
