"""Immutable sparse graph with self-loops and a canonical edge order."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import LoadError


@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric adjacency with exactly one self-loop per node.

    Edges are stored as parallel ``src``/``dst`` arrays sorted by
    ``(src, dst)``; ``offsets`` is the CSR row pointer over that order, so
    ``dst[offsets[i]:offsets[i + 1]]`` lists the sorted neighbours of ``i``.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    offsets: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def csr_offsets(self) -> np.ndarray:
        return self.offsets

    @property
    def csr_targets(self) -> np.ndarray:
        return self.dst

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def undirected_edge_count(self) -> int:
        """Distinct undirected non-loop edges."""
        return int(np.count_nonzero(self.src < self.dst))

    def neighbors(self, i: int) -> np.ndarray:
        return self.dst[self.offsets[i] : self.offsets[i + 1]]

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def adjacency(self) -> sp.csr_matrix:
        ones = np.ones(self.num_edges)
        return sp.csr_matrix((ones, (self.src, self.dst)), shape=(self.n, self.n))

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.src, self.dst] = 1.0
        return a

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        return build_graph(self.n, np.stack([perm[self.src], perm[self.dst]], axis=1))


def build_graph(n: int, raw_edges, source: str = "edges") -> Graph:
    """Deduplicate, symmetrize and self-loop ``raw_edges`` (pairs of node ids).

    Out-of-range ids raise :class:`LoadError` naming the offending edge and its
    1-based line in ``source``.
    """
    if n < 1:
        raise LoadError(f"graph needs at least one node, got n={n}")
    pairs = np.asarray(raw_edges, dtype=np.int64)
    if pairs.size == 0:
        pairs = pairs.reshape(0, 2)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise LoadError(f"{source}: edges must be pairs, got array of shape {pairs.shape}")
    bad = np.flatnonzero(((pairs < 0) | (pairs >= n)).any(axis=1))
    if bad.size:
        k = int(bad[0])
        u, v = pairs[k]
        raise LoadError(f"{source}:{k + 1}: edge ({u}, {v}) references a node outside [0, {n})")
    loops = np.arange(n, dtype=np.int64)
    src = np.concatenate([pairs[:, 0], pairs[:, 1], loops])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0], loops])
    keys = np.unique(src * n + dst)
    src, dst = keys // n, keys % n
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    return Graph(n=n, src=src, dst=dst, offsets=offsets)


def edge_endpoints(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    return g.src.copy(), g.dst.copy()


def normalized_laplacian(g: Graph) -> sp.csr_matrix:
    """``I - D^{-1/2} A D^{-1/2}`` with ``A`` including self-loops."""
    inv_sqrt = 1.0 / np.sqrt(g.degrees.astype(np.float64))
    norm = inv_sqrt[g.src] * inv_sqrt[g.dst]
    a_hat = sp.csr_matrix((norm, (g.src, g.dst)), shape=(g.n, g.n))
    return (sp.identity(g.n, format="csr") - a_hat).tocsr()
