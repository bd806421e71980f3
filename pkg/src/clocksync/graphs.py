"""Coupling graphs and the spectral objects driving the consensus analysis.

The Laplacian of a connected undirected graph has one zero eigenvalue with
eigenvector 1_N; the remaining eigenvectors form the columns of V, an
orthonormal basis of the disagreement subspace. Everything downstream
(stacked flow matrix, disagreement metric, certificate) consumes the
factorization L = V D V^T together with the centering projection
S = I - 11^T/N.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DisconnectedGraph, InvalidEdge

GENERATOR_KINDS = ("ring", "path", "complete", "random-connected")

# Relative threshold below which a Laplacian eigenvalue counts as zero.
_ZERO_EIG_REL = 1e-8


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on nodes 1..n (no self-edges)."""

    n: int
    edges: frozenset  # frozenset of sorted 1-based (p, q) tuples

    def neighbors(self, p: int) -> tuple:
        """Sorted neighbor indices of node p (1-based)."""
        out = []
        for a, b in self.edges:
            if a == p:
                out.append(b)
            elif b == p:
                out.append(a)
        return tuple(sorted(out))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for p, q in self.edges:
            a[p - 1, q - 1] = 1.0
            a[q - 1, p - 1] = 1.0
        return a

    def laplacian(self) -> np.ndarray:
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a

    def edge_array(self) -> np.ndarray:
        """Edges as a sorted (m, 2) int array of 1-based pairs."""
        return np.array(sorted(self.edges), dtype=int).reshape(-1, 2)


@dataclass(frozen=True)
class SpectralData:
    """Spectral factorization of a connected graph's Laplacian.

    V holds orthonormal eigenvectors for the N-1 positive eigenvalues
    (columns sorted by ascending eigenvalue, first nonzero component of
    each column positive); D is the diagonal matrix of those eigenvalues,
    so laplacian = V @ D @ V.T and S = V @ V.T = I - 11^T/N.
    """

    graph: Graph
    laplacian: np.ndarray
    V: np.ndarray
    D: np.ndarray
    S: np.ndarray
    fiedler: float

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.diag(self.D)


@dataclass(frozen=True)
class Disagreement:
    eta: np.ndarray
    eta_norm: float
    uniform_norm: float


def _check_connected(n: int, edges: frozenset) -> bool:
    adj = {p: set() for p in range(1, n + 1)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {1}
    stack = [1]
    while stack:
        p = stack.pop()
        for q in adj[p]:
            if q not in seen:
                seen.add(q)
                stack.append(q)
    return len(seen) == n


def _normalize_edges(n: int, edges) -> frozenset:
    out = set()
    for e in edges:
        p, q = int(e[0]), int(e[1])
        if p == q:
            raise InvalidEdge(f"self-edge ({p},{q})")
        if not (1 <= p <= n and 1 <= q <= n):
            raise InvalidEdge(f"edge ({p},{q}) out of range for n={n}")
        out.add((min(p, q), max(p, q)))
    return frozenset(out)


def build_graph(n: int, *, edges=None, kind: str | None = None,
                seed: int | None = None, p: float = 0.3) -> Graph:
    """Construct a connected graph on nodes 1..n.

    Exactly one of `edges` (explicit 1-based pair list) or `kind`
    (generator: ring | path | complete | random-connected) must be given.
    The random generator samples each edge with probability `p` and then
    unions in a random spanning tree, so the result is always connected
    and deterministic for a given seed.
    """
    if n < 2:
        raise InvalidEdge(f"need at least 2 nodes, got n={n}")
    if (edges is None) == (kind is None):
        raise InvalidEdge("give exactly one of edges= or kind=")

    if edges is not None:
        es = _normalize_edges(n, edges)
        if not _check_connected(n, es):
            raise DisconnectedGraph(f"edge list does not connect all {n} nodes")
        return Graph(n=n, edges=es)

    if kind == "path":
        es = {(i, i + 1) for i in range(1, n)}
    elif kind == "ring":
        es = {(i, i + 1) for i in range(1, n)}
        es.add((1, n))
    elif kind == "complete":
        es = {(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)}
    elif kind == "random-connected":
        rng = np.random.default_rng(seed)
        es = set()
        for i in range(1, n + 1):
            for j in range(i + 1, n + 1):
                if rng.random() < p:
                    es.add((i, j))
        if not _check_connected(n, frozenset(es)):
            # Random spanning tree: attach each node to a random predecessor
            # in a random permutation. Union keeps sampled edges.
            perm = [int(v) for v in rng.permutation(n) + 1]
            for k in range(1, n):
                anchor = perm[int(rng.integers(0, k))]
                a, b = perm[k], anchor
                es.add((min(a, b), max(a, b)))
    else:
        raise InvalidEdge(f"unknown generator kind {kind!r}")

    g = Graph(n=n, edges=_normalize_edges(n, es))
    assert _check_connected(n, g.edges)
    return g


def spectral_basis(g: Graph) -> SpectralData:
    """Eigendecompose the Laplacian into the disagreement basis.

    Raises DisconnectedGraph when the zero eigenvalue has numerical
    multiplicity > 1 (threshold 1e-8 relative to the largest eigenvalue).
    """
    lap = g.laplacian()
    w, vecs = np.linalg.eigh(lap)
    thresh = _ZERO_EIG_REL * max(w[-1], 1.0)
    n_zero = int(np.sum(w < thresh))
    if n_zero != 1:
        raise DisconnectedGraph(
            f"Laplacian has {n_zero} (near-)zero eigenvalues; graph disconnected")
    v = vecs[:, 1:].copy()
    # Sign convention for reproducibility: first nonzero component positive.
    for k in range(v.shape[1]):
        col = v[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            v[:, k] = -col
    d = np.diag(w[1:])
    s = np.eye(g.n) - np.ones((g.n, g.n)) / g.n
    return SpectralData(graph=g, laplacian=lap, V=v, D=d, S=s, fiedler=float(w[1]))


def disagreement(sd: SpectralData, theta: np.ndarray) -> Disagreement:
    """Disagreement coordinates of a software-time vector.

    eta = V^T theta lives in the (N-1)-dimensional disagreement subspace;
    its Euclidean norm equals ||S theta||. uniform_norm is the largest
    time gap across any coupled pair (edges only).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (sd.n,):
        raise DimensionMismatch(
            f"theta has shape {theta.shape}, expected ({sd.n},)")
    eta = sd.V.T @ theta
    ea = sd.graph.edge_array()
    gaps = np.abs(theta[ea[:, 0] - 1] - theta[ea[:, 1] - 1])
    return Disagreement(
        eta=eta,
        eta_norm=float(np.linalg.norm(eta)),
        uniform_norm=float(gaps.max()) if gaps.size else 0.0,
    )
