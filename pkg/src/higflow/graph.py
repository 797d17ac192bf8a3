"""Attention-learned topology, threshold truncation and greedy Graclus coarsening."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .numerics import Tensor


class GraphConfigError(ValueError):
    pass


@dataclass
class SpatioTemporalGraph:
    """Undirected weighted graph. ``weights`` may be a Tensor when built by the model."""

    weights: np.ndarray | Tensor

    @property
    def w(self) -> np.ndarray:
        return self.weights.data if isinstance(self.weights, Tensor) else np.asarray(self.weights)

    @property
    def num_nodes(self) -> int:
        return self.w.shape[0]

    def adjacency(self) -> np.ndarray:
        return self.w > 0

    def edges(self) -> list[tuple[int, int, float]]:
        w = self.w
        iu, ju = np.nonzero(np.triu(w, 1) > 0)
        return [(int(i), int(j), float(w[i, j])) for i, j in zip(iu, ju)]

    def neighbors(self, node: int) -> np.ndarray:
        return np.nonzero(self.w[node] > 0)[0]


@dataclass
class AttentionParams:
    query: Tensor  # H x D x (D/H)
    key: Tensor    # H x D x (D/H)

    @property
    def heads(self) -> int:
        return self.query.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, heads: int = 4, prefix: str = "attn") -> "AttentionParams":
        if dim % heads:
            raise GraphConfigError(f"hidden dim {dim} not divisible by heads {heads}")
        dh = dim // heads
        return cls(nm.init_uniform(rng, (heads, dim, dh), dim, f"{prefix}.query"),
                   nm.init_uniform(rng, (heads, dim, dh), dim, f"{prefix}.key"))

    def parameters(self) -> list[Tensor]:
        return [self.query, self.key]


@dataclass
class ClusterAssignment:
    cluster_of: np.ndarray  # node -> clique id
    num_clusters: int

    def members(self, c: int) -> np.ndarray:
        return np.nonzero(self.cluster_of == c)[0]

    def cliques(self) -> list[list[int]]:
        return [self.members(c).tolist() for c in range(self.num_clusters)]

    def pooling_matrix(self) -> np.ndarray:
        """``P[c, v] = 1`` iff node v belongs to clique c."""
        P = np.zeros((self.num_clusters, len(self.cluster_of)))
        P[self.cluster_of, np.arange(len(self.cluster_of))] = 1.0
        return P

    @classmethod
    def singletons(cls, n: int) -> "ClusterAssignment":
        return cls(np.arange(n), n)


def attention_weights(features, params: AttentionParams) -> Tensor:
    """Symmetric attention matrix with zero diagonal and entries in [0, 1].

    Per head a row-softmax of scaled query-key scores; heads are averaged,
    then ``(A + A^T) / 2`` is taken and the diagonal is cleared.
    """
    x = nm.as_tensor(features)
    n, d = x.shape
    if params.query.shape[1] != d:
        raise GraphConfigError(f"attention expects feature width {params.query.shape[1]}, got {d}")
    dh = params.query.shape[2]
    q = nm.matmul(x, params.query)             # H x n x dh
    k = nm.matmul(x, params.key)
    scores = nm.matmul(q, nm.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    a = nm.mean(nm.softmax_rows(scores), axis=0)
    a = (a + a.T) * 0.5
    return a * (1.0 - np.eye(n))


def truncate(weights, tau: float) -> SpatioTemporalGraph:
    """Zero every weight below ``tau``; surviving entries are untouched."""
    if not (0.0 < tau <= 1.0):
        raise GraphConfigError(f"tau={tau} outside legal range (0, 1]")
    if isinstance(weights, SpatioTemporalGraph):
        weights = weights.weights
    if isinstance(weights, Tensor):
        mask = (weights.data >= tau).astype(np.float64)
        return SpatioTemporalGraph(weights * mask)
    w = np.asarray(weights, dtype=np.float64)
    return SpatioTemporalGraph(np.where(w >= tau, w, 0.0))


def graclus(graph) -> ClusterAssignment:
    """Greedy heaviest-edge matching.

    Nodes are visited by descending maximum incident weight (ties: lower index
    first). Each unmatched node pairs with its heaviest unmatched neighbour
    (ties: lower index); nodes without one stay singletons. Clique ids follow
    the smallest member index.
    """
    w = graph.w if isinstance(graph, SpatioTemporalGraph) else np.asarray(graph, dtype=np.float64)
    n = w.shape[0]
    w = np.where(np.eye(n, dtype=bool), 0.0, w)
    strongest = w.max(axis=1) if n else np.zeros(0)
    order = sorted(range(n), key=lambda v: (-strongest[v], v))
    mate = np.full(n, -1)
    for v in order:
        if mate[v] >= 0:
            continue
        mate[v] = v
        best, best_w = -1, 0.0
        for u in np.nonzero(w[v] > 0)[0]:
            if mate[u] < 0 and w[v, u] > best_w:
                best, best_w = u, w[v, u]
        if best >= 0:
            mate[v], mate[best] = best, v
    cluster_of = np.full(n, -1)
    c = 0
    for v in range(n):
        if cluster_of[v] < 0:
            cluster_of[v] = cluster_of[mate[v]] = c
            c += 1
    return ClusterAssignment(cluster_of, c)


def coarsen(graph, assignment: ClusterAssignment, abstract_features, params: AttentionParams,
            tau: float) -> SpatioTemporalGraph:
    """Abstract-graph topology recomputed by attention over the abstract features."""
    feats = nm.as_tensor(abstract_features)
    if feats.shape[0] != assignment.num_clusters:
        raise nm.ShapeError(
            f"{feats.shape[0]} abstract feature rows for {assignment.num_clusters} cliques")
    if len(assignment.cluster_of) != graph.num_nodes:
        raise nm.ShapeError("assignment does not match the predecessor graph")
    return truncate(attention_weights(feats, params), tau)


def sum_coarsen(graph, assignment: ClusterAssignment) -> SpatioTemporalGraph:
    """Abstract topology from summed inter-clique weights, clipped to [0, 1]."""
    P = assignment.pooling_matrix()
    w = P @ graph.w @ P.T
    np.fill_diagonal(w, 0.0)
    return SpatioTemporalGraph(np.clip(w, 0.0, 1.0))


def connected_components(graph) -> list[list[int]]:
    n = graph.num_nodes
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j, _ in graph.edges():
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for v in range(n):
        groups.setdefault(find(v), []).append(v)
    return sorted(groups.values())


def degree(graph, node: int, weighted: bool = False) -> float:
    n = graph.num_nodes
    if not 0 <= node < n:
        raise IndexError(f"node {node} out of range for graph with {n} nodes")
    row = graph.w[node]
    return float(row.sum()) if weighted else int(np.count_nonzero(row > 0))


def degrees(graph, weighted: bool = False) -> np.ndarray:
    w = graph.w
    return w.sum(axis=1) if weighted else (w > 0).sum(axis=1).astype(np.float64)


def write_edge_list(graph, path) -> None:
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["u", "v", "w"])
        for i, j, wt in graph.edges():
            out.writerow([i, j, repr(wt)])


def read_edge_list(path, num_nodes: int | None = None) -> SpatioTemporalGraph:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = [(int(r["u"]), int(r["v"]), float(r["w"])) for r in rows]
    n = num_nodes if num_nodes is not None else 1 + max((max(u, v) for u, v, _ in edges), default=-1)
    w = np.zeros((n, n))
    for u, v, wt in edges:
        w[u, v] = w[v, u] = wt
    return SpatioTemporalGraph(w)
