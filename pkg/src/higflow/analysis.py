"""Dirichlet-energy instrumentation, smoothing/expressivity harnesses and forecast metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import (ClusterAssignment, SpatioTemporalGraph, degrees, graclus,
                    sum_coarsen)


def _rows(features) -> np.ndarray:
    x = np.asarray(getattr(features, "data", features), dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def dirichlet_energy(graph, features, weighted: bool = False) -> float:
    """Sum over undirected edges of ``||x_u/d_u - x_v/d_v||_2``."""
    x = _rows(features)
    if x.shape[0] != graph.num_nodes:
        raise ValueError(f"{x.shape[0]} feature rows for {graph.num_nodes} nodes")
    w = graph.w
    iu, ju = np.nonzero(np.triu(w, 1) > 0)
    if len(iu) == 0:
        return 0.0
    d = degrees(graph, weighted)
    xn = x / np.where(d > 0, d, 1.0)[:, None]
    return float(np.linalg.norm(xn[iu] - xn[ju], axis=1).sum())


def neighborhood_subgraph(graph, node: int) -> tuple[SpatioTemporalGraph, np.ndarray]:
    """Subgraph induced by ``node`` and its 1-hop neighbours (closed neighbourhood)."""
    keep = np.union1d([node], graph.neighbors(node)).astype(int)
    return SpatioTemporalGraph(graph.w[np.ix_(keep, keep)]), keep


def clique_energy(graph, features, node: int, weighted: bool = False) -> float:
    sub, keep = neighborhood_subgraph(graph, node)
    return dirichlet_energy(sub, _rows(features)[keep], weighted)


@dataclass
class DirichletReport:
    level_energy: list[float]
    clique_energy: list[list[float]] = field(default_factory=list)
    epoch: int = -1
    batch: int = -1


@dataclass
class TransitionSpec:
    kind: str = "truncated_power_series"  # or "statistical_sum"
    coefficients: tuple[float, ...] = (1.0,)

    @property
    def B(self) -> int:
        return len(self.coefficients)

    @classmethod
    def exponential(cls, B: int) -> "TransitionSpec":
        """Taylor coefficients 1/b! of exp(x) - 1, b = 1..B."""
        if B < 1:
            raise ValueError(f"B must be >= 1, got {B}")
        return cls("truncated_power_series", tuple(1.0 / math.factorial(b) for b in range(1, B + 1)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "statistical_sum":
            return x
        out = np.zeros_like(x)
        for b, w in enumerate(self.coefficients, start=1):
            out = out + w * x ** b
        return out


def _contraction_terms(graph, features, assignment: ClusterAssignment, abstract_features=None,
                       weighted=False):
    x = _rows(features)
    abstract = sum_coarsen(graph, assignment)
    xa = assignment.pooling_matrix() @ x if abstract_features is None else abstract_features
    fine = np.array([clique_energy(graph, x, u, weighted) for u in range(graph.num_nodes)])
    lhs = np.array([clique_energy(abstract, xa, j, weighted) for j in range(assignment.num_clusters)])
    rhs = np.array([fine[assignment.members(j)].sum() for j in range(assignment.num_clusters)])
    return abstract, xa, lhs, rhs


def theorem1_check(graph, features, assignment: ClusterAssignment, slack: float = 1e-9,
                   weighted: bool = False) -> dict:
    """Energy contraction of the sum-aggregation transition, per clique and globally."""
    abstract, xa, lhs, rhs = _contraction_terms(graph, features, assignment, weighted=weighted)
    e_fine = dirichlet_energy(graph, features, weighted)
    e_coarse = dirichlet_energy(abstract, xa, weighted)
    per = [bool(a <= b + slack) for a, b in zip(lhs, rhs)]
    return {
        "per_clique": per,
        "per_clique_lhs": lhs.tolist(),
        "per_clique_rhs": rhs.tolist(),
        "global": bool(e_coarse <= e_fine + slack),
        "energy_fine": e_fine,
        "energy_coarse": e_coarse,
        "holds": bool(all(per) and e_coarse <= e_fine + slack),
    }


def theorem2_gap(graph, features, assignment: ClusterAssignment, B: int,
                 spec: TransitionSpec | None = None, weighted: bool = False) -> float:
    """Sum over cliques of ``|E(abstract neighbourhood) - sum of member neighbourhood energies|``.

    Abstract features are ``p_B(sum of member features)``. Features are first
    divided by the largest absolute aggregated entry so the series input lies in
    [-1, 1].
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    spec = spec or TransitionSpec.exponential(B)
    x = _rows(features)
    xa = assignment.pooling_matrix() @ x
    scale = np.abs(xa).max() if xa.size else 0.0
    if scale == 0.0:
        return 0.0
    x, xa = x / scale, xa / scale
    _, _, lhs, rhs = _contraction_terms(graph, x, assignment, spec(xa), weighted)
    return float(np.abs(lhs - rhs).sum())


# ---------------------------------------------------------------- Weisfeiler-Lehman

@dataclass
class WLColorMap:
    colors: np.ndarray
    num_colors: int
    depth_tag: int = 1


class _Registry:
    """Injective map from canonical tuples to fresh consecutive integers."""

    def __init__(self):
        self.table: dict = {}

    def __call__(self, key) -> int:
        if key not in self.table:
            self.table[key] = len(self.table)
        return self.table[key]


def _canonical(keys: list) -> np.ndarray:
    reg = _Registry()
    for k in sorted(set(keys)):
        reg(k)
    return np.array([reg(k) for k in keys], dtype=int)


def wl_refine(graph, init_colors=None, rounds: int | None = None) -> WLColorMap:
    """1-WL colour refinement to stability (or for at most ``rounds`` rounds)."""
    n = graph.num_nodes
    colors = _canonical(list(np.zeros(n, dtype=int) if init_colors is None else init_colors))
    nbrs = [graph.neighbors(v) for v in range(n)]
    limit = n if rounds is None else rounds
    for _ in range(limit):
        keys = [(int(colors[v]), tuple(sorted(int(c) for c in colors[nbrs[v]]))) for v in range(n)]
        new = _canonical(keys)
        stable = len(set(new.tolist())) == len(set(colors.tolist()))
        colors = new
        if stable:
            break
    return WLColorMap(colors, int(len(set(colors.tolist()))) if n else 0)


def build_hierarchy(graph, depth: int) -> tuple[list[SpatioTemporalGraph], list[ClusterAssignment]]:
    """Graclus + summed-weight coarsening, repeated ``depth - 1`` times."""
    graphs, maps = [graph], []
    for _ in range(depth - 1):
        a = graclus(graphs[-1])
        maps.append(a)
        graphs.append(sum_coarsen(graphs[-1], a))
    return graphs, maps


def memory_wl(graphs, cluster_maps, depth: int | None = None) -> list[WLColorMap]:
    """Colourings of the finest graph for every hierarchy prefix depth 1..N.

    depth-1 is plain 1-WL; depth-k pairs a node's level colour with the
    depth-(k-1) memory colour of its abstract node one level down.
    """
    depth = len(graphs) if depth is None else depth
    if depth > len(graphs) or len(cluster_maps) < depth - 1:
        raise ValueError("hierarchy shorter than requested depth")
    for i in range(depth - 1):
        a = cluster_maps[i]
        if len(a.cluster_of) != graphs[i].num_nodes or a.num_clusters != graphs[i + 1].num_nodes:
            raise ValueError(f"cluster map {i} inconsistent with graphs {i} and {i + 1}")
    base = [wl_refine(g).colors for g in graphs[:depth]]

    # memo[(level, d)] = memory colours of the nodes at `level` for prefix length d
    memo: dict[tuple[int, int], np.ndarray] = {}

    def mem(level: int, d: int) -> np.ndarray:
        if (level, d) not in memo:
            if d == 1:
                memo[level, d] = base[level]
            else:
                below = mem(level + 1, d - 1)
                up = below[cluster_maps[level].cluster_of]
                memo[level, d] = _canonical(list(zip(base[level].tolist(), up.tolist())))
        return memo[level, d]

    out = []
    for d in range(1, depth + 1):
        c = mem(0, d)
        out.append(WLColorMap(c, len(set(c.tolist())), depth_tag=d))
    return out


def theorem3_check(colorings: list[WLColorMap]) -> bool:
    counts = [c.num_colors for c in colorings]
    return all(b >= a for a, b in zip(counts, counts[1:]))


def disjoint_union(*graphs) -> SpatioTemporalGraph:
    n = sum(g.num_nodes for g in graphs)
    w = np.zeros((n, n))
    off = 0
    for g in graphs:
        k = g.num_nodes
        w[off:off + k, off:off + k] = g.w
        off += k
    return SpatioTemporalGraph(w)


def memory_wl_separates(g1, g2, depth: int) -> bool:
    """Whether depth-``depth`` memory colour histograms differ between two graphs."""
    union = disjoint_union(g1, g2)
    graphs, maps = build_hierarchy(union, depth)
    c = memory_wl(graphs, maps, depth)[-1].colors
    h1 = sorted(c[:g1.num_nodes].tolist())
    h2 = sorted(c[g1.num_nodes:].tolist())
    return h1 != h2


# ---------------------------------------------------------------- metrics

def _pair(pred, target):
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    t = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def smoothness_probe(model, batch, epoch: int = -1, batch_index: int = -1) -> dict[str, DirichletReport]:
    """Per-level energies of the embedded (h) and lifted (u) features over a batch."""
    h_levels: list[list[float]] = []
    u_levels: list[list[float]] = []
    for x in batch:
        probe: dict = {}
        model.forward(getattr(x, "input", x), probe=probe)
        for store, key in ((h_levels, "h"), (u_levels, "u")):
            for i, e in enumerate(probe[key]):
                if len(store) <= i:
                    store.append([])
                store[i].append(e)
    return {
        "h": DirichletReport([float(np.mean(v)) for v in h_levels], [], epoch, batch_index),
        "u": DirichletReport([float(np.mean(v)) for v in u_levels], [], epoch, batch_index),
    }


# ---------------------------------------------------------------- randomized harnesses

GAP_TERMS = (1, 2, 4, 8)


def random_graph(rng: np.random.Generator, max_nodes: int = 32, min_nodes: int = 2) -> SpatioTemporalGraph:
    """Symmetric graph with U(0,1) weights on a random edge subset."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    density = rng.uniform(0.1, 0.6)
    w = rng.uniform(0.0, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < density)
    w = np.triu(w, 1)
    return SpatioTemporalGraph(w + w.T)


def contraction_trials(trials: int, seed: int = 0, max_nodes: int = 32, width: int = 4) -> list[dict]:
    rows = []
    for t in range(trials):
        rng = np.random.default_rng([seed, 1, t])
        g = random_graph(rng, max_nodes)
        x = rng.uniform(-1.0, 1.0, size=(g.num_nodes, width))
        r = theorem1_check(g, x, graclus(g))
        rows.append({"trial_seed": t, "per_clique": all(r["per_clique"]),
                     "per_clique_rate": float(np.mean(r["per_clique"])), "global": r["global"],
                     "energy_fine": r["energy_fine"], "energy_coarse": r["energy_coarse"]})
    return rows


def gap_trials(trials: int, seed: int = 0, max_nodes: int = 32, width: int = 4,
               terms=GAP_TERMS) -> dict[int, list[float]]:
    gaps: dict[int, list[float]] = {b: [] for b in terms}
    for t in range(trials):
        rng = np.random.default_rng([seed, 2, t])
        g = random_graph(rng, max_nodes)
        x = rng.uniform(-1.0, 1.0, size=(g.num_nodes, width))
        a = graclus(g)
        for b in terms:
            gaps[b].append(theorem2_gap(g, x, a, b))
    return gaps


def gap_trend(gaps: dict[int, list[float]], factor: float = 0.5) -> dict:
    terms = sorted(gaps)
    med = {b: float(np.median(gaps[b])) for b in terms}
    non_increasing = all(med[b2] <= med[b1] for b1, b2 in zip(terms, terms[1:]))
    ratio = med[terms[-1]] / med[terms[0]] if med[terms[0]] > 0 else 0.0
    return {"medians": med, "non_increasing": non_increasing, "ratio_last_first": ratio,
            "ratio_ok": ratio <= factor, "holds": non_increasing and ratio <= factor}


def expressivity_trials(trials: int, seed: int = 0, max_nodes: int = 32, max_depth: int = 4) -> list[dict]:
    rows = []
    for t in range(trials):
        rng = np.random.default_rng([seed, 3, t])
        g = random_graph(rng, max_nodes)
        depth = int(rng.integers(1, max_depth + 1))
        graphs, maps = build_hierarchy(g, depth)
        cols = memory_wl(graphs, maps, depth)
        rows.append({"trial_seed": t, "depth": depth, "counts": [c.num_colors for c in cols],
                     "holds": theorem3_check(cols)})
    return rows


def cycle_graph(n: int) -> SpatioTemporalGraph:
    w = np.zeros((n, n))
    for i in range(n):
        w[i, (i + 1) % n] = w[(i + 1) % n, i] = 1.0
    return SpatioTemporalGraph(w)
