import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from higflow import analysis as A
from higflow import graph as G
from higflow.hierarchy import HiGFlowModel, ModelConfig


def graph_of(edges, n):
    w = np.zeros((n, n))
    for u, v, *wt in edges:
        w[u, v] = w[v, u] = wt[0] if wt else 1.0
    return G.SpatioTemporalGraph(w)


# ------------------------------------------------------------ Dirichlet energy

def test_energy_regular_identical():
    x = np.tile([[0.3, -1.0]], (6, 1))
    assert A.dirichlet_energy(A.cycle_graph(6), x) == 0.0


def test_energy_single_edge():
    assert A.dirichlet_energy(graph_of([(0, 1)], 2), [1.0, 1.0]) == 0.0


def test_energy_path_hand_value():
    assert abs(A.dirichlet_energy(graph_of([(0, 1), (1, 2)], 3), [0.0, 1.0, 2.0]) - 2.0) < 1e-15


def test_energy_loop_oracle():
    rng = np.random.default_rng(0)
    g = A.random_graph(rng, 12, 6)
    x = rng.normal(size=(g.num_nodes, 3))
    deg = [sum(1 for j in range(g.num_nodes) if g.w[i, j] > 0) for i in range(g.num_nodes)]
    total = 0.0
    for i in range(g.num_nodes):
        for j in range(i + 1, g.num_nodes):
            if g.w[i, j] > 0:
                total += math.dist(x[i] / deg[i], x[j] / deg[j])
    assert abs(A.dirichlet_energy(g, x) - total) < 1e-12


def test_clique_energy_isolated():
    assert A.clique_energy(graph_of([(0, 1)], 3), np.arange(3.0), 2) == 0.0


def test_clique_energy_star_center():
    star = graph_of([(0, 1), (0, 2), (0, 3)], 4)
    x = np.random.default_rng(1).normal(size=(4, 2))
    assert A.clique_energy(star, x, 0) == A.dirichlet_energy(star, x)


def test_clique_energy_explicit_subgraph():
    rng = np.random.default_rng(2)
    g = A.random_graph(rng, 15, 8)
    x = rng.normal(size=(g.num_nodes, 2))
    for v in range(g.num_nodes):
        keep = sorted({v} | {j for j in range(g.num_nodes) if g.w[v, j] > 0})
        sub = np.array([[g.w[a, b] for b in keep] for a in keep])
        ref = A.dirichlet_energy(G.SpatioTemporalGraph(sub), x[keep])
        assert abs(A.clique_energy(g, x, v) - ref) < 1e-12


# ------------------------------------------------------------ contraction checks

def test_theorem1_singletons_equality():
    rng = np.random.default_rng(3)
    g = A.random_graph(rng, 10, 5)
    x = rng.normal(size=(g.num_nodes, 2))
    g = G.SpatioTemporalGraph(np.minimum(g.w, 1.0))
    r = A.theorem1_check(g, x, G.ClusterAssignment.singletons(g.num_nodes))
    assert r["holds"]
    assert np.allclose(r["per_clique_lhs"], r["per_clique_rhs"])
    assert r["energy_fine"] == r["energy_coarse"]


def test_theorem1_single_clique():
    g = graph_of([(0, 1)], 2)
    r = A.theorem1_check(g, np.array([[1.0], [-3.0]]), G.ClusterAssignment(np.array([0, 0]), 1))
    assert r["energy_coarse"] == 0.0 and r["global"]


def test_theorem1_reports_counterexample():
    # the path a-b-c-d with features (1, 1, -1, -1) coarsens to one edge whose energy grows
    g = graph_of([(0, 1), (1, 2), (2, 3)], 4)
    r = A.theorem1_check(g, np.array([1.0, 1.0, -1.0, -1.0]), G.graclus(g))
    assert r["energy_fine"] == pytest.approx(2.0)
    assert r["energy_coarse"] == pytest.approx(4.0)
    assert not r["global"]


def test_theorem2_linear_reduction():
    rng = np.random.default_rng(4)
    g = A.random_graph(rng, 12, 6)
    x = rng.normal(size=(g.num_nodes, 3))
    a = G.graclus(g)
    gap = A.theorem2_gap(g, x, a, 1, A.TransitionSpec("truncated_power_series", (1.0,)))
    scale = np.abs(a.pooling_matrix() @ x).max()
    r = A.theorem1_check(g, x / scale, a)
    deficit = np.abs(np.array(r["per_clique_lhs"]) - np.array(r["per_clique_rhs"])).sum()
    assert abs(gap - deficit) < 1e-12


@pytest.mark.parametrize("B", [1, 2, 4, 8])
def test_theorem2_zero_features(B):
    g = graph_of([(0, 1), (1, 2)], 3)
    assert A.theorem2_gap(g, np.zeros((3, 2)), G.graclus(g), B) == 0.0


def test_exponential_coefficients():
    spec = A.TransitionSpec.exponential(4)
    assert spec.coefficients == (1.0, 0.5, 1 / 6, 1 / 24)
    assert abs(A.TransitionSpec.exponential(12)(np.array([0.5]))[0] - (math.exp(0.5) - 1)) < 1e-12


def test_gap_trend_logic():
    t = A.gap_trend({1: [4.0, 4.0], 2: [3.0], 4: [2.5], 8: [1.0]})
    assert t["non_increasing"] and t["ratio_ok"] and t["holds"]
    assert not A.gap_trend({1: [1.0], 2: [2.0]})["holds"]


# ------------------------------------------------------------ WL colourings

def test_wl_cycle_single_color():
    assert A.wl_refine(A.cycle_graph(7)).num_colors == 1


def test_wl_path_two_colors():
    c = A.wl_refine(graph_of([(0, 1), (1, 2)], 3), rounds=1)
    assert c.num_colors == 2 and c.colors[0] == c.colors[2] != c.colors[1]


def test_wl_fixed_point():
    g = A.random_graph(np.random.default_rng(5), 20, 10)
    stable = A.wl_refine(g)
    again = A.wl_refine(g, init_colors=stable.colors, rounds=1)
    assert again.num_colors == stable.num_colors


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_wl_counts_grow_then_stabilise(seed):
    g = A.random_graph(np.random.default_rng(seed), 24)
    counts = [A.wl_refine(g, rounds=r).num_colors for r in range(g.num_nodes + 1)]
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert A.wl_refine(g).num_colors == counts[-1]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_energy_nonnegative_and_zero_on_matched_rows(seed):
    rng = np.random.default_rng(seed)
    g = A.random_graph(rng, 20)
    x = rng.normal(size=(g.num_nodes, 3))
    assert A.dirichlet_energy(g, x) >= 0
    d = np.maximum(G.degrees(g), 1.0)[:, None]
    assert A.dirichlet_energy(g, d * rng.normal(size=(1, 3))) < 1e-12


def test_memory_depth_one_is_wl():
    g = A.random_graph(np.random.default_rng(6), 20, 10)
    graphs, maps = A.build_hierarchy(g, 3)
    assert np.array_equal(A.memory_wl(graphs, maps, 1)[0].colors, A.wl_refine(g).colors)


def test_memory_singleton_hierarchy_constant():
    g = A.random_graph(np.random.default_rng(7), 16, 8)
    g = G.SpatioTemporalGraph(np.minimum(g.w, 1.0))
    s = G.ClusterAssignment.singletons(g.num_nodes)
    cols = A.memory_wl([g, g, g], [s, s], 3)
    counts = [c.num_colors for c in cols]
    assert counts == [counts[0]] * 3 and A.theorem3_check(cols)


def test_theorem3_trivial_depth():
    g = graph_of([(0, 1)], 3)
    assert A.theorem3_check(A.memory_wl([g], [], 1))


def test_memory_rejects_inconsistent_maps():
    g = graph_of([(0, 1)], 2)
    with pytest.raises(ValueError):
        A.memory_wl([g, g], [G.ClusterAssignment(np.array([0, 0]), 1)], 2)


def _nested_wl(adj, rounds):
    n = len(adj)
    col = [() for _ in range(n)]
    for _ in range(rounds):
        col = [(col[v], tuple(sorted(col[u] for u in adj[v]))) for v in range(n)]
    return col


def test_c6_vs_two_triangles_oracle():
    # union: nodes 0-5 form C6, nodes 6-8 and 9-11 are triangles
    union = A.disjoint_union(A.cycle_graph(6), A.cycle_graph(3), A.cycle_graph(3))
    adj1 = [[(v - 1) % 6, (v + 1) % 6] for v in range(6)]
    adj1 += [[6 + (v - 1) % 3, 6 + (v + 1) % 3] for v in range(3)]
    adj1 += [[9 + (v - 1) % 3, 9 + (v + 1) % 3] for v in range(3)]
    # greedy matching, ties to lower index: {0,1} {2,3} {4,5} {6,7} {8} {9,10} {11}
    cluster = [0, 0, 1, 1, 2, 2, 3, 3, 4, 5, 5, 6]
    assert G.graclus(union).cluster_of.tolist() == cluster
    # coarse level: C6 -> triangle on {0,1,2}; each triangle -> one edge
    adj2 = [[1, 2], [0, 2], [0, 1], [4], [3], [6], [5]]
    c1 = _nested_wl(adj1, 12)
    c2 = _nested_wl(adj2, 7)
    mem = [(c1[v], c2[cluster[v]]) for v in range(12)]
    oracle = sorted(mem[:6]) != sorted(mem[6:])
    # plain 1-WL cannot tell them apart
    assert sorted(c1[:6]) == sorted(c1[6:])
    assert A.memory_wl_separates(A.cycle_graph(6),
                                 A.disjoint_union(A.cycle_graph(3), A.cycle_graph(3)), 2) == oracle
    assert not A.memory_wl_separates(A.cycle_graph(6),
                                     A.disjoint_union(A.cycle_graph(3), A.cycle_graph(3)), 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_memory_chain_monotone(seed, depth):
    g = A.random_graph(np.random.default_rng(seed), 32)
    graphs, maps = A.build_hierarchy(g, depth)
    assert A.theorem3_check(A.memory_wl(graphs, maps, depth))


# ------------------------------------------------------------ metrics

def test_metrics_zero():
    assert (A.mae([1.0, 2.0], [1.0, 2.0]), A.rmse([1.0, 2.0], [1.0, 2.0])) == (0.0, 0.0)


def test_metrics_closed_form():
    assert A.mae([3.0, -4.0], [0.0, 0.0]) == 3.5
    assert A.rmse([3.0, -4.0], [0.0, 0.0]) == math.sqrt(12.5)


def test_metrics_loop_oracle():
    rng = np.random.default_rng(8)
    p, t = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    ae = se = 0.0
    for a, b in zip(p.ravel(), t.ravel()):
        ae += abs(a - b)
        se += (a - b) ** 2
    assert abs(A.mae(p, t) - ae / 30) < 1e-12
    assert abs(A.rmse(p, t) - math.sqrt(se / 30)) < 1e-12


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        A.mae(np.zeros(3), np.zeros(4))


# ------------------------------------------------------------ smoothness probe

def test_probe_depth_one_single_level():
    m = HiGFlowModel(ModelConfig(n_vars=2, hidden=4, heads=2, depth=1))
    rep = A.smoothness_probe(m, [np.ones((2, 3))])
    assert len(rep["h"].level_energy) == 1 and len(rep["u"].level_energy) == 1


def test_probe_constant_input_zero_energy():
    m = HiGFlowModel(ModelConfig(n_vars=3, hidden=4, heads=2, depth=1))
    m.levels[0].attention.query.data[:] = 0.0
    m.levels[0].attention.key.data[:] = 0.0
    rep = A.smoothness_probe(m, [np.full((3, 3), 0.7)])
    assert rep["h"].level_energy == [0.0]
