"""Exact edit distance against brute force and the metric axioms."""

import numpy as np
import pytest

from cgnet.ged import exact_ged, subgraph_ged
from cgnet.graphs import Subgraph
from oracles import brute_force_ged


def _random_graph(rng, max_n=5):
    n = int(rng.integers(0, max_n + 1))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    edges = [p for p in pairs if rng.random() < 0.5]
    return n, edges


def test_identical_graphs_cost_zero():
    edges = [(0, 1), (1, 2), (2, 3), (0, 3)]
    assert exact_ged(4, edges, 4, edges) == 0


def test_path_vs_cycle_costs_one_edge():
    assert exact_ged(3, [(0, 1), (1, 2)], 3, [(0, 1), (1, 2), (0, 2)]) == 1


def test_empty_vs_single_edge_costs_three():
    assert exact_ged(0, [], 2, [(0, 1)]) == 3
    assert exact_ged(2, [(0, 1)], 0, []) == 3


def test_label_substitution_costs_one():
    assert exact_ged(1, [], 1, [], labels1=[3], labels2=[7]) == 1
    assert exact_ged(1, [], 1, [], labels1=[3], labels2=[3]) == 0
    with pytest.raises(ValueError, match="both graphs or neither"):
        exact_ged(1, [], 1, [], labels1=[3])


def test_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(101)
    for _ in range(30):
        n1, e1 = _random_graph(rng)
        n2, e2 = _random_graph(rng)
        assert exact_ged(n1, e1, n2, e2) == brute_force_ged(n1, e1, n2, e2)


def test_matches_brute_force_with_labels():
    rng = np.random.default_rng(55)
    for _ in range(15):
        n1, e1 = _random_graph(rng, max_n=4)
        n2, e2 = _random_graph(rng, max_n=4)
        l1 = rng.integers(0, 2, size=n1).tolist()
        l2 = rng.integers(0, 2, size=n2).tolist()
        assert (exact_ged(n1, e1, n2, e2, l1, l2)
                == brute_force_ged(n1, e1, n2, e2, l1, l2))


def test_metric_axioms_on_random_triples():
    rng = np.random.default_rng(77)
    for _ in range(20):
        graphs = [_random_graph(rng) for _ in range(3)]
        (na, ea), (nb, eb), (nc, ec) = graphs
        ab = exact_ged(na, ea, nb, eb)
        ba = exact_ged(nb, eb, na, ea)
        ac = exact_ged(na, ea, nc, ec)
        cb = exact_ged(nc, ec, nb, eb)
        assert ab == ba                      # symmetry
        assert ab >= 0
        assert exact_ged(na, ea, na, ea) == 0
        assert ab <= ac + cb                 # triangle inequality


def test_grid_sized_neighborhoods_stay_fast():
    # 3x3 grid vs the same grid with a pendant node: one node + one edge
    grid = [(0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8),
            (0, 3), (3, 6), (1, 4), (4, 7), (2, 5), (5, 8)]
    assert exact_ged(9, grid, 10, grid + [(8, 9)]) == 2


def test_subgraph_wrapper_and_label_requirement():
    s1 = Subgraph(nodes=np.array([4, 7]), edges=np.array([[0, 1]]), center=0,
                  node_labels=np.array([1, 2]))
    s2 = Subgraph(nodes=np.array([2, 9]), edges=np.array([[0, 1]]), center=0,
                  node_labels=np.array([1, 1]))
    assert subgraph_ged(s1, s2) == 0                      # structure only
    assert subgraph_ged(s1, s2, use_labels=True) == 1
    s3 = Subgraph(nodes=np.array([0]), edges=np.zeros((0, 2), dtype=np.int64),
                  center=0, node_labels=None)
    with pytest.raises(ValueError, match="no node labels"):
        subgraph_ged(s1, s3, use_labels=True)


def test_rejects_self_loops():
    with pytest.raises(ValueError, match="self-loop"):
        exact_ged(2, [(1, 1)], 1, [])
