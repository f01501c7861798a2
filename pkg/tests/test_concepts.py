"""Concept encoder: fuzzification, thresholding, clustering, representatives."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgnet import autodiff as ad
from cgnet import concepts
from cgnet.graphs import LabeledGraph


def test_fuzzify_worked_example():
    # hand-computed two-concept rows
    h = ad.Tensor(np.array([[-1.2, 2.3], [2.2, 1.8]]))
    q = concepts.fuzzify(h)
    expected = np.array([[0.0302, 1.0], [1.0, 0.6703]])
    assert np.allclose(q.data, expected, atol=5e-5)
    r = concepts.booleanize(q)
    assert r.tolist() == [[0, 1], [1, 1]]


def test_fuzzify_row_max_is_one():
    rng = np.random.default_rng(3)
    q = concepts.fuzzify(ad.Tensor(rng.normal(size=(200, 6)))).data
    assert np.all(q > 0) and np.all(q <= 1.0)
    # epsilon only nudges the max below 1, never past it
    assert np.all(q.max(axis=1) > 1.0 - 1e-5)


def test_fuzzify_gradients_flow():
    from oracles import finite_difference

    rng = np.random.default_rng(8)
    h = ad.Tensor(rng.normal(size=(4, 3)))
    w = rng.normal(size=(4, 3))

    with ad.Tape() as tape:
        tape.watch(h)
        loss = ad.sum_all(ad.mul(concepts.fuzzify(h), ad.Tensor(w)))
    got = tape.backward(loss).wrt(h)

    def f():
        q = concepts.fuzzify(ad.Tensor(h.data)).data
        return float((q * w).sum())

    want = finite_difference(f, [h.data])[0]
    assert np.allclose(got, want, rtol=1e-4, atol=1e-7)


def test_booleanize_boundary_is_closed():
    q = np.array([[0.5, 0.49999, 0.50001, 0.0, 1.0]])
    assert concepts.booleanize(q).tolist() == [[1, 0, 1, 0, 1]]
    # Tensor input accepted too
    assert concepts.booleanize(ad.Tensor(q)).tolist() == [[1, 0, 1, 0, 1]]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fuzzify_keeps_argmax_and_sets_its_bit(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(scale=3.0, size=(40, 5))
    q = concepts.fuzzify(ad.Tensor(h)).data
    assert np.array_equal(q.argmax(axis=1), h.argmax(axis=1))
    r = concepts.booleanize(q)
    assert np.all(r[np.arange(40), q.argmax(axis=1)] == 1)


def test_pool_graph_means():
    q = ad.Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    pooled = concepts.pool_graph(q, np.array([0, 0, 1]), 2)
    assert np.allclose(pooled.data, [[0.5, 0.5], [1.0, 1.0]])


def test_assign_clusters_small_example():
    r = np.array([[0, 1], [1, 1], [0, 1], [1, 0]])
    q = np.array([[0.1, 0.9], [0.8, 0.7], [0.3, 0.8], [0.9, 0.2]])
    table = concepts.assign_clusters(r, q)
    assert table.patterns.tolist() == [[0, 1], [1, 0], [1, 1]]   # lex sorted
    assert table.assignments.tolist() == [0, 2, 0, 1]
    assert table.sizes.tolist() == [2, 1, 1]
    assert np.allclose(table.centroids[0], [0.2, 0.85])
    assert table.pattern_key(2) == "11"
    assert table.is_rare(1) and table.is_rare(2)


def test_cluster_count_bounded_by_pattern_space():
    rng = np.random.default_rng(11)
    r = rng.integers(0, 2, size=(60, 3))
    table = concepts.assign_clusters(r, rng.random((60, 3)))
    assert table.cluster_count <= 2**3
    # idempotent: identical rows collapse to one cluster
    one = concepts.assign_clusters(np.ones((9, 4)), rng.random((9, 4)))
    assert one.cluster_count == 1 and one.sizes[0] == 9


def test_rare_flag_threshold():
    r = np.array([[0, 0]] * 3 + [[0, 1]] * 4)
    table = concepts.assign_clusters(r, np.random.default_rng(0).random((7, 2)))
    assert table.is_rare(0)          # 3 members
    assert not table.is_rare(1)      # 4 members


def test_representative_order_centroid_then_index():
    members = np.array([5, 2, 9])
    vectors = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    got = concepts.representative_order(members, vectors, np.zeros(2))
    assert got.tolist() == [2, 5, 9]


def _path_graph_table():
    # 0-1-2-3-4 path; nodes 0..3 share a pattern, node 4 is alone
    graph = LabeledGraph(edges=np.array([[0, 1], [1, 2], [2, 3], [3, 4]]),
                         features=np.zeros((5, 2)),
                         labels=np.zeros(5, dtype=np.int64))
    r = np.array([[1, 0], [1, 0], [1, 0], [1, 0], [0, 1]])
    q = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.4], [0.75, 0.3], [0.2, 0.9]])
    return graph, concepts.assign_clusters(r, q), q


def test_concept_representatives_rank_and_padding():
    graph, table, q = _path_graph_table()
    reps = concepts.concept_representatives(table, q, graph, p=1)
    assert len(reps) == 2
    singleton = reps[0]           # pattern 01 sorts first
    assert singleton.pattern_key == "01"
    assert singleton.nodes[0] == 4
    assert singleton.nodes[1:] == [concepts.EXHAUSTED] * 4
    assert singleton.subgraphs[1] is concepts.EXHAUSTED

    quartet = reps[1]
    # centroid of cluster 10 is (0.7875, 0.25); node 1 sits closest
    assert quartet.nodes[0] == 1
    assert set(v for v in quartet.nodes if v is not None) == {0, 1, 2, 3}
    assert quartet.nodes[4] is concepts.EXHAUSTED
    sub = quartet.subgraphs[0]
    assert sorted(sub.nodes) == [0, 1, 2]      # 1-hop ball around node 1
    assert sub.nodes[sub.center] == 1


def test_concept_dot_styles():
    graph, table, q = _path_graph_table()
    reps = concepts.concept_representatives(table, q, graph, p=1)
    dot = concepts.concept_dot(reps[0])
    assert dot.startswith("graph concept_0 {")
    assert "cluster exhausted" in dot
    assert "#4878cf" in dot                    # center fill
    dot_quartet = concepts.concept_dot(reps[1])
    assert "subgraph cluster_rep4" in dot_quartet
    assert dot_quartet.count("--") >= 2        # path edges rendered


def test_concept_dot_label_palette():
    graph, table, q = _path_graph_table()
    graph.node_labels = np.array([0, 1, 2, 0, 1])
    reps = concepts.concept_representatives(table, q, graph, p=1)
    dot = concepts.concept_dot(reps[1], color_by_label=True)
    assert "penwidth=3" in dot                 # center outline under label coloring
    assert "#f2a963" in dot                    # palette entry for label 1


def test_export_concepts_manifest(tmp_path):
    graph, table, q = _path_graph_table()
    reps = concepts.concept_representatives(table, q, graph, p=1)
    manifest = concepts.export_concepts(reps, str(tmp_path))
    assert (tmp_path / "concept_000.dot").exists()
    assert (tmp_path / "concept_001.dot").exists()
    loaded = json.loads((tmp_path / "manifest.json").read_text())
    assert loaded == manifest
    assert loaded[0] == {"cluster": 0, "pattern": "01", "size": 1, "rare": True}
    assert loaded[1]["rare"] is False
