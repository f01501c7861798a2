"""Concept encoding: differentiable fuzzification, Booleanization, clustering
by exact bit-pattern, graph pooling, and concept representatives."""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphs import LabeledGraph, Subgraph, khop_subgraph

EPSILON = 1e-6
TAU = 0.5
RARE_CLUSTER_SIZE = 3   # clusters at or below this size get the rare flag


def fuzzify(h, eps=EPSILON):
    """Row softmax followed by division by (row max + eps). Differentiable."""
    return ad.rowmax_norm(ad.softmax_rows(h), eps)


def booleanize(q, tau=TAU):
    """Threshold fuzzy memberships at tau (closed comparison)."""
    q = q.data if isinstance(q, ad.Tensor) else np.asarray(q)
    return (q >= tau).astype(np.uint8)


def pool_graph(q, graph_indicator, num_graphs):
    """Per-graph mean of node encodings; the LEN_graph input. Differentiable."""
    return ad.segment_mean(q, graph_indicator, num_graphs)


@dataclass
class ClusterTable:
    """Nodes grouped by exact Boolean pattern equality."""

    patterns: np.ndarray          # (k, m) bit patterns, lexicographically sorted
    assignments: np.ndarray       # (n,) cluster index per sample
    centroids: np.ndarray         # (k, m) mean q over members

    @property
    def cluster_count(self):
        return self.patterns.shape[0]

    @property
    def sizes(self):
        return np.bincount(self.assignments, minlength=self.cluster_count)

    def members(self, c):
        return np.flatnonzero(self.assignments == c)

    def is_rare(self, c):
        return self.sizes[c] <= RARE_CLUSTER_SIZE

    def pattern_key(self, c):
        return "".join(str(b) for b in self.patterns[c])


def assign_clusters(r, q) -> ClusterTable:
    patterns, assignments = np.unique(np.asarray(r, dtype=np.uint8), axis=0,
                                      return_inverse=True)
    assignments = assignments.reshape(-1)
    q = np.asarray(q, dtype=np.float64)
    k = patterns.shape[0]
    centroids = np.zeros((k, q.shape[1]))
    np.add.at(centroids, assignments, q)
    centroids /= np.bincount(assignments, minlength=k)[:, None]
    return ClusterTable(patterns=patterns, assignments=assignments, centroids=centroids)


EXHAUSTED = None  # padding marker for clusters with fewer than 5 members


@dataclass
class ConceptRepresentatives:
    cluster: int
    pattern_key: str
    size: int
    nodes: list            # 5 entries: sample index or EXHAUSTED
    subgraphs: list        # 5 entries: Subgraph or EXHAUSTED


def representative_order(members, vectors, centroid):
    """Members ranked by Euclidean distance to the centroid, ties by index."""
    dist = np.linalg.norm(vectors - centroid[None, :], axis=1)
    order = np.lexsort((members, dist))
    return members[order]


def concept_representatives(table: ClusterTable, q, graph: LabeledGraph, p,
                            count=5, adj=None):
    """Top-`count` p-hop subgraphs per cluster, padded with exhausted markers."""
    q = np.asarray(q, dtype=np.float64)
    if adj is None:
        adj = graph.adjacency_lists()
    out = []
    for c in range(table.cluster_count):
        members = table.members(c)
        ranked = representative_order(members, q[members], table.centroids[c])[:count]
        nodes = list(ranked) + [EXHAUSTED] * (count - len(ranked))
        subs = [khop_subgraph(graph, int(v), p, adj=adj) if v is not EXHAUSTED else EXHAUSTED
                for v in nodes]
        out.append(ConceptRepresentatives(cluster=c, pattern_key=table.pattern_key(c),
                                          size=int(table.sizes[c]), nodes=nodes,
                                          subgraphs=subs))
    return out


# distinct styling for concept plots: center vs p-hop neighborhood vs exhausted
_CENTER_STYLE = 'style=filled, fillcolor="#4878cf"'
_NEIGHBOR_STYLE = 'style=filled, fillcolor="#f2a963"'
_EXHAUSTED_STYLE = 'style=filled, fillcolor="#cccccc", label="cluster exhausted"'
_LABEL_PALETTE = ("#4878cf", "#f2a963", "#6acc65", "#d65f5f", "#b47cc7",
                  "#c4ad66", "#77bedb", "#8c613c", "#e377c2", "#7f7f7f")


def concept_dot(rep: ConceptRepresentatives, color_by_label=False):
    """Render one concept's representatives as a DOT graph."""
    lines = [f"graph concept_{rep.cluster} {{",
             f'  label="concept {rep.cluster} pattern={rep.pattern_key} size={rep.size}";',
             "  node [shape=circle];"]
    for slot, sub in enumerate(rep.subgraphs):
        lines.append(f"  subgraph cluster_rep{slot} {{")
        lines.append(f'    label="representative {slot + 1}";')
        if sub is EXHAUSTED:
            lines.append(f"    x{slot} [{_EXHAUSTED_STYLE}];")
        else:
            for i, v in enumerate(sub.nodes):
                if color_by_label and sub.node_labels is not None:
                    color = _LABEL_PALETTE[int(sub.node_labels[i]) % len(_LABEL_PALETTE)]
                    style = f'style=filled, fillcolor="{color}"'
                    if i == sub.center:
                        style += ", penwidth=3"
                else:
                    style = _CENTER_STYLE if i == sub.center else _NEIGHBOR_STYLE
                lines.append(f'    n{slot}_{i} [label="{v}", {style}];')
            for a, b in sub.edges:
                lines.append(f"    n{slot}_{a} -- n{slot}_{b};")
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_concepts(reps, out_dir, color_by_label=False):
    """One DOT file per cluster plus a structured-text manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for rep in reps:
        with open(os.path.join(out_dir, f"concept_{rep.cluster:03d}.dot"), "w") as fh:
            fh.write(concept_dot(rep, color_by_label=color_by_label))
        manifest.append({"cluster": rep.cluster, "pattern": rep.pattern_key,
                         "size": rep.size, "rare": rep.size <= RARE_CLUSTER_SIZE})
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest
