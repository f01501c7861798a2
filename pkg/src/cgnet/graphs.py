"""Graph containers, synthetic motif benchmarks, TU-format IO, neighborhoods.

Node ordering in the synthetic datasets is deterministic: base-graph nodes
first, then each motif as a contiguous block in attachment order. All
randomness flows from the DatasetSpec seed.
"""

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

SYNTHETIC_IDS = ("ba-shapes", "ba-community", "ba-grid", "tree-cycles", "tree-grid")

# node class ids shared by the BA house datasets
BASE, TOP, MIDDLE, BOTTOM = 0, 1, 2, 3


@dataclass
class LabeledGraph:
    """A node- or graph-classification dataset as one edge list.

    For graph tasks `graph_indicator` maps nodes to contiguous graph ids and
    `labels` holds one class per graph; for node tasks it is None and `labels`
    is per node.
    """

    edges: np.ndarray                 # (E, 2) undirected, each pair stored once
    features: np.ndarray              # (n, d)
    labels: np.ndarray
    graph_indicator: np.ndarray | None = None
    node_labels: np.ndarray | None = None   # integer colors (TU datasets)
    raw_graph_labels: np.ndarray | None = None   # pre-remap labels, kept for export
    train_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    name: str = ""

    @property
    def node_count(self):
        return self.features.shape[0]

    @property
    def graph_count(self):
        if self.graph_indicator is None:
            return 1
        return int(self.graph_indicator.max()) + 1

    @property
    def is_graph_task(self):
        return self.graph_indicator is not None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = self.node_count
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError("edge endpoint outside [0, n)")
            if (self.edges[:, 0] == self.edges[:, 1]).any():
                raise ValueError("self-loops are not stored")

    def adjacency_lists(self):
        adj = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def graph_members(self):
        """List of node-index arrays, one per graph id."""
        if self.graph_indicator is None:
            return [np.arange(self.node_count)]
        order = np.argsort(self.graph_indicator, kind="stable")
        bounds = np.searchsorted(self.graph_indicator[order], np.arange(self.graph_count + 1))
        return [order[bounds[j]:bounds[j + 1]] for j in range(self.graph_count)]


@dataclass
class MotifAnnotation:
    role: np.ndarray                        # ground-truth structural class per node
    motif_id: np.ndarray                    # -1 for base-graph nodes
    attached_by_random_edge: np.ndarray     # endpoint of an inserted random edge


@dataclass
class DatasetSpec:
    dataset_id: str
    base_size: int
    motif_count: int
    random_edge_count: int
    seed: int = 0

    def __post_init__(self):
        if self.dataset_id in SYNTHETIC_IDS and self.motif_count <= 0:
            raise ValueError("synthetic specs need motif_count > 0")

    @classmethod
    def default(cls, dataset_id, seed=0):
        if dataset_id not in SYNTHETIC_IDS:
            raise ValueError(f"unknown synthetic dataset id: {dataset_id!r}")
        base = 255 if dataset_id.startswith("tree") else 300
        return cls(dataset_id, base, 80, 70, seed)


def _ba_edges(n, m, rng):
    """Preferential attachment; the first m nodes seed the degree pool."""
    edges = []
    repeated = []
    targets = list(range(m))
    for v in range(m, n):
        for t in targets:
            edges.append((t, v))
        repeated.extend(targets)
        repeated.extend([v] * m)
        chosen = set()
        while len(chosen) < m:
            chosen.add(int(repeated[rng.integers(len(repeated))]))
        targets = sorted(chosen)
    return edges


def _tree_edges(depth):
    n = 2 ** depth - 1
    return [((i - 1) // 2, i) for i in range(1, n)], n


def _house_motif():
    # 0,1 middle (0 is the attachment point), 2,3 bottom, 4 top
    edges = [(0, 1), (0, 2), (1, 3), (2, 3), (0, 4), (1, 4)]
    roles = [MIDDLE, MIDDLE, BOTTOM, BOTTOM, TOP]
    return edges, roles


def _cycle_motif(k=6):
    return [(i, (i + 1) % k) for i in range(k)], [1] * k


def _grid_motif(side=3):
    edges = []
    for r in range(side):
        for c in range(side):
            v = r * side + c
            if c + 1 < side:
                edges.append((v, v + 1))
            if r + 1 < side:
                edges.append((v, v + side))
    return edges, [1] * (side * side)


def _attach_motifs(base_edges, base_n, base_roles, motif_fn, count, rng):
    edges = list(base_edges)
    roles = list(base_roles)
    motif_id = [-1] * base_n
    n = base_n
    for k in range(count):
        m_edges, m_roles = motif_fn()
        anchor = int(rng.integers(base_n))
        edges.extend((n + a, n + b) for a, b in m_edges)
        edges.append((anchor, n))  # canonical motif node 0 joins the base graph
        roles.extend(m_roles)
        motif_id.extend([k] * len(m_roles))
        n += len(m_roles)
    return edges, roles, motif_id, n


def _add_random_edges(edges, n, count, rng):
    existing = {frozenset(e) for e in edges}
    flagged = np.zeros(n, dtype=bool)
    added = 0
    while added < count:
        a, b = int(rng.integers(n)), int(rng.integers(n))
        if a == b or frozenset((a, b)) in existing:
            continue
        existing.add(frozenset((a, b)))
        edges.append((a, b))
        flagged[a] = flagged[b] = True
        added += 1
    return flagged


def _single_shapes_community(spec, rng):
    base_edges = _ba_edges(spec.base_size, 5, rng)
    edges, roles, motif_id, n = _attach_motifs(
        base_edges, spec.base_size, [BASE] * spec.base_size, _house_motif,
        spec.motif_count, rng)
    flagged = _add_random_edges(edges, n, spec.random_edge_count, rng)
    return edges, roles, motif_id, flagged, n


def gen_synthetic(spec: DatasetSpec):
    """Build one of the five synthetic benchmarks. Deterministic under seed."""
    rng = np.random.default_rng(spec.seed)
    did = spec.dataset_id

    if did == "ba-shapes":
        edges, roles, motif_id, flagged, n = _single_shapes_community(spec, rng)
        features = np.ones((n, 1))
    elif did == "ba-community":
        e1, r1, m1, f1, n1 = _single_shapes_community(spec, rng)
        e2, r2, m2, f2, n2 = _single_shapes_community(spec, rng)
        edges = e1 + [(a + n1, b + n1) for a, b in e2]
        roles = r1 + [r + 4 for r in r2]
        motif_id = m1 + [(m + spec.motif_count if m >= 0 else -1) for m in m2]
        n = n1 + n2
        flagged = np.concatenate([f1, f2])
        cross = _add_random_edges(edges, n, spec.random_edge_count, rng)
        flagged |= cross
        means = np.where(np.arange(n)[:, None] < n1, -0.5, 0.5)
        features = rng.normal(loc=means, scale=1.0, size=(n, 10))
    elif did == "ba-grid":
        base_edges = _ba_edges(spec.base_size, 5, rng)
        edges, roles, motif_id, n = _attach_motifs(
            base_edges, spec.base_size, [0] * spec.base_size, _grid_motif,
            spec.motif_count, rng)
        flagged = _add_random_edges(edges, n, spec.random_edge_count, rng)
        features = np.ones((n, 1))
    elif did in ("tree-cycles", "tree-grid"):
        base_edges, base_n = _tree_edges(8)
        motif_fn = _cycle_motif if did == "tree-cycles" else _grid_motif
        edges, roles, motif_id, n = _attach_motifs(
            base_edges, base_n, [0] * base_n, motif_fn, spec.motif_count, rng)
        flagged = _add_random_edges(edges, n, spec.random_edge_count, rng)
        features = np.ones((n, 1))
    else:
        raise ValueError(f"unknown synthetic dataset id: {did!r}")

    graph = LabeledGraph(edges=np.array(edges), features=features,
                         labels=np.array(roles, dtype=np.int64), name=did)
    ann = MotifAnnotation(role=np.array(roles, dtype=np.int64),
                          motif_id=np.array(motif_id, dtype=np.int64),
                          attached_by_random_edge=flagged)
    return graph, ann


def _read_int_lines(path, allow_pairs=False):
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")] if allow_pairs else [line]
            try:
                values = [int(p) for p in parts]
            except ValueError:
                raise ValueError(f"{os.path.basename(path)}:{ln}: non-integer token {line!r}")
            if allow_pairs and len(values) != 2:
                raise ValueError(f"{os.path.basename(path)}:{ln}: expected 'i, j' pair")
            rows.append((ln, values))
    return rows


def _tu_prefix(path):
    for entry in sorted(os.listdir(path)):
        if entry.endswith("_A.txt"):
            return entry[:-len("_A.txt")]
    raise FileNotFoundError(f"{path}: no *_A.txt adjacency file found")


def load_tu_dataset(path):
    """Parse a TU-format directory into a single LabeledGraph collection.

    Node labels become one-hot features when present, a constant-1 feature
    otherwise. Graph labels are remapped to 0..K-1 in sorted order.
    """
    prefix = _tu_prefix(path)

    def fname(part):
        return os.path.join(path, f"{prefix}_{part}.txt")

    for part in ("A", "graph_indicator", "graph_labels"):
        if not os.path.exists(fname(part)):
            raise FileNotFoundError(f"missing mandatory file {prefix}_{part}.txt")

    indicator_rows = _read_int_lines(fname("graph_indicator"))
    indicator = np.array([v[0] for _, v in indicator_rows], dtype=np.int64)
    n = indicator.shape[0]
    gid_sorted = np.unique(indicator)
    gid_map = {g: i for i, g in enumerate(gid_sorted)}
    graph_indicator = np.array([gid_map[g] for g in indicator], dtype=np.int64)

    label_rows = _read_int_lines(fname("graph_labels"))
    raw_labels = [v[0] for _, v in label_rows]
    if len(raw_labels) != len(gid_sorted):
        raise ValueError(f"{prefix}_graph_labels.txt: {len(raw_labels)} labels for "
                         f"{len(gid_sorted)} graphs")
    label_map = {v: i for i, v in enumerate(sorted(set(raw_labels)))}
    graph_labels = np.array([label_map[v] for v in raw_labels], dtype=np.int64)

    seen = set()
    edges = []
    for ln, (a, b) in _read_int_lines(fname("A"), allow_pairs=True):
        if not (1 <= a <= n and 1 <= b <= n):
            raise ValueError(f"{prefix}_A.txt:{ln}: node id outside 1..{n}")
        a, b = a - 1, b - 1
        if graph_indicator[a] != graph_indicator[b]:
            raise ValueError(f"{prefix}_A.txt:{ln}: edge crosses graphs "
                             f"{graph_indicator[a] + 1} and {graph_indicator[b] + 1}")
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        edges.append(key)
    edges.sort()

    node_labels = None
    if os.path.exists(fname("node_labels")):
        nl_rows = _read_int_lines(fname("node_labels"))
        if len(nl_rows) != n:
            raise ValueError(f"{prefix}_node_labels.txt: {len(nl_rows)} labels for {n} nodes")
        node_labels = np.array([v[0] for _, v in nl_rows], dtype=np.int64)
        classes = np.unique(node_labels)
        features = (node_labels[:, None] == classes[None, :]).astype(np.float64)
    else:
        features = np.ones((n, 1))

    return LabeledGraph(edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
                        features=features, labels=graph_labels,
                        graph_indicator=graph_indicator, node_labels=node_labels,
                        raw_graph_labels=np.array(raw_labels, dtype=np.int64),
                        name=prefix)


def export_tu_dataset(graph: LabeledGraph, path, name, roles=None):
    """Write the canonical TU layout (each undirected edge in both directions)."""
    os.makedirs(path, exist_ok=True)

    def write(part, lines):
        with open(os.path.join(path, f"{name}_{part}.txt"), "w") as fh:
            fh.write("".join(f"{line}\n" for line in lines))

    directed = sorted([(a + 1, b + 1) for a, b in graph.edges]
                      + [(b + 1, a + 1) for a, b in graph.edges])
    write("A", [f"{a}, {b}" for a, b in directed])
    indicator = (graph.graph_indicator if graph.graph_indicator is not None
                 else np.zeros(graph.node_count, dtype=np.int64))
    write("graph_indicator", [str(g + 1) for g in indicator])
    if graph.is_graph_task:
        out_labels = (graph.raw_graph_labels if graph.raw_graph_labels is not None
                      else graph.labels)
        write("graph_labels", [str(l) for l in out_labels])
    else:
        write("graph_labels", ["0"])
    if graph.node_labels is not None:
        write("node_labels", [str(l) for l in graph.node_labels])
    if roles is not None:
        write("roles", [str(r) for r in roles])


def subsample_graphs(graph: LabeledGraph, count: int, seed: int) -> LabeledGraph:
    """Seeded subset of a graph collection with nodes and ids renumbered.

    Kept deterministic so capped real-world runs stay reproducible; returns
    the input unchanged when it already fits the cap.
    """
    if not graph.is_graph_task:
        raise ValueError("subsampling is defined for graph tasks")
    if count < 1:
        raise ValueError("count must be >= 1")
    if count >= graph.graph_count:
        return graph
    keep = np.sort(np.random.default_rng(seed).choice(
        graph.graph_count, size=count, replace=False))
    members = graph.graph_members()
    node_ids = np.concatenate([members[g] for g in keep])
    remap = -np.ones(graph.node_count, dtype=np.int64)
    remap[node_ids] = np.arange(node_ids.size)
    kept = np.zeros(graph.graph_count, dtype=bool)
    kept[keep] = True
    edge_mask = kept[graph.graph_indicator[graph.edges[:, 0]]]
    gmap = -np.ones(graph.graph_count, dtype=np.int64)
    gmap[keep] = np.arange(keep.size)
    take = lambda arr: None if arr is None else arr[node_ids]
    return LabeledGraph(edges=remap[graph.edges[edge_mask]],
                        features=graph.features[node_ids],
                        labels=graph.labels[keep],
                        graph_indicator=gmap[graph.graph_indicator[node_ids]],
                        node_labels=take(graph.node_labels),
                        raw_graph_labels=(None if graph.raw_graph_labels is None
                                          else graph.raw_graph_labels[keep]),
                        name=f"{graph.name}-sub{count}")


@dataclass
class Subgraph:
    """Induced p-hop neighborhood with its center marked for visualization."""

    nodes: np.ndarray            # original node ids, sorted
    edges: np.ndarray            # local indices into `nodes`
    center: int                  # local index of the center node
    node_labels: np.ndarray | None = None

    @property
    def node_count(self):
        return self.nodes.shape[0]


def khop_subgraph(graph: LabeledGraph, node: int, p: int, adj=None) -> Subgraph:
    """Induced subgraph over all nodes within p hops of `node`."""
    if not (0 <= node < graph.node_count):
        raise ValueError(f"node {node} outside [0, {graph.node_count})")
    if p < 0:
        raise ValueError("hop count must be >= 0")
    if adj is None:
        adj = graph.adjacency_lists()
    seen = {node}
    frontier = [node]
    for _ in range(p):
        nxt = []
        for v in frontier:
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    nodes = np.array(sorted(seen), dtype=np.int64)
    local = {v: i for i, v in enumerate(nodes)}
    edges = np.array(sorted((local[a], local[b]) if local[a] < local[b] else (local[b], local[a])
                            for a, b in graph.edges
                            if int(a) in local and int(b) in local),
                     dtype=np.int64).reshape(-1, 2)
    labels = graph.node_labels[nodes] if graph.node_labels is not None else None
    return Subgraph(nodes=nodes, edges=edges, center=local[node], node_labels=labels)


def make_split(graph: LabeledGraph, fraction: float, seed: int):
    """Stratified train/test masks over instances (nodes or graphs)."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    labels = np.asarray(graph.labels)
    count = labels.shape[0]
    rng = np.random.default_rng(seed)
    train = np.zeros(count, dtype=bool)

    classes, class_counts = np.unique(labels, return_counts=True)
    if class_counts.min() < 2:
        warnings.warn("a class has fewer than 2 members; falling back to an "
                      "unstratified split")
        perm = rng.permutation(count)
        cut = int(round(fraction * count))
        train[perm[:cut]] = True
    else:
        for c in classes:
            idx = np.flatnonzero(labels == c)
            perm = rng.permutation(idx.size)
            cut = int(round(fraction * idx.size))
            cut = max(1, min(idx.size - 1, cut))
            train[idx[perm[:cut]]] = True
    return train, ~train
