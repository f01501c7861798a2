"""Exact graph edit distance by A* over partial node mappings.

Unit costs for node and edge insertion/deletion. Node substitution is free
unless node labels are supplied, in which case a label mismatch costs 1.
Intended for the small p-hop neighborhoods the purity metric compares; the
per-dataset node caps keep the search space workable.
"""

import heapq
import itertools

import numpy as np


def _adjacency_sets(n, edges):
    adj = [set() for _ in range(n)]
    for a, b in edges:
        a, b = int(a), int(b)
        if a == b:
            raise ValueError("self-loops are not supported")
        adj[a].add(b)
        adj[b].add(a)
    return adj


def exact_ged(n1, edges1, n2, edges2, labels1=None, labels2=None):
    """Minimum number of unit edits turning graph 1 into graph 2."""
    if (labels1 is None) != (labels2 is None):
        raise ValueError("labels must be given for both graphs or neither")
    adj1 = _adjacency_sets(n1, edges1)
    adj2 = _adjacency_sets(n2, edges2)
    e2_total = sum(len(s) for s in adj2) // 2

    # map high-degree nodes first; their edge constraints prune the strongest
    order = sorted(range(n1), key=lambda v: -len(adj1[v]))

    # edges of graph 1 fully decided after step i (both endpoints placed)
    pos = {v: i for i, v in enumerate(order)}
    decided_after = np.zeros(n1 + 1, dtype=np.int64)
    for v in range(n1):
        for w in adj1[v]:
            if v < w:
                decided_after[max(pos[v], pos[w]) + 1] += 1
    decided_after = np.cumsum(decided_after)
    e1_total = decided_after[-1]

    def h(i, used_count, accounted2):
        rest1 = n1 - i
        rest2 = n2 - used_count
        pend1 = e1_total - decided_after[i]
        pend2 = e2_total - accounted2
        return abs(rest1 - rest2) + abs(pend1 - pend2)

    # state: (f, tiebreak, g, i, image tuple, used bitmask, accounted2)
    counter = itertools.count()
    start = (h(0, 0, 0), next(counter), 0, 0, (), 0, 0)
    heap = [start]
    while heap:
        _, _, g, i, image, used, accounted2 = heapq.heappop(heap)
        if i == n1:
            return g + (n2 - bin(used).count("1")) + (e2_total - accounted2)
        u = order[i]
        for w in [*range(n2), None]:
            if w is not None and used >> w & 1:
                continue
            step = 0
            acc = accounted2
            if w is None:
                step += 1                             # node deletion
                for j in range(i):
                    if order[j] in adj1[u]:
                        step += 1                     # its decided edges go too
            else:
                if labels1 is not None and labels1[u] != labels2[w]:
                    step += 1
                for j in range(i):
                    v, img = order[j], image[j]
                    e1 = v in adj1[u]
                    e2 = img is not None and img in adj2[w]
                    if e1 != e2:
                        step += 1                     # edge deletion or insertion
                    if e2:
                        acc += 1                      # this graph-2 edge is settled
            g2 = g + step
            used2 = used if w is None else used | 1 << w
            f = g2 + h(i + 1, bin(used2).count("1"), acc)
            heapq.heappush(heap, (f, next(counter), g2, i + 1, image + (w,), used2, acc))
    raise RuntimeError("search exhausted without reaching a goal")   # unreachable


def subgraph_ged(sub1, sub2, use_labels=False):
    """Edit distance between two extracted neighborhoods."""
    labels1 = labels2 = None
    if use_labels:
        if sub1.node_labels is None or sub2.node_labels is None:
            raise ValueError("subgraphs carry no node labels")
        labels1 = [int(x) for x in sub1.node_labels]
        labels2 = [int(x) for x in sub2.node_labels]
    return exact_ged(sub1.node_count, sub1.edges, sub2.node_count, sub2.edges,
                     labels1, labels2)
