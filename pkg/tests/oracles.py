"""Independent reference implementations used as test oracles.

Nothing here imports from cgnet's numeric internals beyond Tensor data access;
each oracle recomputes the expected answer from first principles so the tests
cross-check two separate routes.
"""

import itertools

import numpy as np


def finite_difference(f, arrays, step=1e-5):
    """Central finite differences of scalar f() w.r.t. each array, in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = a[ix]
            a[ix] = old + step
            fp = f()
            a[ix] = old - step
            fm = f()
            a[ix] = old
            g[ix] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def bfs_ball(n, edges, center, radius):
    """Plain breadth-first search ball; oracle for khop_subgraph."""
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {center}
    frontier = {center}
    for _ in range(radius):
        frontier = {w for v in frontier for w in adj[v]} - seen
        seen |= frontier
    return seen


def brute_force_ged(n1, edges1, n2, edges2, labels1=None, labels2=None):
    """Exhaustive minimum edit path for graphs with <= 5 nodes.

    Unit costs for node/edge insertion and deletion. Node substitution is free
    unless labels are given, in which case a label mismatch costs 1.
    """
    e1 = {frozenset(e) for e in edges1}
    e2 = {frozenset(e) for e in edges2}
    best = np.inf
    nodes2 = list(range(n2))
    # assign every node of g1 either a distinct g2 node or deletion (None)
    for image in itertools.product([None] + nodes2, repeat=n1):
        used = [v for v in image if v is not None]
        if len(used) != len(set(used)):
            continue
        cost = sum(1 for v in image if v is None)          # node deletions
        cost += n2 - len(used)                             # node insertions
        if labels1 is not None:
            cost += sum(1 for i, v in enumerate(image)
                        if v is not None and labels1[i] != labels2[v])
        mapped_e2 = set()
        for e in e1:
            a, b = tuple(e)
            fa, fb = image[a], image[b]
            if fa is None or fb is None or frozenset((fa, fb)) not in e2:
                cost += 1                                  # edge deletion
            else:
                mapped_e2.add(frozenset((fa, fb)))
        cost += len(e2 - mapped_e2)                        # edge insertions
        best = min(best, cost)
    return int(best)


def truth_table_eval(minterms, bits):
    """DNF evaluation by direct enumeration; oracle for eval_formula.

    minterms: list of lists of (index, positive) literals. Empty formula is
    false everywhere.
    """
    for term in minterms:
        if all((bits[i] == 1) == positive for i, positive in term):
            return True
    return False


def confusion_matrix_accuracy(pred, true, num_classes):
    """Accuracy recomputed through an explicit confusion-matrix tally."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(pred, true):
        cm[int(t), int(p)] += 1
    return np.trace(cm) / cm.sum()


# the 5-node house: square 0-2-3-1 with a roof node over the 0-1 beam
HOUSE_EDGES = ((0, 1), (0, 2), (1, 3), (2, 3), (0, 4), (1, 4))


def contains_house(n, edges):
    """Exhaustive check that the house occurs as a (not necessarily induced)
    subgraph: some injective 5-node map carries every house edge."""
    have = {(min(a, b), max(a, b)) for a, b in edges}
    nodes = range(n)
    for combo in itertools.combinations(nodes, 5):
        for perm in itertools.permutations(combo):
            ok = True
            for a, b in HOUSE_EDGES:
                u, v = perm[a], perm[b]
                if (min(u, v), max(u, v)) not in have:
                    ok = False
                    break
            if ok:
                return True
    return False
