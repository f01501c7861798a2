"""Test-time concept interventions: oracle encodings per ground-truth role
(synthetic) or per label-consistent cluster (real-world), applied to chosen
nodes with only the readout recomputed."""

import csv
from dataclasses import dataclass

import numpy as np

from .concepts import assign_clusters, booleanize
from .metrics import summarize_runs


@dataclass(frozen=True)
class OracleEntry:
    r_star: np.ndarray
    q_star: np.ndarray


@dataclass
class OracleTable:
    targets: dict              # role id or task label -> OracleEntry
    keyed_by: str              # "role" | "label"
    policy: str                # recorded in reports so results are auditable

    def __contains__(self, key):
        return key in self.targets


def build_synthetic_oracle(q, r, roles, train_mask) -> OracleTable:
    """Per role: r* = majority training pattern, q* = mean q over the training
    nodes that carry exactly that pattern (keeps booleanize(q*) = r*)."""
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.uint8)
    roles = np.asarray(roles)
    train_mask = np.asarray(train_mask, dtype=bool)
    targets = {}
    for role in np.unique(roles):
        members = np.flatnonzero(train_mask & (roles == role))
        if members.size == 0:
            continue               # role unseen in training: not intervenable
        patterns, inverse = np.unique(r[members], axis=0, return_inverse=True)
        majority = patterns[np.bincount(inverse.reshape(-1)).argmax()]
        carriers = members[(r[members] == majority).all(axis=1)]
        entry = OracleEntry(r_star=majority, q_star=q[carriers].mean(axis=0))
        assert (booleanize(entry.q_star) == entry.r_star).all()
        targets[int(role)] = entry
    return OracleTable(targets=targets, keyed_by="role",
                       policy="majority training pattern per ground-truth role")


def build_label_oracle(q, r, node_labels, train_mask) -> OracleTable:
    """Per task label: the bit-pattern cluster whose training members are
    purest in that label; q* is that cluster's training centroid."""
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.uint8)
    node_labels = np.asarray(node_labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    idx = np.flatnonzero(train_mask)
    table = assign_clusters(r[idx], q[idx])
    targets = {}
    for label in np.unique(node_labels[idx]):
        best, best_purity = None, -1.0
        for c in range(table.cluster_count):
            members = idx[table.assignments == c]
            purity = float((node_labels[members] == label).mean())
            if purity > best_purity:
                best, best_purity = c, purity
        entry = OracleEntry(r_star=table.patterns[best],
                            q_star=table.centroids[best])
        assert (booleanize(entry.q_star) == entry.r_star).all()
        targets[int(label)] = entry
    return OracleTable(targets=targets, keyed_by="label",
                       policy="highest label-purity training cluster per class")


def eligible_nodes(r, keys, oracle: OracleTable, node_mask):
    """Nodes in the mask whose pattern disagrees with their oracle target."""
    r = np.asarray(r, dtype=np.uint8)
    keys = np.asarray(keys)
    out = [int(i) for i in np.flatnonzero(np.asarray(node_mask, dtype=bool))
           if int(keys[i]) in oracle.targets
           and not np.array_equal(r[i], oracle.targets[int(keys[i])].r_star)]
    return np.array(out, dtype=np.int64)


def apply_interventions(q, r, keys, oracle: OracleTable, node_mask, budget, seed):
    """Set q := q* on up to `budget` eligible nodes in seeded random order.

    Returns the modified copy of q and the intervened node indices.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    q = np.asarray(q, dtype=np.float64)
    pool = eligible_nodes(r, keys, oracle, node_mask)
    order = np.random.default_rng(seed).permutation(pool.size)
    chosen = pool[order[:min(budget, pool.size)]]
    q_mod = q.copy()
    for i in chosen:
        q_mod[i] = oracle.targets[int(keys[i])].q_star
    return q_mod, chosen


def _segment_mean(q, graph_indicator, num_graphs):
    out = np.zeros((num_graphs, q.shape[1]))
    np.add.at(out, graph_indicator, q)
    return out / np.bincount(graph_indicator, minlength=num_graphs)[:, None]


def readout_predictions(model, q_mod, graph_indicator=None, num_graphs=None):
    """Re-run only the readout; pooled encodings recomputed for graph tasks."""
    enc = (q_mod if graph_indicator is None
           else _segment_mean(q_mod, graph_indicator, num_graphs))
    return model.readout_logits(enc).argmax(axis=1)


@dataclass
class InterventionCurve:
    budgets: np.ndarray
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    per_seed: np.ndarray     # (seeds, budgets)
    seeds: tuple


def accuracy_curve(model, dataset, q, r, keys, oracle, order_seed, budgets):
    """Test accuracy after 0..budget interventions for one trained model."""
    test_instances = np.asarray(dataset.test_mask, dtype=bool)
    node_mask = (test_instances if not dataset.is_graph_task
                 else test_instances[dataset.graph_indicator])
    labels = np.asarray(dataset.labels)
    accs = []
    for b in budgets:
        q_mod, _ = apply_interventions(q, r, keys, oracle, node_mask, int(b), order_seed)
        pred = readout_predictions(
            model, q_mod,
            dataset.graph_indicator if dataset.is_graph_task else None,
            dataset.graph_count if dataset.is_graph_task else None)
        accs.append(float((pred[test_instances] == labels[test_instances]).mean()))
    return np.array(accs)


def aggregate_curves(budgets, per_seed_rows, seeds) -> InterventionCurve:
    per_seed = np.asarray(per_seed_rows, dtype=np.float64)
    mean, lo, hi = [], [], []
    for col in per_seed.T:
        s = summarize_runs(col)
        mean.append(s.mean)
        lo.append(s.ci_low)
        hi.append(s.ci_high)
    return InterventionCurve(budgets=np.asarray(budgets, dtype=np.int64),
                             mean=np.array(mean), ci_low=np.array(lo),
                             ci_high=np.array(hi), per_seed=per_seed,
                             seeds=tuple(seeds))


def curve_to_csv(curve: InterventionCurve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "mean_accuracy", "ci_low", "ci_high"])
        for b, m, lo, hi in zip(curve.budgets, curve.mean, curve.ci_low, curve.ci_high):
            writer.writerow([int(b), f"{m:.6f}", f"{lo:.6f}", f"{hi:.6f}"])


def read_curve_csv(path) -> InterventionCurve:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["budget", "mean_accuracy", "ci_low", "ci_high"]:
        raise ValueError(f"unexpected curve header in {path}: {rows[0]}")
    data = np.array([[float(x) for x in row] for row in rows[1:]])
    return InterventionCurve(budgets=data[:, 0].astype(np.int64), mean=data[:, 1],
                             ci_low=data[:, 2], ci_high=data[:, 3],
                             per_seed=np.zeros((0, data.shape[0])), seeds=())
