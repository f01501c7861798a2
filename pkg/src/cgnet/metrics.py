"""Evaluation metrics: completeness via decision trees, concept purity via
exact edit distance, formula scoring, the post-hoc k-means baseline, and
cross-seed confidence intervals."""

import math
from dataclasses import dataclass

import numpy as np
import scipy.special
import scipy.stats

from . import ged
from .concepts import EXHAUSTED

MAX_TREE_DEPTH = None    # grow to purity unless a depth cap is requested


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "klass")

    def __init__(self, klass, feature=None, threshold=None, left=None, right=None):
        self.klass = klass
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right


def _gini(counts, n):
    return 1.0 - sum((c / n) ** 2 for c in counts if c)


class DecisionTree:
    """CART with Gini impurity and axis-aligned splits (left: x <= threshold).

    Ties between splits break toward the lowest feature index, then the lowest
    threshold. A zero-gain split is still taken while the node is impure,
    which is what lets XOR-style targets reach purity at depth 2.
    """

    def __init__(self, max_depth=MAX_TREE_DEPTH):
        self.max_depth = max_depth
        self.root = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
            raise ValueError("features must be (n, f) with one label per row")
        self._classes = int(y.max()) + 1
        self.root = self._grow(X, y, 0)
        return self

    def _majority(self, y):
        return int(np.bincount(y, minlength=self._classes).argmax())

    def _grow(self, X, y, depth):
        counts = np.bincount(y, minlength=self._classes)
        node = _Node(klass=self._majority(y))
        if (self.max_depth is not None and depth >= self.max_depth) \
                or (counts > 0).sum() <= 1:
            return node
        n = y.shape[0]
        best = None    # (weighted impurity, feature, threshold, mask)
        for f in range(X.shape[1]):
            vals = np.unique(X[:, f])
            for lo, hi in zip(vals[:-1], vals[1:]):
                thr = (lo + hi) / 2.0
                mask = X[:, f] <= thr
                nl = int(mask.sum())
                cl = np.bincount(y[mask], minlength=self._classes)
                cr = counts - cl
                w = (nl * _gini(cl, nl) + (n - nl) * _gini(cr, n - nl)) / n
                if best is None or w < best[0]:
                    best = (w, f, thr, mask)
        if best is None:
            return node           # all features constant
        _, node.feature, node.threshold, mask = best
        node.left = self._grow(X[mask], y[mask], depth + 1)
        node.right = self._grow(X[~mask], y[~mask], depth + 1)
        return node

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.int64)
        for i, row in enumerate(X):
            node = self.root
            while node.feature is not None:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.klass
        return out

    @property
    def depth(self):
        def walk(node):
            if node is None or node.feature is None:
                return 0
            return 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)


def completeness_score(encodings, labels, train_mask, test_mask,
                       max_depth=MAX_TREE_DEPTH):
    """Test accuracy of a tree predicting labels from concept encodings."""
    encodings = np.asarray(encodings)
    labels = np.asarray(labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    test_mask = np.asarray(test_mask, dtype=bool)
    tree = DecisionTree(max_depth=max_depth).fit(encodings[train_mask], labels[train_mask])
    pred = tree.predict(encodings[test_mask])
    return float((pred == labels[test_mask]).mean())


def one_hot(ids, k):
    out = np.zeros((len(ids), k))
    out[np.arange(len(ids)), np.asarray(ids)] = 1.0
    return out


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    objective_trace: list


def kmeans_concepts(h, k, seed, max_iter=300) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding; the post-hoc concept baseline."""
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, h.shape[1]))
    centroids[0] = h[rng.integers(n)]
    d2 = ((h - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)     # all remaining points coincide
        centroids[j] = h[idx]
        d2 = np.minimum(d2, ((h - centroids[j]) ** 2).sum(axis=1))

    trace = []
    assignments = None
    for _ in range(max_iter):
        dist = ((h[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        trace.append(float(dist[np.arange(n), new_assign].sum()))
        for c in range(k):
            members = new_assign == c
            if members.any():
                centroids[c] = h[members].mean(axis=0)
            else:
                gap = dist[np.arange(n), new_assign]
                far = int(gap.argmax())
                if gap[far] > 0:      # fewer distinct points than k otherwise
                    centroids[c] = h[far]
                    new_assign[far] = c
        if assignments is not None and np.array_equal(assignments, new_assign):
            break
        assignments = new_assign
    dist = ((h[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    inertia = float(dist[np.arange(n), assignments].sum())
    return KMeansResult(assignments=assignments, centroids=centroids,
                        inertia=inertia, objective_trace=trace)


@dataclass
class PurityReport:
    per_concept: dict      # cluster id -> {"d_second": int, "d_third": int, "mean": float}
    skipped: dict          # cluster id -> reason
    min_mean: float        # headline: minimum per-concept mean over eligible concepts
    min_single: float      # stricter reading: minimum single pairwise distance


def concept_purity(reps, node_cap, use_labels=False) -> PurityReport:
    """Edit distance between each concept's top representative and its two
    runners-up, considering in-cap neighborhoods only.

    Over-cap subgraphs are dropped first (they are the noisy base-graph
    neighborhoods the edit distance cannot afford); a concept is scored from
    the three closest in-cap representatives and skipped when fewer remain.
    """
    per_concept, skipped = {}, {}
    for rep in reps:
        if rep.size < 3:
            skipped[rep.cluster] = "fewer than 3 members"
            continue
        subs = [s for s in rep.subgraphs if s is not EXHAUSTED]
        fit = [s for s in subs if s.node_count <= node_cap]
        if len(fit) < 3:
            biggest = max(s.node_count for s in subs)
            skipped[rep.cluster] = (f"fewer than 3 in-cap representatives "
                                    f"(largest {biggest} > {node_cap})")
            continue
        d2 = ged.subgraph_ged(fit[0], fit[1], use_labels=use_labels)
        d3 = ged.subgraph_ged(fit[0], fit[2], use_labels=use_labels)
        per_concept[rep.cluster] = {"d_second": d2, "d_third": d3,
                                    "mean": (d2 + d3) / 2.0}
    if per_concept:
        min_mean = min(v["mean"] for v in per_concept.values())
        min_single = min(min(v["d_second"], v["d_third"]) for v in per_concept.values())
    else:
        min_mean = min_single = math.nan
    return PurityReport(per_concept=per_concept, skipped=skipped,
                        min_mean=min_mean, min_single=min_single)


def formula_predictions(formulas, r_rows, majority_class):
    """Class per row: unique firing formula wins; among several, the one whose
    strongest firing minterm has the most support; none firing -> majority."""
    r_rows = np.asarray(r_rows)
    fired = {f.class_id: f.fires(r_rows) for f in formulas}
    out = np.full(r_rows.shape[0], majority_class, dtype=np.int64)
    for i in range(r_rows.shape[0]):
        hits = [c for c, mask in fired.items() if mask[i]]
        if len(hits) == 1:
            out[i] = hits[0]
        elif hits:
            def strength(c):
                f = next(f for f in formulas if f.class_id == c)
                return max(t.support for t in f.minterms if t.fires(r_rows[i])[0])
            out[i] = min(hits, key=lambda c: (-strength(c), c))
    return out


def formula_accuracy(formulas, r_rows, labels, mask=None, majority_class=None):
    labels = np.asarray(labels)
    mask = np.ones(labels.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if majority_class is None:
        majority_class = int(np.bincount(labels[mask]).argmax())
    pred = formula_predictions(formulas, np.asarray(r_rows)[mask], majority_class)
    return float((pred == labels[mask]).mean())


def formula_complexity(formulas):
    """Arithmetic mean minterm count over classes; empty formulas count 0."""
    if not formulas:
        return 0.0
    return float(np.mean([f.complexity for f in formulas]))


@dataclass
class SeedSummary:
    values: tuple
    mean: float
    ci_low: float
    ci_high: float
    transformed: bool
    lam: float | None
    shapiro_p: float | None

    def as_dict(self):
        return {"values": list(self.values), "mean": self.mean,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "transformed": self.transformed, "lambda": self.lam,
                "shapiro_p": self.shapiro_p}


BOXCOX_GRID = np.round(np.arange(-5.0, 5.0 + 1e-9, 0.01), 2)


def boxcox_lambda(values):
    """Grid-search the Box-Cox exponent maximizing the log-likelihood."""
    values = np.asarray(values, dtype=np.float64)
    ll = [scipy.stats.boxcox_llf(lam, values) for lam in BOXCOX_GRID]
    return float(BOXCOX_GRID[int(np.argmax(ll))])


def _t_interval(values):
    n = values.shape[0]
    center = float(values.mean())
    half = scipy.stats.t.ppf(0.975, n - 1) * values.std(ddof=1) / math.sqrt(n)
    return center, center - half, center + half


def summarize_runs(values, alpha=0.05) -> SeedSummary:
    """Mean and 95% CI across seeds; Box-Cox first when normality is rejected."""
    raw = tuple(float(v) for v in values)
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size < 2 or np.unique(arr).size < 2:
        m = float(arr.mean())
        return SeedSummary(raw, m, m, m, False, None, None)

    if arr.size < 3:
        # the normality test needs >= 3 points; stay untransformed
        mean, lo, hi = _t_interval(arr)
        return SeedSummary(raw, mean, lo, hi, False, None, None)

    p = float(scipy.stats.shapiro(arr).pvalue)
    if p >= alpha:
        mean, lo, hi = _t_interval(arr)
        return SeedSummary(raw, mean, lo, hi, False, None, p)

    shifted = np.where(arr <= 0, 1e-6, arr)    # transform needs positive inputs
    lam = boxcox_lambda(shifted)
    mean_t, lo_t, hi_t = _t_interval(scipy.special.boxcox(shifted, lam))
    mean, lo, hi = (float(scipy.special.inv_boxcox(v, lam)) for v in (mean_t, lo_t, hi_t))
    # back-transform can leave the Box-Cox domain at extreme lambdas
    if not math.isfinite(lo):
        lo = mean
    if not math.isfinite(hi):
        hi = mean
    return SeedSummary(raw, mean, min(lo, mean), max(hi, mean), True, lam, p)
