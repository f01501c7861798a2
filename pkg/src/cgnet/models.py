"""Message-passing layers, the vanilla GNN and Concept GNN, and training.

Both models share an identical trunk for a given config; they differ only in
the readout (linear + log-softmax vs concept encoder + entropy readout).
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import concepts, lens
from .graphs import LabeledGraph

LAYER_KINDS = ("gcn", "gin", "sage")
LEAKY_SLOPE = 0.01


@dataclass
class ModelConfig:
    layer_kind: str = "gcn"
    conv_count: int = 4
    hidden_units: int = 10
    concept_width: int = 10
    learning_rate: float = 0.001
    epochs: int = 7000
    batch_size: int = 16      # graph tasks only
    seed: int = 42
    len_temperature: float = lens.TEMPERATURE
    len_entropy_weight: float = lens.ENTROPY_WEIGHT

    def __post_init__(self):
        if self.layer_kind not in LAYER_KINDS:
            raise ValueError(f"layer_kind must be one of {LAYER_KINDS}")
        if self.conv_count < 1:
            raise ValueError("conv_count must be >= 1")
        if self.concept_width < 2:
            raise ValueError("concept_width must be >= 2")
        if self.len_temperature <= 0:
            raise ValueError("len_temperature must be positive")


def _adjacency(n, edges):
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    e = np.asarray(edges)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def build_operator(kind, n, edges) -> ad.SparseMatrix:
    """The constant aggregation matrix each layer kind multiplies by."""
    a = _adjacency(n, edges)
    if kind == "gcn":
        a_tilde = a + sp.identity(n, format="csr")
        d = np.asarray(a_tilde.sum(axis=1)).reshape(-1)
        d_inv_sqrt = sp.diags(1.0 / np.sqrt(d))
        return ad.SparseMatrix(d_inv_sqrt @ a_tilde @ d_inv_sqrt)
    if kind == "gin":
        return ad.SparseMatrix(a)
    if kind == "sage":
        d = np.asarray(a.sum(axis=1)).reshape(-1)
        inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
        return ad.SparseMatrix(sp.diags(inv) @ a)   # empty neighborhood -> zero row
    raise ValueError(f"unknown layer kind {kind!r}")


class GCNLayer:
    """H' = A_hat H W + b with symmetric Kipf normalization.

    The bias starts at zero so a fresh layer computes A_hat H W exactly, but
    it must exist: with all-positive constant features (the synthetic
    benchmarks) a bias-free stack under a positively homogeneous activation
    stays rank one at every depth, so a linear readout degenerates to the
    majority class no matter how long it trains.
    """

    def __init__(self, rng, din, dout):
        self.w = ad.glorot_uniform(rng, din, dout)
        self.b = ad.Tensor(np.zeros((1, dout)))

    def forward(self, h, op):
        return ad.add(ad.spmm(op, ad.matmul(h, self.w)), self.b)

    def named_parameters(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class GINLayer:
    """H'_i = MLP((1 + eps) H_i + sum of neighbors), eps fixed at 0."""

    EPS_GIN = 0.0

    def __init__(self, rng, din, dout):
        self.w1 = ad.glorot_uniform(rng, din, dout)
        self.b1 = ad.Tensor(np.zeros((1, dout)))
        self.w2 = ad.glorot_uniform(rng, dout, dout)
        self.b2 = ad.Tensor(np.zeros((1, dout)))

    def forward(self, h, op):
        agg = ad.add(ad.scale(h, 1.0 + self.EPS_GIN), ad.spmm(op, h))
        z = ad.relu(ad.add(ad.matmul(agg, self.w1), self.b1))
        return ad.add(ad.matmul(z, self.w2), self.b2)

    def named_parameters(self, prefix):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


class SAGELayer:
    """H'_i = W_self H_i + W_neigh mean of neighbors (zero when none) + b."""

    def __init__(self, rng, din, dout):
        self.w_self = ad.glorot_uniform(rng, din, dout)
        self.w_neigh = ad.glorot_uniform(rng, din, dout)
        self.b = ad.Tensor(np.zeros((1, dout)))

    def forward(self, h, op):
        return ad.add(ad.add(ad.matmul(h, self.w_self),
                             ad.matmul(ad.spmm(op, h), self.w_neigh)),
                      self.b)

    def named_parameters(self, prefix):
        return [(f"{prefix}.w_self", self.w_self),
                (f"{prefix}.w_neigh", self.w_neigh),
                (f"{prefix}.b", self.b)]


_LAYER_TYPES = {"gcn": GCNLayer, "gin": GINLayer, "sage": SAGELayer}


class Trunk:
    """conv_count message-passing layers; final layer has width concept_width
    and no nonlinearity so the concept encoder consumes raw embeddings."""

    def __init__(self, rng, config: ModelConfig, in_dim):
        self.kind = config.layer_kind
        cls = _LAYER_TYPES[self.kind]
        self.layers = []
        for i in range(config.conv_count):
            din = in_dim if i == 0 else config.hidden_units
            dout = (config.concept_width if i == config.conv_count - 1
                    else config.hidden_units)
            layer = cls(rng, din, dout)
            if i == 0 and in_dim == 1:
                # a constant scalar input gives glorot pre-activations std
                # sqrt(2/(1+dout)) instead of the ~1 deeper layers see; rescale
                # the input-facing weights to unit variance or the encoder
                # softmax starts an order too flat to ever separate patterns
                gain = math.sqrt((1 + dout) / 2.0)
                for name, t in layer.named_parameters("conv0"):
                    if name.endswith((".w", ".w1", ".w_self", ".w_neigh")):
                        t.data *= gain
            self.layers.append(layer)

    def forward(self, x, op):
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, op)
            # GIN carries its own rectifier inside the MLP
            if i < last and self.kind != "gin":
                h = ad.leaky_relu(h, LEAKY_SLOPE)
        return h

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"conv{i}"))
        return out


@dataclass
class Pack:
    """One forward-pass workload: a whole dataset or an assembled graph batch."""

    features: np.ndarray
    op: ad.SparseMatrix
    labels: np.ndarray
    graph_ids: np.ndarray | None = None
    num_graphs: int | None = None
    instance_index: np.ndarray | None = None   # original instance ids


class _PackCache:
    """Per-graph pieces for graph tasks so batches assemble cheaply."""

    def __init__(self, dataset: LabeledGraph, kind):
        self.kind = kind
        self.dataset = dataset
        self.members = dataset.graph_members()
        self.local_edges = []
        if dataset.is_graph_task:
            pos = np.empty(dataset.node_count, dtype=np.int64)
            for nodes in self.members:
                pos[nodes] = np.arange(nodes.size)
            per_graph = [[] for _ in range(dataset.graph_count)]
            for a, b in dataset.edges:
                per_graph[dataset.graph_indicator[a]].append((pos[a], pos[b]))
            self.local_edges = per_graph

    def full(self):
        d = self.dataset
        if not d.is_graph_task:
            op = build_operator(self.kind, d.node_count, d.edges)
            return Pack(features=d.features, op=op, labels=d.labels,
                        instance_index=np.arange(d.node_count))
        return self.assemble(np.arange(d.graph_count))

    def assemble(self, graph_ids):
        d = self.dataset
        feats, edges, gids = [], [], []
        offset = 0
        for local_g, g in enumerate(graph_ids):
            nodes = self.members[g]
            feats.append(d.features[nodes])
            edges.extend((a + offset, b + offset) for a, b in self.local_edges[g])
            gids.extend([local_g] * nodes.size)
            offset += nodes.size
        op = build_operator(self.kind, offset, edges)
        return Pack(features=np.concatenate(feats), op=op,
                    labels=d.labels[graph_ids],
                    graph_ids=np.array(gids, dtype=np.int64),
                    num_graphs=len(graph_ids),
                    instance_index=np.asarray(graph_ids))


class VanillaGNN:
    """Trunk + linear readout; log-softmax lives inside the loss/argmax."""

    kind = "vanilla"

    def __init__(self, config: ModelConfig, in_dim, num_classes):
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.num_classes = num_classes
        self.trunk = Trunk(rng, config, in_dim)
        self.readout_w = ad.glorot_uniform(rng, config.concept_width, num_classes)

    def forward(self, pack: Pack):
        h = self.trunk.forward(ad.Tensor(pack.features), pack.op)
        if pack.graph_ids is not None:
            h_inst = ad.segment_mean(h, pack.graph_ids, pack.num_graphs)
        else:
            h_inst = h
        return h, ad.matmul(h_inst, self.readout_w)

    def loss(self, logits, labels, mask=None):
        return ad.cross_entropy_mean(logits, labels, mask)

    def named_parameters(self):
        return self.trunk.named_parameters() + [("readout.w", self.readout_w)]


class ConceptGNN:
    """Trunk + concept encoder + entropy readout."""

    kind = "cgn"

    def __init__(self, config: ModelConfig, in_dim, num_classes,
                 epsilon=concepts.EPSILON, tau=concepts.TAU):
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.num_classes = num_classes
        self.epsilon = epsilon
        self.tau = tau
        self.trunk = Trunk(rng, config, in_dim)
        self.len_params = lens.init_len_params(
            rng, num_classes, config.concept_width,
            temperature=config.len_temperature,
            entropy_weight=config.len_entropy_weight)

    def forward(self, pack: Pack):
        h = self.trunk.forward(ad.Tensor(pack.features), pack.op)
        q = concepts.fuzzify(h, self.epsilon)
        if pack.graph_ids is not None:
            enc = concepts.pool_graph(q, pack.graph_ids, pack.num_graphs)
        else:
            enc = q
        logits = lens.len_forward(enc, self.len_params)
        return h, q, enc, logits

    def loss(self, logits, labels, mask=None):
        return lens.len_loss(logits, labels, self.len_params, mask)

    def readout_logits(self, encodings):
        """Recompute only the readout from (possibly intervened) encodings."""
        return lens.len_forward(ad.Tensor(encodings), self.len_params).data

    def named_parameters(self):
        return self.trunk.named_parameters() + self.len_params.named_parameters()


def build_model(model_kind, config: ModelConfig, in_dim, num_classes):
    if model_kind == "cgn":
        return ConceptGNN(config, in_dim, num_classes)
    if model_kind == "vanilla":
        return VanillaGNN(config, in_dim, num_classes)
    raise ValueError(f"model kind must be cgn or vanilla, got {model_kind!r}")


@dataclass
class TrainResult:
    loss_trace: list
    train_accuracy: float
    test_accuracy: float


def _forward_logits(model, pack):
    out = model.forward(pack)
    return out[-1]


def train(model, dataset: LabeledGraph, config: ModelConfig = None) -> TrainResult:
    """Full-batch training for node tasks, minibatch for graph tasks."""
    config = config or model.config
    if config.epochs <= 0:
        raise ValueError("epochs must be > 0")
    if dataset.train_mask is None:
        raise ValueError("dataset needs masks; call make_split first")

    params = [p for _, p in model.named_parameters()]
    opt = ad.Adam(params, lr=config.learning_rate)
    cache = _PackCache(dataset, config.layer_kind)
    trace = []

    if not dataset.is_graph_task:
        pack = cache.full()
        for epoch in range(config.epochs):
            with ad.Tape() as tape:
                for p in params:
                    tape.watch(p)
                logits = _forward_logits(model, pack)
                loss = model.loss(logits, pack.labels, dataset.train_mask)
            value = float(loss.data)
            if not np.isfinite(value):
                raise ad.DivergenceError(f"loss diverged at epoch {epoch}", epoch=epoch)
            trace.append(value)
            opt.step(tape.backward(loss))
    else:
        rng = np.random.default_rng(config.seed)
        train_graphs = np.flatnonzero(dataset.train_mask)
        for epoch in range(config.epochs):
            order = rng.permutation(train_graphs)
            epoch_loss = 0.0
            for start in range(0, order.size, config.batch_size):
                batch = order[start:start + config.batch_size]
                pack = cache.assemble(batch)
                with ad.Tape() as tape:
                    for p in params:
                        tape.watch(p)
                    logits = _forward_logits(model, pack)
                    loss = model.loss(logits, pack.labels)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise ad.DivergenceError(f"loss diverged at epoch {epoch}", epoch=epoch)
                epoch_loss += value * batch.size
                opt.step(tape.backward(loss))
            trace.append(epoch_loss / order.size)

    return TrainResult(loss_trace=trace,
                       train_accuracy=evaluate_accuracy(model, dataset, dataset.train_mask),
                       test_accuracy=evaluate_accuracy(model, dataset, dataset.test_mask))


def predict(model, dataset: LabeledGraph):
    """Predicted class per instance (node or graph)."""
    pack = _PackCache(dataset, model.config.layer_kind).full()
    return _forward_logits(model, pack).data.argmax(axis=1)


def evaluate_accuracy(model, dataset: LabeledGraph, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty evaluation mask")
    pred = predict(model, dataset)
    return float((pred[mask] == np.asarray(dataset.labels)[mask]).mean())


def model_state(model, dataset: LabeledGraph):
    """One full forward pass worth of arrays for metrics and explanations."""
    pack = _PackCache(dataset, model.config.layer_kind).full()
    out = model.forward(pack)
    if model.kind == "vanilla":
        h, logits = out
        return {"h": h.data, "logits": logits.data,
                "predictions": logits.data.argmax(axis=1)}
    h, q, enc, logits = out
    return {"h": h.data, "q": q.data, "encodings": enc.data,
            "r": concepts.booleanize(q.data, model.tau),
            "instance_r": concepts.booleanize(enc.data, model.tau),
            "logits": logits.data, "predictions": logits.data.argmax(axis=1),
            "gate": lens.normalized_attention(model.len_params).data}
