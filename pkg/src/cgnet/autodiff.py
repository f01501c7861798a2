"""Reverse-mode autodiff on float64 matrices, recorded on an explicit tape.

Only the primitives the models need are implemented; broadcasting is limited
to row vectors (bias add, attention masking). Everything runs on numpy.
"""

import numpy as np
import scipy.sparse as sp

_CURRENT_TAPE = None


class Tensor:
    """A dense float64 array plus an optional handle into the recording tape."""

    __slots__ = ("data", "tape_id", "parents", "vjp")

    def __init__(self, data, tape_id=None, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape_id = tape_id
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tape_id={self.tape_id})"


class Tape:
    """Append-only op record. Parents of node i always have index < i."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        global _CURRENT_TAPE
        if _CURRENT_TAPE is not None:
            raise RuntimeError("tapes do not nest")
        _CURRENT_TAPE = self
        return self

    def __exit__(self, *exc):
        global _CURRENT_TAPE
        _CURRENT_TAPE = None
        return False

    def watch(self, t: Tensor):
        """Register a leaf (parameter) so gradients accumulate for it.

        Parameters outlive single-epoch tapes, so a stale tape_id from an
        earlier tape is overwritten here.
        """
        if t.tape_id is not None and t.tape_id < len(self.nodes) and self.nodes[t.tape_id] is t:
            return t
        t.tape_id = len(self.nodes)
        self.nodes.append(t)
        return t

    def record(self, t: Tensor):
        t.tape_id = len(self.nodes)
        self.nodes.append(t)
        return t

    def backward(self, loss: Tensor) -> "Gradients":
        """Reverse sweep from `loss`. Accumulators start zeroed every call."""
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if loss.tape_id is None or self.nodes[loss.tape_id] is not loss:
            raise ValueError("loss is not on this tape")
        grads = [None] * len(self.nodes)
        grads[loss.tape_id] = np.ones(())
        for i in range(loss.tape_id, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                pid = parent.tape_id
                # a stale id from another tape marks the parent as a constant here
                if pg is None or pid is None or pid >= len(self.nodes) or self.nodes[pid] is not parent:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
        return Gradients(self, grads)


class Gradients:
    def __init__(self, tape, table):
        self._tape = tape
        self._table = table

    def wrt(self, t: Tensor):
        """Gradient for `t`; zeros if the loss never touched it."""
        i = t.tape_id
        if (i is not None and i < len(self._table)
                and self._tape.nodes[i] is t and self._table[i] is not None):
            return self._table[i]
        return np.zeros_like(t.data)


def _emit(data, parents, vjp):
    out = Tensor(data)
    if _CURRENT_TAPE is not None:
        out.parents = tuple(parents)
        out.vjp = vjp
        _CURRENT_TAPE.record(out)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        # skip the dense product for constant operands (e.g. input features)
        return (g @ b.data.T if a.tape_id is not None else None,
                a.data.T @ g if b.tape_id is not None else None)

    return _emit(out, (a, b), vjp)


class SparseMatrix:
    """Constant CSR operator with its transpose precomputed for the backward pass."""

    def __init__(self, mat):
        self.mat = sp.csr_matrix(mat)
        self.mat_t = sp.csr_matrix(self.mat.T)

    @property
    def shape(self):
        return self.mat.shape


def spmm(s: SparseMatrix, x):
    x = _as_tensor(x)
    out = s.mat @ x.data

    def vjp(g):
        return (s.mat_t @ g,)

    return _emit(out, (x,), vjp)


def _unbroadcast_row(g, shape):
    # sole supported broadcast: a (1, m) row against an (n, m) matrix
    if g.shape != shape:
        g = g.sum(axis=0, keepdims=True).reshape(shape)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast_row(g, a.data.shape), _unbroadcast_row(g, b.data.shape)

    return _emit(out, (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast_row(g * b.data, a.data.shape),
                _unbroadcast_row(g * a.data, b.data.shape))

    return _emit(out, (a, b), vjp)


def scale(a, c: float):
    a = _as_tensor(a)

    def vjp(g):
        return (g * c,)

    return _emit(a.data * c, (a,), vjp)


def leaky_relu(a, slope=0.01):
    a = _as_tensor(a)
    out = np.where(a.data > 0, a.data, slope * a.data)
    mask = np.where(a.data > 0, 1.0, slope)

    def vjp(g):
        return (g * mask,)

    return _emit(out, (a,), vjp)


def relu(a):
    return leaky_relu(a, slope=0.0)


def log(a):
    a = _as_tensor(a)

    def vjp(g):
        return (g / a.data,)

    return _emit(np.log(a.data), (a,), vjp)


def sum_all(a):
    a = _as_tensor(a)

    def vjp(g):
        return (np.full_like(a.data, float(g)),)

    return _emit(a.data.sum(), (a,), vjp)


def softmax_rows(x):
    """Row softmax, stabilized by row-max subtraction."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), vjp)


def rowmax_norm(q, eps):
    """Divide each row by (its max + eps); the fuzzy-encoding normalization."""
    q = _as_tensor(q)
    arg = q.data.argmax(axis=-1)
    m = q.data.max(axis=-1, keepdims=True) + eps
    out = q.data / m

    def vjp(g):
        dq = g / m
        rows = np.arange(q.data.shape[0])
        dq[rows, arg] -= (g * out).sum(axis=-1) / m[:, 0]
        return (dq,)

    return _emit(out, (q,), vjp)


def segment_mean(x, segment_ids, num_segments):
    """Mean of rows per contiguous segment id in [0, num_segments)."""
    x = _as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(ids, minlength=num_segments).astype(np.float64)
    if (counts == 0).any():
        raise ValueError("empty segment")
    acc = np.zeros((num_segments, x.data.shape[1]))
    np.add.at(acc, ids, x.data)
    out = acc / counts[:, None]

    def vjp(g):
        return (g[ids] / counts[ids][:, None],)

    return _emit(out, (x,), vjp)


def cross_entropy_mean(logits, labels, mask=None):
    """Mean negative log-likelihood over masked rows, via log-softmax."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, l = logits.data.shape
    if labels.min() < 0 or labels.max() >= l:
        raise ValueError(f"labels outside [0, {l})")
    if mask is None:
        idx = np.arange(n)
    else:
        idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ValueError("empty mask")
    x = logits.data[idx]
    y = labels[idx]
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(idx.size), y].mean()

    def vjp(g):
        d = np.exp(logp)
        d[np.arange(idx.size), y] -= 1.0
        full = np.zeros_like(logits.data)
        full[idx] = d * (float(g) / idx.size)
        return (full,)

    return _emit(loss, (logits,), vjp)


def concat_cols(tensors):
    tensors = [_as_tensor(t) for t in tensors]
    widths = [t.data.shape[1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return _emit(out, tuple(tensors), vjp)


def row(t, i: int):
    """Slice row i as a (1, m) tensor."""
    t = _as_tensor(t)
    out = t.data[i:i + 1]

    def vjp(g):
        full = np.zeros_like(t.data)
        full[i:i + 1] = g
        return (full,)

    return _emit(out, (t,), vjp)


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    """Seeded uniform Glorot init; draw order is the caller's responsibility."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return Tensor(rng.uniform(-limit, limit, size=shape))


class DivergenceError(RuntimeError):
    """Raised when a NaN gradient or loss aborts a run."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class Adam:
    """Adaptive-moment optimizer, beta=(0.9, 0.999), eps 1e-8, bias-corrected."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Gradients):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = grads.wrt(p)
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient for parameter {i} at step {t}")
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** t)
            vhat = self.v[i] / (1 - self.b2 ** t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
