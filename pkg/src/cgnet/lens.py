"""Entropy-gated interpretable readout and DNF logic-formula extraction.

Per class, concept activations are masked by max-normalized sparse attention
and fed through a small affine stack; training adds an attention-entropy
penalty so each class focuses on few concepts.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

TEMPERATURE = 1.0
ENTROPY_WEIGHT = 1e-4
RELEVANCE_THRESHOLD = 0.5    # on max-normalized attention, for extraction
MAX_MINTERMS = 10
HIDDEN_UNITS = 10


@dataclass
class EntropyLayerParams:
    relevance: ad.Tensor                 # (l, m) per-class concept scores
    w1: list                             # per-class (m, hidden)
    b1: list                             # per-class (1, hidden)
    w2: list                             # per-class (hidden, 1)
    b2: list                             # per-class (1, 1)
    temperature: float = TEMPERATURE
    entropy_weight: float = ENTROPY_WEIGHT

    @property
    def class_count(self):
        return self.relevance.data.shape[0]

    def named_parameters(self, prefix="len"):
        out = [(f"{prefix}.relevance", self.relevance)]
        for c in range(self.class_count):
            out += [(f"{prefix}.class{c}.w1", self.w1[c]),
                    (f"{prefix}.class{c}.b1", self.b1[c]),
                    (f"{prefix}.class{c}.w2", self.w2[c]),
                    (f"{prefix}.class{c}.b2", self.b2[c])]
        return out


def init_len_params(rng, num_classes, concept_width, hidden=HIDDEN_UNITS,
                    temperature=TEMPERATURE, entropy_weight=ENTROPY_WEIGHT):
    l, m = num_classes, concept_width
    params = EntropyLayerParams(
        relevance=ad.glorot_uniform(rng, l, m),
        w1=[ad.glorot_uniform(rng, m, hidden) for _ in range(l)],
        b1=[ad.Tensor(np.zeros((1, hidden))) for _ in range(l)],
        w2=[ad.glorot_uniform(rng, hidden, 1) for _ in range(l)],
        b2=[ad.Tensor(np.zeros((1, 1))) for _ in range(l)],
        temperature=temperature, entropy_weight=entropy_weight)
    return params


def attention_rows(params: EntropyLayerParams):
    """softmax(relevance / temperature); rows sum to 1."""
    return ad.softmax_rows(ad.scale(params.relevance, 1.0 / params.temperature))


def normalized_attention(params: EntropyLayerParams):
    """Attention divided by its row max; the masking gate, row max exactly 1."""
    return ad.rowmax_norm(attention_rows(params), 0.0)


def len_forward(q, params: EntropyLayerParams):
    """Class logits for encoding rows q in [0,1]^m."""
    gate = normalized_attention(params)
    cols = []
    for c in range(params.class_count):
        masked = ad.mul(q, ad.row(gate, c))
        z = ad.leaky_relu(ad.add(ad.matmul(masked, params.w1[c]), params.b1[c]))
        cols.append(ad.add(ad.matmul(z, params.w2[c]), params.b2[c]))
    return ad.concat_cols(cols)


def len_loss(logits, labels, params: EntropyLayerParams, mask=None):
    """Cross-entropy plus entropy_weight * sum over classes of attention entropy."""
    ce = ad.cross_entropy_mean(logits, labels, mask)
    att = attention_rows(params)
    neg_entropy = ad.sum_all(ad.mul(att, ad.log(att)))
    return ad.add(ce, ad.scale(neg_entropy, -params.entropy_weight))


@dataclass(frozen=True)
class Minterm:
    literals: tuple          # ((concept index, positive), ...) sorted by index
    support: int = 0         # training samples that generated it
    accuracy: float = 0.0    # validation accuracy of the minterm alone

    def fires(self, r):
        r = np.asarray(r)
        if r.ndim == 1:
            r = r[None, :]
        out = np.ones(r.shape[0], dtype=bool)
        for idx, positive in self.literals:
            out &= (r[:, idx] == 1) if positive else (r[:, idx] == 0)
        return out

    def text(self):
        if not self.literals:
            return "true"
        return " & ".join(f"c{i}" if pos else f"~c{i}" for i, pos in self.literals)


@dataclass
class LogicFormula:
    class_id: int
    minterms: list = field(default_factory=list)
    flagged_empty: bool = False

    def fires(self, r):
        r = np.asarray(r)
        if r.ndim == 1:
            r = r[None, :]
        out = np.zeros(r.shape[0], dtype=bool)
        for term in self.minterms:
            out |= term.fires(r)
        return out

    @property
    def complexity(self):
        return len(self.minterms)

    def text(self):
        if not self.minterms:
            return f"y={self.class_id} <- false"
        return f"y={self.class_id} <- " + " | ".join(t.text() for t in self.minterms)


def eval_formula(formula: LogicFormula, r_rows):
    """Standard DNF evaluation over bit rows; empty formula is false everywhere."""
    return formula.fires(r_rows)


def _disjunction_accuracy(minterms, r, is_class):
    fired = np.zeros(r.shape[0], dtype=bool)
    for t in minterms:
        fired |= t.fires(r)
    return float((fired == is_class).mean())


def extract_formulas(r, labels, predictions, gate, mask=None,
                     threshold=RELEVANCE_THRESHOLD, max_minterms=MAX_MINTERMS):
    """Greedy DNF per class from Booleanized relevant concepts.

    r: (n, m) bits; gate: (l, m) max-normalized attention; mask selects the
    split whose samples build and validate minterms (the training split).
    """
    r = np.asarray(r, dtype=np.uint8)
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    n = r.shape[0]
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    gate = gate.data if isinstance(gate, ad.Tensor) else np.asarray(gate)

    formulas = []
    for c in range(gate.shape[0]):
        relevant = np.flatnonzero(gate[c] >= threshold)
        sources = mask & (labels == c) & (predictions == labels)
        if relevant.size == 0 or not sources.any():
            formulas.append(LogicFormula(class_id=c, flagged_empty=True))
            continue

        counts = {}
        for i in np.flatnonzero(sources):
            literals = tuple((int(u), bool(r[i, u])) for u in relevant)
            counts[literals] = counts.get(literals, 0) + 1

        rv = r[mask]
        is_class = labels[mask] == c
        candidates = []
        for literals, support in counts.items():
            term = Minterm(literals=literals, support=support)
            acc = float((term.fires(rv) == is_class).mean())
            candidates.append(Minterm(literals=literals, support=support, accuracy=acc))
        candidates.sort(key=lambda t: (-t.accuracy, -t.support, t.literals))

        kept = []
        best = _disjunction_accuracy(kept, rv, is_class)
        for term in candidates:
            if len(kept) >= max_minterms:
                break
            trial = _disjunction_accuracy(kept + [term], rv, is_class)
            if trial > best:
                kept.append(term)
                best = trial
            else:
                break  # candidates are ranked; first non-improving one ends the scan
        formulas.append(LogicFormula(class_id=c, minterms=kept))
    return formulas


_RULE_RE = re.compile(r"^y=(\d+) <- (.+)$")


def formulas_to_text(formulas):
    return "".join(f.text() + "\n" for f in formulas)


def parse_formulas_text(text):
    """Inverse of formulas_to_text (provenance fields are not serialized)."""
    formulas = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        m = _RULE_RE.match(line)
        if not m:
            raise ValueError(f"unparseable rule line: {line!r}")
        class_id = int(m.group(1))
        body = m.group(2).strip()
        if body == "false":
            formulas.append(LogicFormula(class_id=class_id, flagged_empty=True))
            continue
        minterms = []
        for part in body.split(" | "):
            literals = []
            for lit in part.split(" & "):
                lit = lit.strip()
                positive = not lit.startswith("~")
                literals.append((int(lit.lstrip("~c")), positive))
            minterms.append(Minterm(literals=tuple(literals)))
        formulas.append(LogicFormula(class_id=class_id, minterms=minterms))
    return formulas
