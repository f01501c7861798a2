"""Entropy readout behavior and logic-formula extraction."""

import itertools

import numpy as np
import pytest

from cgnet import autodiff as ad
from cgnet import lens
from oracles import finite_difference, truth_table_eval


def _params(relevance, seed=0, **kw):
    relevance = np.asarray(relevance, dtype=np.float64)
    rng = np.random.default_rng(seed)
    p = lens.init_len_params(rng, *relevance.shape, **kw)
    p.relevance = ad.Tensor(relevance)
    return p


def test_uniform_attention_at_equal_relevance():
    p = _params(np.zeros((3, 4)))
    att = lens.attention_rows(p).data
    assert np.allclose(att, 0.25)
    gate = lens.normalized_attention(p).data
    assert np.allclose(gate, 1.0)   # rowmax norm with zero eps


def test_gate_row_max_is_exactly_one():
    p = _params(np.random.default_rng(5).normal(size=(4, 6)))
    gate = lens.normalized_attention(p).data
    assert np.all(gate.max(axis=1) == 1.0)


def test_one_hot_gate_masks_irrelevant_concepts():
    p = _params([[12.0, -12.0, -12.0], [-12.0, 12.0, -12.0]])
    rng = np.random.default_rng(2)
    q = rng.random((5, 3))
    base = lens.len_forward(ad.Tensor(q), p).data
    q2 = q.copy()
    q2[:, 1:] = rng.random((5, 2))       # only masked columns change
    moved = lens.len_forward(ad.Tensor(q2), p).data
    assert np.allclose(base[:, 0], moved[:, 0], atol=1e-6)
    assert not np.allclose(base[:, 1], moved[:, 1], atol=1e-6)


def test_low_temperature_sharpens_to_one_hot():
    p = _params([[0.3, 0.1, 0.0]], temperature=1e-3)
    att = lens.attention_rows(p).data
    assert np.allclose(att, [[1.0, 0.0, 0.0]], atol=1e-12)


def test_loss_reduces_to_cross_entropy_without_penalty():
    rng = np.random.default_rng(7)
    p = _params(rng.normal(size=(3, 5)), entropy_weight=0.0)
    logits = ad.Tensor(rng.normal(size=(8, 3)))
    labels = rng.integers(0, 3, size=8)
    got = lens.len_loss(logits, labels, p).data
    want = ad.cross_entropy_mean(logits, labels).data
    assert got == want


def test_entropy_penalty_value_at_uniform_attention():
    rng = np.random.default_rng(9)
    logits = ad.Tensor(rng.normal(size=(6, 3)))
    labels = rng.integers(0, 3, size=6)
    lam = 1e-2
    p0 = _params(np.zeros((3, 4)), entropy_weight=0.0)
    p1 = _params(np.zeros((3, 4)), entropy_weight=lam)
    gap = lens.len_loss(logits, labels, p1).data - lens.len_loss(logits, labels, p0).data
    # uniform rows each contribute entropy ln(m); 3 classes, m = 4
    assert np.isclose(gap, lam * 3 * np.log(4), atol=1e-12)


def test_len_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    p = _params(rng.normal(size=(2, 4)), seed=13)
    q = rng.random((6, 4))
    labels = rng.integers(0, 2, size=6)
    leaves = dict(p.named_parameters())

    with ad.Tape() as tape:
        for t in leaves.values():
            tape.watch(t)
        loss = lens.len_loss(lens.len_forward(ad.Tensor(q), p), labels, p)
    grads = tape.backward(loss)

    def f():
        return float(lens.len_loss(lens.len_forward(ad.Tensor(q), p), labels, p).data)

    for name in ("len.relevance", "len.class0.w1", "len.class1.w2", "len.class0.b2"):
        tensor = leaves[name]
        want = finite_difference(f, [tensor.data])[0]
        got = grads.wrt(tensor)
        assert np.allclose(got, want, rtol=1e-4, atol=1e-7), name


def test_training_concentrates_attention_on_informative_concept():
    # only concept 2 carries the label; attention should collapse onto it
    rng = np.random.default_rng(21)
    n, m = 240, 4
    y = rng.integers(0, 2, size=n)
    q = rng.random((n, m))
    q[:, 2] = np.where(y == 1, 0.95, 0.05) + rng.normal(0, 0.02, size=n)
    q = np.clip(q, 0.0, 1.0)

    # stronger penalty than the training default so the collapse is fast
    p = lens.init_len_params(np.random.default_rng(0), 2, m, entropy_weight=1e-2)
    params = [t for _, t in p.named_parameters()]
    opt = ad.Adam(params, lr=0.05)
    qt = ad.Tensor(q)
    for _ in range(400):
        with ad.Tape() as tape:
            for t in params:
                tape.watch(t)
            loss = lens.len_loss(lens.len_forward(qt, p), y, p)
        opt.step(tape.backward(loss))

    att = lens.attention_rows(p).data
    assert np.all(att.argmax(axis=1) == 2)
    assert np.all(att[:, 2] > 0.9)
    logits = lens.len_forward(qt, p).data
    assert (logits.argmax(axis=1) == y).mean() > 0.95


def test_minterm_text_and_fires():
    t = lens.Minterm(literals=((0, True), (3, False)))
    assert t.text() == "c0 & ~c3"
    r = np.array([[1, 0, 0, 0], [1, 0, 0, 1], [0, 0, 0, 0]])
    assert t.fires(r).tolist() == [True, False, False]
    assert lens.Minterm(literals=()).text() == "true"


def test_extract_single_informative_bit():
    rng = np.random.default_rng(17)
    r = rng.integers(0, 2, size=(200, 4))
    labels = r[:, 2].astype(np.int64)
    gate = np.array([[0.1, 0.2, 1.0, 0.3], [0.0, 0.1, 1.0, 0.2]])
    formulas = lens.extract_formulas(r, labels, labels, gate)
    assert formulas[0].text() == "y=0 <- ~c2"
    assert formulas[1].text() == "y=1 <- c2"
    assert all(f.complexity == 1 for f in formulas)
    assert np.array_equal(lens.eval_formula(formulas[1], r), labels == 1)


def test_extract_stops_at_first_non_improving_candidate():
    r = np.array([[1, 1]] * 8 + [[1, 0]] * 2 + [[0, 0]] * 10 + [[1, 0]] * 10)
    labels = np.array([1] * 10 + [0] * 20)
    gate = np.array([[1.0, 1.0], [1.0, 1.0]])
    formulas = lens.extract_formulas(r, labels, labels, gate)
    f1 = formulas[1]
    # the runner-up pattern (1,0) fires on ten class-0 rows; adding it hurts
    assert f1.complexity == 1
    assert f1.minterms[0].text() == "c0 & c1"
    assert f1.minterms[0].support == 8


def test_extract_uses_only_correctly_classified_sources():
    r = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
    labels = np.array([1, 1, 0, 0])
    wrong = np.array([0, 1, 0, 0])    # first class-1 sample misclassified
    gate = np.ones((2, 2))
    formulas = lens.extract_formulas(r, labels, wrong, gate)
    assert formulas[1].minterms[0].support == 1


def test_extract_flags_empty_cases():
    r = np.array([[1, 0], [0, 1]])
    labels = np.array([0, 1])
    # no concept clears the relevance threshold for class 0
    gate = np.array([[0.2, 0.3], [1.0, 0.4]])
    formulas = lens.extract_formulas(r, labels, labels, gate)
    assert formulas[0].flagged_empty
    assert formulas[0].text() == "y=0 <- false"
    assert not formulas[1].flagged_empty
    # class never predicted correctly -> no sources
    never = lens.extract_formulas(r, labels, 1 - labels, np.ones((2, 2)))
    assert never[0].flagged_empty and never[1].flagged_empty


def test_minterm_cap_respected():
    rng = np.random.default_rng(3)
    m = 5
    r = rng.integers(0, 2, size=(400, m))
    # scattered labels force many patterns per class
    labels = (r.sum(axis=1) % 2).astype(np.int64)
    gate = np.ones((2, m))
    formulas = lens.extract_formulas(r, labels, labels, gate, max_minterms=3)
    assert all(f.complexity <= 3 for f in formulas)


def test_eval_formula_matches_enumeration_oracle():
    rng = np.random.default_rng(29)
    rows = np.array(list(itertools.product([0, 1], repeat=4)))
    for _ in range(20):
        k = rng.integers(1, 4)
        minterms = []
        for _ in range(k):
            picks = rng.choice(4, size=rng.integers(1, 5), replace=False)
            minterms.append(lens.Minterm(literals=tuple(
                (int(i), bool(rng.integers(0, 2))) for i in sorted(picks))))
        formula = lens.LogicFormula(class_id=0, minterms=minterms)
        want = [truth_table_eval([t.literals for t in minterms], row) for row in rows]
        assert lens.eval_formula(formula, rows).tolist() == want


def test_formula_text_round_trip():
    f0 = lens.LogicFormula(class_id=0, minterms=[
        lens.Minterm(literals=((1, True), (3, False))),
        lens.Minterm(literals=((0, False),))])
    f1 = lens.LogicFormula(class_id=1, flagged_empty=True)
    text = lens.formulas_to_text([f0, f1])
    assert text == "y=0 <- c1 & ~c3 | ~c0\ny=1 <- false\n"
    back = lens.parse_formulas_text(text)
    assert lens.formulas_to_text(back) == text
    rows = np.array(list(itertools.product([0, 1], repeat=4)))
    assert np.array_equal(back[0].fires(rows), f0.fires(rows))
    assert back[1].flagged_empty
    with pytest.raises(ValueError, match="unparseable"):
        lens.parse_formulas_text("y=0 needs arrow\n")
