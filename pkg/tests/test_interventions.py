"""Oracle construction and intervention mechanics."""

import numpy as np
import pytest

from cgnet import interventions as iv
from cgnet.concepts import booleanize


class _StubReadout:
    """Linear readout over encodings; class = argmax of enc @ W."""

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def readout_logits(self, encodings):
        return np.asarray(encodings) @ self.w


def _synthetic_fixture():
    # two roles; role 0 pattern [1,0], role 1 pattern [0,1]; a few nodes off-pattern
    q = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.95],     # role 0 (last one wrong)
                  [0.1, 0.9], [0.2, 0.85], [0.9, 0.15]])   # role 1 (last one wrong)
    r = booleanize(q)
    roles = np.array([0, 0, 0, 1, 1, 1])
    train = np.array([True, True, False, True, True, False])
    return q, r, roles, train


def test_synthetic_oracle_majority_and_restricted_mean():
    q, r, roles, train = _synthetic_fixture()
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    assert set(oracle.targets) == {0, 1}
    assert oracle.targets[0].r_star.tolist() == [1, 0]
    assert np.allclose(oracle.targets[0].q_star, [0.85, 0.15])
    assert oracle.targets[1].r_star.tolist() == [0, 1]
    for entry in oracle.targets.values():
        assert (booleanize(entry.q_star) == entry.r_star).all()


def test_oracle_skips_roles_absent_from_training():
    q, r, roles, train = _synthetic_fixture()
    roles = roles.copy()
    roles[2] = 7
    train = np.array([True, True, False, True, True, True])
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    assert 7 not in oracle.targets
    # node 2 carries an oracle-less role: never eligible
    assert 2 not in iv.eligible_nodes(r, roles, oracle, np.ones(6, dtype=bool))


def test_oracle_majority_restriction_survives_mixed_patterns():
    # role with 2:1 pattern split; q* averages only the majority carriers
    q = np.array([[0.9, 0.1], [0.7, 0.3], [0.2, 0.8]])
    r = booleanize(q)
    oracle = iv.build_synthetic_oracle(q, r, np.zeros(3), np.ones(3, dtype=bool))
    assert oracle.targets[0].r_star.tolist() == [1, 0]
    assert np.allclose(oracle.targets[0].q_star, [0.8, 0.2])


def test_label_oracle_picks_purest_cluster():
    # cluster [1,0]: labels {0,0,1}; cluster [0,1]: labels {1,1}
    q = np.array([[0.9, 0.1], [0.85, 0.2], [0.95, 0.05], [0.1, 0.9], [0.2, 0.8]])
    r = booleanize(q)
    labels = np.array([0, 0, 1, 1, 1])
    oracle = iv.build_label_oracle(q, r, labels, np.ones(5, dtype=bool))
    assert oracle.keyed_by == "label"
    assert oracle.targets[0].r_star.tolist() == [1, 0]
    assert oracle.targets[1].r_star.tolist() == [0, 1]    # purity 1.0 beats 1/3
    assert np.allclose(oracle.targets[1].q_star, [0.15, 0.85])


def test_eligibility_excludes_matching_patterns():
    q, r, roles, train = _synthetic_fixture()
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    test_mask = ~train
    assert iv.eligible_nodes(r, roles, oracle, test_mask).tolist() == [2, 5]
    assert iv.eligible_nodes(r, roles, oracle, train).tolist() == []


def test_budget_zero_is_identity():
    q, r, roles, train = _synthetic_fixture()
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    q_mod, chosen = iv.apply_interventions(q, r, roles, oracle, ~train, 0, seed=42)
    assert chosen.size == 0
    assert np.array_equal(q_mod, q)
    with pytest.raises(ValueError, match="budget"):
        iv.apply_interventions(q, r, roles, oracle, ~train, -1, seed=0)


def test_interventions_rewrite_q_and_respect_budget():
    q, r, roles, train = _synthetic_fixture()
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    q_mod, chosen = iv.apply_interventions(q, r, roles, oracle, ~train, 1, seed=42)
    assert chosen.size == 1 and chosen[0] in (2, 5)
    i = int(chosen[0])
    assert np.allclose(q_mod[i], oracle.targets[roles[i]].q_star)
    untouched = np.setdiff1d(np.arange(6), chosen)
    assert np.array_equal(q_mod[untouched], q[untouched])
    # original q never mutated
    assert q[2, 1] == 0.95


def test_full_budget_is_order_independent():
    q, r, roles, train = _synthetic_fixture()
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    a, _ = iv.apply_interventions(q, r, roles, oracle, ~train, 99, seed=1)
    b, _ = iv.apply_interventions(q, r, roles, oracle, ~train, 99, seed=2)
    assert np.array_equal(a, b)


def test_intervention_order_is_seeded():
    rng = np.random.default_rng(0)
    q = np.clip(rng.random((40, 2)), 0.01, 0.99)
    q[:, 0] = 0.9            # oracle pattern [1,0]; ensure bit 0 set
    roles = np.zeros(40, dtype=int)
    r = booleanize(q)
    train = np.zeros(40, dtype=bool)
    train[:10] = True
    q[:10, 1] = 0.1          # training nodes carry the clean pattern
    r = booleanize(q)
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    _, first = iv.apply_interventions(q, r, roles, oracle, ~train, 5, seed=3)
    _, again = iv.apply_interventions(q, r, roles, oracle, ~train, 5, seed=3)
    _, other = iv.apply_interventions(q, r, roles, oracle, ~train, 5, seed=4)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)


def test_exact_equality_noop_property():
    q, r, roles, train = _synthetic_fixture()
    oracle = iv.build_synthetic_oracle(q, r, roles, train)
    model = _StubReadout(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    base = model.readout_logits(q).argmax(axis=1)
    # force every node onto its oracle encoding, then intervene at full budget
    q_exact = np.stack([oracle.targets[int(k)].q_star for k in roles])
    r_exact = booleanize(q_exact)
    q_mod, chosen = iv.apply_interventions(q_exact, r_exact, roles, oracle,
                                           np.ones(6, dtype=bool), 99, seed=0)
    assert chosen.size == 0
    after = model.readout_logits(q_mod).argmax(axis=1)
    assert np.array_equal(model.readout_logits(q_exact).argmax(axis=1), after)
    assert base.shape == after.shape


def test_readout_predictions_pool_graph_encodings():
    model = _StubReadout(np.array([[1.0, 0.0], [0.0, 1.0]]))
    q = np.array([[0.9, 0.1], [0.7, 0.3], [0.1, 0.9], [0.3, 0.7]])
    gid = np.array([0, 0, 1, 1])
    pred = iv.readout_predictions(model, q, gid, 2)
    assert pred.tolist() == [0, 1]
    # node-level intervention flips the pooled class of graph 0
    q2 = q.copy()
    q2[0] = [0.0, 1.0]
    q2[1] = [0.0, 1.0]
    assert iv.readout_predictions(model, q2, gid, 2).tolist() == [1, 1]


class _GraphStub:
    def __init__(self):
        self.test_mask = np.array([False, False, True, True])
        self.labels = np.array([0, 0, 0, 1])
        self.graph_indicator = None
        self.is_graph_task = False
        self.graph_count = 1


def test_accuracy_curve_and_aggregation(tmp_path):
    # node 2 carries the wrong pattern for its role and gets mispredicted
    q = np.array([[0.9, 0.1], [0.85, 0.15], [0.2, 0.9], [0.1, 0.9]])
    r = booleanize(q)
    roles = np.array([0, 0, 0, 1])
    dataset = _GraphStub()
    oracle = iv.build_synthetic_oracle(q, r, roles, np.ones(4, dtype=bool))
    model = _StubReadout(np.array([[1.0, -1.0], [-1.0, 1.0]]))

    budgets = [0, 1]
    rows = [iv.accuracy_curve(model, dataset, q, r, roles, oracle, s, budgets)
            for s in (1, 2, 3, 4, 5)]
    curve = iv.aggregate_curves(budgets, rows, seeds=(1, 2, 3, 4, 5))
    assert curve.mean[0] == pytest.approx(0.5)    # node 2 mispredicted before
    assert curve.mean[1] == pytest.approx(1.0)    # corrected at budget 1
    assert np.all(curve.ci_low <= curve.mean + 1e-12)
    assert np.all(curve.mean <= curve.ci_high + 1e-12)

    path = tmp_path / "curve.csv"
    iv.curve_to_csv(curve, path)
    back = iv.read_curve_csv(path)
    assert back.budgets.tolist() == [0, 1]
    assert np.allclose(back.mean, curve.mean, atol=1e-6)
    with pytest.raises(ValueError, match="header"):
        bad = tmp_path / "bad.csv"
        bad.write_text("x,y\n")
        iv.read_curve_csv(bad)
