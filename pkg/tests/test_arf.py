import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraudlab import arf
from fraudlab.arf import (ArfConfig, ArfContext, ArfEngine, ArfFeatures, ArfWeights, PercentileTracker,
                          batch_grad, batch_loss, high_risk_rule, init_weights, pseudo_label, score, update)
from fraudlab.quantile import nearest_rank
from fraudlab.synthgen import typology_switch_stream


def test_init_neutral_context():
    w = init_weights(ArfContext(prior=0.005))
    assert w.w == pytest.approx((0.2, 0.2, 0.2, 0.4, 0.4), abs=1e-15)


def test_init_rural_above_metro():
    rural = init_weights(ArfContext("Rural-X", prior=0.02))
    metro = init_weights(ArfContext("Metro-Y", prior=0.005))
    assert rural.w[3] > metro.w[3]
    assert rural.context_group == "Rural-X"


def test_init_zero_context_limit():
    w = init_weights(ArfContext(prior=1e-12))
    assert w.w == pytest.approx((0.2,) * 5, abs=1e-9)


def test_init_formula_and_clip():
    ctx = ArfContext(prior=0.01, volatility=0.4, legal_weight=2.0)
    assert init_weights(ctx).w[3] == pytest.approx(0.2 * 3.0 * 1.2 * 1.5, rel=1e-12)
    assert init_weights(ArfContext(prior=0.9, volatility=1.0, legal_weight=10.0)).w[4] == 5.0


@pytest.mark.parametrize("kw", [{"prior": 0.0}, {"prior": 1.0}, {"volatility": 1.5}, {"legal_weight": -1.0}])
def test_context_validation(kw):
    with pytest.raises(ValueError):
        ArfContext(**kw)


def test_score_worked_example():
    w = ArfWeights((0.2,) * 5)
    f = ArfFeatures(f_if=1, f_ocsvm=0, f_ae=1, spend_delta=2.0, time_delta=0.5)
    assert score(w, f) == pytest.approx(0.9, abs=1e-12)
    assert score(w, ArfFeatures()) == 0.0


vec5 = st.lists(st.floats(0, 5), min_size=5, max_size=5)


@given(vec5, vec5, vec5, st.floats(-3, 3))
def test_score_linear(w, f, g, c):
    w, f, g = map(np.array, (w, f, g))
    assert score(2 * w, f) == pytest.approx(2 * score(w, f), rel=1e-12, abs=1e-12)
    assert score(w, f + c * g) == pytest.approx(score(w, f) + c * score(w, g), rel=1e-9, abs=1e-9)


def test_feature_helpers():
    assert arf.spend_delta(130.0, 100.0, 10.0) == 3.0
    assert arf.spend_delta(1e6, 100.0, 10.0) == 10.0
    assert arf.spend_delta(7.0, 5.0, 0.0) == 0.0
    assert arf.time_delta(0.0) == 1.0 and arf.time_delta(1800.0) == 0.5 and arf.time_delta(7200.0) == 0.0


def test_pseudo_labels():
    assert pseudo_label(ArfFeatures(spend_delta=3.5)) == 1
    assert pseudo_label(ArfFeatures(spend_delta=0.1)) == -1
    assert pseudo_label(ArfFeatures(spend_delta=1.5)) == arf.ABSTAIN
    assert pseudo_label(ArfFeatures(f_if=1, spend_delta=0.1)) == arf.ABSTAIN


def random_batch(rng, size=12):
    batch = []
    for _ in range(size):
        f = np.concatenate([rng.integers(0, 2, 3), rng.uniform(0, 4, 1), rng.uniform(0, 1, 1)])
        if rng.random() < 0.5:
            batch.append((f, int(rng.integers(0, 2)), "true"))
        else:
            batch.append((f, int(rng.choice([-1, 1])), "pseudo"))
    return batch


@pytest.mark.parametrize("instance", range(10))
def test_gradient_matches_finite_differences(instance):
    rng = np.random.default_rng(300 + instance)
    w = rng.uniform(0, 1.5, 5)
    batch = random_batch(rng)
    tau = float(rng.uniform(0, 2))
    # keep every hinge term away from its kink so the loss is smooth around w
    for f, y, k in batch:
        if k == "pseudo":
            assert abs(1.0 - y * (w @ f - tau)) > 1e-3
    h = 1e-5
    num = np.zeros(5)
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        num[i] = (batch_loss(w + e, batch, tau, 1.0) - batch_loss(w - e, batch, tau, 1.0)) / (2 * h)
    ana = batch_grad(w, batch, tau, 1.0)
    rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
    assert rel.max() <= 1e-6


def test_hinge_satisfied_leaves_weights():
    w = ArfWeights((0.2,) * 5)
    f = ArfFeatures(spend_delta=4.0)  # R = 0.8, tau = -1 -> y (R - tau) = 1.8 >= 1
    assert update(w, [(f, 1, "pseudo")], tau=-1.0).w == w.w


def test_cross_entropy_positive_raises_weight():
    w = ArfWeights((0.2,) * 5)
    out = update(w, [(ArfFeatures(f_ae=1.0), 1, "true")])
    assert out.w[2] > w.w[2]
    assert out.w[:2] == w.w[:2] and out.update_count == 1


def test_abstentions_only_is_a_noop(caplog):
    w = ArfWeights((0.2,) * 5)
    assert update(w, [(ArfFeatures(), arf.ABSTAIN, "pseudo")]) is w
    assert "empty effective batch" in caplog.text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_keeps_bounds(seed):
    rng = np.random.default_rng(seed)
    w = ArfWeights(tuple(rng.uniform(0, 5, 5)))
    cfg = ArfConfig(learning_rate=float(rng.uniform(0.01, 5.0)))
    for _ in range(20):
        w = update(w, random_batch(rng, 8), cfg, tau=float(rng.uniform(-2, 2)))
        assert all(0.0 <= x <= cfg.w_max for x in w.w)


def test_high_risk_rule_clauses():
    assert high_risk_rule(0.1, ArfFeatures(f_if=1, f_ae=1), 3600.0)
    assert high_risk_rule(0.0, ArfFeatures(spend_delta=3.2), 30.0)
    assert not high_risk_rule(0.0, ArfFeatures(spend_delta=3.2), 90.0)
    assert not high_risk_rule(0.0, ArfFeatures(), 3600.0)
    t = PercentileTracker(warmup=100)
    for v in range(100):
        t.add(float(v))
    assert high_risk_rule(99.5, ArfFeatures(), 3600.0, t)
    cold = PercentileTracker(warmup=100)
    cold.add(0.0)
    assert not high_risk_rule(99.5, ArfFeatures(), 3600.0, cold)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=400), st.integers(5, 60))
def test_tracker_matches_window_oracle(values, window):
    t = PercentileTracker(0.95, window, warmup=1)
    for i, v in enumerate(values):
        t.add(v)
        recent = values[max(0, i + 1 - window): i + 1]
        assert t.value() == nearest_rank(recent, 0.95)


def test_welford_matches_batch(rng):
    xs = rng.normal(50, 10, 500)
    s = arf.WelfordStats()
    for x in xs:
        s.add(x)
    assert s.mean == pytest.approx(xs.mean(), rel=1e-12)
    assert s.std == pytest.approx(xs.std(), rel=1e-10)
    t = arf.WelfordStats.from_batch(xs[:200].mean(), xs[:200].std(), 200)
    for x in xs[200:]:
        t.add(x)
    assert t.std == pytest.approx(xs.std(), rel=1e-10)


def run_switch_stream(stream):
    buf = io.StringIO()
    engine = ArfEngine(audit=buf)
    w3 = []
    mid = None
    for i, (f, y) in enumerate(stream):
        engine.process(f"T{i}", f, 3600.0, label=y, stamp=i)
        if i == len(stream) // 2 - 1:
            mid = engine.weights["global"]
        w3.append(engine.weights["global"].w[2])
    return engine, mid, np.array(w3), buf.getvalue()


@pytest.fixture(scope="module")
def switch_run():
    stream = typology_switch_stream()
    return stream, run_switch_stream(stream)


def test_adaptation_shifts_weight_to_autoencoder(switch_run):
    stream, (engine, mid, w3, _) = switch_run
    final = engine.weights["global"]
    assert final.update_count == 2000
    second = w3[len(stream) // 2:]
    assert np.all(np.diff(second) >= 0) and second[-1] > mid.w[2]
    assert final.w[2] > init_weights(ArfContext()).w[2]
    assert final.w[2] > final.w[0] and final.w[2] > final.w[1]


def test_stream_is_deterministic(switch_run):
    stream, (engine, _, _, audit) = switch_run
    again, _, _, audit2 = run_switch_stream(typology_switch_stream())
    assert again.weights["global"].w == engine.weights["global"].w
    assert audit == audit2
    last = json.loads(audit.splitlines()[-1])
    assert last["update_count"] == 2000 and last["w_ae"] == engine.weights["global"].w[2]


def test_engine_groups_are_independent():
    eng = ArfEngine({"Rural-X": ArfContext("Rural-X", prior=0.02), "Metro-Y": ArfContext("Metro-Y")},
                    ArfConfig(batch_size=2))
    start = eng.weights_for("Metro-Y").w
    for i in range(4):
        eng.process(f"T{i}", ArfFeatures(f_ae=1.0), 3600.0, group="Rural-X", label=1)
    assert eng.weights_for("Metro-Y").w == start
    assert eng.weights_for("Rural-X").update_count == 2
    r = eng.process("T9", ArfFeatures(f_if=1.0, spend_delta=1.0), 3600.0, group="Metro-Y")
    assert r.contributions["w_if"] == start[0] and r.contributions["w_spend"] == start[3]
    assert math.isclose(r.risk, sum(r.contributions.values()), rel_tol=1e-12)
