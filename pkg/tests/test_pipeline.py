import time

import numpy as np
import pytest

from implicit_auth.context import MOVING, STATIONARY
from implicit_auth.dataset import PHONE_AND_WATCH, PHONE_ONLY, layout_for
from implicit_auth.krr import TrainingSet, train_primal
from implicit_auth.pipeline import (Decision, InsufficientDataError, ModelBank, NoModelError, ResponsePolicy,
                                    RetrainConfig, authenticate_window, impostor_pool, monitor_cs, retrain,
                                    run_stream)
from implicit_auth.sensors import SensorStream, ValidationError, segment
from implicit_auth.synth import SessionScript, generate_user

NO_RETRAIN = RetrainConfig(T_windows=10**6)


@pytest.fixture(scope="module")
def owner_session(small_population):
    return generate_user(small_population[0], SessionScript(((MOVING, 60.0), (STATIONARY, 60.0))), session_seed=77)


@pytest.fixture(scope="module")
def impostor_session(small_population):
    return generate_user(small_population[3], SessionScript(((MOVING, 60.0), (STATIONARY, 60.0))), session_seed=78)


def _windows(session, k):
    return [segment(session.streams[(d, s)], 6.0)[k] for d in ("phone", "watch") for s in ("acc", "gyr")]


def test_legit_window_accepted_with_latency_budget(owner_bank, owner_session):
    d = authenticate_window(owner_bank, *_windows(owner_session, 2))
    assert d.verdict == "accept" and d.cs > 0
    assert d.context == MOVING and d.device_set == PHONE_AND_WATCH
    assert d.latency_s < 0.05


def test_impostor_windows_rejected(owner_bank, small_population):
    cs = []
    for i, p in enumerate(small_population[1:]):
        s = generate_user(p, SessionScript(((MOVING, 60.0), (STATIONARY, 60.0))), session_seed=90 + i)
        decisions, _ = run_stream(owner_bank, s.streams, ResponsePolicy(lockout_after_rejections=10**6), NO_RETRAIN)
        cs += [d.cs for d in decisions]
    assert np.mean(np.array(cs) < 0) >= 0.97


def test_phone_only_fallback(owner_bank, owner_session):
    w = _windows(owner_session, 1)
    d = authenticate_window(owner_bank, w[0], w[1])
    assert d.device_set == PHONE_ONLY
    streams = {k: v for k, v in owner_session.streams.items() if k[0] == "phone"}
    decisions, _ = run_stream(owner_bank, streams, retrain_cfg=NO_RETRAIN)
    assert {d.device_set for d in decisions} == {PHONE_ONLY}


def test_missing_model_raises(owner_bank, owner_session):
    models = {k: v for k, v in owner_bank.models.items() if k[1] == PHONE_AND_WATCH}
    bank = ModelBank(models, owner_bank.context_model, "u00")
    w = _windows(owner_session, 1)
    with pytest.raises(NoModelError):
        authenticate_window(bank, w[0], w[1])
    with pytest.raises(ValidationError):
        ModelBank({(MOVING, PHONE_ONLY): owner_bank.models[(MOVING, PHONE_ONLY)]}, owner_bank.context_model)


def test_owner_stream_has_no_events(owner_bank, owner_session):
    decisions, events = run_stream(owner_bank, owner_session.streams, retrain_cfg=NO_RETRAIN)
    assert len(decisions) == 20 and all(d.verdict == "accept" for d in decisions)
    assert events == []


def test_impostor_locked_at_first_reject(owner_bank, impostor_session):
    decisions, events = run_stream(owner_bank, impostor_session.streams, retrain_cfg=NO_RETRAIN)
    first_reject = next(d.k for d in decisions if d.verdict == "reject")
    locks = [e for e in events if e.kind == "lockout"]
    assert len(locks) == 1 and locks[0].k == first_reject
    assert dict(locks[0].detail)["action"] == "lock"


def test_reauth_hook(owner_bank, impostor_session):
    calls = []
    _, events = run_stream(owner_bank, impostor_session.streams, retrain_cfg=NO_RETRAIN,
                           reauth=lambda k: calls.append(k) or True)
    kinds = [e.kind for e in events]
    assert calls and kinds.count("reauth") == len(calls) == kinds.count("lockout")


def test_gap_event(owner_bank, owner_session):
    streams = {}
    for key, s in owner_session.streams.items():
        t = s.t.copy()
        t[400:] += 2.0  # hole inside window 1
        streams[key] = SensorStream(s.device, s.sensor, t, s.xyz, s.sample_rate_hz)
    decisions, events = run_stream(owner_bank, streams, retrain_cfg=NO_RETRAIN)
    assert any(e.kind == "gap" and e.k == 1 for e in events)
    assert 1 not in [d.k for d in decisions]


def _fake(cs_values):
    return [Decision(k, MOVING, 1.0, cs, "accept" if cs > 0 else "reject", PHONE_ONLY)
            for k, cs in enumerate(cs_values)]


def test_monitor_rule():
    cfg = RetrainConfig(epsilon_cs=0.2, T_windows=5)
    assert monitor_cs(_fake([0.5] * 20), cfg) is None
    ev = monitor_cs(_fake([0.1] * 5), cfg)
    assert ev is not None and ev.kind == "retrain_trigger" and ev.k == 4
    assert monitor_cs(_fake([0.1] * 4), cfg) is None
    assert monitor_cs(_fake([-0.3] * 500), cfg) is None
    assert monitor_cs(_fake([0.1] * 4 + [0.0]), cfg) is None


def test_retrain_idempotent_and_fast():
    rng = np.random.default_rng(0)
    legit = rng.normal(1, 1, (400, 28))
    imp = rng.normal(-1, 1, (400, 28))
    key = (MOVING, PHONE_AND_WATCH)
    ts = TrainingSet.from_rows(np.vstack([legit, imp]), np.r_[np.ones(400), -np.ones(400)])
    model = train_primal(ts, 1.0, MOVING, layout_for(PHONE_AND_WATCH))
    models = {(c, PHONE_AND_WATCH): model for c in (MOVING, STATIONARY)}
    bank = ModelBank(models, context_model=None, owner_id="x")
    t0 = time.perf_counter()
    new = retrain(bank, {key: legit}, {key: imp}, rho=1.0, min_samples=10)
    assert time.perf_counter() - t0 < 1.0
    assert np.max(np.abs(new.models[key].w - model.w)) <= 1e-8
    assert new.version == bank.version + 1 and len(new.archive) == 1
    with pytest.raises(InsufficientDataError):
        retrain(bank, {key: legit[:5]}, {key: imp}, min_samples=10)


def test_bank_round_trip(owner_bank, owner_session, tmp_path):
    owner_bank.save(tmp_path)
    back = ModelBank.load(tmp_path)
    w = _windows(owner_session, 3)
    assert authenticate_window(back, *w) == authenticate_window(owner_bank, *w)


def test_impostor_pool_excludes_owner(small_dataset):
    pool = impostor_pool(small_dataset, "u00")
    n_other = np.sum((small_dataset.user != "u00") & (small_dataset.context == 1))
    assert pool[(MOVING, PHONE_ONLY)].shape == (n_other, 14)
    assert pool[(MOVING, PHONE_AND_WATCH)].shape == (n_other, 28)


def test_policy_validation():
    with pytest.raises(ValidationError):
        ResponsePolicy(lockout_after_rejections=0)
    with pytest.raises(ValidationError):
        ResponsePolicy(action="explode")
    with pytest.raises(ValidationError):
        RetrainConfig(epsilon_cs=0)
