import numpy as np
import pytest

from implicit_auth.context import MOVING, STATIONARY
from implicit_auth.dataset import build_dataset, session_features
from implicit_auth.features import PHONE_LAYOUT, candidate_matrix
from implicit_auth.pipeline import run_stream, RetrainConfig
from implicit_auth.selection import ks_two_sample
from implicit_auth.sensors import ValidationError, segment_matrix
from implicit_auth.synth import (MotionParams, SessionScript, UserProfile, drifted_profile, generate_user,
                                 inject_mimicry, make_population, mimic_profile)

RATE = 50.0


def _clean_profile(freq=2.0):
    p = MotionParams(freq_hz=freq, amp1=1.0, amp2=0.0, phase2=0.0, offset=5.0)
    return UserProfile("clean", {(c, d, s): p for c in (STATIONARY, MOVING)
                                 for d in ("phone", "watch") for s in ("acc", "gyr")}, seed=3)


def test_noise_free_single_harmonic_peak():
    session = generate_user(_clean_profile(2.0), SessionScript(((MOVING, 30.0),)), RATE)
    mags, _ = segment_matrix(session.streams[("phone", "acc")], 6.0)
    peak_f = candidate_matrix(mags, RATE)[:, 6]
    np.testing.assert_allclose(peak_f, 2.0, rtol=1e-12)


def test_parameter_validation():
    with pytest.raises(ValidationError):
        MotionParams(30.0, 1.0, 0.0, 0.0, 1.0).validate(RATE)
    with pytest.raises(ValidationError):
        MotionParams(15.0, 1.0, 0.5, 0.0, 1.0).validate(RATE)  # harmonic at 30 Hz
    with pytest.raises(ValidationError):
        SessionScript((("running", 5.0),))
    with pytest.raises(ValidationError):
        make_population(3, "nope")


def test_stationary_quieter_than_moving(small_dataset):
    var = small_dataset.phone[:, 1]
    assert var[small_dataset.context == 0].mean() * 20 < var[small_dataset.context == 1].mean()


def test_distinct_users_separate_on_mean(small_population):
    ds = build_dataset(small_population[:2], 60, session_seed=1)
    col = PHONE_LAYOUT.index(next(s for s in PHONE_LAYOUT if s.name == "phone_acc_mean"))
    moving = ds.context == 1
    a = ds.phone[(ds.user == "u00") & moving, col]
    b = ds.phone[(ds.user == "u01") & moving, col]
    assert ks_two_sample(a, b)[1] < 0.05


def test_generation_is_deterministic(small_population):
    script = SessionScript(((MOVING, 12.0), (STATIONARY, 12.0)))
    a = generate_user(small_population[0], script, session_seed=4)
    b = generate_user(small_population[0], script, session_seed=4)
    c = generate_user(small_population[0], script, session_seed=5)
    for key in a.streams:
        np.testing.assert_array_equal(a.streams[key].xyz, b.streams[key].xyz)
    assert not np.array_equal(a.streams[("phone", "acc")].xyz, c.streams[("phone", "acc")].xyz)
    assert a.segments == [(MOVING, 0.0, 12.0), (STATIONARY, 12.0, 24.0)]


def test_session_labels_and_straddling_windows():
    script = SessionScript(((MOVING, 9.0), (STATIONARY, 12.0)))
    session = generate_user(make_population(1)[0], script)
    assert session.window_contexts(6.0, 3) == [MOVING, STATIONARY, STATIONARY]
    feats = session_features(session, 6.0)
    assert len(feats) == 2  # the window covering 6-12 s is dropped
    assert list(feats.context) == [1, 0]


def test_mimicry_endpoints(small_population):
    a, v = small_population[1], small_population[0]
    zero = mimic_profile(a, v, 0.0)
    for key, pa in a.params.items():
        pz = zero.params[key]
        assert pz.freq_hz == pa.freq_hz and pz.offset == pa.offset and pz.amp1 == pa.amp1
        np.testing.assert_allclose(pz.direction, pa.direction, rtol=1e-12)
    full = mimic_profile(a, v, 1.0)
    key = (MOVING, "phone", "acc")
    for field in ("freq_hz", "amp1", "amp2", "offset", "phase2"):
        assert getattr(full.params[key], field) == pytest.approx(getattr(v.params[key], field))
    assert full.seed == a.seed
    with pytest.raises(ValidationError):
        mimic_profile(a, v, 1.5)


def test_drift_keeps_identity(small_population):
    d = drifted_profile(small_population[0], small_population[1], 0.3)
    assert d.user_id == "u00" and d.seed == small_population[0].seed


def test_far_non_decreasing_in_fidelity(owner_bank, small_population):
    victim = small_population[0]
    script = SessionScript(((MOVING, 60.0),))
    fars = []
    for lam in (0.0, 0.5, 1.0):
        acc = total = 0
        for attacker in small_population[1:]:
            s = inject_mimicry(attacker, victim, lam, script, session_seed=11)
            decisions, _ = run_stream(owner_bank, s.streams, retrain_cfg=RetrainConfig(T_windows=10**6))
            acc += sum(d.verdict == "accept" for d in decisions)
            total += len(decisions)
        fars.append(acc / total)
    assert fars[0] <= fars[1] <= fars[2]
    assert fars[0] < 0.05 and fars[2] > 0.5
