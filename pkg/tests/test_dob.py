import math

import numpy as np
import pytest

from resdob.dob import DisturbanceObserver, DobState, init_dob, pc_update, predictor_step
from resdob.dynamics import DEFAULT_PARAMS, integrate, nominal_deriv

P = DEFAULT_PARAMS["point"]
Z = np.zeros(6)


def _run(d_fn, T, a=10.0, dt=0.005, seconds=1.0, u=(0.3, 0.2)):
    """Exact nominal plant plus disturbance ``d_fn(t)``; returns (times, d_hat history, d history)."""
    u = np.array(u)
    obs = DisturbanceObserver(a, T)
    x = np.zeros(6)
    obs.reset(x)
    t = 0.0
    ts, dh, ds = [], [], []
    n = int(round(seconds / dt))
    for k in range(n):
        d = d_fn(t)
        x1 = integrate(x, u, lambda s, c: nominal_deriv("point", s, c, P) + d, dt)
        t = (k + 1) * dt
        fn = lambda s: nominal_deriv("point", s, u, P)
        obs.advance(x, x1, fn(x), fn(x1), dt, t, model_fn=fn)
        x = x1
        ts.append(t)
        dh.append(obs.d_hat.copy())
        ds.append(d)
    return np.array(ts), np.array(dh), np.array(ds)


def test_zero_error_fixed_point_at_rest():
    x = np.array([0.5, -0.2, 0.3, 0.0, 0.0, 0.0])
    dob = init_dob(x)
    for _ in range(50):
        m = nominal_deriv("point", x, Z[:2], P)
        dob = pc_update(predictor_step(dob, x, m, Z, 0.02, x, m, Z), x)
        assert np.array_equal(dob.x_hat, x)
        assert np.array_equal(dob.d_hat, Z)


def test_zero_error_tracking_moving_plant():
    # exact model, no disturbance: only the predictor's integration error remains
    x = np.array([0.0, 0.0, 0.2, 0.5, 0.0, 0.0])
    u = np.array([0.4, 0.1])
    obs = DisturbanceObserver(10.0, 0.02)
    obs.reset(x)
    fn = lambda s: nominal_deriv("point", s, u, P)
    for k in range(50):
        x1 = integrate(x, u, lambda s, c: nominal_deriv("point", s, c, P), 0.02)
        obs.advance(x, x1, fn(x), fn(x1), 0.02, (k + 1) * 0.02, model_fn=fn)
        x = x1
        # step error scales like dt^4 = 1.6e-7; the PC gain (~45) maps it onto d_hat
        assert np.max(np.abs(obs.state.x_hat - x)) < 1.6e-7
        assert np.max(np.abs(obs.d_hat)) < 45 * 1.6e-7


def test_frozen_state_error_decays_exponentially():
    e0 = np.array([0.3, -0.1, 0.0, 0.2, 0.0, 0.05])
    dob = DobState(x_hat=e0.copy(), a=10.0, T=0.02)
    for _ in range(50):
        dob = predictor_step(dob, Z, Z, Z, 0.02)
    # continuous solution, up to RK4 truncation (~(a dt)^5 / 120 per step)
    np.testing.assert_allclose(dob.x_hat, e0 * math.exp(-10.0), rtol=5e-4)
    z = -0.2
    R = 1 + z + z * z / 2 + z**3 / 6 + z**4 / 24
    np.testing.assert_allclose(dob.x_hat, e0 * R**50, rtol=1e-12)


def test_single_rk4_step_against_closed_form():
    a, dt = 7.0, 0.02
    x = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    m = np.array([1.0, -1.0, 0.5, 0.0, 2.0, -0.3])
    d = np.array([0.05, 0.0, -0.1, 0.2, 0.0, 0.0])
    y0 = np.array([0.0, 0.3, 0.1, 0.5, 0.4, 0.7])
    dob = DobState(x_hat=y0, d_hat=d, a=a, T=dt)
    out = predictor_step(dob, x, m, Z, dt).x_hat
    # y' = -a y + c with c = m + d + a x; RK4 multiplies by R(z) = sum z^k / k!, k <= 4
    z = -a * dt
    R = 1 + z + z * z / 2 + z**3 / 6 + z**4 / 24
    c = m + d + a * x
    expect = y0 * R + (c / a) * (1 - R)
    np.testing.assert_allclose(out, expect, atol=1e-10)


def test_predictor_rejects_long_step():
    with pytest.raises(ValueError):
        predictor_step(init_dob(Z, T=0.02), Z, Z, Z, 0.05)


def test_pc_update_zero_error():
    assert np.array_equal(pc_update(init_dob(np.ones(6)), np.ones(6)).d_hat, np.zeros(6))


def test_pc_update_arithmetic():
    dob = DobState(x_hat=np.array([math.e - 1, 0, 0, 0, 0, 0]), a=1.0, T=1.0)
    np.testing.assert_allclose(pc_update(dob, Z).d_hat, [-1, 0, 0, 0, 0, 0], atol=1e-15)


def test_validation():
    with pytest.raises(ValueError):
        DobState(x_hat=Z, a=0.0)
    with pytest.raises(ValueError):
        DobState(x_hat=Z, T=-1.0)
    with pytest.raises(ValueError):
        DobState(x_hat=Z, error_bound=-0.1)


def test_constant_disturbance_error_non_increasing_after_first_update():
    d = np.array([0, 0, 0, 0.5, 0, 0])
    ts, dh, _ = _run(lambda t: d, T=0.02, dt=0.02)
    err = np.abs(dh[:, 3] - 0.5)
    # in exact arithmetic the error is flat at exp(-aT)|d| from the first update on;
    # the predictor's integration error while the plant accelerates is ~1e-4 |d|
    assert np.all(np.diff(err[1:]) <= 1e-4 * 0.5)
    np.testing.assert_allclose(err[1:], 0.5 * (1 - math.exp(-0.2)), rtol=2e-3)


def test_converged_error_shrinks_with_sampling_time():
    d = np.array([0, 0, 0, 0.5, 0, 0])
    errs = []
    for T in (0.04, 0.02, 0.01):
        _, dh, _ = _run(lambda t: d, T=T)
        errs.append(abs(dh[-1, 3] - 0.5) / 0.5)
    assert errs[0] > errs[1] > errs[2]
    # converged value of the law: d_hat = exp(-aT) d
    for T, e in zip((0.04, 0.02, 0.01), errs):
        assert e == pytest.approx(1 - math.exp(-10 * T), rel=1e-3)


def test_held_between_updates():
    d = np.array([0, 0, 0, 0.5, 0, 0])
    _, dh, _ = _run(lambda t: d, T=0.04, dt=0.01, seconds=0.4)
    # updates at t = 0.04, 0.08, ...: steps 4k+3 (0-based) change d_hat
    for k in range(len(dh) - 1):
        if (k + 2) % 4 != 0:
            assert dh[k + 1].tobytes() == dh[k].tobytes()


def test_error_grows_with_disturbance_rate():
    amp = 0.5
    worst = []
    for w in (1.0, 5.0, 25.0):
        ts, dh, ds = _run(lambda t, w=w: np.array([0, 0, 0, amp * math.sin(w * t), 0, 0]), T=0.02, dt=0.01,
                          seconds=3.0)
        late = ts > 1.0
        worst.append(np.max(np.abs(dh[late, 3] - ds[late, 3])))
    assert worst[0] < worst[1] < worst[2]


def test_position_channels_stay_quiet_when_moving():
    d = np.array([0, 0, 0, 0.3, 0.1, -0.2])
    _, dh, _ = _run(lambda t: d, T=0.02, dt=0.02, seconds=2.0, u=(0.9, 0.6))
    assert np.max(np.abs(dh[10:, :3])) <= 1e-3
