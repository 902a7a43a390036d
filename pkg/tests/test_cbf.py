import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from resdob import _pykernels, kernels
from resdob.cbf import (
    CbfConfig,
    CircleObstacle,
    ModelSnapshot,
    WallBarrier,
    arena_walls,
    build_constraint,
    build_constraints,
    h_circle,
    h_wall,
    lie_terms,
)
from resdob.dynamics import DEFAULT_PARAMS, control_affine
from resdob.residual import ResidualModel

BETA1, BETA2 = 2.0, 2.0


# independent symbolic oracle ------------------------------------------------

def _symbolic_rows(kind):
    """Lambdified (coeff, rhs) for a moving circle built from scratch in sympy."""
    xp, yp, th, vx, vy, om = sp.symbols("xp yp th vx vy om", real=True)
    cx, cy, ox, oy, R, t = sp.symbols("cx cy ox oy R t", real=True)
    d = sp.symbols("d0:6", real=True)
    b1, b2, bound = sp.symbols("b1 b2 bound", positive=True)
    kom, kv1, kv2 = sp.symbols("kom kv1 kv2", positive=True)
    X = sp.Matrix([xp, yp, th, vx, vy, om])
    if kind == "point":
        F = sp.Matrix([vx * sp.cos(th), vx * sp.sin(th), 0, -kv2 * vx, 0, 0])
        G = sp.Matrix([[0, 0], [0, 0], [0, kom], [kv2 * kv1, 0], [0, 0], [0, 0]])
    else:
        F = sp.Matrix([vx * sp.cos(th), vx * sp.sin(th), om, -kv1 * vx, 0, 0])
        G = sp.Matrix([[0, 0], [0, 0], [0, 0], [kv1 * kv2, kv1 * kv2], [0, 0], [-kom, kom]])
    h = sp.sqrt((xp - cx - ox * t) ** 2 + (yp - cy - oy * t) ** 2) - R
    grad_h = sp.Matrix([h]).jacobian(X)
    psi = (grad_h * F)[0] + sp.diff(h, t)
    grad_psi = sp.Matrix([psi]).jacobian(X)
    lf2 = (grad_psi * F)[0] + sp.diff(psi, t)
    coeff = grad_psi * G
    dist_term = (grad_psi * sp.Matrix(d))[0]
    norm = sp.sqrt(sum(g**2 for g in grad_psi))
    rhs = lf2 + b1 * psi + dist_term + b2 * (psi + b1 * h) - bound * norm
    args = (X, cx, cy, ox, oy, R, t, sp.Matrix(d), b1, b2, bound, kom, kv1, kv2)
    return sp.lambdify(args, [coeff, rhs, h, psi], "numpy")


_SYM = {}


def symbolic(kind):
    if kind not in _SYM:
        _SYM[kind] = _symbolic_rows(kind)
    return _SYM[kind]


@pytest.mark.parametrize("kind", ["point", "car"])
@pytest.mark.parametrize("mode", ["none", "dob", "dob_plus_bound"])
def test_constraint_matches_symbolic_oracle(kind, mode):
    fn = symbolic(kind)
    p = DEFAULT_PARAMS[kind]
    snap = ModelSnapshot(kind, p)
    rng = np.random.default_rng(0)
    cfg = CbfConfig(1.5, 2.5, robustness_mode=mode)
    for _ in range(30):
        x = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-3, 3, 1), rng.uniform(-1, 1, 3)])
        obs = CircleObstacle(tuple(rng.uniform(-2, 2, 2)), tuple(rng.uniform(-0.3, 0.3, 2)), 0.4, 0.15)
        t = float(rng.uniform(0, 3))
        if np.hypot(*(x[:2] - obs.center_at(t))) < 0.3:
            continue
        d_hat = rng.normal(scale=0.3, size=6)
        bound = 0.7
        c = build_constraint(x, obs, snap, d_hat, bound, cfg, t)
        d_used = np.zeros(6) if mode == "none" else d_hat
        b_used = bound if mode == "dob_plus_bound" else 0.0
        coeff, rhs, _, _ = fn(x, *obs.center, *obs.velocity, 0.55, t, d_used, 1.5, 2.5, b_used,
                              p.k_omega, p.k_v1, p.k_v2)
        np.testing.assert_allclose(c.coeff, np.asarray(coeff, dtype=float).ravel(), rtol=1e-9, atol=1e-10)
        assert c.rhs == pytest.approx(float(rhs), rel=1e-9, abs=1e-10)


def test_wall_constraint_by_hand():
    # h = n.p + off, L_f h = n.(v cos, v sin); d/dx L_f h = (0, 0, v n.(-sin, cos), n.(cos, sin), 0, 0)
    p = DEFAULT_PARAMS["point"]
    snap = ModelSnapshot("point", p)
    wall = WallBarrier((1.0, 0.0), 2.1)
    x = np.array([-1.0, 0.5, 2.5, 0.8, 0.0, 0.0])
    c = build_constraint(x, wall, snap, np.zeros(6), 0.0, CbfConfig(robustness_mode="none"))
    th, v = x[2], x[3]
    h = -1.0 + 2.1
    psi = v * math.cos(th)
    grad = np.array([0, 0, -v * math.sin(th), math.cos(th), 0, 0])
    F, G = control_affine("point", x, p)
    np.testing.assert_allclose(c.coeff, grad @ G, atol=1e-15)
    assert c.rhs == pytest.approx(grad @ F + BETA1 * psi + BETA2 * (psi + BETA1 * h), abs=1e-14)


def test_head_on_hand_derivation():
    # point robot on the x axis heading at a static circle with h = 1 and v_x = 1
    obs = CircleObstacle((1.55, 0.0), (0.0, 0.0), 0.4, 0.15)
    x = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    h, hdot, _ = lie_terms(x, obs, ModelSnapshot("point"))
    assert h == pytest.approx(1.0, abs=1e-15)
    assert hdot == pytest.approx(-1.0, abs=1e-15)
    assert hdot + BETA1 * h == pytest.approx(BETA1 - 1.0)
    # cross-check along the flow
    eps = 1e-6
    assert (h_circle(x + eps * np.array([1, 0, 0, 0, 0, 0]), obs)
            - h_circle(x - eps * np.array([1, 0, 0, 0, 0, 0]), obs)) / (2 * eps) == pytest.approx(-1.0, abs=1e-8)


def test_pure_nominal_reduction_against_numeric_lie_derivatives():
    snap = ModelSnapshot("car", DEFAULT_PARAMS["car"])
    rng = np.random.default_rng(1)
    cfg = CbfConfig(robustness_mode="dob_plus_bound")
    for _ in range(20):
        x = np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-3, 3, 1), rng.uniform(-1, 1, 3)])
        obs = CircleObstacle((1.5, -0.4), (0.1, 0.2), 0.3, 0.15)
        c = build_constraint(x, obs, snap, np.zeros(6), 0.0, cfg, t=0.5)
        F, G = control_affine("car", x, DEFAULT_PARAMS["car"])

        def psi(y, t):
            return lie_terms(y, obs, snap, t)[1]

        e = 1e-6
        grad = np.array([(psi(x + e * v, 0.5) - psi(x - e * v, 0.5)) / (2 * e) for v in np.eye(6)])
        dpsi_dt = (psi(x, 0.5 + e) - psi(x, 0.5 - e)) / (2 * e)
        h, p1, _ = lie_terms(x, obs, snap, 0.5)
        rhs = grad @ F + dpsi_dt + BETA1 * p1 + BETA2 * (p1 + BETA1 * h)
        np.testing.assert_allclose(c.coeff, grad @ G, atol=1e-6)
        assert c.rhs == pytest.approx(rhs, abs=1e-6)


def test_numeric_vs_analytic_hdot_200_pairs():
    rng = np.random.default_rng(2)
    for k in range(200):
        kind = "point" if k % 2 else "car"
        snap = ModelSnapshot(kind, DEFAULT_PARAMS[kind])
        x = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-3, 3, 1), rng.uniform(-1, 1, 3)])
        if k % 3 == 0:
            barrier = WallBarrier(tuple(np.array([math.cos(k), math.sin(k)])), float(rng.uniform(0, 2)))
            h_fn = lambda y, t: h_wall(y, barrier)
        else:
            barrier = CircleObstacle(tuple(rng.uniform(-2, 2, 2)), tuple(rng.uniform(-0.5, 0.5, 2)), 0.4, 0.15)
            if np.hypot(*(x[:2] - barrier.center_at(1.0))) < 0.2:
                continue
            h_fn = lambda y, t: h_circle(y, barrier, t)
        F, _ = control_affine(kind, x, DEFAULT_PARAMS[kind])
        e = 1e-6
        num = (h_fn(x + e * F, 1.0 + e) - h_fn(x - e * F, 1.0 - e)) / (2 * e)
        _, hdot, _ = lie_terms(x, barrier, snap, 1.0)
        assert abs(hdot - num) <= 1e-4 * max(abs(num), 1e-3)


def test_bound_shifts_rhs_by_gradient_norm():
    snap = ModelSnapshot("point")
    x = np.array([0.3, -0.2, 0.9, 0.6, 0.1, 0.0])
    obs = CircleObstacle((1.2, 0.4), (0.1, -0.1), 0.4, 0.15)
    cfg = CbfConfig(robustness_mode="dob_plus_bound")
    d_hat = np.array([0.0, 0.0, 0.1, 0.2, -0.1, 0.0])
    c0 = build_constraint(x, obs, snap, d_hat, 0.0, cfg, 0.3)
    c1 = build_constraint(x, obs, snap, d_hat, 0.8, cfg, 0.3)
    _, _, grad = lie_terms(x, obs, snap, 0.3)
    assert c0.rhs - c1.rhs == pytest.approx(np.linalg.norm(grad) * 0.8, rel=1e-12)
    np.testing.assert_array_equal(c0.coeff, c1.coeff)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.integers(0, 2**31))
def test_rhs_monotone_in_error_bound(b1, b2, seed):
    rng = np.random.default_rng(seed)
    snap = ModelSnapshot("point")
    x = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-3, 3, 1), rng.uniform(-1, 1, 3)])
    circles = np.array([[1.0, 1.0, 0.1, 0.0, 0.55], [-1.5, 0.2, 0.0, -0.2, 0.55]])
    walls = np.array([w.as_row() for w in arena_walls(2.1, 0.15)])
    cfg = CbfConfig(robustness_mode="dob_plus_bound")
    lo, hi = sorted((b1, b2))
    _, r_lo, _, _ = build_constraints(x, circles, walls, snap, np.zeros(6), lo, cfg)
    _, r_hi, _, _ = build_constraints(x, circles, walls, snap, np.zeros(6), hi, cfg)
    assert np.all(r_hi <= r_lo)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.integers(0, 2**31))
def test_translation_invariance(sx, sy, seed):
    rng = np.random.default_rng(seed)
    m = ResidualModel.create(rng)
    m.f_net.weights[-1][:] = rng.normal(scale=0.2, size=m.f_net.weights[-1].shape)
    snap = ModelSnapshot("point", DEFAULT_PARAMS["point"], m)
    x = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-3, 3, 1), rng.uniform(-1, 1, 3)])
    obs = CircleObstacle(tuple(rng.uniform(-2, 2, 2)), tuple(rng.uniform(-0.3, 0.3, 2)), 0.4, 0.15)
    shift = np.array([sx, sy])
    xs = x.copy()
    xs[:2] += shift
    moved = CircleObstacle(tuple(np.array(obs.center) + shift), obs.velocity, 0.4, 0.15)
    cfg = CbfConfig()
    d = rng.normal(size=6) * 0.1
    a = build_constraint(x, obs, snap, d, 0.3, cfg, 0.7)
    b = build_constraint(xs, moved, snap, d, 0.3, cfg, 0.7)
    assert h_circle(x, obs, 0.7) == pytest.approx(h_circle(xs, moved, 0.7), abs=1e-12)
    np.testing.assert_allclose(a.coeff, b.coeff, atol=1e-9)
    assert a.rhs == pytest.approx(b.rhs, abs=1e-9)


@given(st.floats(-math.pi, math.pi), st.floats(-3, 3), st.floats(-3, 3))
def test_h_circle_rotation_invariance(angle, px, py):
    obs = CircleObstacle((0.7, -0.3), (0.0, 0.0), 0.4, 0.15)
    c = np.array(obs.center)
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    p = np.array([px, py])
    q = c + R @ (p - c)
    assert h_circle(np.array([*p, 0, 0, 0, 0]), obs) == pytest.approx(
        h_circle(np.array([*q, 0, 0, 0, 0]), obs), abs=1e-12)


def test_h_circle_examples():
    obs = CircleObstacle((0.0, 0.0), (0.0, 0.0), 1.0, 0.5)
    assert h_circle(np.array([3.0, 4.0, 0, 0, 0, 0]), obs) == pytest.approx(3.5)
    assert h_circle(np.array([1.5, 0.0, 0, 0, 0, 0]), obs) == pytest.approx(0.0, abs=1e-15)
    moving = CircleObstacle((0.0, 0.0), (1.0, 0.0), 1.0, 0.5)
    static = CircleObstacle((2.0, 0.0), (0.0, 0.0), 1.0, 0.5)
    for p in ([3.0, 4.0], [-1.0, 0.5], [2.0, 1.6]):
        x = np.array([*p, 0, 0, 0, 0])
        assert h_circle(x, moving, 2.0) == h_circle(x, static)


def test_h_wall_examples():
    left = WallBarrier((1.0, 0.0), 2.1)
    assert h_wall(np.array([-2.1, 0.7, 0, 0, 0, 0]), left) == 0.0
    assert h_wall(np.zeros(6), left) == pytest.approx(2.1)
    assert h_wall(np.array([-2.2, 0, 0, 0, 0, 0]), left) == pytest.approx(-0.1)
    walls = arena_walls(2.1)
    assert [h_wall(np.zeros(6), w) for w in walls] == [2.1] * 4
    with pytest.raises(ValueError):
        WallBarrier((1.0, 1.0), 0.0)


def test_degenerate_center_sentinel():
    obs = CircleObstacle((0.5, 0.5), (0.0, 0.0), 0.4, 0.15)
    x = np.array([0.5, 0.5, 0.0, 0.3, 0.0, 0.0])
    c = build_constraint(x, obs, ModelSnapshot("point"), np.zeros(6), 0.0, CbfConfig())
    assert c.degenerate
    assert c.rhs < 0 and not np.any(c.coeff)  # no u satisfies 0.u - 1 >= 0


def test_residual_enters_drift_and_input():
    rng = np.random.default_rng(3)
    m = ResidualModel.create(rng)
    for net in (m.f_net, m.g_net):
        net.weights[-1][:] = rng.normal(scale=0.2, size=net.weights[-1].shape)
    x = np.array([0.1, 0.2, 0.3, 0.4, 0.0, 0.1])
    F, G, Jp = ModelSnapshot("point", DEFAULT_PARAMS["point"], m).evaluate(x)
    F0, G0 = control_affine("point", x, DEFAULT_PARAMS["point"])
    df, dg = m.terms(x)
    np.testing.assert_allclose(F, F0 + df)
    np.testing.assert_allclose(G, G0 + dg)
    e = 1e-6
    num = np.array([((ModelSnapshot("point", DEFAULT_PARAMS["point"], m).evaluate(x + e * v)[0]
                      - ModelSnapshot("point", DEFAULT_PARAMS["point"], m).evaluate(x - e * v)[0])[:2]) / (2 * e)
                    for v in np.eye(6)]).T
    np.testing.assert_allclose(Jp, num, atol=1e-7)


def test_config_validation():
    with pytest.raises(ValueError):
        CbfConfig(beta1=0.0)
    with pytest.raises(ValueError):
        CbfConfig(relative_degree=3)
    with pytest.raises(ValueError):
        CbfConfig(robustness_mode="robust")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_hocbf_backends_agree(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=6)
    G = rng.normal(size=(6, 2))
    Jp = rng.normal(size=(2, 6))
    d = rng.normal(size=6)
    pos = rng.normal(size=2)
    circles = np.column_stack([rng.normal(size=(3, 2)), rng.normal(size=(3, 2)) * 0.2, np.full(3, 0.55)])
    walls = np.array([w.as_row() for w in arena_walls(2.1)])
    a = kernels.hocbf_rows(F, G, Jp, d, pos, circles, walls, 2.0, 3.0, 0.4)
    b = _pykernels.hocbf_rows(F, G, Jp, d, pos, circles, walls, 2.0, 3.0, 0.4)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-12)
