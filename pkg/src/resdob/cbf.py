"""Barrier functions and the robust second-order CBF constraint.

For a position barrier ``h(p, t)`` and drift ``F = f_nom + df``, input matrix
``G = g_nom + dg``, the filter enforces

    L_F^2 h + L_G L_F h u + beta1 L_F h + [d L_F h / dx] d_hat
        + beta2 (L_F h + beta1 h) - ||d L_F h / dx|| * error_bound >= 0

which is returned as an affine row ``coeff . u + rhs >= 0``.  Moving circles
contribute their explicit time derivative to ``L_F h``.
"""
from dataclasses import dataclass, field

import numpy as np

from resdob import kernels
from resdob.dynamics import CONTROL_DIM, DEFAULT_PARAMS, control_affine, position_drift_jacobian

ROBUSTNESS_MODES = ("none", "dob", "dob_plus_bound")


@dataclass(frozen=True)
class CircleObstacle:
    center: tuple
    velocity: tuple = (0.0, 0.0)
    radius: float = 0.4
    robot_radius: float = 0.15

    def __post_init__(self):
        if self.radius < 0.0:
            raise ValueError("obstacle radius must be >= 0")
        if not self.robot_radius > 0.0:
            raise ValueError("robot radius must be > 0")

    def center_at(self, t):
        return np.asarray(self.center, dtype=float) + t * np.asarray(self.velocity, dtype=float)

    def as_row(self, t):
        c = self.center_at(t)
        v = self.velocity
        return [c[0], c[1], float(v[0]), float(v[1]), self.radius + self.robot_radius]


@dataclass(frozen=True)
class WallBarrier:
    normal: tuple
    offset: float

    def __post_init__(self):
        if abs(np.hypot(*self.normal) - 1.0) > 1e-12:
            raise ValueError("wall normal must be a unit vector")

    def as_row(self):
        return [float(self.normal[0]), float(self.normal[1]), float(self.offset)]


def arena_walls(half_width, margin=0.0):
    """The four walls of ``[-half_width, half_width]^2`` shrunk by ``margin``."""
    off = half_width - margin
    return [
        WallBarrier((1.0, 0.0), off),
        WallBarrier((-1.0, 0.0), off),
        WallBarrier((0.0, 1.0), off),
        WallBarrier((0.0, -1.0), off),
    ]


@dataclass(frozen=True)
class BarrierConstraint:
    """``coeff . u + rhs >= 0``; ``degenerate`` marks the infeasible sentinel."""

    coeff: np.ndarray
    rhs: float
    degenerate: bool = False


@dataclass(frozen=True)
class CbfConfig:
    beta1: float = 2.0
    beta2: float = 2.0
    relative_degree: int = 2
    robustness_mode: str = "dob_plus_bound"

    def __post_init__(self):
        if not (self.beta1 > 0.0 and self.beta2 > 0.0):
            raise ValueError("class-K coefficients must be positive")
        if self.relative_degree != 2:
            raise ValueError("only relative degree 2 barriers are supported")
        if self.robustness_mode not in ROBUSTNESS_MODES:
            raise ValueError(f"robustness_mode must be one of {ROBUSTNESS_MODES}")


@dataclass
class ModelSnapshot:
    """What the filter believes about the plant: nominal gains plus an optional residual."""

    kind: str = "point"
    params: object = field(default_factory=lambda: DEFAULT_PARAMS["point"])
    residual: object = None

    def evaluate(self, x):
        """Drift (6,), input matrix (6, m) and the position-row drift Jacobian (2, 6)."""
        F, G = control_affine(self.kind, x, self.params)
        Jp = position_drift_jacobian(x)
        if self.residual is not None and self.residual.enabled:
            df, dg = self.residual.terms(x)
            F = F + df
            G = G + dg
            Jp = Jp + self.residual.drift_jacobian(x)
        return F, G, Jp


def h_circle(x, obs, t=0.0):
    c = obs.center_at(t)
    return float(np.hypot(x[0] - c[0], x[1] - c[1]) - obs.radius - obs.robot_radius)


def h_wall(x, wall):
    return float(wall.normal[0] * x[0] + wall.normal[1] * x[1] + wall.offset)


def _robust_terms(cfg, d_hat, error_bound):
    if cfg.robustness_mode == "none":
        return np.zeros(6), 0.0
    d = np.ascontiguousarray(d_hat, dtype=float)
    if cfg.robustness_mode == "dob":
        return d, 0.0
    return d, float(error_bound)


def build_constraints(x, circles, walls, snapshot, d_hat, error_bound, cfg, model=None):
    """Vectorised constraint rows for a batch of barriers.

    ``circles`` is (N, 5) ``(cx, cy, vx, vy, r_i + r_p)`` evaluated at the
    current time and ``walls`` is (W, 3) ``(nx, ny, offset)``.  ``model``
    may carry a precomputed ``snapshot.evaluate(x)``.  Returns
    ``(coeff (K, m), rhs (K,), h (K,), degenerate (K,))`` with circles first.
    """
    x = np.ascontiguousarray(x, dtype=float)
    F, G, Jp = snapshot.evaluate(x) if model is None else model
    d, bound = _robust_terms(cfg, d_hat, error_bound)
    circles = np.ascontiguousarray(np.reshape(circles, (-1, 5)), dtype=float)
    walls = np.ascontiguousarray(np.reshape(walls, (-1, 3)), dtype=float)
    return kernels.hocbf_rows(
        np.ascontiguousarray(F), np.ascontiguousarray(G), np.ascontiguousarray(Jp), d,
        x[:2].copy(), circles, walls, cfg.beta1, cfg.beta2, bound,
    )


def build_constraint(x, barrier, snapshot, d_hat, error_bound, cfg, t=0.0):
    """Single-barrier version of :func:`build_constraints`."""
    if isinstance(barrier, CircleObstacle):
        circles, walls = [barrier.as_row(t)], np.zeros((0, 3))
    elif isinstance(barrier, WallBarrier):
        circles, walls = np.zeros((0, 5)), [barrier.as_row()]
    else:
        raise TypeError(f"unsupported barrier type {type(barrier).__name__}")
    coeff, rhs, _, degenerate = build_constraints(x, circles, walls, snapshot, d_hat, error_bound, cfg)
    return BarrierConstraint(coeff[0], float(rhs[0]), bool(degenerate[0]))


def lie_terms(x, barrier, snapshot, t=0.0):
    """``h``, ``L_F h`` (with the explicit time term) and ``d L_F h / dx`` for one barrier.

    Used for diagnostics and by the property tests; the filter itself goes
    through the kernel.
    """
    x = np.asarray(x, dtype=float)
    F, _, Jp = snapshot.evaluate(x)
    if isinstance(barrier, CircleObstacle):
        c = barrier.center_at(t)
        vo = np.asarray(barrier.velocity, dtype=float)
        diff = x[:2] - c
        dist = float(np.hypot(*diff))
        n = diff / dist
        w = F[:2] - vo
        H = (np.eye(2) - np.outer(n, n)) / dist
        grad = Jp.T @ n
        grad[:2] += H @ w
        return dist - barrier.radius - barrier.robot_radius, float(n @ w), grad
    n = np.asarray(barrier.normal, dtype=float)
    return h_wall(x, barrier), float(n @ F[:2]), Jp.T @ n


__all__ = [
    "CONTROL_DIM",
    "ROBUSTNESS_MODES",
    "BarrierConstraint",
    "CbfConfig",
    "CircleObstacle",
    "ModelSnapshot",
    "WallBarrier",
    "arena_walls",
    "build_constraint",
    "build_constraints",
    "h_circle",
    "h_wall",
    "lie_terms",
]
