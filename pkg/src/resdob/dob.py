"""Piecewise-constant disturbance observer.

The predictor integrates ``x_hat' = model(x) + d_hat - a (x_hat - x)`` where
``model`` is the nominal derivative plus the learned residual, and every
``T`` seconds the estimate is reset to ``d_hat = -a / (exp(aT) - 1) * (x_hat - x)``.
Between resets ``d_hat`` is held exactly constant.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from resdob.dynamics import STATE_DIM

# Slack when comparing elapsed simulated time with the sampling period.
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class DobState:
    x_hat: np.ndarray
    d_hat: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))
    a: float = 10.0
    T: float = 0.02
    error_bound: float = 0.0
    last_update_time: float = 0.0

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError("predictor gain a must be > 0")
        if not self.T > 0.0:
            raise ValueError("sampling time T must be > 0")
        if not self.error_bound >= 0.0:
            raise ValueError("error_bound must be >= 0")

    @property
    def pc_gain(self):
        """``a / (exp(aT) - 1)``."""
        return self.a / np.expm1(self.a * self.T)


def init_dob(x0, a=10.0, T=0.02, error_bound=0.0, t0=0.0):
    return DobState(np.array(x0, dtype=float), np.zeros(STATE_DIM), a, T, error_bound, t0)


def predictor_step(dob, x, nominal, residual, dt, x_next=None, nominal_next=None, residual_next=None,
                   x_mid=None, model_mid=None):
    """Advance the state predictor by ``dt`` with the shared RK4 scheme.

    With only ``x``/``nominal``/``residual`` the measured state and model
    derivative are held over the step.  When the values at the end of the
    step are also given, both are interpolated linearly across it, which
    keeps the predictor from lagging a moving plant.  ``x_mid``/``model_mid``
    replace the interpolated midpoint values when the caller has better ones.
    """
    if dt > dob.T + _TIME_EPS:
        raise ValueError("predictor step must not exceed the sampling time T")
    x0 = np.asarray(x, dtype=float)
    m0 = np.asarray(nominal, dtype=float) + np.asarray(residual, dtype=float)
    if x_next is None:
        x1, m1 = x0, m0
    else:
        x1 = np.asarray(x_next, dtype=float)
        m1 = np.asarray(nominal_next, dtype=float) + np.asarray(residual_next, dtype=float)
    a = dob.a
    d_hat = dob.d_hat
    xm = 0.5 * (x0 + x1) if x_mid is None else np.asarray(x_mid, dtype=float)
    mm = 0.5 * (m0 + m1) if model_mid is None else np.asarray(model_mid, dtype=float)

    def rhs(y, xs, ms):
        return ms + d_hat - a * (y - xs)

    y = dob.x_hat
    k1 = rhs(y, x0, m0)
    k2 = rhs(y + 0.5 * dt * k1, xm, mm)
    k3 = rhs(y + 0.5 * dt * k2, xm, mm)
    k4 = rhs(y + dt * k3, x1, m1)
    return replace(dob, x_hat=y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def pc_update(dob, x, t=None):
    """Piecewise-constant estimation law at a sampling instant."""
    x_tilde = dob.x_hat - np.asarray(x, dtype=float)
    d_hat = -dob.pc_gain * x_tilde
    return replace(dob, d_hat=d_hat, last_update_time=dob.last_update_time if t is None else float(t))


class DisturbanceObserver:
    """Stateful wrapper that runs the predictor every step and the PC law every ``T``."""

    def __init__(self, a=10.0, T=0.02, error_bound=0.0):
        self.a = a
        self.T = T
        self.error_bound = error_bound
        self.state = None

    def reset(self, x0, t0=0.0):
        self.state = init_dob(x0, self.a, self.T, self.error_bound, t0)

    @property
    def d_hat(self):
        return self.state.d_hat

    def advance(self, x_prev, x_now, model_prev, model_now, dt, t_now, model_fn=None):
        """Integrate over ``[t_now - dt, t_now]`` then update ``d_hat`` if a sample is due.

        ``model_prev``/``model_now`` are nominal-plus-residual derivatives at
        ``x_prev``/``x_now`` with the control applied over the step.  With
        ``model_fn`` the midpoint state is taken from the cubic Hermite
        interpolant (the held ``d_hat`` cancels from the slope difference)
        and the model is evaluated there, which makes the step integral fourth-order accurate.
        """
        zeros = np.zeros(STATE_DIM)
        x_mid = model_mid = None
        if model_fn is not None:
            x_mid = 0.5 * (x_prev + x_now) + dt / 8.0 * (model_prev - model_now)
            model_mid = model_fn(x_mid)
        self.state = predictor_step(self.state, x_prev, model_prev, zeros, dt, x_now, model_now, zeros,
                                    x_mid, model_mid)
        if t_now - self.state.last_update_time >= self.T - _TIME_EPS:
            self.state = pc_update(self.state, x_now, t_now)
        return self.state.d_hat
