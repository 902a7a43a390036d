"""State/control conventions, the nominal Point and Car models, the simulated
"true" plant, and a fixed-step RK4 integrator.

States are float64 arrays ``[x_p, y_p, theta_p, v_x, v_y, omega]``; the yaw
angle is kept unwrapped.  Controls are length-2 arrays: ``(c_v, c_omega)``
for the Point robot and ``(c_l, c_r)`` for the Car.
"""
from dataclasses import dataclass, replace
from math import pi

import numpy as np

from resdob import kernels

STATE_DIM = 6
CONTROL_DIM = 2
X, Y, THETA, VX, VY, OMEGA = range(6)

ROBOT_KINDS = ("point", "car")
_KIND_CODE = {"point": kernels._pykernels.POINT, "car": kernels._pykernels.CAR}
_ZERO_WIND = np.zeros(2)


def make_state(x_p=0.0, y_p=0.0, theta_p=0.0, v_x=0.0, v_y=0.0, omega=0.0):
    return np.array([x_p, y_p, theta_p, v_x, v_y, omega], dtype=float)


def wrap_angle(theta):
    """Map an angle (scalar or array) to (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + pi, 2.0 * pi) - pi
    wrapped = np.where(wrapped <= -pi, wrapped + 2.0 * pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class ModelParams:
    """Gains of the unicycle-family models.

    ``slip_gain``, ``omega_damping`` and ``skid_coupling`` only exist in the
    simulated plant; nominal models keep them at zero.
    """

    k_omega: float
    k_v1: float
    k_v2: float
    slip_gain: float = 0.0
    omega_damping: float = 0.0
    skid_coupling: float = 0.0

    def __post_init__(self):
        for name in ("k_omega", "k_v1", "k_v2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        for name in ("slip_gain", "omega_damping", "skid_coupling"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")

    def as_array(self):
        return np.array(
            [self.k_omega, self.k_v1, self.k_v2, self.slip_gain, self.omega_damping, self.skid_coupling]
        )

    def nominal_part(self):
        """The same gains with the plant-only extras switched off."""
        return replace(self, slip_gain=0.0, omega_damping=0.0, skid_coupling=0.0)

    def mismatched(self, factor, slip_gain=0.0, omega_damping=0.0, skid_coupling=0.0):
        """Plant parameters: every gain scaled by ``factor`` plus the extras."""
        return ModelParams(
            k_omega=self.k_omega * factor,
            k_v1=self.k_v1 * factor,
            k_v2=self.k_v2 * factor,
            slip_gain=slip_gain,
            omega_damping=omega_damping,
            skid_coupling=skid_coupling,
        )


# Nominal gains picked so both robots top out near 1 m/s with a [-1, 1] box.
DEFAULT_PARAMS = {
    "point": ModelParams(k_omega=2.0, k_v1=1.0, k_v2=2.0),
    "car": ModelParams(k_omega=4.0, k_v1=3.0, k_v2=0.5),
}

# Unmodelled plant channels used on top of the gain mismatch.
DEFAULT_PLANT_EXTRAS = {
    "point": {"slip_gain": 4.0, "omega_damping": 1.0, "skid_coupling": 0.1},
    "car": {"slip_gain": 4.0, "omega_damping": 1.0, "skid_coupling": 0.1},
}


def kind_code(kind):
    try:
        return _KIND_CODE[kind]
    except KeyError:
        raise ValueError(f"unknown robot kind {kind!r}; expected one of {ROBOT_KINDS}") from None


def _as_vec(a, n):
    a = np.ascontiguousarray(a, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {a.shape}")
    return a


def nominal_point_deriv(state, control, params):
    return kernels.plant_deriv(
        0, _as_vec(state, 6), _as_vec(control, 2), params.nominal_part().as_array(), _ZERO_WIND
    )


def nominal_car_deriv(state, control, params):
    return kernels.plant_deriv(
        1, _as_vec(state, 6), _as_vec(control, 2), params.nominal_part().as_array(), _ZERO_WIND
    )


def nominal_deriv(kind, state, control, params):
    if kind == "point":
        return nominal_point_deriv(state, control, params)
    if kind == "car":
        return nominal_car_deriv(state, control, params)
    raise ValueError(f"unknown robot kind {kind!r}")


def true_plant_deriv(kind, state, control, true_params, wind):
    """Plant derivative: nominal structure with ``true_params``, lateral slip,
    yaw damping, and the world-frame ``wind`` acceleration rotated into the
    body frame."""
    return kernels.plant_deriv(
        kind_code(kind), _as_vec(state, 6), _as_vec(control, 2), true_params.as_array(), _as_vec(wind, 2)
    )


def plant_step(kind, state, control, params, wind, dt):
    """RK4 step of :func:`true_plant_deriv` with the wind held over the step."""
    return kernels.plant_step(
        kind_code(kind), _as_vec(state, 6), _as_vec(control, 2), params.as_array(), _as_vec(wind, 2), dt
    )


def control_affine(kind, state, params):
    """Nominal drift ``f(x)`` (6,) and input matrix ``g(x)`` (6, 2)."""
    theta, vx, om = state[THETA], state[VX], state[OMEGA]
    c, s = np.cos(theta), np.sin(theta)
    f = np.zeros(STATE_DIM)
    g = np.zeros((STATE_DIM, CONTROL_DIM))
    f[X] = vx * c
    f[Y] = vx * s
    if kind == "point":
        f[VX] = -params.k_v2 * vx
        g[VX, 0] = params.k_v2 * params.k_v1
        g[THETA, 1] = params.k_omega
    elif kind == "car":
        f[THETA] = om
        f[VX] = -params.k_v1 * vx
        g[VX, :] = params.k_v1 * params.k_v2
        g[OMEGA, 0] = -params.k_omega
        g[OMEGA, 1] = params.k_omega
    else:
        raise ValueError(f"unknown robot kind {kind!r}")
    return f, g


def position_drift_jacobian(state):
    """Jacobian (2, 6) of the nominal position rows ``(v_x cos, v_x sin)``.

    Both robots share these rows and they carry no control term.
    """
    theta, vx = state[THETA], state[VX]
    c, s = np.cos(theta), np.sin(theta)
    J = np.zeros((2, STATE_DIM))
    J[0, THETA] = -vx * s
    J[0, VX] = c
    J[1, THETA] = vx * c
    J[1, VX] = s
    return J


def integrate(state, control, deriv_fn, dt=0.02):
    """One classical fourth-order Runge-Kutta step of ``deriv_fn(state, control)``."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    k1 = np.asarray(deriv_fn(x, control), dtype=float)
    k2 = np.asarray(deriv_fn(x + 0.5 * dt * k1, control), dtype=float)
    k3 = np.asarray(deriv_fn(x + 0.5 * dt * k2, control), dtype=float)
    k4 = np.asarray(deriv_fn(x + dt * k3, control), dtype=float)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
