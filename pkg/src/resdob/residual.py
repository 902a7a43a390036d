"""Online residual dynamics learning.

Two networks correct the nominal model: ``df(x)`` (6,) and ``dg(x)`` (6, m),
so that ``xdot ~ f_nom + g_nom u + df + dg u``.  Both take the yaw-invariant
features ``(sin theta, cos theta, v_x, v_y, omega)`` of the state; position is
deliberately excluded so the correction is translation invariant.
"""
import numpy as np

from resdob.dynamics import CONTROL_DIM, OMEGA, STATE_DIM, THETA, VX, VY
from resdob.nn import Mlp, sgd_step

N_FEATURES = 5


def state_features(x):
    theta = x[THETA]
    return np.array([np.sin(theta), np.cos(theta), x[VX], x[VY], x[OMEGA]])


def features_jacobian(x):
    """d features / d state, shape (5, 6)."""
    theta = x[THETA]
    J = np.zeros((N_FEATURES, STATE_DIM))
    J[0, THETA] = np.cos(theta)
    J[1, THETA] = -np.sin(theta)
    J[2, VX] = 1.0
    J[3, VY] = 1.0
    J[4, OMEGA] = 1.0
    return J


class ResidualModel:
    """Learned ``df``/``dg`` pair trained by plain SGD on ``0.5 * ||e||^2``."""

    def __init__(self, f_net, g_net, learning_rate=0.02, enabled=True, clip_norm=10.0,
                 control_dim=CONTROL_DIM):
        if f_net.n_out != STATE_DIM or g_net.n_out != STATE_DIM * control_dim:
            raise ValueError("f_net must output n values and g_net n*m values")
        if f_net.n_in != N_FEATURES or g_net.n_in != N_FEATURES:
            raise ValueError(f"residual nets take {N_FEATURES} state features")
        if not learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        self.f_net = f_net
        self.g_net = g_net
        self.learning_rate = float(learning_rate)
        self.enabled = bool(enabled)
        self.clip_norm = clip_norm
        self.control_dim = control_dim
        self.n_updates = 0
        self.skipped_updates = 0

    @classmethod
    def create(cls, rng, hidden=(32, 32), learning_rate=0.02, enabled=True, control_dim=CONTROL_DIM,
               clip_norm=10.0):
        sizes_f = (N_FEATURES, *hidden, STATE_DIM)
        sizes_g = (N_FEATURES, *hidden, STATE_DIM * control_dim)
        f_net = Mlp.init(sizes_f, rng, zero_output=True)
        g_net = Mlp.init(sizes_g, rng, zero_output=True)
        return cls(f_net, g_net, learning_rate, enabled, clip_norm, control_dim)

    def snapshot(self):
        """Independent copy for read-only use by the filter."""
        snap = ResidualModel(self.f_net.copy(), self.g_net.copy(), self.learning_rate, self.enabled,
                             self.clip_norm, self.control_dim)
        snap.n_updates = self.n_updates
        snap.skipped_updates = self.skipped_updates
        return snap

    def terms(self, x):
        """``(df (6,), dg (6, m))`` at state ``x``; zeros when disabled."""
        if not self.enabled:
            return np.zeros(STATE_DIM), np.zeros((STATE_DIM, self.control_dim))
        z = state_features(x)
        df = self.f_net.forward(z)
        dg = self.g_net.forward(z).reshape(STATE_DIM, self.control_dim)
        return df, dg

    def predict(self, x, u):
        df, dg = self.terms(x)
        return df + dg @ np.asarray(u, dtype=float)

    def drift_jacobian(self, x, rows=(0, 1)):
        """``d df[rows] / d x`` with shape (len(rows), 6)."""
        rows = list(rows)
        if not self.enabled:
            return np.zeros((len(rows), STATE_DIM))
        z = state_features(x)
        return self.f_net.input_jacobian(z, rows) @ features_jacobian(x)

    def update(self, x, u, xdot_measured, nominal):
        """One SGD step on ``0.5 * ||xdot - nominal - df - dg u||^2``.

        Returns the loss before the step, or NaN (and counts a skip) when the
        sample is not finite or the model is disabled.
        """
        if not self.enabled:
            return float("nan")
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        xdot_measured = np.asarray(xdot_measured, dtype=float)
        nominal = np.asarray(nominal, dtype=float)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))
                and np.all(np.isfinite(xdot_measured)) and np.all(np.isfinite(nominal))):
            self.skipped_updates += 1
            return float("nan")
        z = state_features(x)
        df, f_cache = self.f_net.forward_cached(z)
        dg_flat, g_cache = self.g_net.forward_cached(z)
        dg = dg_flat.reshape(STATE_DIM, self.control_dim)
        err = xdot_measured - nominal - df - dg @ u
        loss = 0.5 * float(err @ err)
        grads_f = self.f_net.backward(z, -err, f_cache)
        grads_g = self.g_net.backward(z, -np.outer(err, u).ravel(), g_cache)
        if not (grads_f.is_finite() and grads_g.is_finite()):
            self.skipped_updates += 1
            return float("nan")
        if self.clip_norm is not None:
            norm = np.hypot(grads_f.global_norm(), grads_g.global_norm())
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
                grads_f.scale(scale)
                grads_g.scale(scale)
        sgd_step(self.f_net, grads_f, self.learning_rate)
        sgd_step(self.g_net, grads_g, self.learning_rate)
        self.n_updates += 1
        return loss

    def to_dict(self):
        return {
            "f_net": self.f_net.to_dict(),
            "g_net": self.g_net.to_dict(),
            "learning_rate": self.learning_rate,
            "enabled": self.enabled,
            "clip_norm": self.clip_norm,
            "control_dim": self.control_dim,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(Mlp.from_dict(data["f_net"]), Mlp.from_dict(data["g_net"]), data["learning_rate"],
                   data["enabled"], data["clip_norm"], data["control_dim"])


def predict_residual(model, x, u):
    return model.predict(x, u)


def measured_derivative(x_prev, x_next, dt):
    """First-order finite difference of consecutive states."""
    return (np.asarray(x_next, dtype=float) - np.asarray(x_prev, dtype=float)) / dt
