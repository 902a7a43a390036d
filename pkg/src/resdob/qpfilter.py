"""Minimal-intervention safety filter solved by exact active-set enumeration.

    u_safe = argmin_u 0.5 (u - u_rl)' P (u - u_rl)
             s.t.  coeff_i . u + rhs_i >= 0,   lower <= u <= upper

With at most a handful of rows and m <= 4 every candidate active set is
solved directly.  When no box point satisfies all barrier rows, one shared
slack ``s >= 0`` is added to every barrier row and penalised by
``slack_weight * s**2``.
"""
from dataclasses import dataclass

import numpy as np

from resdob import kernels

FEAS_TOL = 1e-9
SLACK_WEIGHT = 1e6
MAX_CONTROL_DIM = 4


@dataclass
class FilterProblem:
    P: np.ndarray
    u_rl: np.ndarray
    coeff: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=float)
        self.u_rl = np.ascontiguousarray(self.u_rl, dtype=float)
        m = self.u_rl.shape[0]
        if not 1 <= m <= MAX_CONTROL_DIM:
            raise ValueError(f"control dimension must be in [1, {MAX_CONTROL_DIM}], got {m}")
        if self.P.shape != (m, m) or not np.allclose(self.P, self.P.T, rtol=0.0, atol=1e-12):
            raise ValueError("P must be a symmetric m x m matrix")
        try:
            np.linalg.cholesky(self.P)
        except np.linalg.LinAlgError:
            raise ValueError("P must be positive definite") from None
        self.coeff = np.ascontiguousarray(np.reshape(self.coeff, (-1, m)), dtype=float)
        self.rhs = np.ascontiguousarray(np.reshape(self.rhs, (-1,)), dtype=float)
        if self.coeff.shape[0] != self.rhs.shape[0]:
            raise ValueError("one rhs entry per constraint row expected")
        self.lower = np.asarray(self.lower, dtype=float).reshape(m)
        self.upper = np.asarray(self.upper, dtype=float).reshape(m)
        if not np.all(self.lower < self.upper):
            raise ValueError("box bounds need lower < upper componentwise")

    @classmethod
    def from_constraints(cls, P, u_rl, constraints, lower, upper):
        m = len(u_rl)
        coeff = np.array([c.coeff for c in constraints], dtype=float).reshape(-1, m)
        rhs = np.array([c.rhs for c in constraints], dtype=float)
        return cls(P, u_rl, coeff, rhs, lower, upper)

    @property
    def m(self):
        return self.u_rl.shape[0]

    def objective(self, u):
        du = np.asarray(u, dtype=float) - self.u_rl
        return 0.5 * float(du @ self.P @ du)

    def residuals(self, u):
        return self.coeff @ np.asarray(u, dtype=float) + self.rhs


@dataclass
class FilterResult:
    u_safe: np.ndarray
    intervened: bool
    intervention_norm: float
    slack_used: float
    active_constraints: tuple


def _box_rows(m, lower, upper, extra_cols=0):
    eye = np.eye(m)
    G = np.zeros((2 * m, m + extra_cols))
    G[:m, :m] = eye
    G[m:, :m] = -eye
    h = np.concatenate([-lower, upper])
    return G, h


def solve(problem, tol=FEAS_TOL, slack_weight=SLACK_WEIGHT):
    return solve_arrays(problem.P, problem.u_rl, problem.coeff, problem.rhs, problem.lower, problem.upper,
                        tol, slack_weight)


def solve_arrays(P, u_rl, coeff, rhs, lower, upper, tol=FEAS_TOL, slack_weight=SLACK_WEIGHT):
    """Same as :func:`solve` on already validated float arrays (the per-step fast path)."""
    m = u_rl.shape[0]
    K = rhs.shape[0]
    Gb, hb = _box_rows(m, lower, upper)
    G = np.ascontiguousarray(np.vstack([coeff, Gb]))
    h = np.ascontiguousarray(np.concatenate([rhs, hb]))
    found, u, _, active = kernels.qp_enumerate(P, u_rl, G, h, m, tol)
    slack = 0.0
    if not found:
        # work with sigma = s * sqrt(2 w) so the Hessian stays well scaled;
        # a raw 2w diagonal makes the active-set solves lose ~6 digits
        c = 1.0 / np.sqrt(2.0 * slack_weight)
        Q = np.zeros((m + 1, m + 1))
        Q[:m, :m] = P
        Q[m, m] = 1.0
        u0 = np.append(u_rl, 0.0)
        Gs = np.zeros((K + 2 * m + 1, m + 1))
        Gs[:K, :m] = coeff
        Gs[:K, m] = c
        Gb, hb = _box_rows(m, lower, upper, extra_cols=1)
        Gs[K:K + 2 * m] = Gb
        Gs[-1, m] = 1.0
        hs = np.concatenate([rhs, hb, [0.0]])
        found, us, _, active = kernels.qp_enumerate(
            Q, u0, np.ascontiguousarray(Gs), np.ascontiguousarray(hs), m + 1, tol
        )
        if not found:
            raise RuntimeError("slack-relaxed filter problem has no solution")
        u = us[:m]
        slack = max(float(us[m]) * c, 0.0)
    # enumeration accepts rows violated by up to ``tol``; keep the box exact
    u = np.minimum(np.maximum(u, lower), upper)
    du = u - u_rl
    norm = float(np.sqrt(du @ du))
    return FilterResult(
        u_safe=u,
        intervened=norm > 0.0,
        intervention_norm=norm,
        slack_used=slack,
        active_constraints=tuple(i for i in active if i < K),
    )
