"""Pure-Python implementations of the hot per-step kernels.

This module mirrors ``_ckernels.pyx`` line for line and is used whenever the
compiled extension is unavailable (or ``RESDOB_PURE_PYTHON=1`` is set).
Scalars are handled as Python floats: for 2x2 to 5x5 systems this beats
numpy's per-call overhead by a wide margin.
"""
from itertools import combinations
from math import cos, sin, sqrt

import numpy as np

POINT = 0
CAR = 1

# Relative tolerance used to break ties between equal-objective candidates.
_TIE_RTOL = 1e-14


def plant_deriv(kind, x, u, params, wind):
    """Unicycle-family state derivative with optional plant extras and wind.

    ``params`` is ``(k_omega, k_v1, k_v2, slip_gain, omega_damping,
    skid_coupling)``; ``wind`` is a world-frame acceleration held over the
    call.  With the extras and the wind set to zero this is exactly the
    nominal model.
    """
    return np.array(_deriv(kind, x.tolist(), u.tolist(), params.tolist(), wind.tolist()))


def _deriv(kind, x, u, p, w):
    theta = x[2]
    vx = x[3]
    vy = x[4]
    om = x[5]
    k_om, k_v1, k_v2, slip, damp, skid = p
    c = cos(theta)
    s = sin(theta)
    if kind == POINT:
        yaw_rate = k_om * u[1]
        dvx = k_v2 * (k_v1 * u[0] - vx)
        dom = -damp * om
    else:
        yaw_rate = om
        dvx = k_v1 * (k_v2 * (u[0] + u[1]) - vx)
        dom = k_om * (u[1] - u[0]) - damp * om
    dvy = slip * (skid * vx * yaw_rate - vy)
    # world-frame wind resolved into the body frame
    dvx += w[0] * c + w[1] * s
    dvy += -w[0] * s + w[1] * c
    return [vx * c, vx * s, yaw_rate, dvx, dvy, dom]


def plant_step(kind, x, u, params, wind, dt):
    """One classical RK4 step of :func:`plant_deriv` with zero-order-hold input."""
    x0 = x.tolist()
    uu = u.tolist()
    p = params.tolist()
    w = wind.tolist()
    k1 = _deriv(kind, x0, uu, p, w)
    k2 = _deriv(kind, [a + 0.5 * dt * b for a, b in zip(x0, k1)], uu, p, w)
    k3 = _deriv(kind, [a + 0.5 * dt * b for a, b in zip(x0, k2)], uu, p, w)
    k4 = _deriv(kind, [a + dt * b for a, b in zip(x0, k3)], uu, p, w)
    return np.array(
        [
            a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            for a, b1, b2, b3, b4 in zip(x0, k1, k2, k3, k4)
        ]
    )


def _solve_inplace(M, r):
    """Gaussian elimination with partial pivoting; returns None if singular."""
    n = len(r)
    scale = 1.0
    for row in M:
        for v in row:
            if abs(v) > scale:
                scale = abs(v)
    for col in range(n):
        piv = col
        best = abs(M[col][col])
        for i in range(col + 1, n):
            if abs(M[i][col]) > best:
                best = abs(M[i][col])
                piv = i
        if best < 1e-12 * scale:
            return None
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            r[col], r[piv] = r[piv], r[col]
        inv = 1.0 / M[col][col]
        for i in range(col + 1, n):
            f = M[i][col] * inv
            if f != 0.0:
                Mi = M[i]
                Mc = M[col]
                for j in range(col, n):
                    Mi[j] -= f * Mc[j]
                r[i] -= f * r[col]
    out = [0.0] * n
    for i in range(n - 1, -1, -1):
        acc = r[i]
        for j in range(i + 1, n):
            acc -= M[i][j] * out[j]
        out[i] = acc / M[i][i]
    return out


def _inverse(Q):
    n = len(Q)
    cols = []
    for k in range(n):
        e = [0.0] * n
        e[k] = 1.0
        col = _solve_inplace([row[:] for row in Q], e)
        if col is None:
            raise ValueError("weight matrix is singular")
        cols.append(col)
    return [[cols[j][i] for j in range(n)] for i in range(n)]


def qp_enumerate(Q, u0, G, h, max_active, tol):
    """Minimise ``0.5 (u-u0)' Q (u-u0)`` s.t. ``G u + h >= 0`` by enumeration.

    Every active subset of size ``<= max_active`` is tried in (size, lex)
    order; the feasible candidate with the least objective wins and ties go
    to the earliest subset.  Returns ``(found, u, objective, active)``.
    """
    Ql = Q.tolist()
    ul = u0.tolist()
    Gl = G.tolist()
    hl = h.tolist()
    k = len(ul)
    nc = len(hl)
    Qi = _inverse(Ql)
    # precompute Q^-1 G_i' for every row
    QiG = [[sum(Qi[a][b] * Gl[i][b] for b in range(k)) for a in range(k)] for i in range(nc)]
    g_u0 = [sum(Gl[i][a] * ul[a] for a in range(k)) + hl[i] for i in range(nc)]

    if all(v >= -tol for v in g_u0):
        return True, np.array(ul), 0.0, ()

    found = False
    best_obj = float("inf")
    best_u = ul
    best_set = ()
    for size in range(1, min(max_active, nc) + 1):
        for subset in combinations(range(nc), size):
            M = [[sum(Gl[i][a] * QiG[j][a] for a in range(k)) for j in subset] for i in subset]
            rhs = [-g_u0[i] for i in subset]
            mu = _solve_inplace(M, rhs)
            if mu is None:
                continue
            du = [0.0] * k
            for coef, i in zip(mu, subset):
                col = QiG[i]
                for a in range(k):
                    du[a] += coef * col[a]
            # one step of iterative refinement on the active rows; nearly
            # parallel rows otherwise leave ~1e-9 residuals on them
            fix = [-(g_u0[i] + sum(Gl[i][a] * du[a] for a in range(k))) for i in subset]
            M = [[sum(Gl[i][a] * QiG[j][a] for a in range(k)) for j in subset] for i in subset]
            dmu = _solve_inplace(M, fix)
            if dmu is not None:
                for coef, i in zip(dmu, subset):
                    col = QiG[i]
                    for a in range(k):
                        du[a] += coef * col[a]
            obj = 0.0
            for a in range(k):
                acc = 0.0
                for b in range(k):
                    acc += Ql[a][b] * du[b]
                obj += du[a] * acc
            obj *= 0.5
            if found and not obj < best_obj - _TIE_RTOL * (1.0 + abs(best_obj)):
                continue
            u = [ul[a] + du[a] for a in range(k)]
            ok = True
            for i in range(nc):
                val = hl[i]
                Gi = Gl[i]
                for a in range(k):
                    val += Gi[a] * u[a]
                if val < -tol:
                    ok = False
                    break
            if ok:
                found = True
                best_obj = obj
                best_u = u
                best_set = subset
    return found, np.array(best_u), best_obj, best_set


def hocbf_rows(F, G, Jp, dhat, pos, circles, walls, beta1, beta2, bound):
    """Assemble second-order robust barrier rows ``coeff . u + rhs >= 0``.

    ``circles`` is an (N, 5) array of ``(cx, cy, vx, vy, radius)`` with the
    radius already including the robot's; ``walls`` is (W, 3) of
    ``(nx, ny, offset)``.  ``F``/``G`` are the drift and input matrix used by
    the filter, ``Jp`` the 2x6 Jacobian of the position rows of ``F``.
    Returns ``(coeff, rhs, h, degenerate)``.
    """
    Fl = F.tolist()
    Gl = G.tolist()
    J0, J1 = Jp.tolist()
    dl = dhat.tolist()
    m = len(Gl[0])
    px, py = float(pos[0]), float(pos[1])
    rows = []
    for cx, cy, ovx, ovy, rad in circles.tolist():
        dx = px - cx
        dy = py - cy
        dist = sqrt(dx * dx + dy * dy)
        if dist < 1e-9:
            rows.append(([0.0] * m, -1.0, dist - rad, True))
            continue
        n0 = dx / dist
        n1 = dy / dist
        w0 = Fl[0] - ovx
        w1 = Fl[1] - ovy
        psi = n0 * w0 + n1 * w1
        # H = (I - n n') / dist, applied to the relative velocity
        proj = psi
        Hw0 = (w0 - n0 * proj) / dist
        Hw1 = (w1 - n1 * proj) / dist
        grad = [n0 * J0[k] + n1 * J1[k] for k in range(6)]
        grad[0] += Hw0
        grad[1] += Hw1
        dpsi_dt = -(Hw0 * ovx + Hw1 * ovy)
        rows.append(_finish(grad, psi, dpsi_dt, dist - rad, Fl, Gl, dl, m, beta1, beta2, bound))
    for nx, ny, off in walls.tolist():
        psi = nx * Fl[0] + ny * Fl[1]
        grad = [nx * J0[k] + ny * J1[k] for k in range(6)]
        rows.append(_finish(grad, psi, 0.0, nx * px + ny * py + off, Fl, Gl, dl, m, beta1, beta2, bound))
    K = len(rows)
    coeff = np.zeros((K, m))
    rhs = np.zeros(K)
    hval = np.zeros(K)
    degenerate = np.zeros(K, dtype=bool)
    for i, (c, r, hv, dg) in enumerate(rows):
        coeff[i] = c
        rhs[i] = r
        hval[i] = hv
        degenerate[i] = dg
    return coeff, rhs, hval, degenerate


def _finish(grad, psi, dpsi_dt, h, F, G, d, m, beta1, beta2, bound):
    lf2 = dpsi_dt
    dist_term = 0.0
    norm2 = 0.0
    for k in range(6):
        lf2 += grad[k] * F[k]
        dist_term += grad[k] * d[k]
        norm2 += grad[k] * grad[k]
    coeff = [0.0] * m
    for j in range(m):
        acc = 0.0
        for k in range(6):
            acc += grad[k] * G[k][j]
        coeff[j] = acc
    rhs = lf2 + beta1 * psi + dist_term + beta2 * (psi + beta1 * h) - bound * sqrt(norm2)
    return coeff, rhs, h, False
