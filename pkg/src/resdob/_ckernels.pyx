# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the per-step kernels; see ``_pykernels`` for the reference."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, INFINITY

cnp.import_array()

cdef enum:
    MAXK = 6
    MAXC = 96

cdef double _TIE_RTOL = 1e-14


cdef inline void _deriv(int kind, const double* x, const double* u, const double* p,
                        const double* w, double* out) noexcept nogil:
    cdef double theta = x[2]
    cdef double vx = x[3]
    cdef double vy = x[4]
    cdef double om = x[5]
    cdef double c = cos(theta)
    cdef double s = sin(theta)
    cdef double yaw_rate, dvx, dom, dvy
    if kind == 0:
        yaw_rate = p[0] * u[1]
        dvx = p[2] * (p[1] * u[0] - vx)
        dom = -p[4] * om
    else:
        yaw_rate = om
        dvx = p[1] * (p[2] * (u[0] + u[1]) - vx)
        dom = p[0] * (u[1] - u[0]) - p[4] * om
    dvy = p[3] * (p[5] * vx * yaw_rate - vy)
    dvx += w[0] * c + w[1] * s
    dvy += -w[0] * s + w[1] * c
    out[0] = vx * c
    out[1] = vx * s
    out[2] = yaw_rate
    out[3] = dvx
    out[4] = dvy
    out[5] = dom


def plant_deriv(int kind, double[::1] x, double[::1] u, double[::1] params, double[::1] wind):
    cdef double[::1] out = np.empty(6)
    _deriv(kind, &x[0], &u[0], &params[0], &wind[0], &out[0])
    return np.asarray(out)


def plant_step(int kind, double[::1] x, double[::1] u, double[::1] params,
               double[::1] wind, double dt):
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef double tmp[6]
    cdef int i
    cdef double[::1] out = np.empty(6)
    _deriv(kind, &x[0], &u[0], &params[0], &wind[0], k1)
    for i in range(6):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _deriv(kind, tmp, &u[0], &params[0], &wind[0], k2)
    for i in range(6):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _deriv(kind, tmp, &u[0], &params[0], &wind[0], k3)
    for i in range(6):
        tmp[i] = x[i] + dt * k3[i]
    _deriv(kind, tmp, &u[0], &params[0], &wind[0], k4)
    for i in range(6):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return np.asarray(out)


cdef int _solve(double* M, double* r, int n, double* out) noexcept nogil:
    """Partial-pivot Gaussian elimination on an n x n row-major block (destroys M, r)."""
    cdef int col, i, j, piv
    cdef double best, scale = 1.0, f, inv, acc, t
    for i in range(n * n):
        if fabs(M[i]) > scale:
            scale = fabs(M[i])
    for col in range(n):
        piv = col
        best = fabs(M[col * n + col])
        for i in range(col + 1, n):
            if fabs(M[i * n + col]) > best:
                best = fabs(M[i * n + col])
                piv = i
        if best < 1e-12 * scale:
            return 0
        if piv != col:
            for j in range(n):
                t = M[col * n + j]
                M[col * n + j] = M[piv * n + j]
                M[piv * n + j] = t
            t = r[col]
            r[col] = r[piv]
            r[piv] = t
        inv = 1.0 / M[col * n + col]
        for i in range(col + 1, n):
            f = M[i * n + col] * inv
            if f != 0.0:
                for j in range(col, n):
                    M[i * n + j] -= f * M[col * n + j]
                r[i] -= f * r[col]
    for i in range(n - 1, -1, -1):
        acc = r[i]
        for j in range(i + 1, n):
            acc -= M[i * n + j] * out[j]
        out[i] = acc / M[i * n + i]
    return 1


def qp_enumerate(double[:, ::1] Q, double[::1] u0, double[:, ::1] G, double[::1] h,
                 int max_active, double tol):
    cdef int k = u0.shape[0]
    cdef int nc = h.shape[0]
    if k > MAXK or nc > MAXC:
        raise ValueError("problem too large for the compiled enumerator")
    cdef double Qi[MAXK * MAXK]
    cdef double QiG[MAXC * MAXK]
    cdef double g_u0[MAXC]
    cdef double Mw[MAXK * MAXK]
    cdef double rw[MAXK]
    cdef double mu[MAXK]
    cdef double dmu[MAXK]
    cdef double du[MAXK]
    cdef double u[MAXK]
    cdef double best_u[MAXK]
    cdef int idx[MAXK]
    cdef int best_set[MAXK]
    cdef int best_size = 0
    cdef int a, b, i, j, size, ok, pos
    cdef double acc, obj, val
    cdef double best_obj = INFINITY
    cdef int found = 0

    for a in range(k):
        for b in range(k * k):
            Mw[b] = Q[b // k, b % k]
        for b in range(k):
            rw[b] = 1.0 if a == b else 0.0
        if not _solve(Mw, rw, k, mu):
            raise ValueError("weight matrix is singular")
        for b in range(k):
            Qi[b * k + a] = mu[b]
    for i in range(nc):
        for a in range(k):
            acc = 0.0
            for b in range(k):
                acc += Qi[a * k + b] * G[i, b]
            QiG[i * k + a] = acc
        acc = h[i]
        for a in range(k):
            acc += G[i, a] * u0[a]
        g_u0[i] = acc

    ok = 1
    for i in range(nc):
        if g_u0[i] < -tol:
            ok = 0
            break
    if ok:
        return True, np.array(u0, copy=True), 0.0, ()

    for a in range(k):
        best_u[a] = u0[a]
    for size in range(1, min(max_active, nc) + 1):
        for i in range(size):
            idx[i] = i
        while True:
            for i in range(size):
                for j in range(size):
                    acc = 0.0
                    for a in range(k):
                        acc += G[idx[i], a] * QiG[idx[j] * k + a]
                    Mw[i * size + j] = acc
                rw[i] = -g_u0[idx[i]]
            if _solve(Mw, rw, size, mu):
                for a in range(k):
                    du[a] = 0.0
                for i in range(size):
                    for a in range(k):
                        du[a] += mu[i] * QiG[idx[i] * k + a]
                # one step of iterative refinement on the active rows; nearly
                # parallel rows otherwise leave ~1e-9 residuals on them
                for i in range(size):
                    acc = g_u0[idx[i]]
                    for a in range(k):
                        acc += G[idx[i], a] * du[a]
                    rw[i] = -acc
                    for j in range(size):
                        val = 0.0
                        for a in range(k):
                            val += G[idx[i], a] * QiG[idx[j] * k + a]
                        Mw[i * size + j] = val
                if _solve(Mw, rw, size, dmu):
                    for i in range(size):
                        for a in range(k):
                            du[a] += dmu[i] * QiG[idx[i] * k + a]
                obj = 0.0
                for a in range(k):
                    acc = 0.0
                    for b in range(k):
                        acc += Q[a, b] * du[b]
                    obj += du[a] * acc
                obj *= 0.5
                if not found or obj < best_obj - _TIE_RTOL * (1.0 + fabs(best_obj)):
                    for a in range(k):
                        u[a] = u0[a] + du[a]
                    ok = 1
                    for i in range(nc):
                        val = h[i]
                        for a in range(k):
                            val += G[i, a] * u[a]
                        if val < -tol:
                            ok = 0
                            break
                    if ok:
                        found = 1
                        best_obj = obj
                        for a in range(k):
                            best_u[a] = u[a]
                        best_size = size
                        for i in range(size):
                            best_set[i] = idx[i]
            # advance to the next combination in lexicographic order
            pos = size - 1
            while pos >= 0 and idx[pos] == nc - size + pos:
                pos -= 1
            if pos < 0:
                break
            idx[pos] += 1
            for i in range(pos + 1, size):
                idx[i] = idx[i - 1] + 1

    out = np.empty(k)
    for a in range(k):
        out[a] = best_u[a]
    active = []
    for i in range(best_size):
        active.append(best_set[i])
    return bool(found), out, best_obj, tuple(active)


cdef void _finish(double* grad, double psi, double dpsi_dt, double hv, const double* F,
                  double[:, ::1] G, const double* d, int m, double beta1, double beta2,
                  double bound, double* coeff, double* rhs) noexcept nogil:
    cdef double lf2 = dpsi_dt, dist_term = 0.0, norm2 = 0.0, acc
    cdef int k, j
    for k in range(6):
        lf2 += grad[k] * F[k]
        dist_term += grad[k] * d[k]
        norm2 += grad[k] * grad[k]
    for j in range(m):
        acc = 0.0
        for k in range(6):
            acc += grad[k] * G[k, j]
        coeff[j] = acc
    rhs[0] = lf2 + beta1 * psi + dist_term + beta2 * (psi + beta1 * hv) - bound * sqrt(norm2)


def hocbf_rows(double[::1] F, double[:, ::1] G, double[:, ::1] Jp, double[::1] dhat,
               double[::1] pos, double[:, ::1] circles, double[:, ::1] walls,
               double beta1, double beta2, double bound):
    cdef int m = G.shape[1]
    cdef int nc = circles.shape[0]
    cdef int nw = walls.shape[0]
    cdef int K = nc + nw
    coeff_a = np.zeros((K, m))
    rhs_a = np.zeros(K)
    h_a = np.zeros(K)
    deg_a = np.zeros(K, dtype=np.uint8)
    cdef double[:, ::1] coeff = coeff_a
    cdef double[::1] rhs = rhs_a
    cdef double[::1] hval = h_a
    cdef unsigned char[::1] deg = deg_a
    cdef double grad[6]
    cdef double px = pos[0], py = pos[1]
    cdef double dx, dy, dist, n0, n1, w0, w1, psi, Hw0, Hw1, ovx, ovy, dpsi_dt, nx, ny
    cdef int i, k, row
    for i in range(nc):
        dx = px - circles[i, 0]
        dy = py - circles[i, 1]
        ovx = circles[i, 2]
        ovy = circles[i, 3]
        dist = sqrt(dx * dx + dy * dy)
        hval[i] = dist - circles[i, 4]
        if dist < 1e-9:
            rhs[i] = -1.0
            deg[i] = 1
            continue
        n0 = dx / dist
        n1 = dy / dist
        w0 = F[0] - ovx
        w1 = F[1] - ovy
        psi = n0 * w0 + n1 * w1
        Hw0 = (w0 - n0 * psi) / dist
        Hw1 = (w1 - n1 * psi) / dist
        for k in range(6):
            grad[k] = n0 * Jp[0, k] + n1 * Jp[1, k]
        grad[0] += Hw0
        grad[1] += Hw1
        dpsi_dt = -(Hw0 * ovx + Hw1 * ovy)
        _finish(grad, psi, dpsi_dt, hval[i], &F[0], G, &dhat[0], m, beta1, beta2, bound,
                &coeff[i, 0], &rhs[i])
    for i in range(nw):
        row = nc + i
        nx = walls[i, 0]
        ny = walls[i, 1]
        hval[row] = nx * px + ny * py + walls[i, 2]
        psi = nx * F[0] + ny * F[1]
        for k in range(6):
            grad[k] = nx * Jp[0, k] + ny * Jp[1, k]
        _finish(grad, psi, 0.0, hval[row], &F[0], G, &dhat[0], m, beta1, beta2, bound,
                &coeff[row, 0], &rhs[row])
    return coeff_a, rhs_a, h_a, deg_a.astype(bool)
