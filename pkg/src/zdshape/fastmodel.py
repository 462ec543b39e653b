"""Compiled kernels for the hot loops.

The generic model in :mod:`zdshape.dynamics` is the reference; these kernels
reproduce it for real-valued states and are cross-checked against it in the
test suite. ``Cqdot`` uses the per-body form ``sum m_i Jc_i^T Jcdot_i qdot``,
which equals the Christoffel product for this model (constant body rotations).
"""

from __future__ import annotations

import math

import numba
import numpy as np
from scipy.interpolate import CubicSpline

from .mechanism import LINK1, LINK2, LINK3, LINK4, MechanismInstance


def geometry_arrays(inst: MechanismInstance):
    """Pack an instance into plain arrays for the kernels."""
    l1, l2, l3, l4 = inst.links.lengths
    geo = np.array([inst.P1[0], inst.P1[1], inst.P2[0], inst.P2[1], l1, l2, l3, l4,
                    inst.branch[0], inst.branch[1]], dtype=np.float64)
    T = np.ascontiguousarray(inst.T, dtype=np.float64)
    Tinv = np.ascontiguousarray(np.linalg.inv(inst.T))
    off = np.asarray(inst.angle_offset, dtype=np.float64)
    # COM chains: base flag (0: P1, 1: P2), then up to two (length, body) terms
    com = np.array([
        [0, l1 / 2, LINK1, 0.0, 0],
        [0, l1, LINK1, l2 / 2, LINK2],
        [1, l4, LINK4, l3 / 2, LINK3],
        [1, l4 / 2, LINK4, 0.0, 0],
    ], dtype=np.float64)
    return geo, T, Tinv, off, com


@numba.njit(cache=True)
def _knee(cx, cy, r0, ex, ey, r1, sign):
    dx = ex - cx
    dy = ey - cy
    dist = math.sqrt(dx * dx + dy * dy)
    if dist > r0 + r1 or dist < abs(r0 - r1) or dist == 0.0:
        return False, 0.0, 0.0
    a = (r0 * r0 - r1 * r1 + dist * dist) / (2.0 * dist)
    h2 = r0 * r0 - a * a
    hgt = math.sqrt(h2) if h2 > 0.0 else 0.0
    mx = cx + a * dx / dist
    my = cy + a * dy / dist
    return True, mx - sign * hgt * dy / dist, my + sign * hgt * dx / dist


@numba.njit(cache=True)
def _wrap(a):
    return math.atan2(math.sin(a), math.cos(a))


@numba.njit(cache=True)
def _stack(geo, T, off, q):
    """Residual F, Jacobian S and per-body angles for the stacked map."""
    th = T @ q + off
    l1, l2, l3, l4 = geo[4], geo[5], geo[6], geo[7]
    c = np.cos(th)
    s = np.sin(th)
    F = np.empty(4)
    S = np.zeros((4, 4))
    # tip = P2 + l4 e4 + l3 e3
    F[0] = geo[2] + l4 * c[LINK4] + l3 * c[LINK3]
    F[1] = geo[3] + l4 * s[LINK4] + l3 * s[LINK3]
    # loop = P1 - P2 + l1 e1 + l2 e2 - l4 e4 - l3 e3
    F[2] = geo[0] - geo[2] + l1 * c[LINK1] + l2 * c[LINK2] - l4 * c[LINK4] - l3 * c[LINK3]
    F[3] = geo[1] - geo[3] + l1 * s[LINK1] + l2 * s[LINK2] - l4 * s[LINK4] - l3 * s[LINK3]
    coef_tip = np.array([0.0, 0.0, l3, l4])
    coef_loop = np.array([l1, l2, -l3, -l4])
    for j in range(4):
        for k in range(4):
            S[0, k] += -coef_tip[j] * s[j] * T[j, k]
            S[1, k] += coef_tip[j] * c[j] * T[j, k]
            S[2, k] += -coef_loop[j] * s[j] * T[j, k]
            S[3, k] += coef_loop[j] * c[j] * T[j, k]
    return F, S, th, coef_tip, coef_loop


@numba.njit(cache=True)
def configure(geo, T, Tinv, off, x, y):
    """Closed-form assembly on the pinned branch plus one Newton polish."""
    ok4, k4x, k4y = _knee(geo[2], geo[3], geo[7], x, y, geo[6], -geo[8])
    ok1, k1x, k1y = _knee(geo[0], geo[1], geo[4], x, y, geo[5], -geo[9])
    q = np.zeros(4)
    if not (ok4 and ok1):
        return False, q
    th = np.empty(4)
    th[LINK1] = math.atan2(k1y - geo[1], k1x - geo[0])
    th[LINK2] = math.atan2(y - k1y, x - k1x)
    th[LINK4] = math.atan2(k4y - geo[3], k4x - geo[2])
    th[LINK3] = math.atan2(y - k4y, x - k4x)
    q = Tinv @ (th - off)
    for i in range(4):
        q[i] = _wrap(q[i])
    for _ in range(3):
        F, S, _th, _a, _b = _stack(geo, T, off, q)
        F[0] -= x
        F[1] -= y
        if np.max(np.abs(F)) < 1e-13:
            break
        q = q - np.linalg.solve(S, F)
    return True, q


@numba.njit(cache=True)
def minimal_terms(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r, x, y, xd, yd):
    """Minimal-form pieces at one task state.

    Returns ``(ok, M_chi, h_chi, G_chi, B_chi, q, det_S)`` where
    ``h_chi = C_chi chidot``.
    """
    ok, q = configure(geo, T, Tinv, off, x, y)
    M_chi = np.zeros((2, 2))
    h_chi = np.zeros(2)
    G_chi = np.zeros(2)
    B_chi = np.zeros(2)
    if not ok:
        return False, M_chi, h_chi, G_chi, B_chi, q, 0.0
    F, S, th, coef_tip, coef_loop = _stack(geo, T, off, q)
    detS = np.linalg.det(S)
    rhs = np.zeros((4, 2))
    rhs[0, 0] = 1.0
    rhs[1, 1] = 1.0
    J = np.linalg.solve(S, rhs)
    qd = J[:, 0] * xd + J[:, 1] * yd
    thd = T @ qd
    c = np.cos(th)
    s = np.sin(th)
    # Sdot qdot = stacked velocity-product terms
    bias = np.zeros(4)
    for j in range(4):
        w2 = thd[j] * thd[j]
        bias[0] += -coef_tip[j] * c[j] * w2
        bias[1] += -coef_tip[j] * s[j] * w2
        bias[2] += -coef_loop[j] * c[j] * w2
        bias[3] += -coef_loop[j] * s[j] * w2
    omega = -np.linalg.solve(S, bias)
    M = np.zeros((4, 4))
    Cqd = np.zeros(4)
    for i in range(4):
        Jc = np.zeros((2, 4))
        bc = np.zeros(2)
        for t in range(2):
            coef = com[i, 1 + 2 * t]
            if coef == 0.0:
                continue
            j = int(com[i, 2 + 2 * t])
            for k in range(4):
                Jc[0, k] += -coef * s[j] * T[j, k]
                Jc[1, k] += coef * c[j] * T[j, k]
            bc[0] += -coef * c[j] * thd[j] * thd[j]
            bc[1] += -coef * s[j] * thd[j] * thd[j]
        M += masses[i] * (Jc.T @ Jc)
        for a in range(4):
            for b in range(4):
                M[a, b] += inertias[i] * T[i, a] * T[i, b]
        Cqd += masses[i] * (Jc.T @ bc)
    G = np.zeros(4)
    G[2] = kt * (q[2] - q3r)
    G[3] = kb * (q[3] - q4r)
    M_chi = J.T @ M @ J
    h_chi = J.T @ (M @ omega + Cqd)
    G_chi = J.T @ G
    B_chi[0] = J[0, 0]
    B_chi[1] = J[0, 1]
    return True, M_chi, h_chi, G_chi, B_chi, q, detS


@numba.njit(cache=True)
def pfl(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r, x, y, xd, yd):
    """``(ok, f_x, f_y, g_x, g_y, q)`` of ``chiddot = f + g u``."""
    ok, M_chi, h_chi, G_chi, B_chi, q, detS = minimal_terms(
        geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r, x, y, xd, yd)
    if not ok:
        return False, 0.0, 0.0, 0.0, 0.0, q
    det = M_chi[0, 0] * M_chi[1, 1] - M_chi[0, 1] * M_chi[1, 0]
    rx = -(h_chi[0] + G_chi[0])
    ry = -(h_chi[1] + G_chi[1])
    fx = (M_chi[1, 1] * rx - M_chi[0, 1] * ry) / det
    fy = (-M_chi[1, 0] * rx + M_chi[0, 0] * ry) / det
    gx = (M_chi[1, 1] * B_chi[0] - M_chi[0, 1] * B_chi[1]) / det
    gy = (-M_chi[1, 0] * B_chi[0] + M_chi[0, 0] * B_chi[1]) / det
    return True, fx, fy, gx, gy, q


class FastPlant:
    """Instance + design bound to the compiled kernels."""

    def __init__(self, inst: MechanismInstance, p):
        from .mechanism import link_inertias
        self.inst = inst
        self.p = p
        self.geo, self.T, self.Tinv, self.off, self.com = geometry_arrays(inst)
        self.masses, self.inertias = link_inertias(p, inst.links)
        self.kb, self.kt = float(p.k_b), float(p.k_t)
        self.q3r, self.q4r = (float(a) for a in inst.rest_angles)

    def pfl(self, x, y, xd, yd):
        return pfl(self.geo, self.T, self.Tinv, self.off, self.com, self.masses, self.inertias,
                   self.kb, self.kt, self.q3r, self.q4r, float(x), float(y), float(xd), float(yd))

    def minimal_terms(self, x, y, xd, yd, masses=None, inertias=None, kb=None, kt=None):
        return minimal_terms(
            self.geo, self.T, self.Tinv, self.off, self.com,
            self.masses if masses is None else np.asarray(masses, np.float64),
            self.inertias if inertias is None else np.asarray(inertias, np.float64),
            self.kb if kb is None else float(kb), self.kt if kt is None else float(kt),
            self.q3r, self.q4r, float(x), float(y), float(xd), float(yd))

    def configure(self, x, y):
        return configure(self.geo, self.T, self.Tinv, self.off, float(x), float(y))


# --- uniform-grid cubic splines -------------------------------------------

class UniformCubic:
    """Cubic spline on a uniform grid with O(1) lookup.

    ``coef`` has shape (4, n-1) in scipy's PPoly convention (highest power
    first, local variable ``x - x_i``).
    """

    def __init__(self, x0, h, values, bc_type="not-a-knot", dydx=None):
        values = np.asarray(values, dtype=float)
        n = values.shape[-1]
        grid = x0 + h * np.arange(n)
        if dydx is not None:
            from scipy.interpolate import CubicHermiteSpline
            spl = CubicHermiteSpline(grid, values, dydx)
        else:
            spl = CubicSpline(grid, values, bc_type=bc_type)
        self.x0 = float(x0)
        self.h = float(h)
        self.n = n
        self.coef = np.ascontiguousarray(spl.c)
        self.spline = spl
        self.x1 = self.x0 + self.h * (n - 1)

    def __call__(self, x):
        return self.spline(x)

    def scalar(self, x):
        return cubic_eval(self.coef, self.x0, self.h, x)

    def derivative(self, nu=1):
        return self.spline.derivative(nu)

    def antiderivative(self):
        return self.spline.antiderivative()


@numba.njit(cache=True)
def cubic_eval(coef, x0, h, x):
    n = coef.shape[1]
    i = int(math.floor((x - x0) / h))
    if i < 0:
        i = 0
    elif i > n - 1:
        i = n - 1
    t = x - (x0 + i * h)
    return ((coef[0, i] * t + coef[1, i]) * t + coef[2, i]) * t + coef[3, i]


@numba.njit(cache=True)
def zd_rk4(bcoef, ccoef, x0, h, xlo, xhi, x_init, xd_init, dt, n_steps):
    """Fixed-step RK4 of ``xddot = -b(x) xdot^2 - c(x)``.

    Returns ``(x, xd, n_done)``; integration stops early (``n_done < n_steps``)
    once a stage leaves ``[xlo, xhi]``.
    """
    xs = np.empty(n_steps + 1)
    vs = np.empty(n_steps + 1)
    xs[0] = x_init
    vs[0] = xd_init
    x = x_init
    v = xd_init
    for k in range(n_steps):
        x1, v1 = x, v
        if x1 < xlo or x1 > xhi:
            return xs, vs, k
        a1 = -cubic_eval(bcoef, x0, h, x1) * v1 * v1 - cubic_eval(ccoef, x0, h, x1)
        x2 = x + 0.5 * dt * v1
        v2 = v + 0.5 * dt * a1
        if x2 < xlo or x2 > xhi:
            return xs, vs, k
        a2 = -cubic_eval(bcoef, x0, h, x2) * v2 * v2 - cubic_eval(ccoef, x0, h, x2)
        x3 = x + 0.5 * dt * v2
        v3 = v + 0.5 * dt * a2
        if x3 < xlo or x3 > xhi:
            return xs, vs, k
        a3 = -cubic_eval(bcoef, x0, h, x3) * v3 * v3 - cubic_eval(ccoef, x0, h, x3)
        x4 = x + dt * v3
        v4 = v + dt * a3
        if x4 < xlo or x4 > xhi:
            return xs, vs, k
        a4 = -cubic_eval(bcoef, x0, h, x4) * v4 * v4 - cubic_eval(ccoef, x0, h, x4)
        x = x + dt / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        xs[k + 1] = x
        vs[k + 1] = v
    return xs, vs, n_steps


# --- periodic Riccati sweep ------------------------------------------------

@numba.njit(cache=True)
def _riccati_rhs(A, B, Q, rinv, P):
    PB = P @ B
    return -(A.T @ P + P @ A + Q - rinv * np.outer(PB, PB))


@numba.njit(cache=True)
def riccati_period(Ah, Bh, Q, rinv, P_end, h):
    """One backward RK4 sweep over a period.

    ``Ah``/``Bh`` are sampled on the half-step grid (``2N + 1`` points);
    returns ``P`` on the full grid (``N + 1`` points).
    """
    n = (Ah.shape[0] - 1) // 2
    out = np.empty((n + 1, 3, 3))
    P = P_end.copy()
    out[n] = P
    for k in range(n - 1, -1, -1):
        i1, im, i0 = 2 * k + 2, 2 * k + 1, 2 * k
        k1 = _riccati_rhs(Ah[i1], Bh[i1], Q, rinv, P)
        k2 = _riccati_rhs(Ah[im], Bh[im], Q, rinv, P - 0.5 * h * k1)
        k3 = _riccati_rhs(Ah[im], Bh[im], Q, rinv, P - 0.5 * h * k2)
        k4 = _riccati_rhs(Ah[i0], Bh[i0], Q, rinv, P - h * k3)
        P = P - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)
        out[k] = P
    return out


# --- closed loop -----------------------------------------------------------

@numba.njit(cache=True)
def _gain_matrix(pcoef, period, t):
    """Symmetric ``P(t)`` from six periodic cubic tables (upper triangle, row-major)."""
    n = pcoef.shape[2]
    h = period / n
    tm = t - period * math.floor(t / period)
    P = np.empty((3, 3))
    m = 0
    for i in range(3):
        for j in range(i, 3):
            val = cubic_eval(pcoef[m], 0.0, h, tm)
            P[i, j] = val
            P[j, i] = val
            m += 1
    return P


@numba.njit(cache=True)
def _cl_deriv(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r,
              gcoef, gx0, gh, pcoef, period, rinv, r_y, t, s):
    ok, fx, fy, gx, gy, q = pfl(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r,
                                s[0], s[2], s[1], s[3])
    d = np.zeros(4)
    if not ok or gy == 0.0:
        return False, d, 0.0, q
    z0 = s[1] * s[1] - cubic_eval(gcoef, gx0, gh, s[0])
    P = _gain_matrix(pcoef, period, t)
    row0 = 2.0 * s[1] * gx / gy
    zeta = np.array([z0, s[2] - r_y, s[3]])
    Pz = P @ zeta
    v = -rinv * (row0 * Pz[0] + Pz[2])
    u = -fy / gy + v / gy
    d[0] = s[1]
    d[1] = fx + gx * u
    d[2] = s[3]
    d[3] = fy + gy * u
    return True, d, u, q


@numba.njit(cache=True)
def closed_loop_rk4(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r,
                    gcoef, gx0, gh, xlo, xhi, pcoef, period, rinv, r_y, state0, dt, n_steps):
    """Fixed-step RK4 of the minimal-form plant under the orbital stabilizer.

    Returns ``(states, u, q, n_done)`` sampled at step starts; ``n_done <
    n_steps`` flags an escape from the tabulated domain or the workspace.
    """
    states = np.empty((n_steps + 1, 4))
    us = np.empty(n_steps + 1)
    qs = np.empty((n_steps + 1, 4))
    s = state0.copy()
    for k in range(n_steps + 1):
        t = k * dt
        states[k] = s
        if s[0] < xlo or s[0] > xhi:
            return states, us, qs, k
        ok, k1, u, q = _cl_deriv(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r,
                                 gcoef, gx0, gh, pcoef, period, rinv, r_y, t, s)
        if not ok:
            return states, us, qs, k
        us[k] = u
        qs[k] = q
        if k == n_steps:
            break
        ok2, k2, _, _ = _cl_deriv(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r,
                                  gcoef, gx0, gh, pcoef, period, rinv, r_y, t + 0.5 * dt,
                                  s + 0.5 * dt * k1)
        ok3, k3, _, _ = _cl_deriv(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r,
                                  gcoef, gx0, gh, pcoef, period, rinv, r_y, t + 0.5 * dt,
                                  s + 0.5 * dt * k2)
        ok4, k4, _, _ = _cl_deriv(geo, T, Tinv, off, com, masses, inertias, kb, kt, q3r, q4r,
                                  gcoef, gx0, gh, pcoef, period, rinv, r_y, t + dt, s + dt * k3)
        if not (ok2 and ok3 and ok4):
            return states, us, qs, k
        s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return states, us, qs, n_steps
