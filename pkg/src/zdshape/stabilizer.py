"""Transverse coordinates, periodic LQR synthesis and the orbital stabilizer.

Along a zero-dynamics solution ``xdot^2 = G(x)`` with ``G' = -2 b G - 2 c``
and ``G(x0) = xdot0^2``; the integral of motion is ``I = xdot^2 - G(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from . import fastmodel
from .dynamics import INPUT_TOL, pfl_terms
from .errors import EscapedDomain, InputSingularity, RiccatiDiverged, Uncontrollable
from .fastmodel import UniformCubic
from .zero_dynamics import Orbit, ZDModel

CS_STEP = 1e-20
QUAD_RTOL = 1e-10
DEFAULT_QC = (100.0, 500.0, 100.0)
DEFAULT_RC = 1.0


class GTilde(NamedTuple):
    g_e: float
    g_edot: float
    g_v_over_alpha: float


def full_xddot(p, inst, x, xd, y, yd, v):
    """``xddot`` of the partially linearized system for input ``v``."""
    t = pfl_terms(p, inst, (x, y), (xd, yd))
    return t.f_x + t.g_x * (t.tau0 + t.tau_v * v)


def gtilde_terms(p, inst, x, xd, r_y, e=0.0, edot=0.0) -> GTilde:
    """Coefficients of ``e``, ``edot`` and ``v`` in ``xddot`` (already divided by ``alpha``).

    ``g_e`` and ``g_edot`` are complex-step partials at ``(y, ydot) = (r_y + e, edot)``;
    ``g_v / alpha = g_x / g_y`` is exact.
    """
    y = r_y + e
    base = pfl_terms(p, inst, (x, y), (xd, edot))
    tp = pfl_terms(p, inst, (x, y + 1j * CS_STEP), (xd, edot))
    td = pfl_terms(p, inst, (x, y), (xd, edot + 1j * CS_STEP))

    def zd(t):
        return t.f_x + t.g_x * t.tau0

    return GTilde(float(zd(tp).imag / CS_STEP), float(zd(td).imag / CS_STEP),
                  float(base.g_x / base.g_y))


# --- integral of motion ----------------------------------------------------

def _check_span(model: ZDModel, *xs):
    lo, hi = model.domain
    for x in xs:
        if not lo <= x <= hi:
            raise EscapedDomain(f"x = {x} outside [{lo:.4g}, {hi:.4g}]")


def psi(model: ZDModel, a: float, b: float) -> float:
    """``exp(-2 int_a^b b(z) dz)`` by adaptive quadrature."""
    _check_span(model, a, b)
    val, _ = quad(lambda z: float(model.b(z)), a, b, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    return math.exp(-2.0 * val)


def integral_of_motion(model: ZDModel, x: float, xd: float, anchor) -> float:
    """``I`` by nested adaptive quadrature (reference path)."""
    x0, xd0 = anchor
    _check_span(model, x, x0)
    inner, _ = quad(lambda z: psi(model, z, x0) * float(model.c(z)), x0, x,
                    epsabs=1e-14, epsrel=QUAD_RTOL, limit=200)
    return xd ** 2 - psi(model, x0, x) * (xd0 ** 2 - 2.0 * inner)


class IntegralOfMotion:
    """Tabulated ``I(x, xdot)`` for one anchor.

    ``G`` is computed at the tabulation nodes with 8-point Gauss-Legendre
    panels and interpolated by a Hermite cubic using the exact slope.
    """

    def __init__(self, model: ZDModel, anchor):
        self.model = model
        self.anchor = (float(anchor[0]), float(anchor[1]))
        x0, xd0 = self.anchor
        _check_span(model, x0)
        bint = model.b_spline.antiderivative()
        b0 = bint(x0)
        nodes = model.basis.x
        gx, gw = np.polynomial.legendre.leggauss(8)

        def weight(z):
            return np.exp(2.0 * (bint(z) - b0)) * model.c(z)

        def panels(a, b):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            z = mid[..., None] + half[..., None] * gx
            return half * (weight(z) @ gw)

        cum = np.concatenate([[0.0], np.cumsum(panels(nodes[:-1], nodes[1:]))])
        i = min(int((x0 - nodes[0]) // model.basis.h), nodes.size - 2)
        c0 = cum[i] + float(panels(np.array(nodes[i]), np.array(x0)))
        E = np.exp(2.0 * (bint(nodes) - b0))
        G = (xd0 ** 2 - 2.0 * (cum - c0)) / E
        dG = -2.0 * model.b_nodes * G - 2.0 * model.c_nodes
        self.G = UniformCubic(nodes[0], model.basis.h, G, dydx=dG)

    def __call__(self, x, xd):
        return np.asarray(xd) ** 2 - self.G(x)


# --- periodic linear system ------------------------------------------------

@dataclass
class Linearization:
    """Samples of a periodic pair ``(A, B)`` on ``[0, period]`` (last = first)."""

    t: np.ndarray
    A: np.ndarray
    B: np.ndarray
    period: float

    def __post_init__(self):
        A = self.A.copy()
        B = self.B.copy()
        A[-1], B[-1] = A[0], B[0]
        self._A = CubicSpline(self.t, A.reshape(len(self.t), -1), bc_type="periodic")
        self._B = CubicSpline(self.t, B, bc_type="periodic")

    def at(self, t):
        tm = np.mod(t, self.period)
        return self._A(tm).reshape(np.shape(tm) + (3, 3)), self._B(tm)

    def half_grid(self, n_steps: int):
        """``(A, B)`` at ``2 n_steps + 1`` equally spaced times over one period."""
        ts = np.linspace(0.0, self.period, 2 * n_steps + 1)
        A, B = self.at(ts)
        A[-1], B[-1] = A[0], B[0]
        return np.ascontiguousarray(A), np.ascontiguousarray(B)

    @classmethod
    def from_functions(cls, A_fn, B_fn, period: float, n: int = 256):
        t = np.linspace(0.0, period, n + 1)
        A = np.array([np.asarray(A_fn(s), float) for s in t])
        B = np.array([np.asarray(B_fn(s), float).reshape(3) for s in t])
        return cls(t, A, B, float(period))


def transverse_linearization(model: ZDModel, orbit: Orbit, n_samples: int = 512) -> Linearization:
    """Periodic ``A(t)``, ``B(t)`` of ``zeta = (I, e, edot)`` along the orbit."""
    p, inst, r_y = model.p, model.basis.inst, model.r_y
    t = np.linspace(0.0, orbit.period, n_samples + 1)
    xs, xds, _ = orbit.sample(t)
    A = np.zeros((t.size, 3, 3))
    B = np.zeros((t.size, 3))
    for k in range(n_samples):
        x, xd = float(xs[k]), float(xds[k])
        g = gtilde_terms(p, inst, x, xd, r_y)
        A[k, 0] = (-2.0 * xd * float(model.b(x)), 2.0 * xd * g.g_e, 2.0 * xd * g.g_edot)
        B[k] = (2.0 * xd * g.g_v_over_alpha, 0.0, 1.0)
    A[:, 1, 2] = 1.0
    A[-1], B[-1] = A[0], B[0]
    return Linearization(t, A, B, orbit.period)


class Gramian(NamedTuple):
    W: np.ndarray
    min_eig: float
    monodromy: np.ndarray


def controllability_gramian(lin: Linearization, n_steps: int = 2000, tol: float = 1e-12) -> Gramian:
    """``W = int_0^T Phi(T, s) B B^T Phi(T, s)^T ds`` by joint RK4 of ``Phi`` and ``W``."""
    Ah, Bh = lin.half_grid(n_steps)
    h = lin.period / n_steps

    def f(i, Phi, W):
        A, B = Ah[i], Bh[i]
        return A @ Phi, A @ W + W @ A.T + np.outer(B, B)

    Phi = np.eye(3)
    W = np.zeros((3, 3))
    for k in range(n_steps):
        i0, im, i1 = 2 * k, 2 * k + 1, 2 * k + 2
        p1, w1 = f(i0, Phi, W)
        p2, w2 = f(im, Phi + 0.5 * h * p1, W + 0.5 * h * w1)
        p3, w3 = f(im, Phi + 0.5 * h * p2, W + 0.5 * h * w2)
        p4, w4 = f(i1, Phi + h * p3, W + h * w3)
        Phi = Phi + h / 6.0 * (p1 + 2 * p2 + 2 * p3 + p4)
        W = W + h / 6.0 * (w1 + 2 * w2 + 2 * w3 + w4)
    W = 0.5 * (W + W.T)
    lam = float(np.linalg.eigvalsh(W)[0])
    if lam < tol:
        raise Uncontrollable(f"Gramian minimum eigenvalue {lam:.3g} below {tol:g}")
    return Gramian(W, lam, Phi)


@dataclass
class PeriodicGain:
    """One period of the periodic Riccati solution, interpolated periodically."""

    t: np.ndarray
    P: np.ndarray
    Q_c: np.ndarray
    R_c: float
    period: float
    gap: float
    sweeps: int

    def __post_init__(self):
        P = self.P.copy()
        P[-1] = P[0]
        n = len(self.t) - 1
        iu = np.triu_indices(3)
        flat = P[:, iu[0], iu[1]]
        self._spline = CubicSpline(self.t, flat, bc_type="periodic")
        self._iu = iu
        self.coef = np.ascontiguousarray(np.transpose(self._spline.c, (2, 0, 1)))
        assert self.coef.shape == (6, 4, n)

    def __call__(self, t):
        flat = self._spline(np.mod(t, self.period))
        P = np.empty(np.shape(t) + (3, 3))
        P[..., self._iu[0], self._iu[1]] = flat
        P[..., self._iu[1], self._iu[0]] = flat
        return P

    def residual(self, lin: Linearization):
        """Riccati residual at interior samples (4th-order central differences)."""
        h = self.period / (len(self.t) - 1)
        P = self.P
        Pd = (P[:-4] - 8 * P[1:-3] + 8 * P[3:-1] - P[4:]) / (12.0 * h)
        Pk = P[2:-2]
        A, B = lin.at(self.t[2:-2])
        PB = np.einsum("kij,kj->ki", Pk, B)
        res = (Pd + np.transpose(A, (0, 2, 1)) @ Pk + Pk @ A + self.Q_c
               - np.einsum("ki,kj->kij", PB, PB) / self.R_c)
        return np.linalg.norm(res, axis=(1, 2))


def solve_periodic_riccati(lin: Linearization, Q_c=DEFAULT_QC, R_c: float = DEFAULT_RC,
                           n_steps: int = 4000, tol: float = 1e-8,
                           max_periods: int = 200) -> PeriodicGain:
    """Backward sweeps from ``P(T) = Q_c`` until one period maps ``P`` onto itself.

    Sweeping continues past ``tol`` while the periodicity gap keeps halving.
    """
    Q = np.diag(Q_c) if np.ndim(Q_c) == 1 else np.asarray(Q_c, float)
    Ah, Bh = lin.half_grid(n_steps)
    h = lin.period / n_steps
    P_end = Q.copy()
    best = None
    for sweep in range(1, max_periods + 1):
        out = fastmodel.riccati_period(Ah, Bh, Q, 1.0 / R_c, P_end, h)
        if not np.all(np.isfinite(out)):
            break
        gap = float(np.linalg.norm(out[0] - out[-1]))
        if best is not None and gap >= 0.5 * best[0]:
            break
        if gap < tol:
            best = (gap, out, sweep)
        P_end = out[0]
    if best is None or np.linalg.eigvalsh(best[1]).min() <= 0.0:
        raise RiccatiDiverged(f"no periodic solution after {max_periods} periods")
    gap, out, sweep = best
    t = np.linspace(0.0, lin.period, n_steps + 1)
    return PeriodicGain(t, out, Q, float(R_c), lin.period, gap, sweep)


# --- controller ------------------------------------------------------------

class StabilizingController:
    """``u = tau0 + tau_v v`` with ``v = -R_c^-1 (2 xdot g_v/alpha, 0, 1) P(t) zeta``.

    The phase ``t`` is absolute time reduced modulo the orbit period.
    """

    def __init__(self, model: ZDModel, orbit: Orbit, gain: PeriodicGain, anchor=None):
        self.model = model
        self.orbit = orbit
        self.gain = gain
        self.anchor = tuple(anchor) if anchor is not None else orbit.anchor
        self.iom = IntegralOfMotion(model, self.anchor)
        self.plant = model.plant
        self.r_y = model.r_y

    def _pfl(self, x, xd, y, yd):
        ok, fx, fy, gx, gy, _ = self.plant.pfl(x, y, xd, yd)
        if not ok:
            raise EscapedDomain(f"state ({x}, {y}) outside the workspace")
        if abs(gy) <= INPUT_TOL:
            raise InputSingularity(f"g_y = {gy:.3g}")
        return fx, fy, gx, gy

    def zeta(self, x, xd, y, yd):
        return np.array([float(self.iom(x, xd)), y - self.r_y, yd])

    def v(self, x, xd, y, yd, t):
        _, _, gx, gy = self._pfl(x, xd, y, yd)
        row = np.array([2.0 * xd * gx / gy, 0.0, 1.0])
        return float(-(row @ self.gain(t) @ self.zeta(x, xd, y, yd)) / self.gain.R_c)

    def __call__(self, x, xd, y, yd, t):
        fx, fy, gx, gy = self._pfl(x, xd, y, yd)
        row = np.array([2.0 * xd * gx / gy, 0.0, 1.0])
        v = -(row @ self.gain(t) @ self.zeta(x, xd, y, yd)) / self.gain.R_c
        return float(-fy / gy + v / gy)

    def kernel_args(self):
        """Positional tables for :func:`fastmodel.closed_loop_rk4`."""
        pl = self.plant
        G = self.iom.G
        lo, hi = self.model.domain
        return (pl.geo, pl.T, pl.Tinv, pl.off, pl.com, pl.masses, pl.inertias, pl.kb, pl.kt,
                pl.q3r, pl.q4r, G.coef, G.x0, G.h, lo, hi, self.gain.coef, self.gain.period,
                1.0 / self.gain.R_c, self.r_y)


@dataclass
class Synthesis:
    linearization: Linearization
    gramian: Gramian
    gain: PeriodicGain
    controller: StabilizingController


def synthesize(model: ZDModel, orbit: Orbit, Q_c=DEFAULT_QC, R_c: float = DEFAULT_RC,
               n_samples: int = 512, n_steps: int = 4000) -> Synthesis:
    """Linearize, check controllability, solve the Riccati equation, build the controller."""
    lin = transverse_linearization(model, orbit, n_samples)
    gram = controllability_gramian(lin, n_steps)
    gain = solve_periodic_riccati(lin, Q_c, R_c, n_steps)
    return Synthesis(lin, gram, gain, StabilizingController(model, orbit, gain))
