"""Scalar zero dynamics ``xddot = -b(x) xdot^2 - c(x)`` on the line ``y = r_y``.

The coefficients are tabulated once per (instance, ``r_y``): mass-matrix and
velocity-product terms are linear in the per-group mass scales
``(1, delta_t/0.02, delta_b/0.02)`` and the spring term is linear in
``(k_b, k_t)``. A :class:`ZDBasis` stores those pieces on a uniform grid; a
:class:`ZDModel` combines them for one design and interpolates with cubic
splines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import fastmodel
from .dynamics import pfl_terms
from .errors import EscapedDomain, NoEquilibrium, NotPeriodic, StructureError, Unreachable
from .fastmodel import FastPlant, UniformCubic
from .mechanism import REF_DEPTH, DesignParams, MechanismInstance

STRUCTURE_TOL = 1e-8
ROOT_TOL = 1e-10
DEFAULT_STEP = 1e-4
DEFAULT_NODES = 1201


def zd_coefficients(p: DesignParams, inst: MechanismInstance, x: float, r_y: float):
    """``(b, c)`` at ``x`` by a three-point probe of the reference model.

    Raises :class:`StructureError` when the right-hand side is not quadratic
    in ``xdot``.
    """

    def rhs(xd):
        t = pfl_terms(p, inst, (x, r_y), (xd, 0.0))
        return t.f_x + t.g_x * t.tau0

    r0, r1, r2 = rhs(0.0), rhs(1.0), rhs(2.0)
    resid = abs(r2 - r0 - 4.0 * (r1 - r0))
    if resid > STRUCTURE_TOL * max(1.0, abs(r0), abs(r1)):
        raise StructureError(f"quadratic-structure residual {resid:.3g} at x = {x}")
    return -(r1 - r0), -r0


def _group_inertias(inst: MechanismInstance):
    """Per-group (masses, inertias) at reference depth: links 1-2, link 3, link 4."""
    m = np.asarray(inst.links.masses, float)
    J = np.asarray(inst.links.inertias, float)
    groups = []
    for idx in ((0, 1), (2,), (3,)):
        mm = np.zeros(4)
        jj = np.zeros(4)
        mm[list(idx)] = m[list(idx)]
        jj[list(idx)] = J[list(idx)]
        groups.append((mm, jj))
    return groups


def group_scales(p: DesignParams):
    return np.array([1.0, p.delta_t / REF_DEPTH, p.delta_b / REF_DEPTH])


@dataclass
class ZDBasis:
    """Design-independent tables along ``y = r_y`` on ``[x_lo, x_hi]``.

    Arrays have one column per grid node. ``alpha``, ``beta``, ``tm``, ``tk``
    have one row per mass group; ``gamma``, ``tg`` one row per spring
    ``(k_b, k_t)``. The feedforward is
    ``tau = sum_j s_j (tm_j xddot + tk_j xdot^2) + sum_i k_i tg_i``.
    """

    inst: MechanismInstance
    r_y: float
    x: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    tm: np.ndarray
    tk: np.ndarray
    tg: np.ndarray

    @property
    def x_lo(self):
        return float(self.x[0])

    @property
    def x_hi(self):
        return float(self.x[-1])

    @property
    def h(self):
        return float(self.x[1] - self.x[0])

    @classmethod
    def build(cls, inst: MechanismInstance, r_y: float, x_lo: float, x_hi: float,
              n_nodes: int = DEFAULT_NODES) -> "ZDBasis":
        xs = np.linspace(x_lo, x_hi, n_nodes)
        plant = FastPlant(inst, DesignParams(0.0, 0.0))
        groups = _group_inertias(inst)
        alpha = np.empty((3, n_nodes))
        beta = np.empty((3, n_nodes))
        tm = np.empty((3, n_nodes))
        tk = np.empty((3, n_nodes))
        gamma = np.empty((2, n_nodes))
        tg = np.empty((2, n_nodes))
        zeros = np.zeros(4)
        for i, x in enumerate(xs):
            for j, (mm, jj) in enumerate(groups):
                ok, M, kappa, _, B, _, _ = plant.minimal_terms(x, r_y, 1.0, 0.0, mm, jj, 0.0, 0.0)
                if not ok:
                    raise Unreachable(f"({x}, {r_y}) outside the workspace")
                nrm = np.array([B[1], -B[0]])
                b2 = B @ B
                alpha[j, i] = nrm @ M[:, 0]
                beta[j, i] = nrm @ kappa
                tm[j, i] = B @ M[:, 0] / b2
                tk[j, i] = B @ kappa / b2
            for s, (kb, kt) in enumerate(((1.0, 0.0), (0.0, 1.0))):
                _, _, _, G, B, _, _ = plant.minimal_terms(x, r_y, 0.0, 0.0, zeros, zeros, kb, kt)
                gamma[s, i] = B[1] * G[0] - B[0] * G[1]
                tg[s, i] = B @ G / (B @ B)
        return cls(inst, float(r_y), xs, alpha, beta, gamma, tm, tk, tg)

    def model(self, p: DesignParams) -> "ZDModel":
        return ZDModel(self, p)


class ZDModel:
    """Zero dynamics of one design, backed by a :class:`ZDBasis`."""

    def __init__(self, basis: ZDBasis, p: DesignParams):
        self.basis = basis
        self.p = p
        s = group_scales(p)
        k = np.array([p.k_b, p.k_t])
        alpha = s @ basis.alpha
        beta = s @ basis.beta
        gamma = k @ basis.gamma
        b = beta / alpha
        c = gamma / alpha
        tm = s @ basis.tm
        tq = s @ basis.tk - tm * b
        t0 = k @ basis.tg - tm * c
        x0, h = basis.x_lo, basis.h
        self.alpha_nodes = alpha
        self.b_nodes = b
        self.c_nodes = c
        self.b_spline = UniformCubic(x0, h, b)
        self.c_spline = UniformCubic(x0, h, c)
        self.tq_spline = UniformCubic(x0, h, tq)
        self.t0_spline = UniformCubic(x0, h, t0)
        self._plant = None

    @property
    def r_y(self):
        return self.basis.r_y

    @property
    def domain(self):
        return self.basis.x_lo, self.basis.x_hi

    def b(self, x):
        return self.b_spline(x)

    def c(self, x):
        return self.c_spline(x)

    def rhs(self, x, xd):
        return -self.b_spline(x) * xd ** 2 - self.c_spline(x)

    def tau0(self, x, xd):
        """Feedforward torque on the manifold ``e = edot = 0, v = 0``."""
        return self.tq_spline(x) * np.asarray(xd) ** 2 + self.t0_spline(x)

    @property
    def plant(self) -> FastPlant:
        if self._plant is None:
            self._plant = FastPlant(self.basis.inst, self.p)
        return self._plant

    def direct_coefficients(self, x):
        """``(b, c)`` straight from the compiled plant, bypassing the tables."""
        r = []
        for xd in (0.0, 1.0):
            ok, fx, fy, gx, gy, _ = self.plant.pfl(x, self.r_y, xd, 0.0)
            if not ok:
                raise EscapedDomain(f"x = {x} outside the workspace")
            r.append(fx - gx * fy / gy)
        return -(r[1] - r[0]), -r[0]


def find_equilibrium(model: ZDModel, search_interval=None, x_ref=None, n_sub: int = 200):
    """Root of ``c`` nearest ``x_ref`` by sign-change scan and bisection.

    Returns ``(x0, roots)``. Raises :class:`NoEquilibrium` when ``c`` has no
    sign change on the interval or vanishes identically.
    """
    lo, hi = search_interval if search_interval is not None else model.domain
    if x_ref is None:
        x_ref = 0.5 * (lo + hi)
    grid = np.linspace(lo, hi, n_sub + 1)
    cv = model.c(grid)
    if np.max(np.abs(cv)) == 0.0:
        raise NoEquilibrium("restoring term vanishes identically (flat c)")
    roots = []
    for i in range(n_sub):
        ca, cb = cv[i], cv[i + 1]
        if ca == 0.0:
            roots.append(float(grid[i]))
            continue
        if ca * cb < 0.0:
            a, b = grid[i], grid[i + 1]
            fa = ca
            for _ in range(200):
                m = 0.5 * (a + b)
                fm = float(model.c(m))
                if abs(fm) < ROOT_TOL or b - a < 1e-15:
                    break
                if fa * fm < 0.0:
                    b = m
                else:
                    a, fa = m, fm
            roots.append(float(m))
    if cv[-1] == 0.0:
        roots.append(float(grid[-1]))
    if not roots:
        raise NoEquilibrium(f"no sign change of c on [{lo:.4g}, {hi:.4g}]")
    roots = sorted(set(roots))
    x0 = min(roots, key=lambda r: abs(r - x_ref))
    return x0, roots


def omega(model: ZDModel, x0: float | None = None, x_ref=None):
    """Slope of ``c`` at the equilibrium (one Richardson step on central differences)."""
    if x0 is None:
        x0, _ = find_equilibrium(model, x_ref=x_ref)
    lo, hi = model.domain
    h = 1e-5 * (hi - lo)

    def d(step):
        return (model.c(x0 + step) - model.c(x0 - step)) / (2.0 * step)

    return float((4.0 * d(h) - d(2.0 * h)) / 3.0)


@dataclass
class Trajectory:
    s: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    tau: np.ndarray
    step: float
    method: str = "rk4"
    x_eq: float | None = None

    def residual(self, model: ZDModel):
        """ODE residual by central differences of the samples (interior points)."""
        acc = np.gradient(self.xd, self.s)[1:-1]
        return acc - model.rhs(self.x[1:-1], self.xd[1:-1])


def simulate_zd(model: ZDModel, x_init: float, duration: float, step: float = DEFAULT_STEP,
                n_steps: int | None = None, x_eq: float | None = None,
                method: str = "rk4", rtol: float = 1e-11) -> Trajectory:
    """Integrate the zero dynamics from ``(x_init, 0)``.

    ``method="rk4"`` is the fixed-step production path on the tables;
    ``method="direct"`` is an adaptive verification path that evaluates the
    coefficients from the compiled plant at every call.
    """
    if n_steps is None:
        n_steps = int(round(duration / step))
    lo, hi = model.domain
    if method == "direct":
        return _simulate_direct(model, x_init, n_steps * step, n_steps, step, x_eq, rtol)
    xs, vs, done = fastmodel.zd_rk4(model.b_spline.coef, model.c_spline.coef, lo, model.basis.h,
                                    lo, hi, float(x_init), 0.0, float(step), int(n_steps))
    s = step * np.arange(done + 1)
    traj = Trajectory(s, xs[:done + 1], vs[:done + 1],
                      model.tau0(xs[:done + 1], vs[:done + 1]), step, "rk4", x_eq)
    if done < n_steps:
        raise EscapedDomain(f"zero dynamics left [{lo:.4g}, {hi:.4g}] at s = {s[-1]:.4f}",
                            partial=traj)
    return traj


def _simulate_direct(model, x_init, duration, n_steps, step, x_eq, rtol):
    lo, hi = model.domain

    def f(_t, z):
        if not lo <= z[0] <= hi:
            raise EscapedDomain(f"zero dynamics left [{lo:.4g}, {hi:.4g}]")
        b, c = model.direct_coefficients(z[0])
        return [z[1], -b * z[1] ** 2 - c]

    s = step * np.arange(n_steps + 1)
    sol = solve_ivp(f, (0.0, duration), [x_init, 0.0], method="DOP853", t_eval=s,
                    rtol=rtol, atol=1e-13)
    x, xd = sol.y
    return Trajectory(sol.t, x, xd, model.tau0(x, xd), step, "direct", x_eq)


def detect_period(traj: Trajectory, x_eq: float | None = None) -> float:
    """Time of the next ``xdot = 0`` crossing on the starting side of ``x_eq``.

    The start (a turning point) counts as the first crossing, so the result is
    the time of the second.
    """
    if x_eq is None:
        x_eq = traj.x_eq if traj.x_eq is not None else 0.5 * (traj.x.min() + traj.x.max())
    side = np.sign(traj.x[0] - x_eq)
    v = traj.xd
    if side == 0.0 or not np.any(v):
        raise NotPeriodic("trajectory does not leave its starting point")
    prod = v[1:-1] * v[2:]
    idx = np.nonzero((prod < 0.0) | ((v[2:] == 0.0) & (v[1:-1] != 0.0)))[0] + 1
    for k in idx:
        if np.sign(traj.x[k] - x_eq) == side:
            v0, v1 = v[k], v[k + 1]
            return float(traj.s[k] + (traj.s[k + 1] - traj.s[k]) * v0 / (v0 - v1))
    raise NotPeriodic("fewer than two qualifying section crossings")


@dataclass
class Orbit:
    """One closed period sampled on a uniform grid; the last sample closes the curve."""

    s: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    tau: np.ndarray
    period: float
    anchor: tuple
    x_eq: float
    delta1: float = field(init=False)
    delta2: float = field(init=False)

    def __post_init__(self):
        self.delta1 = float(self.x.max() - self.x.min())
        self.delta2 = float(self.xd.max() - self.xd.min())

    @property
    def closure(self):
        return float(math.hypot(self.x[-1] - self.x[0], self.xd[-1] - self.xd[0]))

    def sample(self, t):
        """Periodic cubic interpolation of ``(x, xdot, tau)`` at times ``t``."""
        from scipy.interpolate import CubicSpline

        if not hasattr(self, "_interp"):
            ys = np.vstack([self.x, self.xd, self.tau])
            ys[:, -1] = ys[:, 0]
            self._interp = CubicSpline(self.s, ys, axis=1, bc_type="periodic")
        return self._interp(np.mod(t, self.period))


def extract_orbit(model: ZDModel, x_init: float, x_eq: float | None = None,
                  step: float = DEFAULT_STEP, max_duration: float = 20.0) -> Orbit:
    """Simulate one period from ``(x_init, 0)`` on a grid that divides it exactly."""
    if x_eq is None:
        x_eq, _ = find_equilibrium(model, x_ref=x_init)
    probe = simulate_zd(model, x_init, max_duration, step, x_eq=x_eq)
    T = detect_period(probe, x_eq)
    n = int(round(T / step))
    tr = simulate_zd(model, x_init, T, T / n, n_steps=n, x_eq=x_eq)
    return Orbit(tr.s, tr.x, tr.xd, tr.tau, T, (float(x_init), 0.0), float(x_eq))
