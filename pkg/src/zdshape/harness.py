"""Closed-loop simulation, orbit distance and the end-to-end scenario pipeline."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from . import __version__, fastmodel
from .dynamics import dae_accelerations
from .errors import DegenerateOrbit, EscapedDomain, ZDShapeError
from .fastmodel import FastPlant
from .mechanism import forward_kinematics, velocity_map
from .zero_dynamics import Orbit

log = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4


def orbit_distance(states, orbit: Orbit, densify: int = 10):
    """Normalized distance of ``(x, xdot)`` samples to the orbit curve.

    The orbit is densified ``densify``-fold by periodic cubic interpolation;
    the minimum over the dense samples is found with a KD-tree.
    """
    if not (orbit.delta1 > 0.0 and orbit.delta2 > 0.0):
        raise DegenerateOrbit("orbit has zero extent")
    tree = _orbit_tree(orbit, densify)
    pts = np.atleast_2d(np.asarray(states, float))
    d, _ = tree.query(np.column_stack([pts[:, 0] / orbit.delta1, pts[:, 1] / orbit.delta2]))
    return d if np.ndim(states) > 1 else float(d[0])


def _orbit_tree(orbit: Orbit, densify: int):
    key = ("_tree", densify)
    cache = orbit.__dict__.setdefault("_cache", {})
    if key not in cache:
        t = np.linspace(0.0, orbit.period, densify * (len(orbit.s) - 1) + 1)
        x, xd, _ = orbit.sample(t)
        cache[key] = cKDTree(np.column_stack([x / orbit.delta1, xd / orbit.delta2]))
    return cache[key]


@dataclass
class ClosedLoopRecord:
    t: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    y: np.ndarray
    yd: np.ndarray
    u: np.ndarray
    e: np.ndarray
    q: np.ndarray
    d: np.ndarray | None = None
    diagnostic: str = ""

    @property
    def complete(self):
        return not self.diagnostic

    def columns(self):
        cols = {"t": self.t, "x": self.x, "xdot": self.xd, "y": self.y, "ydot": self.yd,
                "u": self.u, "e": self.e}
        if self.d is not None:
            cols["d"] = self.d
        for i in range(4):
            cols[f"q{i + 1}"] = self.q[:, i]
        return cols


def _record(t, st, u, q, r_y, orbit, diagnostic):
    d = orbit_distance(st[:, :2], orbit) if orbit is not None else None
    return ClosedLoopRecord(t, st[:, 0], st[:, 1], st[:, 2], st[:, 3], u, st[:, 2] - r_y, q, d,
                            diagnostic)


def closed_loop_simulate(plant: FastPlant, controller, init, duration: float, r_y: float,
                         step: float = DEFAULT_STEP, orbit: Orbit | None = None,
                         raise_on_escape: bool = False) -> ClosedLoopRecord:
    """RK4 on the minimal-form plant under ``controller(x, xdot, y, ydot, t)``.

    A :class:`~zdshape.stabilizer.StabilizingController` runs in a compiled
    kernel; any other callable goes through the Python loop. On an escape the
    partial record carries a diagnostic (or :class:`EscapedDomain` is raised).
    """
    n = int(round(duration / step))
    s0 = np.asarray(init, float).reshape(4)
    if hasattr(controller, "kernel_args"):
        st, u, q, done = fastmodel.closed_loop_rk4(*controller.kernel_args(), s0, step, n)
    else:
        st, u, q, done = _python_loop(plant, controller, s0, step, n)
    diagnostic = "" if done == n else f"left the domain at t = {done * step:.4f} s"
    m = done + 1 if done == n else done
    rec = _record(step * np.arange(m), st[:m], u[:m], q[:m], r_y, orbit, diagnostic)
    if diagnostic and raise_on_escape:
        raise EscapedDomain(diagnostic, partial=rec)
    return rec


def _python_loop(plant: FastPlant, controller, s0, dt, n):
    states = np.empty((n + 1, 4))
    us = np.empty(n + 1)
    qs = np.empty((n + 1, 4))

    def deriv(t, s):
        u = controller(s[0], s[1], s[2], s[3], t)
        ok, fx, fy, gx, gy, q = plant.pfl(s[0], s[2], s[1], s[3])
        if not ok:
            raise EscapedDomain("workspace")
        return np.array([s[1], fx + gx * u, s[3], fy + gy * u]), u, q

    s = s0.copy()
    for k in range(n + 1):
        t = k * dt
        states[k] = s
        try:
            k1, us[k], qs[k] = deriv(t, s)
            if k == n:
                break
            k2 = deriv(t + 0.5 * dt, s + 0.5 * dt * k1)[0]
            k3 = deriv(t + 0.5 * dt, s + 0.5 * dt * k2)[0]
            k4 = deriv(t + dt, s + dt * k3)[0]
        except ZDShapeError:
            return states, us, qs, k
        s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return states, us, qs, n


def feedforward_controller(orbit: Orbit):
    """Open-loop ``u = tau_bar(t)`` replayed from the orbit."""

    def ctrl(x, xd, y, yd, t):
        return float(orbit.sample(t)[2])

    return ctrl


def perturbed_start(orbit: Orbit, r_y: float, fractions=(0.01, 0.01, 0.005)):
    """Orbit anchor displaced by fractions of ``(Delta1, Delta2)`` plus an output offset."""
    fx, fv, de = fractions
    x0, xd0 = orbit.anchor
    return np.array([x0 + fx * orbit.delta1, xd0 + fv * orbit.delta2, r_y + de, 0.0])


def dae_replay(p, inst, rec: ClosedLoopRecord, duration: float, step: float = DEFAULT_STEP):
    """Re-simulate the recorded input through the index-reduced DAE.

    Returns the task-space trajectory ``h(q(t))`` on the record's grid.
    """
    n = int(round(duration / step))
    u_of = CubicSpline(rec.t[:n + 1], rec.u[:n + 1])
    J0 = velocity_map(inst, np.asarray(rec.q[0], float))
    z = np.concatenate([rec.q[0], J0 @ np.array([rec.xd[0], rec.yd[0]])])

    def f(t, z):
        qdd, _ = dae_accelerations(p, inst, z[:4], z[4:], float(u_of(t)))
        return np.concatenate([z[4:], qdd])

    out = np.empty((n + 1, 2))
    out[0] = forward_kinematics(inst, z[:4])
    for k in range(n):
        t = k * step
        k1 = f(t, z)
        k2 = f(t + 0.5 * step, z + 0.5 * step * k1)
        k3 = f(t + 0.5 * step, z + 0.5 * step * k2)
        k4 = f(t + step, z + step * k3)
        z = z + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = forward_kinematics(inst, z[:4])
    return out


def decay_slope(t, d, period):
    """Least-squares slope of ``log`` per-period maxima of ``d`` (negative = contraction)."""
    n = int(t[-1] // period)
    peaks = []
    for k in range(n):
        m = (t >= k * period) & (t < (k + 1) * period)
        peaks.append((t[m][np.argmax(d[m])], d[m].max()))
    if len(peaks) < 2:
        return math.nan
    pt, pd = np.array(peaks).T
    return float(np.polyfit(pt, np.log(pd), 1)[0])


# --- CSV / manifest helpers ------------------------------------------------

def write_csv(path, columns: dict):
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], float) for k in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
    return Path(path)


def read_csv(path):
    arr = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.asarray(arr[k]) for k in arr.dtype.names}


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    scenario_hash: str
    seeds: dict
    versions: dict
    tolerances: dict
    outputs: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    status: str = "ok"
    diagnostic: str = ""

    def add(self, path):
        path = Path(path)
        self.outputs[path.name] = file_digest(path)

    @property
    def digest(self) -> str:
        body = {k: v for k, v in self.__dict__.items()}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def write(self, path):
        body = dict(self.__dict__)
        body["hash"] = self.digest
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True))


def versions():
    import matplotlib
    import numba
    import scipy
    return {"zdshape": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "matplotlib": matplotlib.__version__}
