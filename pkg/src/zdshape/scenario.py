"""Scenario configuration, JSON I/O and the workspace-feasibility scan.

The reference ``r_x(t) = x_c + A_r cos(2 pi t / T_r)``, ``r_y = const`` is
picked by :func:`choose_reference`: on each candidate line ``y = r_y`` the
longest contiguous run of feasible ``x`` cells is found, the line with the
longest run wins, ``x_c`` is the run midpoint and ``A_r`` a quarter of its
span. The run also serves as the tabulation domain of the zero dynamics.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .fastmodel import FastPlant
from .mechanism import (DEPTH_BOUNDS, STIFFNESS_BOUNDS, DesignParams, LinkTable,
                        MechanismInstance)

SCAN_Y = tuple(round(0.01 * i, 2) for i in range(19))
SCAN_STEP = 0.0025
SCAN_X = (-0.2, 0.2)
MIN_DET_S = 1e-5
MIN_GAIN = 10.0
AMPLITUDE_FRACTION = 0.25


def cell_feasible(plant: FastPlant, x: float, y: float) -> bool:
    """Assembles on the pinned branch, stacked Jacobian well away from singular, ``|g_y| >= 10``."""
    ok, M, _, _, B, _, det_s = plant.minimal_terms(x, y, 0.0, 0.0)
    if not ok or abs(det_s) < MIN_DET_S:
        return False
    g = np.linalg.solve(M, B)
    return bool(abs(g[1]) >= MIN_GAIN)


def feasible_run(plant: FastPlant, y: float, step: float = SCAN_STEP, x_range=SCAN_X):
    """Longest contiguous feasible x-interval on ``y`` (``None`` if empty)."""
    xs = np.round(np.arange(x_range[0], x_range[1] + 0.5 * step, step), 10)
    flags = [cell_feasible(plant, x, y) for x in xs]
    best, cur = None, None
    for x, f in zip(xs, flags):
        if f:
            cur = (cur[0], x) if cur else (x, x)
            if best is None or cur[1] - cur[0] > best[1] - best[0]:
                best = cur
        else:
            cur = None
    return None if best is None else (float(best[0]), float(best[1]))


def choose_reference(inst: MechanismInstance, ys=SCAN_Y, step: float = SCAN_STEP):
    """Reference line, center, amplitude and tabulation domain at nominal depths."""
    plant = FastPlant(inst, DesignParams(0.0, 0.0))
    best = None
    for y in ys:
        run = feasible_run(plant, y, step)
        if run and (best is None or run[1] - run[0] > best[1][1] - best[1][0] + 1e-12):
            best = (y, run)
    if best is None:
        raise ValueError("no feasible reference line in the scanned workspace")
    y, (lo, hi) = best
    return {"r_y": float(y), "x_lo": lo, "x_hi": hi, "x_c": 0.5 * (lo + hi),
            "A_r": AMPLITUDE_FRACTION * (hi - lo)}


@dataclass(frozen=True)
class Reference:
    x_c: float
    A_r: float
    T_r: float
    r_y: float

    def r_x(self, t):
        return self.x_c + self.A_r * np.cos(2.0 * np.pi * np.asarray(t) / self.T_r)

    def rdot_x(self, t):
        w = 2.0 * np.pi / self.T_r
        return -self.A_r * w * np.sin(w * np.asarray(t))


@dataclass
class ScenarioConfig:
    """Everything a run needs; round-trips through JSON."""

    reference: Reference
    domain: tuple = (-0.0325, 0.12)
    pivot_q1: tuple = (-0.19, 0.15)
    pivot_link4: tuple = (0.0, 0.0)
    branch: tuple = (-1.0, -1.0)
    psi_selector: tuple = (0, 1)
    rest_angles: tuple | None = None
    links: dict = field(default_factory=dict)
    Q: tuple = ((100.0, 0.0), (0.0, 100.0))
    R: float = 10.0
    S: tuple = ((10.0, 0.0), (0.0, 10.0))
    L: tuple = ((200.0, 0.0), (0.0, 200.0))
    c_bar: float = 0.1
    cap: float = 1e12
    mode: str = "two"
    mass_penalty: bool = False
    k_bounds: tuple = STIFFNESS_BOUNDS
    depth_bounds: tuple = DEPTH_BOUNDS
    step: float = 1e-4
    n_nodes: int = 1201
    seed: int = 0
    Q_c: tuple = (100.0, 500.0, 100.0)
    R_c: float = 1.0
    perturbation: tuple = (0.01, 0.01, 0.005)
    closed_loop_periods: float = 5.0
    design: tuple | None = None
    pso: dict = field(default_factory=lambda: {"swarm": 40, "iterations": 200})
    ga: dict = field(default_factory=lambda: {"population": 40, "generations": 200})

    def __post_init__(self):
        if isinstance(self.reference, dict):
            self.reference = Reference(**self.reference)
        for name in ("Q", "S", "L"):
            m = np.asarray(getattr(self, name), float)
            if m.shape != (2, 2) or np.any(np.linalg.eigvalsh(0.5 * (m + m.T)) <= 0):
                raise ValueError(f"{name} must be a positive-definite 2x2 matrix")
        if self.R <= 0 or self.c_bar <= 0 or self.reference.T_r <= 0:
            raise ValueError("R, c_bar and T_r must be positive")
        if self.mode not in ("two", "four"):
            raise ValueError("mode must be 'two' or 'four'")

    # --- derived objects ----------------------------------------------------

    def base_instance(self) -> MechanismInstance:
        links = LinkTable(**{k: tuple(v) if isinstance(v, list) else v for k, v in self.links.items()})
        return MechanismInstance(links=links, pivot_q1=tuple(self.pivot_q1),
                                 pivot_link4=tuple(self.pivot_link4), branch=tuple(self.branch),
                                 psi_selector=tuple(self.psi_selector))

    @cached_property
    def instance(self) -> MechanismInstance:
        inst = self.base_instance()
        rest = self.rest_angles
        if rest is None:
            ok, q = FastPlant(inst, DesignParams(0.0, 0.0)).configure(self.reference.x_c,
                                                                      self.reference.r_y)
            if not ok:
                raise ValueError("reference center outside the workspace")
            rest = (float(q[2]), float(q[3]))
        return inst.replace(rest_angles=tuple(rest))

    @cached_property
    def basis(self):
        from .zero_dynamics import ZDBasis
        return ZDBasis.build(self.instance, self.reference.r_y, self.domain[0], self.domain[1],
                             self.n_nodes)

    @property
    def lower(self):
        lo = [self.k_bounds[0]] * 2
        return np.array(lo + ([self.depth_bounds[0]] * 2 if self.mode == "four" else []))

    @property
    def upper(self):
        hi = [self.k_bounds[1]] * 2
        return np.array(hi + ([self.depth_bounds[1]] * 2 if self.mode == "four" else []))

    def params(self, vec) -> DesignParams:
        return DesignParams.from_array(np.asarray(vec, float))

    # --- JSON ---------------------------------------------------------------

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["reference"] = dataclasses.asdict(self.reference)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(tuple(r) if isinstance(r, list) else r for r in v)
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def default_scenario(**overrides) -> ScenarioConfig:
    """Scenario shipped with the package (see ``data/default_scenario.json``)."""
    from importlib.resources import files
    d = json.loads(files("zdshape").joinpath("data/default_scenario.json").read_text())
    d.update(overrides)
    return ScenarioConfig.from_dict(d)


def scenario_from_scan(inst: MechanismInstance | None = None, **overrides) -> ScenarioConfig:
    """Build a scenario by running the feasibility scan on ``inst``."""
    inst = inst or MechanismInstance()
    ref = choose_reference(inst)
    d = dict(reference=Reference(ref["x_c"], ref["A_r"], 1.0, ref["r_y"]),
             domain=(ref["x_lo"], ref["x_hi"]), pivot_q1=tuple(inst.pivot_q1),
             pivot_link4=tuple(inst.pivot_link4), branch=tuple(inst.branch),
             psi_selector=tuple(inst.psi_selector))
    d.update(overrides)
    return ScenarioConfig(**d)


def rounded(x, digits=12):
    return float(round(x, digits)) if math.isfinite(x) else x
