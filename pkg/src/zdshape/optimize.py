"""Simulation-in-the-loop cost, particle swarm, genetic algorithm and grid scans."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import AllInfeasible, EscapedDomain, NoEquilibrium
from .mechanism import DesignParams
from .scenario import ScenarioConfig
from .zero_dynamics import ZDModel, find_equilibrium, omega, simulate_zd

log = logging.getLogger(__name__)

PSO_INERTIA = 0.729
PSO_COGNITIVE = 1.49
PSO_SOCIAL = 1.49


def barrier(om: float, c_bar: float = 0.1, cap: float = 1e12) -> float:
    """``-c log(Omega / (1 + Omega))``, capped for ``Omega <= 0``."""
    if not om > 0.0:
        return cap
    return min(cap, -c_bar * math.log(om / (1.0 + om)))


def trapezoid(y, dx):
    y = np.asarray(y, float)
    return float(dx * (y.sum() - 0.5 * (y[0] + y[-1])))


@dataclass
class Evaluation:
    """One cost evaluation.

    ``J`` is the core cost (plus the depth penalty when enabled); ``J_pso``
    adds the barrier. ``violation`` orders infeasible designs for the GA.
    """

    J: float
    feasible: bool
    J_pso: float = math.nan
    omega: float = math.nan
    violation: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def cost_terms(model: ZDModel, scenario: ScenarioConfig):
    """Trajectory and the integrated pieces of the tracking cost."""
    ref = scenario.reference
    n = int(round(ref.T_r / scenario.step))
    dt = ref.T_r / n
    traj = simulate_zd(model, float(ref.r_x(0.0)), ref.T_r, dt, n_steps=n)
    e1 = traj.x - ref.r_x(traj.s)
    e2 = traj.xd - ref.rdot_x(traj.s)
    Q = np.asarray(scenario.Q, float)
    S = np.asarray(scenario.S, float)
    eps = np.vstack([e1, e2])
    running = np.einsum("ik,ij,jk->k", eps, Q, eps) + scenario.R * traj.tau ** 2
    integral = trapezoid(running, dt)
    terminal = float(eps[:, -1] @ S @ eps[:, -1])
    return traj, eps, integral, terminal


def depth_penalty(p: DesignParams, scenario: ScenarioConfig) -> float:
    d = np.array([p.delta_b, p.delta_t]) - scenario.depth_bounds[0]
    return float(d @ np.asarray(scenario.L, float) @ d)


def evaluate_cost(p: DesignParams, scenario: ScenarioConfig, basis=None) -> Evaluation:
    """Tracking cost of design ``p`` with feasibility information.

    Infeasible designs (no equilibrium, ``Omega <= 0`` or a zero-dynamics
    trajectory that leaves the domain) get ``J = J_pso = cap``.
    """
    p.check()
    basis = basis if basis is not None else scenario.basis
    model = basis.model(p)
    cap = scenario.cap
    try:
        x0, roots = find_equilibrium(model, x_ref=scenario.reference.x_c)
    except NoEquilibrium as exc:
        return Evaluation(cap, False, cap, 0.0, 1.0, {"reason": str(exc)})
    om = omega(model, x0)
    diag = {"x0": x0, "roots": roots}
    if not om > 0.0:
        return Evaluation(cap, False, cap, om, -om + 1e-300, {**diag, "reason": "omega <= 0"})
    try:
        _, _, integral, terminal = cost_terms(model, scenario)
    except EscapedDomain as exc:
        return Evaluation(cap, False, cap, om, math.inf, {**diag, "reason": str(exc)})
    J = integral + terminal
    if scenario.mass_penalty:
        J += depth_penalty(p, scenario)
    J = min(J, cap)
    diag.update(integral=integral, terminal=terminal)
    return Evaluation(J, True, min(cap, J + barrier(om, scenario.c_bar, cap)), om, 0.0, diag)


class ScenarioObjective:
    """Maps decision vectors to :class:`Evaluation` for one scenario."""

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.basis = scenario.basis
        self.lower = scenario.lower
        self.upper = scenario.upper
        self.n_evals = 0

    def params(self, vec) -> DesignParams:
        return DesignParams.from_array(np.clip(np.asarray(vec, float), self.lower, self.upper))

    def __call__(self, vec) -> Evaluation:
        self.n_evals += 1
        return evaluate_cost(self.params(vec), self.scenario, self.basis)


class FunctionObjective:
    """Wrap a plain function (and optional constraint ``g(x) > 0``) as an objective."""

    def __init__(self, fn: Callable, lower, upper, constraint: Callable | None = None):
        self.fn = fn
        self.constraint = constraint
        self.lower = np.asarray(lower, float)
        self.upper = np.asarray(upper, float)
        self.n_evals = 0

    def __call__(self, vec) -> Evaluation:
        self.n_evals += 1
        J = float(self.fn(np.asarray(vec, float)))
        if self.constraint is None:
            return Evaluation(J, True, J)
        g = float(self.constraint(np.asarray(vec, float)))
        if g > 0.0:
            return Evaluation(J, True, J, g)
        return Evaluation(1e12, False, 1e12, g, -g + 1e-300)


@dataclass
class OptResult:
    p_star: list
    J_star: float
    n_evals: int
    history: list
    seed: int
    solver: str
    termination: str
    omega_star: float = math.nan
    polished: bool = False

    def to_json(self, path=None):
        txt = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(txt)
        return txt

    @classmethod
    def from_json(cls, text_or_path):
        txt = str(text_or_path)
        if not txt.lstrip().startswith("{"):
            txt = Path(txt).read_text()
        return cls(**json.loads(txt))

    @property
    def params(self) -> DesignParams:
        return DesignParams.from_array(np.asarray(self.p_star))


def _polish(objective, x, key):
    """Bounded quasi-Newton refinement of a global-solver incumbent."""
    lo, hi = objective.lower, objective.upper

    def f(v):
        ev = objective(v)
        return key(ev)

    f0 = f(x)
    res = minimize(f, x, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 200})
    if res.fun < f0:
        return np.clip(res.x, lo, hi), float(res.fun)
    return x, f0


def _finish(objective, best_x, solver, seed, history, reason, key, polish):
    polished = False
    if polish:
        x, _ = _polish(objective, best_x, key)
        polished = not np.array_equal(x, best_x)
        best_x = x
    ev = objective(best_x)
    return OptResult([float(v) for v in best_x], float(key(ev)), objective.n_evals,
                     [float(h) for h in history], seed, solver, reason, float(ev.omega), polished)


def pso_optimize(objective, swarm: int = 40, iterations: int = 200, seed: int = 0,
                 initial=None, polish: bool = True, tol: float | None = None) -> OptResult:
    """Global-best particle swarm on the barrier cost ``J + B``.

    Coordinates that hit the box are clamped and their velocity zeroed.
    ``initial`` optionally replaces the first particles' starting positions.
    """
    if swarm < 10:
        raise ValueError("swarm size must be at least 10")
    rng = np.random.default_rng(seed)
    lo, hi = objective.lower, objective.upper
    span = hi - lo
    dim = lo.size
    x = lo + rng.random((swarm, dim)) * span
    if initial is not None:
        init = np.atleast_2d(np.asarray(initial, float))
        x[:len(init)] = np.clip(init, lo, hi)
    v = (rng.random((swarm, dim)) * 2.0 - 1.0) * span
    evals = [objective(xi) for xi in x]
    f = np.array([e.J_pso for e in evals])
    feas = np.array([e.feasible for e in evals])
    pbest, pf = x.copy(), f.copy()
    g = int(np.argmin(pf))
    history = [float(pf[g])]
    any_feasible = bool(feas.any())
    reason = "iteration budget"
    for _ in range(iterations):
        r1 = rng.random((swarm, dim))
        r2 = rng.random((swarm, dim))
        v = PSO_INERTIA * v + PSO_COGNITIVE * r1 * (pbest - x) + PSO_SOCIAL * r2 * (pbest[g] - x)
        x = x + v
        out = (x < lo) | (x > hi)
        x = np.clip(x, lo, hi)
        v[out] = 0.0
        for i in range(swarm):
            e = objective(x[i])
            any_feasible |= e.feasible
            if e.J_pso < pf[i]:
                pf[i] = e.J_pso
                pbest[i] = x[i]
        g = int(np.argmin(pf))
        history.append(float(pf[g]))
        if tol is not None and history[-1] <= tol:
            reason = "target reached"
            break
    if not any_feasible:
        raise AllInfeasible("particle swarm never sampled a feasible design")
    return _finish(objective, pbest[g], "pso", seed, history, reason, lambda e: e.J_pso, polish)


def _rank_key(e: Evaluation):
    return (0, e.J) if e.feasible else (1, e.violation)


def ga_optimize(objective, population: int = 40, generations: int = 200, seed: int = 0,
                initial=None, polish: bool = True, crossover_alpha: float = 0.5,
                mutation_rate: float = 0.1, mutation_scale: float = 0.05, tournament: int = 3,
                elite: int = 1) -> OptResult:
    """Real-coded GA with the feasibility rule for ``Omega > 0``.

    Feasible designs beat infeasible ones; infeasible designs compare by
    constraint violation. Tournament selection, BLX-alpha crossover, Gaussian
    mutation and elitism.
    """
    if population < 20:
        raise ValueError("population must be at least 20")
    rng = np.random.default_rng(seed)
    lo, hi = objective.lower, objective.upper
    span = hi - lo
    dim = lo.size
    pop = lo + rng.random((population, dim)) * span
    if initial is not None:
        init = np.atleast_2d(np.asarray(initial, float))
        pop[:len(init)] = np.clip(init, lo, hi)
    evals = [objective(ind) for ind in pop]
    keys = [_rank_key(e) for e in evals]
    best_i = min(range(population), key=lambda i: keys[i])
    best_x, best_k = pop[best_i].copy(), keys[best_i]
    history = [best_k[1] if best_k[0] == 0 else math.inf]

    def pick():
        idx = rng.integers(0, population, tournament)
        return pop[min(idx, key=lambda i: keys[i])]

    for _ in range(generations):
        order = sorted(range(population), key=lambda i: keys[i])
        children = [pop[i].copy() for i in order[:elite]]
        while len(children) < population:
            a, b = pick(), pick()
            cmin, cmax = np.minimum(a, b), np.maximum(a, b)
            width = cmax - cmin
            for _pair in range(2):
                child = cmin - crossover_alpha * width + rng.random(dim) * (1 + 2 * crossover_alpha) * width
                mask = rng.random(dim) < mutation_rate
                child = child + mask * rng.normal(0.0, mutation_scale, dim) * span
                children.append(np.clip(child, lo, hi))
        pop = np.array(children[:population])
        evals = [objective(ind) for ind in pop]
        keys = [_rank_key(e) for e in evals]
        i = min(range(population), key=lambda i: keys[i])
        if keys[i] < best_k:
            best_x, best_k = pop[i].copy(), keys[i]
        history.append(best_k[1] if best_k[0] == 0 else math.inf)
    if best_k[0] != 0:
        raise AllInfeasible("genetic algorithm never sampled a feasible design")
    return _finish(objective, best_x, "ga", seed, history, "generation budget",
                   lambda e: e.J if e.feasible else 1e12, polish)


def local_refine(objective, x0, method: str = "Nelder-Mead", maxiter: int = 400):
    """Local search from ``x0``; returns ``(path, result)`` for landscape plots."""
    path = [np.asarray(x0, float)]

    def f(v):
        return objective(v).J

    res = minimize(f, x0, method=method, bounds=list(zip(objective.lower, objective.upper)),
                   callback=lambda xk, *a: path.append(np.array(xk)), options={"maxiter": maxiter})
    return np.array(path), res


def optimize(scenario: ScenarioConfig, solver: str = "pso", seed: int | None = None,
             initial=None, polish: bool = True) -> OptResult:
    """Run one solver on a scenario with its configured budgets."""
    seed = scenario.seed if seed is None else seed
    obj = ScenarioObjective(scenario)
    if solver == "pso":
        cfg = scenario.pso
        return pso_optimize(obj, cfg["swarm"], cfg["iterations"], seed, initial, polish)
    if solver == "ga":
        cfg = scenario.ga
        return ga_optimize(obj, cfg["population"], cfg["generations"], seed, initial, polish)
    raise ValueError(f"unknown solver {solver!r}")


@dataclass
class Landscape:
    kb: np.ndarray
    kt: np.ndarray
    J: np.ndarray
    J_pso: np.ndarray
    omega: np.ndarray
    feasible: np.ndarray

    @property
    def minimum(self):
        i, j = np.unravel_index(np.argmin(self.J), self.J.shape)
        return float(self.kb[i]), float(self.kt[j]), float(self.J[i, j])

    def local_minima(self):
        """Cells strictly below every existing 8-neighbour (feasible cells only)."""
        J = self.J
        n, m = J.shape
        out = []
        for i in range(n):
            for j in range(m):
                if not self.feasible[i, j]:
                    continue
                nb = J[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
                if np.sum(nb <= J[i, j]) == 1:
                    out.append((float(self.kb[i]), float(self.kt[j]), float(J[i, j])))
        return sorted(out, key=lambda t: t[2])

    def to_csv(self, path):
        KB, KT = np.meshgrid(self.kb, self.kt, indexing="ij")
        data = np.column_stack([a.ravel() for a in (KB, KT, self.J, self.J_pso, self.omega,
                                                     self.feasible.astype(float))])
        np.savetxt(path, data, delimiter=",", header="kb,kt,J,J_pso,omega,feasible",
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        data = np.genfromtxt(path, delimiter=",", names=True)
        kb = np.unique(data["kb"])
        kt = np.unique(data["kt"])
        shape = (kb.size, kt.size)
        return cls(kb, kt, data["J"].reshape(shape), data["J_pso"].reshape(shape),
                   data["omega"].reshape(shape), data["feasible"].reshape(shape).astype(bool))


def grid_scan(scenario: ScenarioConfig, resolution: int = 100, axes=("kb", "kt")) -> Landscape:
    """Cost on a uniform ``resolution x resolution`` grid over the stiffness box."""
    if tuple(axes) != ("kb", "kt"):
        raise ValueError("only the (kb, kt) plane is supported")
    if resolution ** 2 > 10 ** 6:
        raise ValueError("at most 1e6 grid points")
    lo, hi = scenario.k_bounds
    kb = np.linspace(lo, hi, resolution)
    kt = np.linspace(lo, hi, resolution)
    shape = (resolution, resolution)
    J, Jp, om = (np.empty(shape) for _ in range(3))
    fe = np.empty(shape, bool)
    basis = scenario.basis
    for i, a in enumerate(kb):
        for j, b in enumerate(kt):
            e = evaluate_cost(DesignParams(float(a), float(b)), scenario, basis)
            J[i, j], Jp[i, j], om[i, j], fe[i, j] = e.J, e.J_pso, e.omega, e.feasible
    return Landscape(kb, kt, J, Jp, om, fe)
