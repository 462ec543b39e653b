"""Stage runners behind the CLI and the end-to-end scenario pipeline.

Every stage reads its inputs from files, writes CSV (plus an SVG rendered
from that CSV) into the output directory and returns the written paths.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import plotting
from .errors import ZDShapeError
from .fastmodel import FastPlant
from .harness import (RunManifest, closed_loop_simulate, decay_slope, perturbed_start,
                      read_csv, versions, write_csv)
from .mechanism import DesignParams, loop_constraint
from .optimize import Landscape, OptResult, grid_scan, optimize
from .scenario import ScenarioConfig, cell_feasible
from .stabilizer import IntegralOfMotion, synthesize
from .zero_dynamics import extract_orbit, find_equilibrium, omega, simulate_zd

log = logging.getLogger(__name__)

STAGES = ("feasibility", "optimize", "simulate-zd", "stabilize", "closed-loop", "report")
GAIN_NAMES = ("P11", "P12", "P13", "P22", "P23", "P33")
TOLERANCES = {"riccati_gap": 1e-8, "riccati_residual": 1e-6, "distance": 1e-3,
              "structure": 1e-8, "constraint": 1e-9}


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return Path(path)


def resolve_design(scenario: ScenarioConfig, result_path=None) -> DesignParams:
    """Design from a result file, else the scenario's pinned design."""
    if result_path is not None and Path(result_path).exists():
        return OptResult.from_json(result_path).params
    if scenario.design is not None:
        return DesignParams.from_array(np.asarray(scenario.design, float))
    raise FileNotFoundError("no optimization result and no design pinned in the scenario")


# --- stages ----------------------------------------------------------------

def stage_feasibility(scenario: ScenarioConfig, out: Path):
    """Workspace feasibility along the reference line at nominal depths."""
    plant = FastPlant(scenario.instance, DesignParams(0.0, 0.0))
    ref = scenario.reference
    xs = np.round(np.arange(scenario.domain[0] - 0.05, scenario.domain[1] + 0.05 + 1e-12,
                            0.0025), 10)
    gy = np.full(xs.size, np.nan)
    ok = np.zeros(xs.size)
    for i, x in enumerate(xs):
        good, M, _, _, B, _, _ = plant.minimal_terms(x, ref.r_y, 0.0, 0.0)
        if good:
            gy[i] = np.linalg.solve(M, B)[1]
            ok[i] = cell_feasible(plant, x, ref.r_y)
    csv = write_csv(out / "feasibility.csv", {"x": xs, "g_y": gy, "feasible": ok})
    return [csv, plotting.feasibility(csv, out / "feasibility.svg")]


def stage_scan(scenario: ScenarioConfig, grid_path, svg_path=None, resolution: int = 100,
               axes=("kb", "kt")):
    land = grid_scan(scenario, resolution, axes)
    land.to_csv(grid_path)
    paths = [Path(grid_path)]
    if svg_path is not None:
        paths.append(plotting.landscape(grid_path, svg_path, minima=land.local_minima()))
    return land, paths


def stage_optimize(scenario: ScenarioConfig, result_path, solver="pso", seed=None, initial=None):
    res = optimize(scenario, solver, seed, initial)
    res.to_json(result_path)
    hist = Path(result_path).with_name(Path(result_path).stem + "_history.csv")
    write_csv(hist, {"iteration": np.arange(len(res.history)), "best": res.history})
    svg = plotting.convergence(hist, hist.with_suffix(".svg"))
    return res, [Path(result_path), hist, svg]


def stage_simulate_zd(scenario: ScenarioConfig, p: DesignParams, out: Path):
    """Zero dynamics over one reference period plus the closed orbit."""
    model = scenario.basis.model(p)
    ref = scenario.reference
    x_eq, _ = find_equilibrium(model, x_ref=ref.x_c)
    x0 = float(ref.r_x(0.0))
    n = int(round(ref.T_r / scenario.step))
    traj = simulate_zd(model, x0, ref.T_r, ref.T_r / n, n_steps=n, x_eq=x_eq)
    iom = IntegralOfMotion(model, (x0, 0.0))
    zd = write_csv(out / "zd.csv", {"s": traj.s, "x": traj.x, "xdot": traj.xd, "tau": traj.tau,
                                    "I": iom(traj.x, traj.xd)})
    rx, rdx = ref.r_x(traj.s), ref.rdot_x(traj.s)
    tracking = write_csv(out / "tracking.csv", {
        "s": traj.s, "r_x": rx, "rdot_x": rdx, "x": traj.x, "xdot": traj.xd,
        "eps1": traj.x - rx, "eps2": traj.xd - rdx, "tau": traj.tau})
    orbit = extract_orbit(model, x0, x_eq, scenario.step)
    orb = write_csv(out / "orbit.csv", {"s": orbit.s, "x": orbit.x, "xdot": orbit.xd,
                                        "tau": orbit.tau})
    info = {"x_eq": x_eq, "omega": omega(model, x_eq), "period": orbit.period,
            "delta1": orbit.delta1, "delta2": orbit.delta2, "closure": orbit.closure,
            "I_max": float(np.max(np.abs(iom(traj.x, traj.xd))))}
    svg = plotting.zero_dynamics(tracking, out / "zd.svg")
    return model, orbit, info, [zd, tracking, orb, svg]


def stage_stabilize(scenario: ScenarioConfig, model, orbit, out: Path):
    syn = synthesize(model, orbit, scenario.Q_c, scenario.R_c)
    g = syn.gain
    iu = np.triu_indices(3)
    cols = {"t": g.t}
    cols.update({name: g.P[:, i, j] for name, i, j in zip(GAIN_NAMES, *iu)})
    gain_csv = write_csv(out / "gain.csv", cols)
    diag = {"period": g.period, "gap": g.gap, "sweeps": g.sweeps,
            "residual_max": float(g.residual(syn.linearization).max()),
            "P_min_eig": float(np.linalg.eigvalsh(g.P).min()),
            "gramian_min_eig": syn.gramian.min_eig,
            "Q_c": list(np.diag(g.Q_c)), "R_c": g.R_c,
            "delta1": orbit.delta1, "delta2": orbit.delta2}
    dj = _dump(out / "diagnostics.json", diag)
    svg = plotting.gain(gain_csv, out / "gain.svg")
    return syn, diag, [gain_csv, dj, svg]


def stage_closed_loop(scenario: ScenarioConfig, p: DesignParams, syn, orbit, out: Path):
    r_y = scenario.reference.r_y
    init = perturbed_start(orbit, r_y, scenario.perturbation)
    duration = scenario.closed_loop_periods * orbit.period
    rec = closed_loop_simulate(syn.controller.plant, syn.controller, init, duration, r_y,
                               scenario.step, orbit)
    inst = scenario.instance
    resid = np.array([np.linalg.norm(loop_constraint(inst, q)) for q in rec.q])
    cols = rec.columns()
    cols["y_ref"] = np.full(rec.t.size, r_y)
    cols["constraint"] = resid
    csv = write_csv(out / "closed_loop.csv", cols)
    svg = plotting.closed_loop(csv, out / "orbit.csv", out / "closed_loop.svg")
    d = rec.d
    below = np.flatnonzero(d < TOLERANCES["distance"])
    info = {"complete": rec.complete, "diagnostic": rec.diagnostic, "d0": float(d[0]),
            "d_max": float(d.max()), "d_final": float(d[-1]),
            "t_below": float(rec.t[below[0]]) if below.size else None,
            "decay_slope": decay_slope(rec.t, d, orbit.period),
            "e_final": float(abs(rec.e[-1])), "constraint_max": float(resid.max())}
    return rec, info, [csv, svg]


def stage_report(out: Path, summary: dict | None = None):
    """Regenerate every figure from the CSVs present in ``out``."""
    out = Path(out)
    paths = []
    if (out / "feasibility.csv").exists():
        paths.append(plotting.feasibility(out / "feasibility.csv", out / "feasibility.svg"))
    if (out / "grid.csv").exists():
        land = Landscape.from_csv(out / "grid.csv")
        paths.append(plotting.landscape(out / "grid.csv", out / "heatmap.svg",
                                        minima=land.local_minima()))
    if (out / "result_history.csv").exists():
        paths.append(plotting.convergence(out / "result_history.csv",
                                          out / "result_history.svg"))
    if (out / "tracking.csv").exists():
        paths.append(plotting.zero_dynamics(out / "tracking.csv", out / "zd.svg"))
    if (out / "gain.csv").exists():
        paths.append(plotting.gain(out / "gain.csv", out / "gain.svg"))
    if (out / "closed_loop.csv").exists() and (out / "orbit.csv").exists():
        paths.append(plotting.closed_loop(out / "closed_loop.csv", out / "orbit.csv",
                                          out / "closed_loop.svg"))
        if summary is None:
            d = read_csv(out / "closed_loop.csv")["d"]
            summary = {"closed-loop": {"d_max": float(d.max()), "d_final": float(d[-1])}}
    if summary is not None:
        paths.append(_dump(out / "summary.json", summary))
    return paths


# --- pipeline ----------------------------------------------------------------

def run_scenario(scenario: ScenarioConfig | str | Path, out, seed: int | None = None,
                 solver: str = "pso", scan_resolution: int = 0) -> RunManifest:
    """Run all stages; on failure write a diagnostic manifest and re-raise.

    ``scan_resolution > 0`` adds a cost-landscape grid to the feasibility stage.
    """
    if not isinstance(scenario, ScenarioConfig):
        scenario = ScenarioConfig.load(scenario)
    seed = scenario.seed if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    scenario.save(out / "scenario.json")
    man = RunManifest(scenario.digest(), {"optimizer": seed}, versions(), dict(TOLERANCES))
    man.add(out / "scenario.json")
    summary = {}
    stage = STAGES[0]
    try:
        paths = stage_feasibility(scenario, out)
        if scan_resolution:
            _, more = stage_scan(scenario, out / "grid.csv", out / "heatmap.svg", scan_resolution)
            paths += more
        _record(man, stage, paths)

        stage = "optimize"
        if scenario.design is None:
            res, paths = stage_optimize(scenario, out / "result.json", solver, seed)
            summary["optimize"] = {"p_star": res.p_star, "J_star": res.J_star,
                                   "omega": res.omega_star, "solver": solver}
            _record(man, stage, paths)
            p = res.params
        else:
            man.stages[stage] = "skipped"
            p = resolve_design(scenario)

        stage = "simulate-zd"
        model, orbit, summary[stage], paths = stage_simulate_zd(scenario, p, out)
        _record(man, stage, paths)

        stage = "stabilize"
        syn, summary[stage], paths = stage_stabilize(scenario, model, orbit, out)
        _record(man, stage, paths)

        stage = "closed-loop"
        _, summary[stage], paths = stage_closed_loop(scenario, p, syn, orbit, out)
        _record(man, stage, paths)

        stage = "report"
        _record(man, stage, stage_report(out, summary))
    except (ZDShapeError, FileNotFoundError, ValueError) as exc:
        man.stages[stage] = "failed"
        man.status = "failed"
        man.diagnostic = f"{stage}: {type(exc).__name__}: {exc}"
        man.write(out / "manifest.json")
        raise
    man.write(out / "manifest.json")
    return man


def _record(man: RunManifest, stage: str, paths):
    for p in paths:
        man.add(p)
    man.stages[stage] = "ok"
