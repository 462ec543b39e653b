import json

import numpy as np
import pytest

from zdshape import cli
from zdshape.errors import AllInfeasible, DegenerateOrbit
from zdshape.harness import (closed_loop_simulate, dae_replay, decay_slope,
                             feedforward_controller, file_digest, orbit_distance,
                             perturbed_start, read_csv, write_csv)
from zdshape.pipeline import run_scenario, stage_report
from zdshape.scenario import default_scenario
from zdshape.zero_dynamics import Orbit

from conftest import P_REF


def _scaled(orbit, lam):
    return Orbit(orbit.s, lam * orbit.x, orbit.xd, orbit.tau, orbit.period, orbit.anchor,
                 orbit.x_eq)


# --- orbit distance -----------------------------------------------------------

def test_distance_zero_on_samples(orbit):
    pts = np.column_stack([orbit.x[::37], orbit.xd[::37]])
    assert np.max(orbit_distance(pts, orbit)) < 1e-12


def test_distance_unit_offset(orbit):
    k = int(np.argmax(orbit.x))
    d = orbit_distance((orbit.x[k] + orbit.delta1, orbit.xd[k]), orbit)
    assert 0.99 <= d <= 1.0 + 1e-6


def test_distance_matches_brute_force(orbit, rng):
    t = np.linspace(0.0, orbit.period, 200001)
    x, xd, _ = orbit.sample(t)
    pts = np.column_stack([rng.uniform(orbit.x.min(), orbit.x.max(), 20),
                           rng.uniform(-0.3, 0.3, 20)])
    brute = np.array([np.min(np.hypot((px - x) / orbit.delta1, (pv - xd) / orbit.delta2))
                      for px, pv in pts])
    d = orbit_distance(pts, orbit)
    assert np.all(d >= 0.0)
    np.testing.assert_allclose(d, brute, atol=2e-4)


def test_distance_unit_invariance(orbit):
    pts = np.array([[0.03, 0.1], [0.07, -0.2]])
    lam = 1000.0
    scaled = pts * [lam, 1.0]
    np.testing.assert_allclose(orbit_distance(scaled, _scaled(orbit, lam)),
                               orbit_distance(pts, orbit), rtol=1e-9)


def test_degenerate_orbit():
    s = np.linspace(0, 1, 5)
    flat = Orbit(s, np.ones(5), np.zeros(5), np.zeros(5), 1.0, (1.0, 0.0), 1.0)
    with pytest.raises(DegenerateOrbit):
        orbit_distance((1.0, 0.0), flat)


# --- closed loop ----------------------------------------------------------------

def test_on_orbit_ten_periods(synthesis, orbit, scenario):
    r_y = scenario.reference.r_y
    ctrl = synthesis.controller
    rec = closed_loop_simulate(ctrl.plant, ctrl, (*orbit.anchor, r_y, 0.0), 10 * orbit.period,
                               r_y, orbit=orbit)
    assert rec.complete
    assert np.max(np.abs(rec.e)) < 1e-6
    _, _, tau = orbit.sample(rec.t)
    assert np.max(np.abs(rec.u - tau)) < 1e-6
    # the distance is a nearest-sample metric: its floor is half the dense sample spacing
    t = np.linspace(0.0, orbit.period, 10 * (len(orbit.s) - 1) + 1)
    x, xd, _ = orbit.sample(t)
    gap = np.max(np.hypot(np.diff(x) / orbit.delta1, np.diff(xd) / orbit.delta2))
    assert np.max(rec.d) < 0.5 * gap + 1e-6


def test_open_loop_feedforward_replays_zero_dynamics(model, orbit, scenario):
    r_y = scenario.reference.r_y
    rec = closed_loop_simulate(model.plant, feedforward_controller(orbit),
                               (*orbit.anchor, r_y, 0.0), orbit.period, r_y, step=orbit.s[1])
    n = min(len(rec.t), len(orbit.s))
    assert np.max(np.abs(rec.x[:n] - orbit.x[:n])) < 1e-6
    assert np.max(np.abs(rec.e)) < 1e-6


@pytest.fixture(scope="module")
def perturbed(synthesis, orbit, scenario):
    r_y = scenario.reference.r_y
    ctrl = synthesis.controller
    init = perturbed_start(orbit, r_y, scenario.perturbation)
    return closed_loop_simulate(ctrl.plant, ctrl, init, 5 * orbit.period, r_y, orbit=orbit)


def test_perturbed_start_offsets(orbit, scenario):
    s = perturbed_start(orbit, 0.14, (0.01, 0.01, 0.005))
    assert s[0] - orbit.anchor[0] == pytest.approx(0.01 * orbit.delta1)
    assert s[1] == pytest.approx(0.01 * orbit.delta2)
    assert s[2] == pytest.approx(0.145)


def test_perturbed_run_contracts(perturbed, orbit):
    assert perturbed.complete
    assert np.all(perturbed.d >= 0.0)
    assert perturbed.d[-1] < 1e-3
    assert decay_slope(perturbed.t, perturbed.d, orbit.period) < 0.0


def test_record_on_manifold(perturbed, inst):
    from zdshape.mechanism import forward_kinematics, loop_constraint
    for k in range(0, len(perturbed.t), 997):
        q = perturbed.q[k]
        assert np.max(np.abs(loop_constraint(inst, q))) < 1e-9
        np.testing.assert_allclose(forward_kinematics(inst, q), [perturbed.x[k], perturbed.y[k]],
                                   atol=1e-9)


def test_dae_replay_agrees(perturbed, inst):
    h = dae_replay(P_REF, inst, perturbed, 0.1)
    n = h.shape[0]
    assert np.max(np.abs(h[:, 0] - perturbed.x[:n])) < 1e-6
    assert np.max(np.abs(h[:, 1] - perturbed.y[:n])) < 1e-6


def test_decay_slope_exponential():
    t = np.linspace(0.0, 5.0, 5001)
    d = np.exp(-0.8 * t) * (1.5 + np.sin(2 * np.pi * t))
    assert decay_slope(t, d, 1.0) == pytest.approx(-0.8, abs=0.05)


# --- files, pipeline, CLI --------------------------------------------------------

def test_csv_round_trip_bitwise(tmp_path, rng):
    cols = {"a": rng.normal(size=7), "b": rng.normal(size=7) * 1e-300}
    write_csv(tmp_path / "c.csv", cols)
    back = read_csv(tmp_path / "c.csv")
    for k in cols:
        np.testing.assert_array_equal(back[k], cols[k])


def test_pinned_zero_stiffness_reports_all_infeasible(tmp_path):
    sc = default_scenario(k_bounds=(0.0, 0.0), pso={"swarm": 10, "iterations": 3})
    with pytest.raises(AllInfeasible):
        run_scenario(sc, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "failed"
    assert man["stages"] == {"feasibility": "ok", "optimize": "failed"}
    assert "AllInfeasible" in man["diagnostic"]


@pytest.fixture(scope="module")
def quick_runs(tmp_path_factory):
    sc = default_scenario(design=list(P_REF.as_array()[:2]), closed_loop_periods=1.0)
    base = tmp_path_factory.mktemp("runs")
    return [(run_scenario(sc, base / f"r{i}"), base / f"r{i}") for i in range(2)]


def test_pipeline_artifacts_and_determinism(quick_runs):
    (m0, d0), (m1, d1) = quick_runs
    assert m0.status == "ok"
    assert m0.stages["optimize"] == "skipped"
    assert len(m0.outputs) >= 8
    assert m0.digest == m1.digest
    for name in m0.outputs:
        assert file_digest(d0 / name) == file_digest(d1 / name)
    zd = read_csv(d0 / "zd.csv")
    assert list(zd) == ["s", "x", "xdot", "tau", "I"]
    cl = read_csv(d0 / "closed_loop.csv")
    assert np.all(cl["d"] >= 0.0) and np.max(cl["constraint"]) < 1e-9


def test_report_regenerates_from_csv(quick_runs, tmp_path):
    (m0, d0), _ = quick_runs
    for name in ("tracking.csv", "orbit.csv", "gain.csv", "closed_loop.csv", "feasibility.csv"):
        (tmp_path / name).write_bytes((d0 / name).read_bytes())
    stage_report(tmp_path)
    for svg in ("zd.svg", "gain.svg", "closed_loop.svg", "feasibility.svg"):
        assert file_digest(tmp_path / svg) == m0.outputs[svg]


def test_cli_exit_codes(tmp_path):
    small = default_scenario(pso={"swarm": 10, "iterations": 3})
    small.save(tmp_path / "s.json")
    pinned = default_scenario(k_bounds=(0.0, 0.0), pso={"swarm": 10, "iterations": 3})
    pinned.save(tmp_path / "p.json")
    assert cli.main(["optimize", "--scenario", str(tmp_path / "s.json"), "--seed", "2",
                     "--out", str(tmp_path / "res.json")]) == 0
    assert json.loads((tmp_path / "res.json").read_text())["seed"] == 2
    assert cli.main(["optimize", "--scenario", str(tmp_path / "p.json"),
                     "--out", str(tmp_path / "bad.json")]) == 2
    assert cli.main(["scan", "--scenario", str(tmp_path / "s.json"), "--res", "4",
                     "--out", f"{tmp_path / 'g.csv'},{tmp_path / 'h.svg'}"]) == 0
    assert (tmp_path / "h.svg").exists()
    assert cli.main(["simulate-zd", "--scenario", str(tmp_path / "s.json"),
                     "--result", str(tmp_path / "res.json"), "--out", str(tmp_path)]) == 0
    assert list(read_csv(tmp_path / "zd.csv")) == ["s", "x", "xdot", "tau", "I"]
    assert cli.main(["stabilize", "--scenario", str(tmp_path / "s.json"),
                     "--result", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
