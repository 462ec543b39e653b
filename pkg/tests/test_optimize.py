import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid as scipy_trapezoid

from zdshape.errors import AllInfeasible
from zdshape.mechanism import DesignParams
from zdshape.optimize import (FunctionObjective, Landscape, OptResult, ScenarioObjective, barrier,
                              evaluate_cost, ga_optimize, local_refine, optimize, pso_optimize,
                              trapezoid)
from zdshape.scenario import ScenarioConfig, choose_reference, default_scenario

from conftest import P_REF


def rastrigin(v):
    return 20.0 + float(np.sum(v ** 2 - 10.0 * np.cos(2 * np.pi * v)))


def sphere(v):
    return float(np.sum((v - 0.3) ** 2))


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_barrier_decreasing(a, b):
    lo, hi = sorted((a, b))
    assert barrier(hi) <= barrier(lo)
    assert barrier(lo) > 0.0


def test_barrier_cap_and_value():
    assert barrier(0.0) == 1e12
    assert barrier(-3.0, cap=5.0) == 5.0
    assert barrier(1.0, 0.1) == pytest.approx(0.1 * math.log(2.0))


def test_trapezoid_matches_scipy(rng):
    y = rng.normal(size=101)
    assert trapezoid(y, 0.01) == pytest.approx(scipy_trapezoid(y, dx=0.01), rel=1e-13)


def test_pso_sphere():
    obj = FunctionObjective(sphere, [-5, -5, -5], [5, 5, 5])
    res = pso_optimize(obj, 20, 100, seed=1)
    np.testing.assert_allclose(res.p_star, 0.3, atol=1e-6)
    assert res.history == sorted(res.history, reverse=True)


def test_pso_rastrigin_most_seeds():
    hits = 0
    for seed in range(10):
        res = pso_optimize(FunctionObjective(rastrigin, [-5.12] * 2, [5.12] * 2), 40, 200, seed)
        hits += np.max(np.abs(res.p_star)) < 1e-2
    assert hits >= 9


def test_ga_constrained_quadratic():
    obj = FunctionObjective(lambda v: float(np.sum((v - 1.0) ** 2)), [-2, -2], [2, 2],
                            constraint=lambda v: 1.0 - v[0] - v[1])
    res = ga_optimize(obj, 40, 150, seed=4)
    np.testing.assert_allclose(res.p_star, [0.5, 0.5], atol=1e-2)
    assert sum(res.p_star) <= 1.0


@pytest.mark.parametrize("solver", [pso_optimize, ga_optimize])
def test_all_infeasible(solver):
    obj = FunctionObjective(sphere, [-1, -1], [1, 1], constraint=lambda v: -1.0)
    with pytest.raises(AllInfeasible):
        solver(obj, 20, 5, seed=0)


@pytest.mark.parametrize("solver", [pso_optimize, ga_optimize])
def test_seeded_determinism(solver):
    runs = [solver(FunctionObjective(rastrigin, [-5.12] * 2, [5.12] * 2), 20, 30, seed=7)
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_opt_result_json_round_trip(tmp_path):
    res = pso_optimize(FunctionObjective(sphere, [-1, -1], [1, 1]), 10, 5, seed=0)
    res.to_json(tmp_path / "r.json")
    assert OptResult.from_json(tmp_path / "r.json").to_json() == res.to_json()
    assert OptResult.from_json(res.to_json()).p_star == res.p_star


def test_local_refine_path():
    path, res = local_refine(FunctionObjective(sphere, [-1, -1], [1, 1]), [0.9, -0.9])
    assert len(path) > 1
    np.testing.assert_allclose(res.x, 0.3, atol=1e-3)


def test_evaluate_cost_feasibility(scenario):
    bad = evaluate_cost(DesignParams(0.0, 0.0), scenario)
    assert not bad.feasible and bad.J == scenario.cap and bad.violation > 0
    good = evaluate_cost(P_REF, scenario)
    assert good.feasible and good.omega > 0
    assert good.J_pso == pytest.approx(good.J + barrier(good.omega, scenario.c_bar), rel=1e-12)
    assert good.J == pytest.approx(good.diagnostics["integral"] + good.diagnostics["terminal"])


def test_reported_optimum_matches_reevaluation(scenario, tmp_path):
    sc = default_scenario(pso={"swarm": 10, "iterations": 4})
    res = optimize(sc, "pso", seed=3)
    again = evaluate_cost(DesignParams.from_array(res.p_star), sc)
    assert abs(res.J_star - again.J_pso) <= 1e-12
    assert res.omega_star == again.omega > 0.0
    back = OptResult.from_json(res.to_json(tmp_path / "r.json"))
    assert evaluate_cost(back.params, sc).J_pso == res.J_star


def test_mass_penalty_adds_depth_term(scenario):
    sc4 = default_scenario(mode="four", mass_penalty=True)
    p = DesignParams(0.12, 0.0, 0.015, 0.02)
    plain = evaluate_cost(p, default_scenario(mode="four"))
    pen = evaluate_cost(p, sc4)
    assert pen.J - plain.J == pytest.approx(200.0 * 0.005 ** 2 + 200.0 * 0.01 ** 2)


def test_scenario_objective_clips_to_box(scenario):
    obj = ScenarioObjective(scenario)
    assert obj.params([2.0, -1.0]) == DesignParams(1.0, 0.0)


def test_landscape_local_minima_and_csv(tmp_path):
    kb = kt = np.linspace(0.0, 1.0, 5)
    J = np.add.outer((kb - 0.25) ** 2, (kt - 0.5) ** 2)
    J[4, 4] = -1.0
    feas = np.ones_like(J, bool)
    feas[0, 0] = False
    land = Landscape(kb, kt, J, J + 1, np.ones_like(J), feas)
    mins = land.local_minima()
    assert [(m[0], m[1]) for m in mins] == [(1.0, 1.0), (0.25, 0.5)]
    land.to_csv(tmp_path / "g.csv")
    back = Landscape.from_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.J, J)
    np.testing.assert_array_equal(back.feasible, feas)


def test_scenario_json_round_trip(tmp_path, scenario):
    scenario.save(tmp_path / "s.json")
    back = ScenarioConfig.load(tmp_path / "s.json")
    assert back.to_dict() == scenario.to_dict()
    assert back.digest() == scenario.digest()
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({**scenario.to_dict(), "bogus": 1})
    with pytest.raises(ValueError):
        default_scenario(Q=((1.0, 0.0), (0.0, -1.0)))


def test_reference_from_workspace_scan(inst):
    ref = choose_reference(inst.replace(rest_angles=(0.0, 0.0)))
    assert ref == {"r_y": 0.14, "x_lo": -0.0325, "x_hi": 0.12, "x_c": pytest.approx(0.04375),
                   "A_r": pytest.approx(0.038125)}


def test_trapezoid_sine_oracle():
    T, n = 1.0, 10000
    s = np.linspace(0.0, T, n + 1)
    assert trapezoid(np.sin(2 * np.pi * s / T) ** 2, T / n) == pytest.approx(T / 2, abs=1e-6)


def test_pso_sphere_unit_box():
    obj = FunctionObjective(lambda v: float(np.sum((v - 0.37) ** 2)), [0.0] * 4, [1.0] * 4)
    res = pso_optimize(obj, 20, 100, seed=0)
    np.testing.assert_allclose(res.p_star, 0.37, atol=1e-4)


def test_ga_sphere_and_history():
    obj = FunctionObjective(lambda v: float(np.sum((v - 0.37) ** 2)), [0.0] * 4, [1.0] * 4)
    res = ga_optimize(obj, 30, 80, seed=0)
    np.testing.assert_allclose(res.p_star, 0.37, atol=1e-3)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_ga_constraint_dominance():
    obj = FunctionObjective(lambda v: (v[0] - 0.5) ** 2, [0.0, 0.0], [1.0, 1.0],
                            constraint=lambda v: v[1] - 0.5)
    res = ga_optimize(obj, 20, 40, seed=1)
    assert res.p_star[1] >= 0.5
    assert res.p_star[0] == pytest.approx(0.5, abs=1e-3)


def test_barrier_consistency(scenario):
    for kb in (0.3, 0.8):
        e = evaluate_cost(DesignParams(kb, 0.2), scenario)
        assert e.feasible
        assert 0.0 < e.J_pso - e.J < 2.0 * scenario.c_bar / e.omega


def test_self_generated_reference_leaves_effort_term(scenario, model):
    from dataclasses import replace

    from zdshape.optimize import cost_terms
    from zdshape.zero_dynamics import simulate_zd

    ref = scenario.reference
    n = int(round(ref.T_r / scenario.step))
    traj = simulate_zd(model, float(ref.r_x(0.0)), ref.T_r, ref.T_r / n, n_steps=n)

    class ZDReference:
        T_r = ref.T_r
        r_y = ref.r_y

        @staticmethod
        def r_x(t):
            return np.interp(t, traj.s, traj.x)

        @staticmethod
        def rdot_x(t):
            return np.interp(t, traj.s, traj.xd)

    sc = replace(scenario)
    sc.reference = ZDReference()
    _, eps, integral, terminal = cost_terms(model, sc)
    assert np.max(np.abs(eps)) < 1e-12
    assert terminal < 1e-20
    assert integral == pytest.approx(scenario.R * trapezoid(traj.tau ** 2, ref.T_r / n), rel=1e-12)
