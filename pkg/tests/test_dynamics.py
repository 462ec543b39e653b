import numpy as np
import pytest
from scipy.integrate import solve_ivp

from zdshape.dynamics import (coriolis_matrix, dae_accelerations, io_linearize, kinetic_energy,
                              mass_matrix, mass_matrix_derivs, minimal_accelerations, minimal_form,
                              pfl_terms, spring_forces, spring_potential, total_energy)
from zdshape.fastmodel import FastPlant
from zdshape.mechanism import DesignParams, solve_configuration

from conftest import random_task_states

P = DesignParams(0.3, 0.2, 0.015, 0.025)


def test_mass_matrix_symmetric_positive(inst, rng):
    for q in rng.uniform(-np.pi, np.pi, (20, 4)):
        M = mass_matrix(P, inst, q)
        np.testing.assert_allclose(M, M.T, atol=1e-15)
        assert np.linalg.eigvalsh(M).min() > 0.0


def test_mass_matrix_derivs_match_finite_differences(inst, rng):
    q = rng.uniform(-np.pi, np.pi, 4)
    dM = mass_matrix_derivs(P, inst, q)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (mass_matrix(P, inst, q + e) - mass_matrix(P, inst, q - e)) / (2 * h)
        np.testing.assert_allclose(dM[k], fd, atol=1e-10)


def test_skew_symmetry(inst, rng):
    worst = 0.0
    for _ in range(100):
        q, qd, v = rng.uniform(-np.pi, np.pi, 4), rng.uniform(-3, 3, 4), rng.normal(size=4)
        Mdot = np.tensordot(qd, mass_matrix_derivs(P, inst, q), axes=1)
        worst = max(worst, abs(v @ (Mdot - 2 * coriolis_matrix(P, inst, q, qd)) @ v))
    assert worst < 1e-8


def test_coriolis_matches_lagrangian_oracle(inst, rng):
    # C qdot = Mdot qdot - 1/2 d/dq (qdot^T M qdot), derivatives by central differences
    q, qd = rng.uniform(-np.pi, np.pi, 4), rng.uniform(-2, 2, 4)
    h = 1e-6
    Mdot = (mass_matrix(P, inst, q + h * qd) - mass_matrix(P, inst, q - h * qd)) / (2 * h)
    grad = np.array([(kinetic_energy(P, inst, q + h * e, qd) - kinetic_energy(P, inst, q - h * e, qd))
                     / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(coriolis_matrix(P, inst, q, qd) @ qd, Mdot @ qd - grad, atol=1e-9)


def test_spring_forces_are_potential_gradient(inst, rng):
    q = rng.uniform(-1, 1, 4)
    h = 1e-6
    fd = [(spring_potential(P, inst, q + h * e) - spring_potential(P, inst, q - h * e)) / (2 * h)
          for e in np.eye(4)]
    np.testing.assert_allclose(spring_forces(P, inst, q), fd, atol=1e-10)


def test_minimal_form_matches_dae(scenario, inst, rng):
    chis, chids = random_task_states(scenario, rng, 50, speed=0.5)
    worst = 0.0
    for chi, chid in zip(chis, chids):
        u = rng.uniform(-0.05, 0.05)
        mf = minimal_form(P, inst, chi, chid)
        qdd_min = mf.J @ minimal_accelerations(mf, u) + mf.omega_q
        qdd_dae, _ = dae_accelerations(P, inst, mf.q, mf.qdot, u)
        worst = max(worst, np.max(np.abs(qdd_min - qdd_dae)))
    assert worst < 1e-8


def test_minimal_form_inertia_is_projected(inst):
    mf = minimal_form(P, inst, (0.05, 0.14), (0.1, -0.2))
    np.testing.assert_allclose(mf.M_chi, mf.J.T @ mass_matrix(P, inst, mf.q) @ mf.J)
    assert np.linalg.eigvalsh(mf.M_chi).min() > 0.0


def test_io_linearization_gives_commanded_output(inst):
    chi, chid, v = (0.05, 0.14), np.array([0.2, 0.1]), 0.7
    u = io_linearize(P, inst, chi, chid, v)
    mf = minimal_form(P, inst, chi, chid)
    assert minimal_accelerations(mf, u)[1] == pytest.approx(v, abs=1e-10)


def test_fast_kernel_matches_reference(scenario, inst, rng):
    plant = FastPlant(inst, P)
    chis, chids = random_task_states(scenario, rng, 30, speed=0.5)
    for chi, chid in zip(chis, chids):
        ok, fx, fy, gx, gy, q = plant.pfl(chi[0], chi[1], chid[0], chid[1])
        assert ok
        ref = pfl_terms(P, inst, chi, chid)
        np.testing.assert_allclose([fx, fy, gx, gy], [ref.f_x, ref.f_y, ref.g_x, ref.g_y],
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(q, solve_configuration(inst, chi), atol=1e-11)


def test_fast_kernel_reports_unreachable(inst):
    ok, *_ = FastPlant(inst, P).pfl(1.0, 1.0, 0.0, 0.0)
    assert not ok


def test_unforced_energy_conserved(scenario, inst):
    plant = FastPlant(inst, P)

    def rhs(_t, s):
        ok, fx, fy, *_ = plant.pfl(s[0], s[2], s[1], s[3])
        assert ok
        return [s[1], fx, s[3], fy]

    s0 = [scenario.reference.x_c + 0.02, 0.0, scenario.reference.r_y - 0.005, 0.0]
    sol = solve_ivp(rhs, (0.0, 10.0), s0, method="DOP853", rtol=1e-12, atol=1e-14,
                    t_eval=np.linspace(0.0, 10.0, 201))
    assert sol.success
    E = np.array([total_energy(P, inst, s[[0, 2]], s[[1, 3]]) for s in sol.y.T])
    assert np.max(np.abs(E - E[0])) / abs(E[0]) < 1e-6
    assert np.ptp(sol.y[0]) > 1e-3
