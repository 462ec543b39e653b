import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm, solve_continuous_are

from zdshape.dynamics import pfl_terms
from zdshape.errors import Uncontrollable
from zdshape.stabilizer import (Linearization, controllability_gramian, gtilde_terms,
                                integral_of_motion, psi, solve_periodic_riccati)

from conftest import P_REF

A_LTI = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -2.0, -3.0]])
B_LTI = np.array([0.0, 0.0, 1.0])


class FakeModel:
    """Constant friction-like ``b`` and linear ``c`` on ``[0, 1]``."""

    domain = (0.0, 1.0)

    def __init__(self, b=0.0, w2=4.0, x0=0.5):
        self._b, self.w2, self.x0 = b, w2, x0

    def b(self, z):
        return np.full(np.shape(z), self._b)

    def c(self, z):
        return self.w2 * (np.asarray(z) - self.x0)


def hamiltonian_are(A, B, Q, R):
    """Stabilizing ARE solution from the stable invariant subspace of the Hamiltonian."""
    n = A.shape[0]
    Bm = B.reshape(n, -1)
    H = np.block([[A, -Bm @ Bm.T / R], [-Q, -A.T]])
    w, V = np.linalg.eig(H)
    U = V[:, w.real < 0]
    return np.real(U[n:] @ np.linalg.inv(U[:n]))


def lti(period=1.0, B=B_LTI):
    return Linearization.from_functions(lambda t: A_LTI, lambda t: B, period, 64)


# --- integral of motion ----------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_psi_cocycle(a, b, d):
    m = FakeModel(b=0.0)
    m.b = lambda z: 0.3 + np.sin(3.0 * np.asarray(z))
    assert psi(m, a, b) * psi(m, b, d) == pytest.approx(psi(m, a, d), rel=1e-9)


def test_psi_constant_b():
    assert psi(FakeModel(b=0.7), 0.2, 0.9) == pytest.approx(math.exp(-2 * 0.7 * 0.7), rel=1e-12)


def test_integral_of_motion_harmonic_oracle():
    m = FakeModel(b=0.0, w2=4.0, x0=0.5)
    anchor = (0.8, 0.0)
    for x, xd in [(0.3, 0.1), (0.6, -0.5), (0.8, 0.0)]:
        exact = xd ** 2 + 4.0 * (x - 0.5) ** 2 - 4.0 * 0.3 ** 2
        assert integral_of_motion(m, x, xd, anchor) == pytest.approx(exact, abs=1e-12)


def test_cocycle_on_tables(model):
    lo, hi = model.domain
    a, b, d = lo + 0.01, 0.5 * (lo + hi), hi - 0.01
    assert psi(model, a, b) * psi(model, b, d) == pytest.approx(psi(model, a, d), rel=1e-9)


# --- linearization -----------------------------------------------------------

def test_gtilde_matches_finite_differences(inst, scenario):
    x, xd, r_y = 0.06, 0.15, scenario.reference.r_y

    def zd(y, yd):
        t = pfl_terms(P_REF, inst, (x, y), (xd, yd))
        return t.f_x + t.g_x * t.tau0

    g = gtilde_terms(P_REF, inst, x, xd, r_y)
    h = 1e-6
    assert g.g_e == pytest.approx((zd(r_y + h, 0.0) - zd(r_y - h, 0.0)) / (2 * h), rel=1e-6)
    assert g.g_edot == pytest.approx((zd(r_y, h) - zd(r_y, -h)) / (2 * h), rel=1e-6, abs=1e-9)
    t = pfl_terms(P_REF, inst, (x, r_y), (xd, 0.0))
    assert g.g_v_over_alpha == pytest.approx(t.g_x / t.g_y, rel=1e-14)


def test_linearization_structure(synthesis):
    lin = synthesis.linearization
    np.testing.assert_array_equal(lin.A[:, 1, 2], 1.0)
    np.testing.assert_array_equal(lin.A[:, 1:, :2], 0.0)
    np.testing.assert_array_equal(lin.B[:, 1:], [[0.0, 1.0]] * len(lin.t))
    np.testing.assert_allclose(lin.A[-1], lin.A[0])


# --- Gramian -----------------------------------------------------------------

def test_gramian_lti_oracle():
    T = 1.3
    n = 3
    F = expm(np.block([[-A_LTI, np.outer(B_LTI, B_LTI)], [np.zeros((n, n)), A_LTI.T]]) * T)
    W_ref = F[n:, n:].T @ F[:n, n:]
    g = controllability_gramian(lti(T))
    np.testing.assert_allclose(g.W, W_ref, atol=1e-8)
    np.testing.assert_allclose(g.monodromy, expm(A_LTI * T), atol=1e-9)
    assert np.linalg.eigvalsh(g.W).min() >= 0.0


def test_gramian_zero_input_uncontrollable():
    with pytest.raises(Uncontrollable):
        controllability_gramian(lti(1.0, B=np.zeros(3)))


def test_gramian_on_orbit(synthesis):
    W = synthesis.gramian.W
    np.testing.assert_allclose(W, W.T)
    assert synthesis.gramian.min_eig > 1e-6


# --- Riccati -----------------------------------------------------------------

def test_riccati_lti_matches_hamiltonian_oracle():
    Q = np.diag([100.0, 500.0, 100.0])
    gain = solve_periodic_riccati(lti(1.0), (100.0, 500.0, 100.0), 1.0, n_steps=2000)
    P_ref = hamiltonian_are(A_LTI, B_LTI, Q, 1.0)
    np.testing.assert_allclose(P_ref, solve_continuous_are(A_LTI, B_LTI[:, None], Q, [[1.0]]),
                               rtol=1e-9)
    np.testing.assert_allclose(gain.P[0], P_ref, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(gain.P[len(gain.t) // 2], P_ref, rtol=1e-6, atol=1e-6)


def test_riccati_scaling():
    a = solve_periodic_riccati(lti(0.7), (1.0, 2.0, 3.0), 0.5, n_steps=1000)
    b = solve_periodic_riccati(lti(0.7), (5.0, 10.0, 15.0), 2.5, n_steps=1000)
    np.testing.assert_allclose(b.P, 5.0 * a.P, rtol=1e-8)


def test_riccati_on_orbit(synthesis):
    g = synthesis.gain
    assert g.gap < 1e-8
    assert g.residual(synthesis.linearization).max() < 1e-6
    np.testing.assert_allclose(g.P, np.transpose(g.P, (0, 2, 1)), atol=1e-10)
    assert np.linalg.eigvalsh(g.P).min() > 0.0
    np.testing.assert_allclose(g(g.t[7] + 3 * g.period), g.P[7], rtol=1e-12)


# --- controller --------------------------------------------------------------

def test_on_orbit_output_is_feedforward(synthesis, orbit, scenario):
    ctrl = synthesis.controller
    r_y = scenario.reference.r_y
    for t in np.linspace(0.0, 2 * orbit.period, 37):
        x, xd, tau = orbit.sample(t)
        assert np.allclose(ctrl.zeta(x, xd, r_y, 0.0), 0.0, atol=1e-10)
        assert abs(ctrl(x, xd, r_y, 0.0, t) - tau) < 1e-8


def test_output_error_feedback_sign(synthesis, orbit, scenario):
    ctrl = synthesis.controller
    x, xd = orbit.anchor
    for e in (1e-3, -1e-3):
        assert ctrl.v(x, xd, scenario.reference.r_y + e, 0.0, 0.0) * e < 0.0
