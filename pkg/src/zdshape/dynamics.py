"""Euler-Lagrange model, minimal-form projection and partial feedback linearization.

Every function accepts complex-valued configurations so derivatives can be
taken by complex step (the forward-mode analogue of dual numbers).
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from . import mechanism as mech
from .errors import InputSingularity
from .mechanism import DesignParams, MechanismInstance

INPUT_DIRECTION = np.array([1.0, 0.0, 0.0, 0.0])
COND_WARN = 1e10
INPUT_TOL = 1e-9

_COM = ("com1", "com2", "com3", "com4")


def _solve(A, b):
    if A.shape[0] > 1 and np.linalg.cond(A.real) > COND_WARN:
        warnings.warn(f"ill-conditioned {A.shape} solve (cond > {COND_WARN:g})", RuntimeWarning)
    return np.linalg.solve(A, b)


def _inertia_arrays(p, inst, masses=None, inertias=None):
    if masses is None or inertias is None:
        m, J = mech.link_inertias(p, inst.links)
        masses = m if masses is None else masses
        inertias = J if inertias is None else inertias
    return np.asarray(masses, float), np.asarray(inertias, float)


def mass_matrix(p: DesignParams, inst: MechanismInstance, q, *, masses=None, inertias=None):
    """Joint-space inertia matrix with each body's COM at the link midpoint."""
    m, Jz = _inertia_arrays(p, inst, masses, inertias)
    ch = mech._chains(inst)
    q = np.asarray(q)
    M = np.zeros((4, 4), dtype=np.result_type(q, float))
    for i, name in enumerate(_COM):
        Jc = mech.chain_jacobian(inst, ch[name], q)
        M += m[i] * Jc.T @ Jc + Jz[i] * np.outer(inst.T[i], inst.T[i])
    return M


def mass_matrix_derivs(p, inst, q, *, masses=None, inertias=None):
    """``dM[k] = dM/dq_k``, shape (4, 4, 4)."""
    m, _ = _inertia_arrays(p, inst, masses, inertias)
    ch = mech._chains(inst)
    q = np.asarray(q)
    dM = np.zeros((4, 4, 4), dtype=np.result_type(q, float))
    for i, name in enumerate(_COM):
        Jc = mech.chain_jacobian(inst, ch[name], q)
        dJ = mech.chain_jacobian_derivs(inst, ch[name], q)
        for k in range(4):
            prod = dJ[k].T @ Jc
            dM[k] += m[i] * (prod + prod.T)
    return dM


def coriolis_matrix(p, inst, q, qdot, *, masses=None, inertias=None):
    """Christoffel-symbol Coriolis matrix, so that ``Mdot - 2C`` is skew."""
    dM = mass_matrix_derivs(p, inst, q, masses=masses, inertias=inertias)
    qdot = np.asarray(qdot)
    # Gamma[i, j, k] = 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i)
    d_ijk = np.transpose(dM, (1, 2, 0))
    gamma = 0.5 * (d_ijk + np.transpose(d_ijk, (0, 2, 1)) - np.transpose(d_ijk, (2, 0, 1)))
    return gamma @ qdot


def spring_potential(p, inst, q):
    q3r, q4r = inst.rest_angles
    return 0.5 * p.k_b * (q[3] - q4r) ** 2 + 0.5 * p.k_t * (q[2] - q3r) ** 2


def spring_forces(p: DesignParams, inst: MechanismInstance, q):
    """Gradient of the torsional-spring potential (no gravity, no damping)."""
    q = np.asarray(q)
    q3r, q4r = inst.rest_angles
    G = np.zeros(4, dtype=np.result_type(q, float))
    G[2] = p.k_t * (q[2] - q3r)
    G[3] = p.k_b * (q[3] - q4r)
    return G


def kinetic_energy(p, inst, q, qdot):
    qdot = np.asarray(qdot)
    return 0.5 * qdot @ mass_matrix(p, inst, q) @ qdot


def stacked_jacobian_rate(inst, q, qdot):
    """Time derivative of ``[dh/dq; dphi/dq]`` along ``qdot``."""
    ch = mech._chains(inst)
    d = np.concatenate([mech.chain_jacobian_derivs(inst, ch["tip"], q),
                        mech.chain_jacobian_derivs(inst, ch["loop"], q)], axis=1)
    return np.tensordot(np.asarray(qdot), d, axes=1)


class MinimalForm(NamedTuple):
    M_chi: np.ndarray
    C_chi: np.ndarray
    G_chi: np.ndarray
    B_chi: np.ndarray
    chidot: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    J: np.ndarray
    omega_q: np.ndarray


def minimal_form(p: DesignParams, inst: MechanismInstance, chi, chidot, q_guess=None, *,
                 masses=None, inertias=None) -> MinimalForm:
    """Project the constrained model onto task coordinates ``chi``.

    ``qddot = J chiddot + omega_q`` with ``omega_q = -S^-1 Sdot qdot``; the
    Coriolis factor returned satisfies ``C_chi chidot = J^T (M omega_q + C qdot)``.
    """
    chidot = np.asarray(chidot)
    q = mech.solve_configuration(inst, chi, q_guess)
    mech.kinematic_jacobians(inst, q.real)
    S = mech.stacked_jacobian(inst, q)
    J = np.linalg.solve(S, np.vstack([np.eye(2), np.zeros((2, 2))]))
    qdot = J @ chidot
    Sdot = stacked_jacobian_rate(inst, q, qdot)
    W = -np.linalg.solve(S, Sdot @ J)
    M = mass_matrix(p, inst, q, masses=masses, inertias=inertias)
    C = coriolis_matrix(p, inst, q, qdot, masses=masses, inertias=inertias)
    M_chi = J.T @ M @ J
    C_chi = J.T @ (M @ W + C @ J)
    G_chi = J.T @ spring_forces(p, inst, q)
    B_chi = J.T @ INPUT_DIRECTION
    return MinimalForm(M_chi, C_chi, G_chi, B_chi, chidot, q, qdot, J, W @ chidot)


def minimal_accelerations(mf: MinimalForm, u):
    """Task accelerations of the minimal form under input ``u``."""
    return _solve(mf.M_chi, mf.B_chi * u - mf.C_chi @ mf.chidot - mf.G_chi)


class PFLTerms(NamedTuple):
    f_x: float
    f_y: float
    g_x: float
    g_y: float
    tau0: float
    tau_v: float


def pfl_terms(p, inst, chi, chidot, q_guess=None, *, masses=None, inertias=None) -> PFLTerms:
    """Drift and input gain of ``chiddot = f + g u`` plus the linearizing input."""
    mf = minimal_form(p, inst, chi, chidot, q_guess, masses=masses, inertias=inertias)
    f = -_solve(mf.M_chi, mf.C_chi @ mf.chidot + mf.G_chi)
    g = _solve(mf.M_chi, mf.B_chi)
    if abs(g[1]) <= INPUT_TOL:
        raise InputSingularity(f"g_y = {g[1]:.3g} at chi = {np.asarray(chi).real}")
    return PFLTerms(f[0], f[1], g[0], g[1], -f[1] / g[1], 1.0 / g[1])


def io_linearize(p, inst, chi, chidot, v, q_guess=None):
    """Input that renders ``yddot = v``."""
    t = pfl_terms(p, inst, chi, chidot, q_guess)
    return t.tau0 + t.tau_v * v


def total_energy(p, inst, chi, chidot, q_guess=None):
    mf = minimal_form(p, inst, chi, chidot, q_guess)
    chidot = np.asarray(chidot)
    return 0.5 * chidot @ mf.M_chi @ chidot + spring_potential(p, inst, mf.q)


def dae_accelerations(p, inst, q, qdot, u):
    """Index-reduced DAE: solve the KKT system for ``(qddot, lambda)``."""
    q = np.asarray(q, float)
    qdot = np.asarray(qdot, float)
    M = mass_matrix(p, inst, q)
    C = coriolis_matrix(p, inst, q, qdot)
    G = spring_forces(p, inst, q)
    Phi = mech.constraint_jacobian(inst, q)
    bias = mech.chain_bias(inst, mech._chains(inst)["loop"], q, qdot)
    K = np.zeros((6, 6))
    K[:4, :4] = M
    K[:4, 4:] = -Phi.T
    K[4:, :4] = Phi
    rhs = np.concatenate([INPUT_DIRECTION * u - C @ qdot - G, -bias])
    sol = np.linalg.solve(K, rhs)
    return sol[:4], sol[4:]
