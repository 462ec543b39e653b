"""Geometry and kinematics of the spring-loaded two-DOF closed chain.

Layout (all angles counterclockwise-positive):

* link 1 (crank, actuated) pivots on the ground at ``P1``;
* link 2 is hinged at the tip of link 1;
* link 4 pivots on the ground at ``P2`` (torsional spring ``k_b`` to ground);
* link 3 is hinged at the tip of link 4 (spring ``k_t`` across that hinge)
  and its tip meets the tip of link 2 at the end-effector, closing the loop.

Joint coordinates ``q`` map to absolute body angles through an affine map
``theta = T q + offset``. The default map uses ``q1``, ``q4`` as absolute
angles, ``q2`` relative to link 1 and ``q3`` relative to link 4.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, SingularPartition, Unreachable

log = logging.getLogger(__name__)

REF_DEPTH = 0.02
DEPTH_BOUNDS = (0.01, 0.03)
STIFFNESS_BOUNDS = (0.0, 1.0)

# body order in every per-link array: link 1, link 2, link 3, link 4
LINK1, LINK2, LINK3, LINK4 = range(4)


@dataclass(frozen=True)
class DesignParams:
    """Decision vector ``(k_b, k_t, delta_b, delta_t)``.

    ``k_b`` grounds link 4, ``k_t`` acts across the link 4/link 3 hinge;
    ``delta_b`` and ``delta_t`` are the depths of links 4 and 3.
    """

    k_b: float
    k_t: float
    delta_b: float = REF_DEPTH
    delta_t: float = REF_DEPTH

    def as_array(self) -> np.ndarray:
        return np.array([self.k_b, self.k_t, self.delta_b, self.delta_t])

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "DesignParams":
        v = [float(a) for a in v]
        if len(v) == 2:
            return cls(v[0], v[1])
        if len(v) == 4:
            return cls(*v)
        raise ValueError(f"design vector must have 2 or 4 entries, got {len(v)}")

    def in_box(self) -> bool:
        lo, hi = STIFFNESS_BOUNDS
        dlo, dhi = DEPTH_BOUNDS
        return (lo <= self.k_b <= hi and lo <= self.k_t <= hi
                and dlo <= self.delta_b <= dhi and dlo <= self.delta_t <= dhi)

    def check(self) -> "DesignParams":
        if not self.in_box():
            raise DomainError(f"{self} outside the feasible box")
        return self


@dataclass(frozen=True)
class LinkTable:
    lengths: tuple = (0.080, 0.235, 0.052, 0.135)
    masses: tuple = (0.071, 0.195, 0.049, 0.115)
    inertias: tuple = (0.188e-3, 1.041e-3, 0.035e-3, 0.767e-3)
    density: float = 1000.0
    depth_scalable: tuple = (False, False, True, True)

    def __post_init__(self):
        for name in ("lengths", "masses", "inertias"):
            vals = getattr(self, name)
            if len(vals) != 4 or min(vals) <= 0.0:
                raise ValueError(f"{name} must be 4 strictly positive values")


TABLE1 = LinkTable()


def link_inertia_from_depth(delta: float, link_id: int, table: LinkTable = TABLE1):
    """Mass and centroidal inertia of link 3 or 4 at depth ``delta``.

    Cross-section and density are fixed, so both scale linearly with depth.
    ``link_id`` is 1-based (3 or 4).
    """
    if link_id not in (3, 4):
        raise DomainError(f"only links 3 and 4 have adjustable depth, got {link_id}")
    lo, hi = DEPTH_BOUNDS
    if not lo <= delta <= hi:
        raise DomainError(f"depth {delta} outside [{lo}, {hi}]")
    s = delta / REF_DEPTH
    i = link_id - 1
    return {"mass": table.masses[i] * s, "inertia": table.inertias[i] * s}


def link_inertias(p: DesignParams, table: LinkTable = TABLE1):
    """Per-link (masses, inertias) arrays for a design."""
    m = np.array(table.masses, dtype=float)
    J = np.array(table.inertias, dtype=float)
    for link_id, delta in ((3, p.delta_t), (4, p.delta_b)):
        d = link_inertia_from_depth(delta, link_id, table)
        m[link_id - 1] = d["mass"]
        J[link_id - 1] = d["inertia"]
    return m, J


DEFAULT_ANGLE_MAP = (
    (1.0, 0.0, 0.0, 0.0),
    (1.0, 1.0, 0.0, 0.0),
    (0.0, 0.0, 1.0, 1.0),
    (0.0, 0.0, 0.0, 1.0),
)


@dataclass(frozen=True)
class MechanismInstance:
    """Immutable description of one mechanism.

    ``branch`` pins the assembly branch for the whole run: the signs of
    ``sin(theta3 - theta4)`` and ``sin(theta2 - theta1)``.
    ``rest_angles`` are the spring rest values of ``(q3, q4)``.
    ``psi_selector`` holds the 0-based indices of the internal coordinates.
    """

    links: LinkTable = TABLE1
    pivot_q1: tuple = (-0.19, 0.15)
    pivot_link4: tuple = (0.0, 0.0)
    angle_map: tuple = DEFAULT_ANGLE_MAP
    angle_offset: tuple = (0.0, 0.0, 0.0, 0.0)
    rest_angles: tuple = (0.0, 0.0)
    psi_selector: tuple = (0, 1)
    branch: tuple = (-1.0, -1.0)
    newton_tol: float = 1e-13
    newton_max_iter: int = 50
    singular_tol: float = 1e-9

    T: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        T = np.array(self.angle_map, dtype=float)
        if T.shape != (4, 4) or abs(np.linalg.det(T)) < 1e-12:
            raise ValueError("angle map must be a nonsingular 4x4 matrix")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)
        sel = tuple(int(i) for i in self.psi_selector)
        if len(sel) != 2 or len(set(sel)) != 2 or not all(0 <= i < 4 for i in sel):
            raise ValueError(f"bad psi selector {self.psi_selector}")
        object.__setattr__(self, "psi_selector", sel)
        if len(self.branch) != 2 or any(abs(s) != 1.0 for s in self.branch):
            raise ValueError(f"branch signs must be +/-1, got {self.branch}")
        object.__setattr__(self, "branch", tuple(float(s) for s in self.branch))

    @property
    def P1(self):
        return np.asarray(self.pivot_q1, dtype=float)

    @property
    def P2(self):
        return np.asarray(self.pivot_link4, dtype=float)

    def body_angles(self, q):
        q = np.asarray(q)
        return self.T @ q + np.asarray(self.angle_offset)

    def joint_from_body(self, theta):
        return np.linalg.solve(self.T, np.asarray(theta) - np.asarray(self.angle_offset))

    def replace(self, **changes) -> "MechanismInstance":
        return dataclasses.replace(self, **changes)


# --- planar chains ---------------------------------------------------------
#
# Every point of interest is ``base + sum_k c_k * e(theta_{j_k})`` with
# ``e(a) = (cos a, sin a)``. Positions, Jacobians and second-order terms all
# follow from that single representation.

class Chain(NamedTuple):
    base: str            # "P1", "P2" or "P1-P2"
    terms: tuple         # ((coef, body_index), ...)


def _chains(inst: MechanismInstance):
    l1, l2, l3, l4 = inst.links.lengths
    return {
        "com1": Chain("P1", ((l1 / 2, LINK1),)),
        "com2": Chain("P1", ((l1, LINK1), (l2 / 2, LINK2))),
        "com3": Chain("P2", ((l4, LINK4), (l3 / 2, LINK3))),
        "com4": Chain("P2", ((l4 / 2, LINK4),)),
        "tip": Chain("P2", ((l4, LINK4), (l3, LINK3))),
        "loop": Chain("P1-P2", ((l1, LINK1), (l2, LINK2), (-l4, LINK4), (-l3, LINK3))),
    }


def _base(inst, name):
    return {"P1": inst.P1, "P2": inst.P2, "P1-P2": inst.P1 - inst.P2}[name]


def chain_position(inst, chain: Chain, q):
    th = inst.body_angles(q)
    out = _base(inst, chain.base).astype(np.result_type(th, float))
    for c, j in chain.terms:
        out = out + c * np.array([np.cos(th[j]), np.sin(th[j])])
    return out


def chain_jacobian(inst, chain: Chain, q):
    th = inst.body_angles(q)
    out = np.zeros((2, 4), dtype=np.result_type(th, float))
    for c, j in chain.terms:
        out += c * np.outer([-np.sin(th[j]), np.cos(th[j])], inst.T[j])
    return out


def chain_jacobian_derivs(inst, chain: Chain, q):
    """``d[m] = dJ/dq_m`` for the chain, shape (4, 2, 4)."""
    th = inst.body_angles(q)
    out = np.zeros((4, 2, 4), dtype=np.result_type(th, float))
    T = inst.T
    for c, j in chain.terms:
        blk = c * np.outer([-np.cos(th[j]), -np.sin(th[j])], T[j])
        out += T[j][:, None, None] * blk[None]
    return out


def chain_bias(inst, chain: Chain, q, qdot):
    """Velocity-product acceleration ``Jdot qdot`` of the chain point."""
    th = inst.body_angles(q)
    thd = inst.T @ np.asarray(qdot)
    out = np.zeros(2, dtype=np.result_type(th, thd, float))
    for c, j in chain.terms:
        out = out - c * thd[j] ** 2 * np.array([np.cos(th[j]), np.sin(th[j])])
    return out


# --- public kinematics -----------------------------------------------------

def forward_kinematics(inst: MechanismInstance, q):
    """End-effector position ``chi = h(q)`` (tip of link 3)."""
    return chain_position(inst, _chains(inst)["tip"], q)


def loop_constraint(inst: MechanismInstance, q):
    """Closure residual P1 -> link 1 -> link 2 -> link 3 -> link 4 -> P2, in meters."""
    return chain_position(inst, _chains(inst)["loop"], q)


def output_jacobian(inst, q):
    return chain_jacobian(inst, _chains(inst)["tip"], q)


def constraint_jacobian(inst, q):
    return chain_jacobian(inst, _chains(inst)["loop"], q)


def stacked_jacobian(inst, q):
    """``[dh/dq; dphi/dq]``: maps qdot to (chidot, phidot)."""
    ch = _chains(inst)
    return np.vstack([chain_jacobian(inst, ch["tip"], q), chain_jacobian(inst, ch["loop"], q)])


def stacked_bias(inst, q, qdot):
    ch = _chains(inst)
    return np.concatenate([chain_bias(inst, ch["tip"], q, qdot),
                           chain_bias(inst, ch["loop"], q, qdot)])


class KinematicJacobians(NamedTuple):
    dh: np.ndarray
    dphi: np.ndarray
    J_chi: np.ndarray
    J_psi: np.ndarray
    J: np.ndarray


def kinematic_jacobians(inst: MechanismInstance, q, selector=None) -> KinematicJacobians:
    """Partition Jacobians for ``q = rho(chi, psi)``.

    ``rho`` inverts ``q -> (h(q), q[selector])``. ``J`` maps task rates to
    joint rates on the constraint manifold.
    """
    sel = inst.psi_selector if selector is None else tuple(selector)
    dh = output_jacobian(inst, q)
    dphi = constraint_jacobian(inst, q)
    E = np.zeros((2, 4))
    E[0, sel[0]] = 1.0
    E[1, sel[1]] = 1.0
    coords = np.vstack([dh, E])
    if abs(np.linalg.det(coords)) < inst.singular_tol:
        raise SingularPartition(f"(h, q{sel}) is not a valid coordinate chart here")
    drho = np.linalg.inv(coords)
    J_rho_chi, J_rho_psi = drho[:, :2], drho[:, 2:]
    J_chi = dphi @ J_rho_chi
    J_psi = dphi @ J_rho_psi
    if abs(np.linalg.det(J_psi)) < inst.singular_tol:
        raise SingularPartition(f"J_psi singular for selector {sel}")
    J = J_rho_chi - J_rho_psi @ np.linalg.solve(J_psi, J_chi)
    return KinematicJacobians(dh, dphi, J_chi, J_psi, J)


def velocity_map(inst, q):
    """``J`` computed from the stacked Jacobian (selector-free)."""
    S = stacked_jacobian(inst, q)
    return np.linalg.solve(S, np.vstack([np.eye(2), np.zeros((2, 2))]))


def selector_conditioning(inst, qs):
    """Minimum ``|det J_psi|`` along configurations ``qs`` for all 6 selectors."""
    out = {}
    for sel in itertools.combinations(range(4), 2):
        worst = np.inf
        for q in qs:
            try:
                kj = kinematic_jacobians(inst, q, sel)
                worst = min(worst, abs(np.linalg.det(kj.J_psi)))
            except SingularPartition:
                worst = 0.0
                break
        out[sel] = worst
    return out


def check_selector(inst, qs):
    """Warn when another selector is better conditioned than the configured one."""
    cond = selector_conditioning(inst, qs)
    best = max(cond, key=cond.get)
    if cond[inst.psi_selector] < cond[best]:
        log.warning("psi selector %s (min |det J_psi| = %.3g) is worse conditioned than %s (%.3g)",
                    inst.psi_selector, cond[inst.psi_selector], best, cond[best])
    return cond


# --- configuration solve ---------------------------------------------------

def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def branch_signs(inst, q):
    """Elbow signs of the P2 side (links 4/3) and the P1 side (links 1/2)."""
    th = inst.body_angles(q)
    elbow = np.sign(np.sin(th[LINK3] - th[LINK4])) or 1.0
    crank = np.sign(np.sin(th[LINK2] - th[LINK1])) or 1.0
    return (float(elbow), float(crank))


def _circle_intersection(c0, r0, c1, r1, sign):
    d = c1 - c0
    dist = np.hypot(d[0], d[1])
    if dist > r0 + r1 or dist < abs(r0 - r1) or dist == 0.0:
        raise Unreachable("circles do not intersect")
    a = (r0 ** 2 - r1 ** 2 + dist ** 2) / (2 * dist)
    hgt = np.sqrt(max(r0 ** 2 - a ** 2, 0.0))
    mid = c0 + a * d / dist
    perp = np.array([-d[1], d[0]]) / dist
    return mid + sign * hgt * perp


def closed_form_configuration(inst: MechanismInstance, chi):
    """Branch-pinned closed-form assembly used to seed Newton."""
    chi = np.asarray(chi, dtype=float)
    l1, l2, l3, l4 = inst.links.lengths
    elbow, crank = inst.branch
    # a positive elbow sign bends the distal link counterclockwise, which puts
    # the middle joint clockwise of the base -> chi chord
    knee4 = _circle_intersection(inst.P2, l4, chi, l3, -elbow)
    knee1 = _circle_intersection(inst.P1, l1, chi, l2, -crank)
    th = np.zeros(4)
    th[LINK1] = np.arctan2(*(knee1 - inst.P1)[::-1])
    th[LINK2] = np.arctan2(*(chi - knee1)[::-1])
    th[LINK4] = np.arctan2(*(knee4 - inst.P2)[::-1])
    th[LINK3] = np.arctan2(*(chi - knee4)[::-1])
    q = inst.joint_from_body(th)
    return np.angle(np.exp(1j * q))


def solve_configuration(inst: MechanismInstance, chi_target, q_guess=None):
    """Newton solve of ``h(q) = chi_target``, ``phi(q) = 0``.

    Without ``q_guess`` the closed-form assembly on the pinned branch seeds the
    iteration. Works with complex ``chi_target`` (complex-step derivatives).
    """
    chi_target = np.asarray(chi_target)
    l1, l2, l3, l4 = inst.links.lengths
    r2 = np.hypot(*(chi_target.real - inst.P2))
    r1 = np.hypot(*(chi_target.real - inst.P1))
    if not (abs(l4 - l3) <= r2 <= l3 + l4 and abs(l2 - l1) <= r1 <= l1 + l2):
        raise Unreachable(f"target {chi_target.real} outside the workspace")
    if q_guess is None:
        q = closed_form_configuration(inst, chi_target.real)
    else:
        q = np.asarray(q_guess, dtype=float).copy()
    # complex targets carry a tiny imaginary perturbation that the residual
    # test cannot see; extra steps make the imaginary part exact
    extra = 0
    if np.iscomplexobj(chi_target):
        q = q.astype(complex)
        extra = 2
    for _ in range(inst.newton_max_iter + extra):
        F = np.concatenate([forward_kinematics(inst, q) - chi_target, loop_constraint(inst, q)])
        if np.max(np.abs(F.real)) < inst.newton_tol:
            if extra == 0:
                return q
            extra -= 1
        S = stacked_jacobian(inst, q)
        try:
            step = np.linalg.solve(S, F)
        except np.linalg.LinAlgError as exc:
            raise Unreachable(f"singular Newton matrix near {chi_target.real}") from exc
        q = q - step
    F = np.concatenate([forward_kinematics(inst, q) - chi_target, loop_constraint(inst, q)])
    if np.max(np.abs(F)) < 1e-10:
        return q
    raise Unreachable(f"Newton did not converge for target {chi_target.real}")


def sigma(inst: MechanismInstance, chi, q_guess=None):
    """Internal coordinates ``psi`` consistent with task position ``chi``."""
    q = solve_configuration(inst, chi, q_guess)
    kinematic_jacobians(inst, q)
    return q[list(inst.psi_selector)]
