"""Voltage-behind-reactance round-rotor synchronous generator.

The machine carries ten dynamic states: rotor angle, speed deviation,
four rotor-winding flux linkages, the three stator phase currents and the
rotor electrical angle used by the Park transformation.  The stator sees
the rotor as a subtransient voltage source behind the constant (round
rotor) subtransient inductance matrix, so the phase currents integrate an
ordinary RL equation driven by that source.

Conventions, fixed here and used everywhere else:

* time in seconds, angles in rad, speeds in electrical rad/s;
* voltages, currents and powers in per-unit on the system base;
* inductances are "real-time" per-unit values, i.e. the per-unit
  reactance at nominal frequency divided by omega0, so that L * di/dt is
  a per-unit voltage without extra frequency factors.  Flux linkages are
  per-unit volt-seconds under the same convention;
* generator sign convention: positive stator current flows out of the
  machine into the network;
* the electrical power keeps the physical-form factor 3*poles/4 in front
  of wr * (lambda_ad*iq - lambda_aq*id).  Initialization back-solves the
  mechanical-power reference against this same expression, so the closed
  loop is exactly consistent whatever the factor's value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingularMagnitudeError
from .series import EPS_SQRT, CoeffSeries, conv_at, fill_sincos, sincos_order, sqrt_sumsq_order

# Phase offsets of the a, b, c axes relative to the rotor angle.
PHASE_SHIFT = np.array([0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0])


def park(theta: float) -> np.ndarray:
    """Magnitude-invariant Park matrix, row order (zero, d, q)."""
    ang = theta + PHASE_SHIFT
    return (2.0 / 3.0) * np.array([
        [0.5, 0.5, 0.5],
        np.cos(ang),
        -np.sin(ang),
    ])


def park_inv(theta: float) -> np.ndarray:
    """Inverse of `park` (columns 1, cos, -sin per phase row)."""
    ang = theta + PHASE_SHIFT
    out = np.empty((3, 3))
    out[:, 0] = 1.0
    out[:, 1] = np.cos(ang)
    out[:, 2] = -np.sin(ang)
    return out


def park_series(theta: CoeffSeries):
    """Series-valued forward and inverse Park matrices.

    Every entry is a CoeffSeries built from the constant rule and the
    sin/cos recursion applied to the rotor-angle series.
    """
    n = len(theta)
    sin_s = []
    cos_s = []
    for shift in PHASE_SHIFT:
        h = theta.coeffs.copy()
        h[0] += shift
        f = np.empty(n)
        g = np.empty(n)
        fill_sincos(h, f, g)
        sin_s.append(CoeffSeries(f, theta.t0))
        cos_s.append(CoeffSeries(g, theta.t0))

    def const(c):
        coeffs = np.zeros(n)
        coeffs[0] = c
        return CoeffSeries(coeffs, theta.t0)

    def scale(c, s):
        return CoeffSeries(c * s.coeffs, theta.t0)

    fwd = [[const(1.0 / 3.0) for _ in range(3)],
           [scale(2.0 / 3.0, cos_s[p]) for p in range(3)],
           [scale(-2.0 / 3.0, sin_s[p]) for p in range(3)]]
    inv = [[const(1.0), cos_s[p], scale(-1.0, sin_s[p])] for p in range(3)]
    return fwd, inv


def _inv3(m: np.ndarray, what: str) -> np.ndarray:
    """Closed-form 3x3 inverse with a determinant guard.

    The guard is relative to the entry magnitude so it is meaningful for
    real-time inductance units, whose absolute determinants are tiny.
    """
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    scale = max(float(np.max(np.abs(m))), 1e-300)
    if abs(det) < 1e-12 * scale ** 3:
        raise ConfigError(f"{what} is singular (|det| = {abs(det):.3e})")
    adj = np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])
    return adj / det


@dataclass
class MachineParams:
    """Generator constants (real-time per-unit inductances, see module doc)."""

    h: float                 # inertia constant, s
    d: float                 # damping, p.u.
    omega0: float            # nominal electrical speed, rad/s
    poles: int               # pole count, enters the power expression as 3*poles/4
    r_s: np.ndarray          # 3x3 stator resistance, p.u.
    l_al: float              # stator leakage
    l_0: float               # zero-sequence inductance
    l_ad: float              # d-axis mutual
    l_aq: float              # q-axis mutual
    r_fd: float
    l_fdl: float
    r_1d: float
    l_1dl: float
    r_1q: float
    l_1ql: float
    r_2q: float
    l_2ql: float

    # derived, filled in __post_init__
    l_ad_pp: float = field(init=False)
    l_aq_pp: float = field(init=False)
    l_abc_pp: np.ndarray = field(init=False)
    l_abc_pp_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        self.r_s = np.asarray(self.r_s, dtype=float)
        if self.r_s.shape == ():
            self.r_s = float(self.r_s) * np.eye(3)
        for name in ("h", "l_al", "l_0", "l_ad", "l_aq", "r_fd", "l_fdl",
                     "r_1d", "l_1dl", "r_1q", "l_1ql", "r_2q", "l_2ql"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"machine parameter {name} must be positive")
        if abs(self.l_ad - self.l_aq) > 1e-12 * max(self.l_ad, self.l_aq):
            raise ConfigError(
                "only round-rotor machines are supported: l_ad must equal l_aq "
                f"(got {self.l_ad} vs {self.l_aq})"
            )
        self.l_ad_pp = 1.0 / (1.0 / self.l_ad + 1.0 / self.l_fdl + 1.0 / self.l_1dl)
        self.l_aq_pp = 1.0 / (1.0 / self.l_aq + 1.0 / self.l_1ql + 1.0 / self.l_2ql)
        self.l_abc_pp = self.subtransient_inductance(0.0)
        self.l_abc_pp_inv = _inv3(self.l_abc_pp, "subtransient inductance matrix")

    def _l_s(self, ang: float) -> float:
        return (self.l_al
                + (self.l_0 - self.l_al + self.l_ad_pp + self.l_aq_pp) / 3.0
                + (self.l_ad_pp - self.l_aq_pp) / 3.0 * math.cos(ang))

    def _l_m(self, ang: float) -> float:
        return ((2.0 * self.l_0 - 2.0 * self.l_al - self.l_ad_pp - self.l_aq_pp) / 6.0
                + (self.l_ad_pp - self.l_aq_pp) / 3.0 * math.cos(ang))

    def subtransient_inductance(self, theta: float) -> np.ndarray:
        """Stator subtransient inductance matrix; constant for round rotors."""
        two = 2.0 * theta
        third = 2.0 * math.pi / 3.0
        ls, lm = self._l_s, self._l_m
        return np.array([
            [ls(two), lm(two - third), lm(two + third)],
            [lm(two - third), ls(two + third), lm(two)],
            [lm(two + third), lm(two), ls(two - third)],
        ])

    @property
    def power_factor(self) -> float:
        """Scale in front of wr*(lambda_ad*iq - lambda_aq*id)."""
        return 0.75 * self.poles


@dataclass
class MachineState:
    """Dynamic states of one machine."""

    delta: float             # rotor angle relative to the synchronous frame, rad
    dw_r: float              # speed deviation, rad/s
    lambda_fd: float
    lambda_1d: float
    lambda_1q: float
    lambda_2q: float
    i_abc: np.ndarray        # stator phase currents, p.u.
    theta: float             # rotor electrical angle, rad

    def __post_init__(self):
        self.i_abc = np.asarray(self.i_abc, dtype=float)

    def copy(self) -> "MachineState":
        return MachineState(self.delta, self.dw_r, self.lambda_fd, self.lambda_1d,
                            self.lambda_1q, self.lambda_2q, self.i_abc.copy(), self.theta)


@dataclass
class MachineAlgebraic:
    """Quantities fully determined by the state and the terminal voltage."""

    i_d: float
    i_q: float
    v_d: float
    v_q: float
    v_d_pp: float
    v_q_pp: float
    lambda_ad: float
    lambda_aq: float
    p_e: float
    v_t: float


def machine_algebraics(state: MachineState, params: MachineParams,
                       v_abc: np.ndarray, e_fd: float = 0.0) -> MachineAlgebraic:
    """Evaluate the algebraic chain at one time point.

    The field voltage enters the d-axis subtransient source term, so it is
    taken as an explicit input alongside the terminal voltage.
    """
    p = park(state.theta)
    i0dq = p @ state.i_abc
    v0dq = p @ np.asarray(v_abc, dtype=float)
    i_d, i_q = i0dq[1], i0dq[2]
    v_d, v_q = v0dq[1], v0dq[2]

    lam_ad = params.l_ad_pp * (-i_d + state.lambda_fd / params.l_fdl
                               + state.lambda_1d / params.l_1dl)
    lam_aq = params.l_aq_pp * (-i_q + state.lambda_1q / params.l_1ql
                               + state.lambda_2q / params.l_2ql)
    lpp_d = params.l_ad_pp * (state.lambda_fd / params.l_fdl
                              + state.lambda_1d / params.l_1dl)
    lpp_q = params.l_aq_pp * (state.lambda_1q / params.l_1ql
                              + state.lambda_2q / params.l_2ql)
    wr = params.omega0 + state.dw_r

    v_d_pp = (params.l_ad_pp * (params.r_fd / params.l_fdl ** 2 * (lam_ad - state.lambda_fd)
                                + params.r_1d / params.l_1dl ** 2 * (lam_ad - state.lambda_1d))
              + params.l_ad_pp / params.l_fdl * e_fd
              - wr * lpp_q)
    v_q_pp = (params.l_aq_pp * (params.r_1q / params.l_1ql ** 2 * (lam_aq - state.lambda_1q)
                                + params.r_2q / params.l_2ql ** 2 * (lam_aq - state.lambda_2q))
              + wr * lpp_d)

    v_t = math.hypot(v_d, v_q)
    p_e = params.power_factor * wr * (lam_ad * i_q - lam_aq * i_d)
    return MachineAlgebraic(i_d, i_q, v_d, v_q, v_d_pp, v_q_pp, lam_ad, lam_aq, p_e, v_t)


def machine_derivatives(state: MachineState, alg: MachineAlgebraic,
                        params: MachineParams, v_abc: np.ndarray,
                        p_m: float, e_fd: float) -> np.ndarray:
    """Time derivatives of the ten machine states.

    Order: delta, dw_r, lambda_fd, lambda_1d, lambda_1q, lambda_2q,
    i_a, i_b, i_c, theta.
    """
    out = np.empty(10)
    out[0] = state.dw_r
    out[1] = params.omega0 / (2.0 * params.h) * (
        p_m - alg.p_e - params.d * state.dw_r / params.omega0)
    out[2] = e_fd - params.r_fd / params.l_fdl * (state.lambda_fd - alg.lambda_ad)
    out[3] = -params.r_1d / params.l_1dl * (state.lambda_1d - alg.lambda_ad)
    out[4] = -params.r_1q / params.l_1ql * (state.lambda_1q - alg.lambda_aq)
    out[5] = -params.r_2q / params.l_2ql * (state.lambda_2q - alg.lambda_aq)
    e_abc = park_inv(state.theta) @ np.array([0.0, alg.v_d_pp, alg.v_q_pp])
    out[6:9] = -params.l_abc_pp_inv @ (np.asarray(v_abc, dtype=float) - e_abc
                                       + params.r_s @ state.i_abc)
    out[9] = params.omega0 + state.dw_r
    return out


# ---------------------------------------------------------------------------
# series bundle and order-by-order recursion (reference implementation)
# ---------------------------------------------------------------------------

class MachineSeriesBundle:
    """All per-machine coefficient series for one expansion point.

    State series are filled one order ahead of the algebraic chain; the
    controls series (p1, p2, e_fd, v3 and the governor/exciter algebraic
    outputs) live here too so the whole machine advances as one unit.
    """

    STATE_ATTRS = ("delta", "dw", "lfd", "l1d", "l1q", "l2q")

    def __init__(self, K: int):
        self.K = K
        n = K + 1
        for name in ("delta", "dw", "lfd", "l1d", "l1q", "l2q", "theta",
                     "p1", "p2", "efd", "v3",
                     "i_d", "i_q", "lam_ad", "lam_aq", "lpp_d", "lpp_q",
                     "vpp_d", "vpp_q", "wr", "v_d", "v_q", "v_t", "u",
                     "tq", "p_e", "p_m", "v2"):
            setattr(self, name, np.zeros(n))
        self.iabc = np.zeros((3, n))
        self.sin3 = np.zeros((3, n))
        self.cos3 = np.zeros((3, n))
        self.p1_clamped = False
        self.efd_clamped = False

    def seed_states(self, state: MachineState, p1: float, p2: float,
                    e_fd: float, v3: float):
        self.delta[0] = state.delta
        self.dw[0] = state.dw_r
        self.lfd[0] = state.lambda_fd
        self.l1d[0] = state.lambda_1d
        self.l1q[0] = state.lambda_1q
        self.l2q[0] = state.lambda_2q
        self.iabc[:, 0] = state.i_abc
        self.theta[0] = state.theta
        self.p1[0] = p1
        self.p2[0] = p2
        self.efd[0] = e_fd
        self.v3[0] = v3


def fill_machine_state_order(b: MachineSeriesBundle, params: MachineParams,
                             v_node: np.ndarray, j: int):
    """Fill order j of the machine dynamic-state series from orders < j.

    `v_node` is the (3, K+1) terminal-voltage series; only orders < j are
    read.  The governor/exciter state series (p1, e_fd) are filled by the
    controls module at the same stage.
    """
    k = j - 1
    b.delta[j] = b.dw[k] / j
    b.dw[j] = (params.omega0 / (2.0 * params.h)
               * (b.p_m[k] - b.p_e[k] - params.d * b.dw[k] / params.omega0)) / j
    b.lfd[j] = (b.efd[k] - params.r_fd / params.l_fdl * (b.lfd[k] - b.lam_ad[k])) / j
    b.l1d[j] = -params.r_1d / params.l_1dl * (b.l1d[k] - b.lam_ad[k]) / j
    b.l1q[j] = -params.r_1q / params.l_1ql * (b.l1q[k] - b.lam_aq[k]) / j
    b.l2q[j] = -params.r_2q / params.l_2ql * (b.l2q[k] - b.lam_aq[k]) / j

    # subtransient source in phase coordinates at order k:
    # e_ph = cos_ph (x) vpp_d - sin_ph (x) vpp_q    (zero-sequence term is 0)
    e_abc = np.empty(3)
    for ph in range(3):
        e_abc[ph] = (conv_at(b.cos3[ph], b.vpp_d, k)
                     - conv_at(b.sin3[ph], b.vpp_q, k))
    rhs = v_node[:, k] + params.r_s @ b.iabc[:, k] - e_abc
    b.iabc[:, j] = -(params.l_abc_pp_inv @ rhs) / j
    b.theta[j] = b.wr[k] / j


def fill_machine_algebraic_order(b: MachineSeriesBundle, params: MachineParams,
                                 v_node: np.ndarray, j: int):
    """Fill order j of the machine algebraic chain.

    Requires machine and network state series at orders <= j and the
    field-voltage series at order j.  Raises SingularMagnitudeError when
    the terminal-voltage magnitude collapses.
    """
    if j == 0:
        for ph in range(3):
            ang = b.theta[0] + PHASE_SHIFT[ph]
            b.sin3[ph, 0] = math.sin(ang)
            b.cos3[ph, 0] = math.cos(ang)
    else:
        for ph in range(3):
            fk, gk = sincos_order(b.theta, b.sin3[ph], b.cos3[ph], j)
            b.sin3[ph, j] = fk
            b.cos3[ph, j] = gk

    id_j = 0.0
    iq_j = 0.0
    vd_j = 0.0
    vq_j = 0.0
    for ph in range(3):
        id_j += conv_at(b.cos3[ph], b.iabc[ph], j)
        iq_j -= conv_at(b.sin3[ph], b.iabc[ph], j)
        vd_j += conv_at(b.cos3[ph], v_node[ph], j)
        vq_j -= conv_at(b.sin3[ph], v_node[ph], j)
    b.i_d[j] = 2.0 / 3.0 * id_j
    b.i_q[j] = 2.0 / 3.0 * iq_j
    b.v_d[j] = 2.0 / 3.0 * vd_j
    b.v_q[j] = 2.0 / 3.0 * vq_j

    b.lam_ad[j] = params.l_ad_pp * (-b.i_d[j] + b.lfd[j] / params.l_fdl
                                    + b.l1d[j] / params.l_1dl)
    b.lam_aq[j] = params.l_aq_pp * (-b.i_q[j] + b.l1q[j] / params.l_1ql
                                    + b.l2q[j] / params.l_2ql)
    b.lpp_d[j] = params.l_ad_pp * (b.lfd[j] / params.l_fdl + b.l1d[j] / params.l_1dl)
    b.lpp_q[j] = params.l_aq_pp * (b.l1q[j] / params.l_1ql + b.l2q[j] / params.l_2ql)
    b.wr[j] = b.dw[j] + (params.omega0 if j == 0 else 0.0)

    b.vpp_d[j] = (params.l_ad_pp * (
        params.r_fd / params.l_fdl ** 2 * (b.lam_ad[j] - b.lfd[j])
        + params.r_1d / params.l_1dl ** 2 * (b.lam_ad[j] - b.l1d[j]))
        + params.l_ad_pp / params.l_fdl * b.efd[j]
        - conv_at(b.wr, b.lpp_q, j))
    b.vpp_q[j] = (params.l_aq_pp * (
        params.r_1q / params.l_1ql ** 2 * (b.lam_aq[j] - b.l1q[j])
        + params.r_2q / params.l_2ql ** 2 * (b.lam_aq[j] - b.l2q[j]))
        + conv_at(b.wr, b.lpp_d, j))

    if j == 0:
        b.u[0] = b.v_d[0] ** 2 + b.v_q[0] ** 2
        b.v_t[0] = math.sqrt(b.u[0])
        if b.v_t[0] < EPS_SQRT:
            raise SingularMagnitudeError(
                f"terminal voltage magnitude collapsed ({b.v_t[0]:.3e} p.u.)")
    else:
        b.u[j], b.v_t[j] = sqrt_sumsq_order(b.v_d, b.v_q, b.v_t, j)

    b.tq[j] = conv_at(b.lam_ad, b.i_q, j) - conv_at(b.lam_aq, b.i_d, j)
    b.p_e[j] = params.power_factor * conv_at(b.wr, b.tq, j)
