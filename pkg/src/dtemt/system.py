"""Assembled simulation system: packing, naming, reference evaluation.

One flat state vector drives all integrators.  Layout:

    [machine 0: delta, dw_r, lambda_fd, lambda_1d, lambda_1q, lambda_2q,
                i_a, i_b, i_c, theta, p1, p2, e_fd, v3]
    [machine 1: ...] ...
    [branch 0: i_a, i_b, i_c] ...
    [node 0:   v_a, v_b, v_c] ...

This module provides the readable reference implementation of the full
right-hand side and of the order-by-order coefficient recursion, built
from the machine/controls/network modules.  The numerically identical
packed kernels used by the production integrators live in `kernels`;
tests pin the two paths against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import (SexsParams, Tgov1Params, fill_controls_algebraic_order,
                       fill_controls_state_order, sexs_derivatives,
                       sexs_unclamped_defd, tgov1_derivatives, tgov1_unclamped_dp1)
from .errors import SimulationError
from .machine import (MachineAlgebraic, MachineParams, MachineSeriesBundle,
                      MachineState, fill_machine_algebraic_order,
                      fill_machine_state_order, machine_algebraics,
                      machine_derivatives, park)
from .network import NetworkModel, fill_network_order, network_derivatives
from .series import CoeffSeries, horner_eval

N_MACHINE_STATES = 14
MACHINE_STATE_FIELDS = ("delta", "dw_r", "lambda_fd", "lambda_1d", "lambda_1q",
                        "lambda_2q", "i_a", "i_b", "i_c", "theta",
                        "p1", "p2", "e_fd", "v3")
PHASES = ("a", "b", "c")

# clamp flag values per limited state: 0 free, +1 at upper, -1 at lower
FLAG_FREE, FLAG_MAX, FLAG_MIN = 0, 1, -1


@dataclass
class MachineUnit:
    machine_id: str
    params: MachineParams
    gov: Tgov1Params
    exc: SexsParams
    node: str


class AssembledSystem:
    """Machines plus a network model, with state packing and naming."""

    def __init__(self, machines: list[MachineUnit], model: NetworkModel):
        self.machines = machines
        self.model = model
        self.omega0 = machines[0].params.omega0 if machines else 2.0 * np.pi * 60.0
        self.n_m = len(machines)
        self.n_b = model.n_branches
        self.n_n = model.n_nodes
        self.n_states = N_MACHINE_STATES * self.n_m + 3 * self.n_b + 3 * self.n_n
        self._mach_node_idx = [model.node_index[u.node] for u in machines]

    # -- layout helpers ----------------------------------------------------

    def machine_offset(self, m: int) -> int:
        return N_MACHINE_STATES * m

    def branch_offset(self, b: int) -> int:
        return N_MACHINE_STATES * self.n_m + 3 * b

    def node_offset(self, n: int) -> int:
        return N_MACHINE_STATES * self.n_m + 3 * self.n_b + 3 * n

    def state_names(self) -> list[str]:
        names = []
        for u in self.machines:
            names.extend(f"{u.machine_id}.{f}" for f in MACHINE_STATE_FIELDS)
        for br in self.model.branches:
            names.extend(f"{br.branch_id}.i_{p}" for p in PHASES)
        for node in self.model.nodes:
            names.extend(f"{node}.v_{p}" for p in PHASES)
        return names

    def with_model(self, model: NetworkModel) -> "AssembledSystem":
        return AssembledSystem(self.machines, model)

    # -- state pack / unpack -------------------------------------------------

    def machine_state(self, y: np.ndarray, m: int) -> MachineState:
        o = self.machine_offset(m)
        return MachineState(y[o], y[o + 1], y[o + 2], y[o + 3], y[o + 4], y[o + 5],
                            y[o + 6:o + 9].copy(), y[o + 9])

    def control_values(self, y: np.ndarray, m: int):
        o = self.machine_offset(m)
        return y[o + 10], y[o + 11], y[o + 12], y[o + 13]  # p1, p2, e_fd, v3

    def branch_currents(self, y: np.ndarray) -> np.ndarray:
        o = self.branch_offset(0)
        return y[o:o + 3 * self.n_b].reshape(self.n_b, 3)

    def node_voltages(self, y: np.ndarray) -> np.ndarray:
        o = self.node_offset(0)
        return y[o:o + 3 * self.n_n].reshape(self.n_n, 3)

    def pack_state(self, machine_states, control_states, i_branch, v_node) -> np.ndarray:
        y = np.empty(self.n_states)
        for m, (st, cs) in enumerate(zip(machine_states, control_states)):
            o = self.machine_offset(m)
            y[o:o + 6] = (st.delta, st.dw_r, st.lambda_fd, st.lambda_1d,
                          st.lambda_1q, st.lambda_2q)
            y[o + 6:o + 9] = st.i_abc
            y[o + 9] = st.theta
            y[o + 10:o + 14] = (cs.p1, cs.p2, cs.e_fd, cs.v3)
        y[self.branch_offset(0):self.branch_offset(0) + 3 * self.n_b] = \
            np.asarray(i_branch, dtype=float).reshape(-1)
        y[self.node_offset(0):] = np.asarray(v_node, dtype=float).reshape(-1)
        return y

    def new_flags(self) -> np.ndarray:
        """Per-machine clamp flags, columns (p1, e_fd)."""
        return np.zeros((self.n_m, 2), dtype=np.int64)

    # -- reference right-hand side -------------------------------------------

    def injections(self, y: np.ndarray) -> np.ndarray:
        inj = np.zeros((self.n_n, 3))
        for m in range(self.n_m):
            o = self.machine_offset(m)
            inj[self._mach_node_idx[m]] += y[o + 6:o + 9]
        return inj

    def rhs(self, y: np.ndarray, flags: np.ndarray | None = None) -> np.ndarray:
        """Full system derivative, assembled from the component modules."""
        if flags is None:
            flags = self.new_flags()
        ydot = np.empty(self.n_states)
        i_branch = self.branch_currents(y)
        v_node = self.node_voltages(y)
        di, dv = network_derivatives(self.model, i_branch, v_node, self.injections(y))

        for m, u in enumerate(self.machines):
            o = self.machine_offset(m)
            st = self.machine_state(y, m)
            p1, p2, e_fd, v3 = self.control_values(y, m)
            n_idx = self._mach_node_idx[m]
            v_abc = v_node[n_idx]
            alg = machine_algebraics(st, u.params, v_abc, e_fd)

            dw_pu = st.dw_r / self.omega0
            from .controls import ControlState
            cs = ControlState(p1, p2, e_fd, v3,
                              p1_at_limit=flags[m, 0] != FLAG_FREE,
                              efd_at_limit=flags[m, 1] != FLAG_FREE)
            dp1, dp2, p_m = tgov1_derivatives(cs, u.gov, dw_pu)

            # d(v_t)/dt through the rotating transform and the node equation
            wr = self.omega0 + st.dw_r
            p = park(st.theta)
            dv_abc = dv[n_idx]
            dvd = wr * alg.v_q + p[1] @ dv_abc
            dvq = -wr * alg.v_d + p[2] @ dv_abc
            dv_t = (alg.v_d * dvd + alg.v_q * dvq) / alg.v_t
            de, dv3 = sexs_derivatives(cs, u.exc, alg.v_t, dv_t)

            ydot[o:o + 10] = machine_derivatives(st, alg, u.params, v_abc, p_m, e_fd)
            # the swing equation divides speed deviation by omega0 for the
            # governor path; machine_derivatives already used p_m
            ydot[o + 10:o + 14] = (dp1, dp2, de, dv3)

        ydot[self.branch_offset(0):self.branch_offset(0) + 3 * self.n_b] = di.reshape(-1)
        ydot[self.node_offset(0):] = dv.reshape(-1)
        return ydot


# ---------------------------------------------------------------------------
# system-wide coefficient series
# ---------------------------------------------------------------------------

class SystemSeries:
    """Coefficient series of every variable about one expansion point.

    The three groups of the stepping protocol are the machine/control
    state series (x1), the network state series (x2) and the per-machine
    algebraic series (x3).
    """

    def __init__(self, system: AssembledSystem, t0: float, K: int):
        self.system = system
        self.t0 = t0
        self.K = K
        self.machines = [MachineSeriesBundle(K) for _ in range(system.n_m)]
        self.i_branch = np.zeros((system.n_b, 3, K + 1))
        self.v_node = np.zeros((system.n_n, 3, K + 1))
        self.inj = np.zeros((system.n_n, 3, K + 1))

    def seed(self, y: np.ndarray, flags: np.ndarray):
        sys = self.system
        for m in range(sys.n_m):
            st = sys.machine_state(y, m)
            p1, p2, e_fd, v3 = sys.control_values(y, m)
            b = self.machines[m]
            b.seed_states(st, p1, p2, e_fd, v3)
            b.p1_clamped = flags[m, 0] != FLAG_FREE
            b.efd_clamped = flags[m, 1] != FLAG_FREE
        self.i_branch[:, :, 0] = sys.branch_currents(y)
        self.v_node[:, :, 0] = sys.node_voltages(y)
        self.inj[:, :, 0] = sys.injections(y)
        for m, u in enumerate(sys.machines):
            vn = self.v_node[sys._mach_node_idx[m]]
            fill_machine_algebraic_order(self.machines[m], u.params, vn, 0)
            fill_controls_algebraic_order(self.machines[m], u.gov, u.exc, sys.omega0, 0)

    def fill_order(self, j: int):
        """Compute order j of every series from orders below (and the
        same-order algebraic chain)."""
        sys = self.system
        for m, u in enumerate(sys.machines):
            b = self.machines[m]
            vn = self.v_node[sys._mach_node_idx[m]]
            fill_machine_state_order(b, u.params, vn, j)
            fill_controls_state_order(b, u.gov, u.exc, sys.omega0, j)
            self.inj[sys._mach_node_idx[m], :, j] += b.iabc[:, j]
        fill_network_order(sys.model, self.i_branch, self.v_node, self.inj, j)
        for m, u in enumerate(sys.machines):
            b = self.machines[m]
            vn = self.v_node[sys._mach_node_idx[m]]
            fill_machine_algebraic_order(b, u.params, vn, j)
            fill_controls_algebraic_order(b, u.gov, u.exc, sys.omega0, j)

    def fill_all(self):
        for j in range(1, self.K + 1):
            self.fill_order(j)

    def state_coeffs(self) -> np.ndarray:
        """(n_states, K+1) array of all state series, in packing order."""
        sys = self.system
        out = np.empty((sys.n_states, self.K + 1))
        for m in range(sys.n_m):
            b = self.machines[m]
            o = sys.machine_offset(m)
            for i, arr in enumerate((b.delta, b.dw, b.lfd, b.l1d, b.l1q, b.l2q)):
                out[o + i] = arr
            out[o + 6:o + 9] = b.iabc
            out[o + 9] = b.theta
            out[o + 10] = b.p1
            out[o + 11] = b.p2
            out[o + 12] = b.efd
            out[o + 13] = b.v3
        out[sys.branch_offset(0):sys.branch_offset(0) + 3 * sys.n_b] = \
            self.i_branch.reshape(3 * sys.n_b, self.K + 1)
        out[sys.node_offset(0):] = self.v_node.reshape(3 * sys.n_n, self.K + 1)
        return out

    def eval_states(self, h: float) -> np.ndarray:
        coeffs = self.state_coeffs()
        y = np.empty(coeffs.shape[0])
        for i in range(coeffs.shape[0]):
            y[i] = horner_eval(coeffs[i], h)
        return y

    # -- partitioned views ---------------------------------------------------

    def _series(self, arr) -> CoeffSeries:
        return CoeffSeries(np.array(arr), self.t0)

    @property
    def x1(self) -> dict:
        """Machine and control state series by qualified name."""
        out = {}
        for m, u in enumerate(self.system.machines):
            b = self.machines[m]
            for name, arr in zip(MACHINE_STATE_FIELDS,
                                 (b.delta, b.dw, b.lfd, b.l1d, b.l1q, b.l2q,
                                  b.iabc[0], b.iabc[1], b.iabc[2], b.theta,
                                  b.p1, b.p2, b.efd, b.v3)):
                out[f"{u.machine_id}.{name}"] = self._series(arr)
        return out

    @property
    def x2(self) -> dict:
        """Network state series by qualified name."""
        out = {}
        for bi, br in enumerate(self.system.model.branches):
            for p, ph in enumerate(PHASES):
                out[f"{br.branch_id}.i_{ph}"] = self._series(self.i_branch[bi, p])
        for ni, node in enumerate(self.system.model.nodes):
            for p, ph in enumerate(PHASES):
                out[f"{node}.v_{ph}"] = self._series(self.v_node[ni, p])
        return out

    @property
    def x3(self) -> dict:
        """Algebraic series by qualified name."""
        out = {}
        alg_fields = ("i_d", "i_q", "lam_ad", "lam_aq", "vpp_d", "vpp_q",
                      "v_d", "v_q", "v_t", "p_e", "p_m", "v2", "wr")
        for m, u in enumerate(self.system.machines):
            b = self.machines[m]
            for name in alg_fields:
                out[f"{u.machine_id}.{name}"] = self._series(getattr(b, name))
        return out


def build_system_series(system: AssembledSystem, y: np.ndarray,
                        flags: np.ndarray, K: int, t0: float = 0.0) -> SystemSeries:
    """Seed and fully fill a SystemSeries at the given state."""
    ss = SystemSeries(system, t0, K)
    ss.seed(y, flags)
    ss.fill_all()
    return ss


def update_clamp_flags(system: AssembledSystem, y: np.ndarray,
                       flags: np.ndarray) -> None:
    """Expansion-point windup-limit logic, shared by all integrators.

    For each limited state: snap values beyond the limit back onto it,
    clamp while the unclamped derivative points outward, release when it
    points inward.  Mutates y and flags in place.
    """
    for m, u in enumerate(system.machines):
        o = system.machine_offset(m)
        dw_pu = y[o + 1] / system.omega0

        p1 = min(max(y[o + 10], u.gov.vmin), u.gov.vmax)
        d1 = tgov1_unclamped_dp1(p1, u.gov, dw_pu)
        if p1 >= u.gov.vmax and d1 > 0.0:
            flags[m, 0] = FLAG_MAX
            p1 = u.gov.vmax
        elif p1 <= u.gov.vmin and d1 < 0.0:
            flags[m, 0] = FLAG_MIN
            p1 = u.gov.vmin
        else:
            flags[m, 0] = FLAG_FREE
        y[o + 10] = p1

        efd = min(max(y[o + 12], u.exc.emin), u.exc.emax)
        de = sexs_unclamped_defd(efd, y[o + 13], u.exc)
        if efd >= u.exc.emax and de > 0.0:
            flags[m, 1] = FLAG_MAX
            efd = u.exc.emax
        elif efd <= u.exc.emin and de < 0.0:
            flags[m, 1] = FLAG_MIN
            efd = u.exc.emin
        else:
            flags[m, 1] = FLAG_FREE
        y[o + 12] = efd
