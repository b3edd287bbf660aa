"""Three-phase state-space network.

The grid is a collection of series RL branches (lines, transformers,
constant-impedance loads, fault paths) and per-node grounding
capacitances.  Branch currents and node voltages are the network states:

    di/dt = L^-1 (v_from - v_to - R i)
    dv/dt = C^-1 i_node

where i_node is the KCL sum of incident branch currents and machine
injections.  Every node that appears in the model carries a capacitance
so its voltage is a state; a branch end of None is ground (zero volts).

Inductance and capacitance matrices are "real-time" per-unit values
(reactance / omega0, susceptance / omega0), consistent with the machine
module.  Parameter matrices may be full 3x3; the shipped dataset only
uses diagonal ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .machine import _inv3


def _as_matrix(value) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.shape == ():
        return float(m) * np.eye(3)
    if m.shape != (3, 3):
        raise ConfigError(f"expected scalar or 3x3 matrix, got shape {m.shape}")
    return m.copy()


@dataclass(frozen=True)
class RlBranch:
    """Series RL branch; to_node of None means ground."""

    branch_id: str
    from_node: str
    to_node: str | None
    r: np.ndarray
    l: np.ndarray

    @staticmethod
    def build(branch_id, from_node, to_node, r, l) -> "RlBranch":
        return RlBranch(branch_id, from_node, to_node, _as_matrix(r), _as_matrix(l))

    def __eq__(self, other):
        return (isinstance(other, RlBranch)
                and self.branch_id == other.branch_id
                and self.from_node == other.from_node
                and self.to_node == other.to_node
                and np.array_equal(self.r, other.r)
                and np.array_equal(self.l, other.l))


@dataclass(frozen=True)
class ShuntCap:
    node: str
    c: np.ndarray

    @staticmethod
    def build(node, c) -> "ShuntCap":
        return ShuntCap(node, _as_matrix(c))

    def __eq__(self, other):
        return (isinstance(other, ShuntCap) and self.node == other.node
                and np.array_equal(self.c, other.c))


DEFAULT_TERMINAL_CAP = 1e-6  # fallback capacitance inserted at bare machine nodes


@dataclass
class NetworkModel:
    """Validated branch/shunt topology with precomputed inverses.

    `faults` maps node id to the resistance of an active three-phase
    fault path to ground at that node; the fault current is algebraic
    (v / r per phase) and enters the node current balance directly, so
    switching a fault never changes the state dimension.
    """

    nodes: list[str]
    branches: list[RlBranch]
    shunts: list[ShuntCap]
    injection_nodes: dict[str, str]          # machine id -> node id
    faults: dict[str, float] = field(default_factory=dict)
    node_index: dict[str, int] = field(init=False)
    l_inv: list[np.ndarray] = field(init=False)
    c_inv: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            dupes = sorted({n for n in self.nodes if self.nodes.count(n) > 1})
            raise ConfigError(f"duplicate node ids: {dupes}")
        self.node_index = {n: i for i, n in enumerate(self.nodes)}
        shunt_nodes = [s.node for s in self.shunts]
        if len(set(shunt_nodes)) != len(shunt_nodes):
            raise ConfigError("multiple shunt capacitances at one node; merge them")
        for br in self.branches:
            if br.from_node not in self.node_index:
                raise ConfigError(f"branch {br.branch_id}: unknown node {br.from_node}")
            if br.to_node is not None and br.to_node not in self.node_index:
                raise ConfigError(f"branch {br.branch_id}: unknown node {br.to_node}")
        for mid, node in self.injection_nodes.items():
            if node not in self.node_index:
                raise ConfigError(f"machine {mid}: unknown node {node}")
        for node, r in self.faults.items():
            if node not in self.node_index:
                raise ConfigError(f"fault references unknown node {node}")
            if r <= 0.0:
                raise ConfigError(f"fault resistance at {node} must be positive")
        missing = set(self.nodes) - set(shunt_nodes)
        if missing:
            raise ConfigError(
                f"nodes without shunt capacitance (voltage would not be a state): {sorted(missing)}")
        self._check_connected()
        self.l_inv = [_inv3(br.l, f"branch {br.branch_id} inductance") for br in self.branches]
        self.c_inv = [None] * len(self.nodes)
        for s in self.shunts:
            self.c_inv[self.node_index[s.node]] = _inv3(s.c, f"shunt at {s.node}")

    def _check_connected(self):
        if not self.nodes:
            raise ConfigError("network has no nodes")
        adj = {n: set() for n in self.nodes}
        for br in self.branches:
            if br.to_node is not None:
                adj[br.from_node].add(br.to_node)
                adj[br.to_node].add(br.from_node)
        seen = {self.nodes[0]}
        stack = [self.nodes[0]]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        unreached = set(self.nodes) - seen
        if unreached:
            raise ConfigError(f"network is disconnected; unreachable nodes: {sorted(unreached)}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def branch_ids(self) -> list[str]:
        return [br.branch_id for br in self.branches]


def network_derivatives(model: NetworkModel, i_branch: np.ndarray,
                        v_node: np.ndarray, injections: np.ndarray):
    """Continuous-time derivatives of all branch currents and node voltages.

    i_branch: (n_branches, 3), v_node: (n_nodes, 3),
    injections: (n_nodes, 3) machine currents flowing into each node.
    Returns (di_branch, dv_node) of the same shapes.
    """
    di = np.empty_like(i_branch)
    i_node = injections.copy()
    for b, br in enumerate(model.branches):
        vf = v_node[model.node_index[br.from_node]]
        vt = (np.zeros(3) if br.to_node is None
              else v_node[model.node_index[br.to_node]])
        di[b] = model.l_inv[b] @ (vf - vt - br.r @ i_branch[b])
        i_node[model.node_index[br.from_node]] -= i_branch[b]
        if br.to_node is not None:
            i_node[model.node_index[br.to_node]] += i_branch[b]
    for node, r in model.faults.items():
        n = model.node_index[node]
        i_node[n] -= v_node[n] / r
    dv = np.empty_like(v_node)
    for n in range(model.n_nodes):
        dv[n] = model.c_inv[n] @ i_node[n]
    return di, dv


def fill_network_order(model: NetworkModel, i_ser: np.ndarray, v_ser: np.ndarray,
                       inj_ser: np.ndarray, j: int):
    """Fill order j of all network state series from order j - 1.

    i_ser: (n_branches, 3, K+1), v_ser: (n_nodes, 3, K+1),
    inj_ser: (n_nodes, 3, K+1) machine-injection series.
    """
    k = j - 1
    i_node = inj_ser[:, :, k].copy()
    for b, br in enumerate(model.branches):
        vf = v_ser[model.node_index[br.from_node], :, k]
        vt = (np.zeros(3) if br.to_node is None
              else v_ser[model.node_index[br.to_node], :, k])
        i_ser[b, :, j] = model.l_inv[b] @ (vf - vt - br.r @ i_ser[b, :, k]) / j
        i_node[model.node_index[br.from_node]] -= i_ser[b, :, k]
        if br.to_node is not None:
            i_node[model.node_index[br.to_node]] += i_ser[b, :, k]
    for node, r in model.faults.items():
        n = model.node_index[node]
        i_node[n] -= v_ser[n, :, k] / r
    for n in range(model.n_nodes):
        v_ser[n, :, j] = model.c_inv[n] @ i_node[n] / j


# ---------------------------------------------------------------------------
# switching events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkEvent:
    """Switching event at a point in time.

    kind "fault_on" inserts a three-phase resistive path of r_fault from
    `node` to ground; "fault_off" removes it.
    """

    time: float
    kind: str
    node: str
    r_fault: float = 1e-4


def apply_event(model: NetworkModel, event: NetworkEvent) -> NetworkModel:
    """Return a new model with the event applied; the input is unchanged."""
    if event.node not in model.node_index:
        raise ConfigError(f"event references unknown node {event.node}")
    if event.kind == "fault_on":
        if event.node in model.faults:
            raise ConfigError(f"fault at {event.node} already present")
        faults = dict(model.faults)
        faults[event.node] = event.r_fault
        return NetworkModel(model.nodes, model.branches, model.shunts,
                            model.injection_nodes, faults)
    if event.kind == "fault_off":
        if event.node not in model.faults:
            raise ConfigError(f"no fault at {event.node} to remove")
        faults = {n: r for n, r in model.faults.items() if n != event.node}
        return NetworkModel(model.nodes, model.branches, model.shunts,
                            model.injection_nodes, faults)
    raise ConfigError(f"unknown event kind {event.kind!r}")
