"""Scenario configuration: parsing, validation, assembly, initialization.

A scenario file is JSON.  All electrical quantities are per-unit on the
declared MVA base; impedances are resistances and reactances at nominal
frequency, shunts are susceptances at nominal frequency, and angles are
radians.  The file also carries the operating point (a solved power
flow): per-node voltage phasors plus per-machine P/Q dispatch, which the
initializer turns into an exact instantaneous equilibrium of the full
EMT model.  Governor and exciter references are back-computed so the
loaded point has zero derivatives; the initializer verifies this and
refuses to start otherwise.
"""

from __future__ import annotations

import cmath
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .controls import SexsParams, Tgov1Params
from .errors import ConfigError, InitializationError
from .machine import MachineParams, MachineState, machine_algebraics
from .network import (DEFAULT_TERMINAL_CAP, NetworkEvent, NetworkModel,
                      RlBranch, ShuntCap)
from .system import AssembledSystem, MachineUnit

_A = cmath.exp(2j * math.pi / 3.0)
PHASE_ROT = np.array([1.0 + 0j, _A ** 2, _A])  # a, b (lags 120 deg), c


@dataclass
class BranchSpec:
    branch_id: str
    from_node: str
    to_node: str | None
    r_pu: float
    x_pu: float


@dataclass
class ShuntSpec:
    node: str
    b_pu: float


@dataclass
class DispatchSpec:
    p_pu: float
    q_pu: float
    v_mag: float
    v_angle: float


@dataclass
class MachineSpec:
    machine_id: str
    node: str
    poles: int
    params: dict
    dispatch: DispatchSpec
    governor: dict
    exciter: dict


@dataclass
class EventSpec:
    kind: str
    node: str
    time: float
    duration: float
    r_fault: float = 1e-4
    x_fault: float = 1e-4


@dataclass
class ScenarioConfig:
    name: str
    description: str
    frequency_hz: float
    base_mva: float
    solver_defaults: dict
    nodes: list[str]
    shunts: list[ShuntSpec]
    branches: list[BranchSpec]
    machines: list[MachineSpec]
    op_voltages: dict[str, tuple[float, float]]   # node -> (mag, angle rad)
    events: list[EventSpec]

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.frequency_hz


@dataclass
class OperatingPoint:
    """Phasor operating point extracted from a config, with its KCL residual."""

    voltages: dict[str, complex]
    machine_pq: dict[str, tuple[float, float]]
    residual: float


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return d[key]


def config_from_dict(raw: dict) -> ScenarioConfig:
    nodes = [_req(n, "id", "node") for n in _req(raw, "nodes", "scenario")]
    if len(set(nodes)) != len(nodes):
        dupes = sorted({n for n in nodes if nodes.count(n) > 1})
        raise ConfigError(f"duplicate node id: {dupes}")

    shunts = [ShuntSpec(_req(s, "node", "shunt"), float(_req(s, "b_pu", "shunt")))
              for s in raw.get("shunts", [])]
    branches = [BranchSpec(_req(b, "id", "branch"), _req(b, "from", "branch"),
                           b.get("to"), float(_req(b, "r_pu", "branch")),
                           float(_req(b, "x_pu", "branch")))
                for b in _req(raw, "branches", "scenario")]

    machines = []
    for m in _req(raw, "machines", "scenario"):
        mid = _req(m, "id", "machine")
        if "dispatch" not in m:
            raise ConfigError(f"machine {mid}: missing dispatch")
        dv = m["dispatch"]
        for f_ in ("p_pu", "q_pu", "v_mag", "v_angle"):
            if f_ not in dv:
                raise ConfigError(f"machine {mid}: dispatch missing {f_!r}")
        machines.append(MachineSpec(
            mid, _req(m, "node", f"machine {mid}"),
            int(m.get("poles", 2)), dict(_req(m, "params", f"machine {mid}")),
            DispatchSpec(float(dv["p_pu"]), float(dv["q_pu"]),
                         float(dv["v_mag"]), float(dv["v_angle"])),
            dict(_req(m, "governor", f"machine {mid}")),
            dict(_req(m, "exciter", f"machine {mid}"))))

    opv = {}
    for node, entry in _req(raw, "operating_point", "scenario")["voltages"].items():
        opv[node] = (float(entry["mag"]), float(entry["angle"]))

    events = [EventSpec(_req(e, "type", "event"), _req(e, "node", "event"),
                        float(_req(e, "time", "event")),
                        float(_req(e, "duration", "event")),
                        float(e.get("r_fault", 1e-4)),
                        float(e.get("x_fault", 1e-4)))
              for e in raw.get("events", [])]

    cfg = ScenarioConfig(
        name=raw.get("name", ""), description=raw.get("description", ""),
        frequency_hz=float(_req(raw, "frequency_hz", "scenario")),
        base_mva=float(_req(raw, "base_mva", "scenario")),
        solver_defaults=dict(raw.get("solver_defaults", {})),
        nodes=nodes, shunts=shunts, branches=branches, machines=machines,
        op_voltages=opv, events=events)
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig):
    node_set = set(cfg.nodes)
    for s in cfg.shunts:
        if s.node not in node_set:
            raise ConfigError(f"shunt references unknown node {s.node}")
    seen_branch = set()
    for b in cfg.branches:
        if b.branch_id in seen_branch:
            raise ConfigError(f"duplicate branch id {b.branch_id}")
        seen_branch.add(b.branch_id)
        if b.from_node not in node_set:
            raise ConfigError(f"branch {b.branch_id}: unknown node {b.from_node}")
        if b.to_node is not None and b.to_node not in node_set:
            raise ConfigError(f"branch {b.branch_id}: unknown node {b.to_node}")
    seen_mach = set()
    for m in cfg.machines:
        if m.machine_id in seen_mach:
            raise ConfigError(f"duplicate machine id {m.machine_id}")
        seen_mach.add(m.machine_id)
        if m.node not in node_set:
            raise ConfigError(f"machine {m.machine_id}: unknown node {m.node}")
        if m.node not in cfg.op_voltages:
            raise ConfigError(f"machine {m.machine_id}: no operating-point voltage at {m.node}")
    missing_v = node_set - set(cfg.op_voltages)
    if missing_v:
        raise ConfigError(f"operating point lacks voltages for nodes: {sorted(missing_v)}")
    t_end = float(cfg.solver_defaults.get("t_end", math.inf))
    for e in cfg.events:
        if e.node not in node_set:
            raise ConfigError(f"event references unknown node {e.node}")
        if not 0.0 <= e.time <= t_end:
            raise ConfigError(f"event time {e.time} outside [0, {t_end}]")
        if e.kind != "three_phase_fault":
            raise ConfigError(f"unknown event type {e.kind!r}")


def parse_config(path) -> ScenarioConfig:
    """Load and fully validate a scenario file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return config_from_dict(raw)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "name": cfg.name,
        "description": cfg.description,
        "frequency_hz": cfg.frequency_hz,
        "base_mva": cfg.base_mva,
        "solver_defaults": cfg.solver_defaults,
        "nodes": [{"id": n} for n in cfg.nodes],
        "shunts": [{"node": s.node, "b_pu": s.b_pu} for s in cfg.shunts],
        "branches": [{"id": b.branch_id, "from": b.from_node, "to": b.to_node,
                      "r_pu": b.r_pu, "x_pu": b.x_pu} for b in cfg.branches],
        "machines": [{
            "id": m.machine_id, "node": m.node, "poles": m.poles,
            "params": m.params,
            "dispatch": asdict(m.dispatch),
            "governor": m.governor, "exciter": m.exciter,
        } for m in cfg.machines],
        "operating_point": {"voltages": {
            n: {"mag": v[0], "angle": v[1]} for n, v in cfg.op_voltages.items()}},
        "events": [{"type": e.kind, "node": e.node, "time": e.time,
                    "duration": e.duration, "r_fault": e.r_fault,
                    "x_fault": e.x_fault} for e in cfg.events],
    }


def save_config(cfg: ScenarioConfig, path):
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=1)
        fh.write("\n")


def two_area_path() -> str:
    """Path of the shipped two-area dataset."""
    return str(resources.files("dtemt.data").joinpath("two_area.json"))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def build_system(cfg: ScenarioConfig) -> AssembledSystem:
    """Turn a validated config into an assembled machine/network system."""
    w0 = cfg.omega0
    branches = [RlBranch.build(b.branch_id, b.from_node, b.to_node,
                               b.r_pu, b.x_pu / w0) for b in cfg.branches]
    shunt_by_node = {}
    for s in cfg.shunts:
        shunt_by_node[s.node] = shunt_by_node.get(s.node, 0.0) + s.b_pu
    for node in cfg.nodes:
        if node not in shunt_by_node:
            warnings.warn(
                f"node {node} has no shunt capacitance; inserting default "
                f"{DEFAULT_TERMINAL_CAP:g} p.u. so its voltage is a state")
            shunt_by_node[node] = DEFAULT_TERMINAL_CAP * w0
    shunts = [ShuntCap.build(node, b / w0) for node, b in shunt_by_node.items()]
    injections = {m.machine_id: m.node for m in cfg.machines}
    model = NetworkModel(list(cfg.nodes), branches, shunts, injections)

    units = []
    for m in cfg.machines:
        p = m.params
        mp = MachineParams(
            h=float(p["h"]), d=float(p.get("d", 0.0)), omega0=w0,
            poles=m.poles, r_s=float(p["r_s"]),
            l_al=float(p["x_l"]) / w0, l_0=float(p["x_0"]) / w0,
            l_ad=float(p["x_ad"]) / w0, l_aq=float(p["x_aq"]) / w0,
            r_fd=float(p["r_fd"]), l_fdl=float(p["x_fdl"]) / w0,
            r_1d=float(p["r_1d"]), l_1dl=float(p["x_1dl"]) / w0,
            r_1q=float(p["r_1q"]), l_1ql=float(p["x_1ql"]) / w0,
            r_2q=float(p["r_2q"]), l_2ql=float(p["x_2ql"]) / w0)
        g = m.governor
        gov = Tgov1Params(r=float(g["r"]), t1=float(g["t1"]), t2=float(g["t2"]),
                          t3=float(g["t3"]), dt_damp=float(g.get("dt_damp", 0.0)),
                          vmax=float(g["vmax"]), vmin=float(g["vmin"]))
        e = m.exciter
        exc = SexsParams(ke=float(e["ke"]), te=float(e["te"]), ta=float(e["ta"]),
                         tb=float(e["tb"]), emax=float(e["emax"]),
                         emin=float(e["emin"]))
        units.append(MachineUnit(m.machine_id, mp, gov, exc, m.node))
    return AssembledSystem(units, model)


def events_from_config(cfg: ScenarioConfig) -> tuple[NetworkEvent, ...]:
    w0 = cfg.omega0
    out = []
    for e in cfg.events:
        out.append(NetworkEvent(e.time, "fault_on", e.node, e.r_fault, e.x_fault / w0))
        out.append(NetworkEvent(e.time + e.duration, "fault_off", e.node,
                                e.r_fault, e.x_fault / w0))
    return tuple(out)


# ---------------------------------------------------------------------------
# steady-state initialization
# ---------------------------------------------------------------------------

def _abc_snapshot(phasor: complex) -> np.ndarray:
    """Instantaneous three-phase values at t = 0 of a peak-valued phasor."""
    return np.real(phasor * PHASE_ROT)


def _abc_rotation(phasor: complex, omega0: float) -> np.ndarray:
    """Time derivative at t = 0 of the synthesized three-phase signal."""
    return np.real(1j * omega0 * phasor * PHASE_ROT)


def validate_operating_point(cfg: ScenarioConfig) -> OperatingPoint:
    """Check the stored power-flow point against phasor KCL at every node.

    At each node the branch flows plus machine injections must equal the
    shunt capacitor current j*b*V; the worst residual is reported and a
    violation above 1e-6 raises InitializationError.
    """
    vbar = {n: mag * cmath.exp(1j * ang) for n, (mag, ang) in cfg.op_voltages.items()}
    inj = {n: 0.0 + 0j for n in cfg.nodes}
    for b in cfg.branches:
        z = b.r_pu + 1j * b.x_pu
        vt = vbar[b.to_node] if b.to_node is not None else 0.0
        i = (vbar[b.from_node] - vt) / z
        inj[b.from_node] -= i
        if b.to_node is not None:
            inj[b.to_node] += i
    pq = {}
    for m in cfg.machines:
        s = m.dispatch.p_pu + 1j * m.dispatch.q_pu
        inj[m.node] += (s / vbar[m.node]).conjugate()
        pq[m.machine_id] = (m.dispatch.p_pu, m.dispatch.q_pu)
    shunt_b = {n: 0.0 for n in cfg.nodes}
    for s in cfg.shunts:
        shunt_b[s.node] += s.b_pu
    worst = 0.0
    offenders = []
    for n in cfg.nodes:
        r = abs(inj[n] - 1j * shunt_b[n] * vbar[n])
        offenders.append((r, n))
        worst = max(worst, r)
    if worst > 1e-6:
        offenders.sort(reverse=True)
        msg = ", ".join(f"{n}: {r:.3e}" for r, n in offenders[:5])
        raise InitializationError(
            f"operating point violates phasor KCL (worst nodes: {msg})")
    return OperatingPoint(vbar, pq, worst)


@dataclass
class InitResult:
    system: AssembledSystem
    y0: np.ndarray
    expected_derivative: np.ndarray
    residual: float
    operating_point: OperatingPoint


def init_steady_state(cfg: ScenarioConfig) -> InitResult:
    """Synthesize the instantaneous equilibrium implied by the config.

    Machine internal states come from the terminal phasor conditions,
    governor/exciter references are back-solved so every control is in
    balance, and the three-phase network states are the t = 0 snapshot of
    the phasor solution.  The assembled right-hand side is then checked
    against the analytic derivative of the rotating solution; a residual
    above 1e-6 raises InitializationError naming the worst states.
    """
    op = validate_operating_point(cfg)
    system = build_system(cfg)
    w0 = cfg.omega0
    dispatch = {m.machine_id: m.dispatch for m in cfg.machines}

    machine_states = []
    control_states = []
    phasors = {}   # state name -> rotating phasor (None means constant)

    for unit in system.machines:
        mp = unit.params
        dsp = dispatch[unit.machine_id]
        vterm = op.voltages[unit.node]
        if abs(abs(vterm) - dsp.v_mag) > 1e-9 or \
           abs(cmath.phase(vterm) - dsp.v_angle) > 1e-9:
            raise InitializationError(
                f"machine {unit.machine_id}: dispatch voltage differs from "
                f"operating-point voltage at {unit.node}")
        s = dsp.p_pu + 1j * dsp.q_pu
        ibar = (s / vterm).conjugate()

        x_s = w0 * (mp.l_al + mp.l_ad)
        r_s = float(np.mean(np.diag(mp.r_s)))
        e_s = vterm + (r_s + 1j * x_s) * ibar
        theta0 = cmath.phase(e_s) - math.pi / 2.0
        e_i = abs(e_s)

        rot = cmath.exp(-1j * theta0)
        idq = ibar * rot
        i_d, i_q = idq.real, idq.imag
        i_fd = e_i / (w0 * mp.l_ad)
        lam_ad = mp.l_ad * (-i_d + i_fd)
        lam_aq = -mp.l_aq * i_q
        st = MachineState(
            delta=theta0, dw_r=0.0,
            lambda_fd=mp.l_fdl * i_fd + lam_ad,
            lambda_1d=lam_ad, lambda_1q=lam_aq, lambda_2q=lam_aq,
            i_abc=_abc_snapshot(ibar), theta=theta0)
        e_fd = mp.r_fd * i_fd

        v_abc = _abc_snapshot(vterm)
        alg = machine_algebraics(st, mp, v_abc, e_fd)
        p_m = alg.p_e
        gov, exc = unit.gov, unit.exc
        if not gov.vmin < p_m < gov.vmax:
            raise InitializationError(
                f"machine {unit.machine_id}: dispatched p_m={p_m:.4f} outside "
                f"governor limits [{gov.vmin}, {gov.vmax}]")
        if not exc.emin < e_fd < exc.emax:
            raise InitializationError(
                f"machine {unit.machine_id}: field voltage {e_fd:.6f} outside "
                f"exciter limits [{exc.emin}, {exc.emax}]")
        gov.p_ref = gov.r * p_m
        exc.v_ref = alg.v_t + e_fd / exc.ke

        from .controls import ControlState
        machine_states.append(st)
        control_states.append(ControlState(p1=p_m, p2=p_m, e_fd=e_fd, v3=e_fd / exc.ke))
        for ph, nm in enumerate("abc"):
            phasors[f"{unit.machine_id}.i_{nm}"] = ibar * PHASE_ROT[ph]
        phasors[f"{unit.machine_id}.theta"] = "theta"

    i_branch = np.empty((system.n_b, 3))
    for bi, br in enumerate(system.model.branches):
        spec = cfg.branches[bi]
        z = spec.r_pu + 1j * spec.x_pu
        vt = op.voltages[spec.to_node] if spec.to_node is not None else 0.0
        iph = (op.voltages[spec.from_node] - vt) / z
        i_branch[bi] = _abc_snapshot(iph)
        for ph, nm in enumerate("abc"):
            phasors[f"{br.branch_id}.i_{nm}"] = iph * PHASE_ROT[ph]

    v_node = np.empty((system.n_n, 3))
    for ni, node in enumerate(system.model.nodes):
        v_node[ni] = _abc_snapshot(op.voltages[node])
        for ph, nm in enumerate("abc"):
            phasors[f"{node}.v_{nm}"] = op.voltages[node] * PHASE_ROT[ph]

    y0 = system.pack_state(machine_states, control_states, i_branch, v_node)

    names = system.state_names()
    expected = np.zeros(system.n_states)
    for i, nm in enumerate(names):
        ph = phasors.get(nm)
        if ph == "theta":
            expected[i] = w0
        elif ph is not None:
            expected[i] = (1j * w0 * ph).real

    ydot = system.rhs(y0)
    resid = np.abs(ydot - expected)
    residual = float(resid.max())
    if residual > 1e-6:
        order = np.argsort(resid)[::-1][:5]
        msg = ", ".join(f"{names[i]}: {resid[i]:.3e}" for i in order)
        raise InitializationError(
            f"initialized state is not an equilibrium (residual {residual:.3e}; "
            f"worst: {msg})")
    return InitResult(system, y0, expected, residual, op)


def load_scenario(path):
    """Parse, assemble and initialize a scenario file.

    Returns (config, InitResult, events).
    """
    cfg = parse_config(path)
    init = init_steady_state(cfg)
    return cfg, init, events_from_config(cfg)
