#!/usr/bin/env python3
"""Generate the shipped two-area dataset (src/dtemt/data/two_area.json).

Four 900-MVA round-rotor units in two areas tied by a double 220-km
corridor, after Kundur, "Power System Stability and Control" (example
system of ch. 12), expressed on a 100 MVA / 60 Hz system base.  Machine
q-axis mutual reactance is set equal to the d-axis value (the solver
accepts round rotors only); subtransient reactances are equal in the
standard data already.

Choices that are ours rather than the textbook's, for a well-posed
state-space EMT model:

* every bus carries a shunt capacitance (line-charging halves plus a
  small station capacitance at machine and junction buses) so that all
  node voltages are states and the fastest LC modes stay near 1e4 rad/s;
* transformers get a small series resistance;
* loads are constant series RL impedances sized at nominal voltage;
* the electrical-power expression carries a factor 3*poles/4 = 1.5, so
  inertia, damping and governor gains are rescaled by that factor to
  keep the standard rotor dynamics;
* the exciter is driven in machine-side field-voltage units: standard
  SEXS gains/limits are multiplied by r_fd/L_ad.

Running this script re-solves the power flow with machines as P-V
injections (bus 1 slack) and rewrites the dataset with the converged
operating point; it also prints the eigenvalue envelope of the
initialized system as a stiffness report.
"""

import cmath
import json
import math
import pathlib

import numpy as np
import scipy.optimize

OMEGA0 = 2.0 * math.pi * 60.0
OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "dtemt" / "data" / "two_area.json"

PE_FACTOR = 1.5          # 3 * poles / 4 with poles = 2
MVA_RATIO = 1.0 / 9.0    # 900 MVA machine base -> 100 MVA system base


def machine_params():
    """Standard-parameter conversion to winding resistances/leakages.

    Machine base values: Xd = Xq = 1.8, Xl = 0.2, Xd' = 0.3,
    Xd'' = Xq'' = 0.25, Xq' = 0.55, Ra = 0.0025, Td0' = 8 s,
    Td0'' = 0.03 s, Tq0' = 0.4 s, Tq0'' = 0.05 s.
    """
    x_l, x_d = 0.2, 1.8
    x_ad = x_d - x_l            # 1.6, q-axis forced equal
    x_fdl = 1.0 / (1.0 / (0.3 - x_l) - 1.0 / x_ad)
    r_fd = (x_ad + x_fdl) / (8.0 * OMEGA0)
    x_1dl = 1.0 / (1.0 / (0.25 - x_l) - 1.0 / x_ad - 1.0 / x_fdl)
    r_1d = (x_1dl + x_ad * x_fdl / (x_ad + x_fdl)) / (0.03 * OMEGA0)
    x_1ql = 1.0 / (1.0 / (0.55 - x_l) - 1.0 / x_ad)
    r_1q = (x_ad + x_1ql) / (0.4 * OMEGA0)
    x_2ql = 1.0 / (1.0 / (0.25 - x_l) - 1.0 / x_ad - 1.0 / x_1ql)
    r_2q = (x_2ql + x_ad * x_1ql / (x_ad + x_1ql)) / (0.05 * OMEGA0)
    base = {
        "r_s": 0.0025, "x_l": x_l, "x_0": x_l, "x_ad": x_ad, "x_aq": x_ad,
        "r_fd": r_fd, "x_fdl": x_fdl, "r_1d": r_1d, "x_1dl": x_1dl,
        "r_1q": r_1q, "x_1ql": x_1ql, "r_2q": r_2q, "x_2ql": x_2ql,
    }
    # to system base
    return {k: v * MVA_RATIO for k, v in base.items()}


def build():
    mp_sys = machine_params()
    k_fd = mp_sys["r_fd"] / mp_sys["x_ad"]   # machine-side field-voltage scale

    gens = [
        ("gen1", "b1", 6.5),
        ("gen2", "b2", 6.5),
        ("gen3", "b3", 6.175),
        ("gen4", "b4", 6.175),
    ]
    # transformer + line data (r, x, b on 100 MVA / 230 kV)
    xfmr = {"r_pu": 0.0005, "x_pu": 0.15 * MVA_RATIO}
    km = {"r": 0.0001, "x": 0.001, "b": 0.00175}

    def line(n_km):
        return {"r_pu": km["r"] * n_km, "x_pu": km["x"] * n_km, "b": km["b"] * n_km}

    lines = [
        ("t1", "b1", "b5", xfmr, 0.0),
        ("t2", "b2", "b6", xfmr, 0.0),
        ("t3", "b3", "b11", xfmr, 0.0),
        ("t4", "b4", "b10", xfmr, 0.0),
        ("l5_6", "b5", "b6", line(25), line(25)["b"]),
        ("l6_7", "b6", "b7", line(10), line(10)["b"]),
        ("l7_8a", "b7", "b8", line(110), line(110)["b"]),
        ("l7_8b", "b7", "b8", line(110), line(110)["b"]),
        ("l8_9a", "b8", "b9", line(110), line(110)["b"]),
        ("l8_9b", "b8", "b9", line(110), line(110)["b"]),
        ("l9_10", "b9", "b10", line(10), line(10)["b"]),
        ("l10_11", "b10", "b11", line(25), line(25)["b"]),
    ]
    loads = {
        # P, Q(inductive) consumed at nominal voltage; series RL to ground
        "b7": (9.67, 1.00),
        "b9": (17.67, 1.00),
    }
    cap_banks = {"b7": 2.0, "b9": 3.5}
    station_cap = {"b1": 0.10, "b2": 0.10, "b3": 0.10, "b4": 0.10,
                   "b5": 0.05, "b6": 0.05, "b8": 0.05, "b10": 0.05, "b11": 0.05}

    nodes = [f"b{i}" for i in range(1, 12)]
    shunt_b = {n: station_cap.get(n, 0.0) + cap_banks.get(n, 0.0) for n in nodes}
    branches = []
    for name, frm, to, z, chg in lines:
        branches.append({"id": name, "from": frm, "to": to,
                         "r_pu": z["r_pu"], "x_pu": z["x_pu"]})
        shunt_b[frm] += chg / 2.0
        shunt_b[to] += chg / 2.0
    for node, (p, q) in loads.items():
        z = 1.0 / complex(p, -q)
        branches.append({"id": f"load{node[1:]}", "from": node, "to": None,
                         "r_pu": z.real, "x_pu": z.imag})

    # ---- power flow: machines as P-V injections, bus 1 slack ----
    vset = {"b1": 1.03, "b2": 1.01, "b3": 1.03, "b4": 1.01}
    pset = {"b2": 7.0, "b3": 7.19, "b4": 7.0}
    pq_nodes = [n for n in nodes if n not in vset]

    ybus = np.zeros((11, 11), dtype=complex)
    idx = {n: i for i, n in enumerate(nodes)}
    for br in branches:
        y = 1.0 / complex(br["r_pu"], br["x_pu"])
        f = idx[br["from"]]
        ybus[f, f] += y
        if br["to"] is not None:
            t = idx[br["to"]]
            ybus[t, t] += y
            ybus[f, t] -= y
            ybus[t, f] -= y
    for n in nodes:
        ybus[idx[n], idx[n]] += 1j * shunt_b[n]

    def voltages(x):
        v = np.empty(11, dtype=complex)
        v[idx["b1"]] = vset["b1"]
        v[idx["b2"]] = vset["b2"] * cmath.exp(1j * x[0])
        v[idx["b3"]] = vset["b3"] * cmath.exp(1j * x[1])
        v[idx["b4"]] = vset["b4"] * cmath.exp(1j * x[2])
        for k, n in enumerate(pq_nodes):
            v[idx[n]] = complex(x[3 + 2 * k], x[4 + 2 * k])
        return v

    def mismatch(x):
        v = voltages(x)
        inet = ybus @ v          # net current that must be injected at each node
        out = np.empty(17)
        out[0] = (v[idx["b2"]] * np.conj(inet[idx["b2"]])).real - pset["b2"]
        out[1] = (v[idx["b3"]] * np.conj(inet[idx["b3"]])).real - pset["b3"]
        out[2] = (v[idx["b4"]] * np.conj(inet[idx["b4"]])).real - pset["b4"]
        for k, n in enumerate(pq_nodes):
            out[3 + 2 * k] = inet[idx[n]].real
            out[4 + 2 * k] = inet[idx[n]].imag
        return out

    x0 = np.zeros(17)
    x0[0:3] = (-0.15, -0.4, -0.55)
    for k, n in enumerate(pq_nodes):
        x0[3 + 2 * k] = 1.0
        x0[4 + 2 * k] = -0.2
    sol, info, ok, msg = scipy.optimize.fsolve(mismatch, x0, full_output=True,
                                               xtol=1e-14)
    res = np.max(np.abs(mismatch(sol)))
    if not ok or res > 1e-10:
        raise RuntimeError(f"power flow failed: {msg} (residual {res:.3e})")
    v = voltages(sol)
    inet = ybus @ v
    print(f"power flow converged, residual {res:.3e}")
    for n in nodes:
        print(f"  {n}: |V| = {abs(v[idx[n]]):.5f}  angle = {math.degrees(cmath.phase(v[idx[n]])):8.3f} deg")

    machines = []
    for gid, node, h_mach in gens:
        s = v[idx[node]] * np.conj(inet[idx[node]])
        print(f"  {gid}: P = {s.real:.4f}  Q = {s.imag:.4f}")
        machines.append({
            "id": gid, "node": node, "poles": 2,
            "params": dict(mp_sys) | {
                # inertia/damping absorb the 3P/4 power-expression factor
                "h": h_mach / MVA_RATIO * PE_FACTOR,
                "d": 2.0 / MVA_RATIO * PE_FACTOR,
            },
            "dispatch": {"p_pu": s.real, "q_pu": s.imag,
                         "v_mag": abs(v[idx[node]]),
                         "v_angle": cmath.phase(v[idx[node]])},
            "governor": {
                # 5 % droop on the machine base, in electrical-power units
                "r": 0.05 * MVA_RATIO / PE_FACTOR,
                "t1": 0.5, "t2": 2.5, "t3": 7.5, "dt_damp": 0.0,
                "vmax": 1.2 / MVA_RATIO * PE_FACTOR,
                "vmin": 0.0,
            },
            "exciter": {
                # SEXS K=100, TE=0.05, TA/TB=3/10, ceiling 5, in
                # machine-side field-voltage units (scale r_fd/x_ad)
                "ke": 100.0 * k_fd,
                "te": 0.05, "ta": 3.0, "tb": 10.0,
                "emax": 5.0 * k_fd, "emin": 0.0,
            },
        })

    cfg = {
        "name": "two_area",
        "description": (
            "Four-machine two-area interconnection after Kundur (Power System "
            "Stability and Control), 100 MVA / 60 Hz base, constant-impedance "
            "loads, shunt capacitance at every bus; operating point solved by "
            "the generator script.  Five-cycle three-phase fault at bus 7."),
        "frequency_hz": 60.0,
        "base_mva": 100.0,
        "solver_defaults": {"method": "dt", "order": 20, "step": 1e-4, "t_end": 3.0},
        "nodes": [{"id": n} for n in nodes],
        "shunts": [{"node": n, "b_pu": shunt_b[n]} for n in nodes],
        "branches": branches,
        "machines": machines,
        "operating_point": {"voltages": {
            n: {"mag": abs(v[idx[n]]), "angle": cmath.phase(v[idx[n]])}
            for n in nodes}},
        "events": [{"type": "three_phase_fault", "node": "b7", "time": 1.0,
                    "duration": 5.0 / 60.0, "r_fault": 1e-4, "x_fault": 3.3e-4}],
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(cfg, indent=1) + "\n")
    print(f"wrote {OUT}")
    return cfg


def stiffness_report():
    from dtemt.scenario import init_steady_state, parse_config
    from dtemt.solvers import _PackedEngine

    cfg = parse_config(OUT)
    init = init_steady_state(cfg)
    print(f"initialization residual: {init.residual:.3e}")
    eng = _PackedEngine(init.system)
    jac = eng.fd_jacobian(init.y0, init.system.new_flags())
    eig = np.linalg.eigvals(jac)
    print(f"eigenvalues: max |imag| = {np.abs(eig.imag).max():.4g} rad/s, "
          f"max real = {eig.real.max():.4g} 1/s, min real = {eig.real.min():.4g} 1/s")


if __name__ == "__main__":
    build()
    stiffness_report()
