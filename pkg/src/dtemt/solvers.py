"""Integrators, the multi-stage stepping protocol, and benchmark metrics.

Four methods integrate the assembled system on a fixed global time grid:

* ``dt``      — per step, build every state's Taylor-coefficient series
                order by order to the configured truncation K and evaluate
                the truncated series at the step size;
* ``rk4``     — classical 4th-order Runge-Kutta;
* ``me``      — modified Euler (Heun predictor-corrector);
* ``trap``    — implicit trapezoidal rule, chord-Newton with a
                finite-difference Jacobian.

Switching events split the step containing them exactly at the event
time; series expansion restarts there.  Windup-limited control states
are re-examined at every expansion point, and a limit crossing inside a
DT step rejects the step and re-integrates semi-analytically up to the
crossing.

The scalar/generic step helpers at the bottom expose the same update
formulas on arbitrary user ODEs; the toy-problem tests drive those.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import kernels
from .errors import NoAdmissibleStepError, SimulationError
from .network import NetworkEvent, apply_event
from .system import AssembledSystem

METHODS = ("dt", "rk4", "me", "trap")
_GRID_EPS_FRAC = 1e-9


@dataclass
class SolverConfig:
    method: str
    step: float
    t_end: float
    order: int = 20
    newton_tol: float = 1e-10
    newton_max_iter: int = 20

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.method == "dt" and self.order < 1:
            raise ValueError("truncation order must be >= 1")
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be positive")


@dataclass
class RunResult:
    times: np.ndarray
    states: np.ndarray
    state_names: list[str]
    wall_time: float
    steps_taken: int
    method: str

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.state_names.index(name)]

    def validate(self):
        if np.any(np.diff(self.times) <= 0.0):
            raise SimulationError(float(self.times[-1]), "times",
                                  "recorded times not strictly increasing")
        if not np.all(np.isfinite(self.states)):
            bad = np.argwhere(~np.isfinite(self.states))[0]
            raise SimulationError(float(self.times[bad[0]]),
                                  self.state_names[bad[1]],
                                  "non-finite state recorded")


class _PackedEngine:
    """Packed parameter arrays plus reusable scratch for one network model."""

    def __init__(self, system: AssembledSystem, order: int = 1):
        self.system = system
        self.params = kernels.pack_params(system)
        n = system.n_states
        self.n = n
        self.scratch = np.empty((5, n))
        self.wrk = np.empty((system.n_n + 3, 3))
        self.order = order
        self.yc = np.zeros((n, order + 1))
        self.alg = np.zeros((system.n_m, kernels.N_ALG, order + 1))
        self.sin3 = np.zeros((system.n_m, 3, order + 1))
        self.cos3 = np.zeros((system.n_m, 3, order + 1))
        self.inj = np.zeros((system.n_n, 3, order + 1))
        self._out = np.empty(n)

    @property
    def gov(self):
        return self.params[5]

    @property
    def exc(self):
        return self.params[6]

    def rhs(self, y, flags, t=0.0):
        status = kernels.rhs_kernel(y, flags, *self.params, self._out, self.wrk)
        if status != kernels.STATUS_OK:
            raise SimulationError(t, "v_t", "terminal voltage magnitude collapsed")
        return self._out.copy()

    def fill_series(self, y, flags, t=0.0):
        status = kernels.dt_fill_kernel(y, flags, *self.params, self.order,
                                        self.yc, self.alg, self.sin3,
                                        self.cos3, self.inj)
        if status == kernels.STATUS_SINGULAR_VT:
            raise SimulationError(t, "v_t", "terminal voltage magnitude collapsed")

    def fd_jacobian(self, y, flags):
        n = self.n
        jac = np.empty((n, n))
        f0 = self.rhs(y, flags)
        yp = y.copy()
        for i in range(n):
            delta = 1e-7 * max(1.0, abs(y[i]))
            yp[i] = y[i] + delta
            jac[:, i] = (self.rhs(yp, flags) - f0) / delta
            yp[i] = y[i]
        return jac


def _remap_state(old_sys: AssembledSystem, new_sys: AssembledSystem,
                 y_old: np.ndarray) -> np.ndarray:
    """Carry shared states across a topology change; new states start at 0."""
    old_idx = {nm: i for i, nm in enumerate(old_sys.state_names())}
    y_new = np.zeros(new_sys.n_states)
    for i, nm in enumerate(new_sys.state_names()):
        if nm in old_idx:
            y_new[i] = y_old[old_idx[nm]]
    return y_new


def simulate(system: AssembledSystem, y0: np.ndarray, config: SolverConfig,
             events: tuple[NetworkEvent, ...] = (), record_stride: int = 1,
             t0: float = 0.0) -> RunResult:
    """Fixed-step march of the assembled system, recording state rows.

    Events are applied exactly at their times (steps are split as
    needed).  The recorded state set is the pre-event system's, so runs
    with and without topology events are directly comparable.
    """
    h = config.step
    t_end = config.t_end
    eps = _GRID_EPS_FRAC * h
    base_names = system.state_names()
    ev_sorted = sorted((e for e in events if t0 - eps < e.time < t_end - eps),
                       key=lambda e: e.time)
    for e in ev_sorted:
        if e.time < t0 - eps:
            raise SimulationError(e.time, e.node, "event before run start")

    cur_sys = system
    # apply any events scheduled exactly at the start
    pending = []
    for e in ev_sorted:
        if abs(e.time - t0) <= eps:
            cur_sys = cur_sys.with_model(apply_event(cur_sys.model, e))
        else:
            pending.append(e)

    y = _remap_state(system, cur_sys, np.asarray(y0, dtype=float))
    flags = system.new_flags()
    engine = _PackedEngine(cur_sys, config.order if config.method == "dt" else 1)
    _warmup(engine, y, flags)

    breakpoints = [(e.time, e) for e in pending] + [(t_end, None)]
    sel = _selection(cur_sys, base_names)

    rec_times = [t0]
    rec_blocks = [y[sel].copy()[None, :]]
    steps_taken = 0
    gi = 0  # completed global grid steps
    tc = t0

    t_wall = time.perf_counter()
    try:
        for tb, event in breakpoints:
            if tb > tc + eps:
                if config.method in ("rk4", "me"):
                    gi, tc, steps_taken = _march_explicit(
                        engine, y, flags, config, t0, tc, tb, gi, record_stride,
                        sel, rec_times, rec_blocks, steps_taken, eps)
                else:
                    gi, tc, steps_taken = _march_python(
                        engine, y, flags, config, t0, tc, tb, gi, record_stride,
                        sel, rec_times, rec_blocks, steps_taken, eps)
            if event is not None:
                new_sys = cur_sys.with_model(apply_event(cur_sys.model, event))
                y = _remap_state(cur_sys, new_sys, y)
                cur_sys = new_sys
                engine = _PackedEngine(cur_sys,
                                       config.order if config.method == "dt" else 1)
                sel = _selection(cur_sys, base_names)
    finally:
        wall = time.perf_counter() - t_wall

    times = np.array(rec_times)
    states = np.vstack(rec_blocks)
    result = RunResult(times, states, base_names, wall, steps_taken, config.method)
    result.validate()
    return result


def _selection(sys: AssembledSystem, base_names: list[str]) -> np.ndarray:
    idx = {nm: i for i, nm in enumerate(sys.state_names())}
    return np.array([idx[nm] for nm in base_names], dtype=np.intp)


def _warmup(engine: _PackedEngine, y, flags):
    """Trigger kernel compilation outside the timed region."""
    engine.rhs(y.copy(), flags)
    engine.fill_series(y.copy(), flags)


def _plan(t0, h, tc, tb, eps):
    """(h_head, n_body, h_tail, gi_after_head) splitting [tc, tb] on the grid."""
    gi_now = int(math.floor((tc - t0) / h + 0.5))
    on_grid = abs(t0 + gi_now * h - tc) <= eps
    if not on_grid:
        gi_now = int(math.floor((tc - t0) / h + eps))
        t_next = t0 + (gi_now + 1) * h
        h_head = min(t_next, tb) - tc
        if t_next > tb + eps:
            return h_head, 0, 0.0, gi_now  # whole interval inside one grid cell
        gi_now += 1
        tc = t_next
    else:
        h_head = 0.0
    gi_last = int(math.floor((tb - t0) / h + eps))
    n_body = max(0, gi_last - gi_now)
    t_after = t0 + (gi_now + n_body) * h
    h_tail = tb - t_after
    if h_tail <= eps:
        h_tail = 0.0
    return h_head, n_body, h_tail, gi_now


def _march_explicit(engine, y, flags, config, t0, tc, tb, gi, stride,
                    sel, rec_times, rec_blocks, steps_taken, eps):
    use_rk4 = config.method == "rk4"
    h = config.step
    h_head, n_body, h_tail, gi_new = _plan(t0, h, tc, tb, eps)

    def run(n_steps, step_h, t_start, gstart, align):
        nonlocal steps_taken
        cap = n_steps // max(1, stride) + 2
        rt = np.empty(cap)
        rv = np.empty((cap, engine.n))
        status, n_rec = kernels.run_explicit_segment(
            y, flags, *engine.params, t_start, step_h, n_steps, use_rk4,
            rt, rv, stride if align else 1 << 62, gstart, engine.scratch,
            engine.wrk)
        if status != kernels.STATUS_OK:
            raise SimulationError(t_start, "system",
                                  "terminal voltage collapse or non-finite state")
        steps_taken += n_steps
        for r in range(n_rec):
            _record(rec_times, rec_blocks, rt[r], rv[r][sel], eps)

    if h_head > eps:
        run(1, h_head, tc, 0, align=False)
        tc = tc + h_head
        if n_body == 0 and h_tail == 0.0 and abs(tc - tb) <= eps:
            return gi_new, tb, steps_taken
        gi = gi_new
        tc = t0 + gi * h
    else:
        gi = gi_new
    if n_body > 0:
        run(n_body, h, tc, gi, align=True)
        gi += n_body
        tc = t0 + gi * h
    if h_tail > 0.0:
        run(1, h_tail, tc, 0, align=False)
        tc = tb
    return gi, tc, steps_taken


def _march_python(engine, y, flags, config, t0, tc, tb, gi, stride,
                  sel, rec_times, rec_blocks, steps_taken, eps):
    """Grid march with per-step python control flow (dt and trap)."""
    h = config.step
    while tc < tb - eps:
        t_grid = t0 + (gi + 1) * h
        if t_grid < tb - eps:
            t_next, is_grid = t_grid, True
        elif t_grid <= tb + eps:
            t_next, is_grid = tb, True
        else:
            t_next, is_grid = tb, False
        h_step = t_next - tc
        if config.method == "dt":
            steps_taken += _dt_step_inplace(engine, y, flags, h_step, tc)
        else:
            steps_taken += _trap_step_inplace(engine, y, flags, h_step, tc, config)
        tc = t_next
        if is_grid:
            gi += 1
        if (is_grid and gi % stride == 0) or abs(t_next - tb) <= eps:
            _record(rec_times, rec_blocks, t_next, y[sel].copy(), eps)
    return gi, tc, steps_taken


def _record(rec_times, rec_blocks, t, row, eps):
    if rec_times and abs(t - rec_times[-1]) <= eps:
        return
    rec_times.append(float(t))
    rec_blocks.append(np.asarray(row)[None, :].copy())


def _dt_step_inplace(engine: _PackedEngine, y, flags, h_step, t_now) -> int:
    """One grid step of the series method, splitting at limiter crossings."""
    remaining = h_step
    substeps = 0
    for _ in range(64):
        kernels.clamp_update_kernel(y, flags, engine.params[0],
                                    engine.gov, engine.exc)
        engine.fill_series(y, flags, t_now)
        t_cross = kernels.scan_limit_crossing(engine.yc, flags, engine.gov,
                                              engine.exc, remaining)
        target = min(t_cross, remaining)
        kernels.eval_states_kernel(engine.yc, target, y)
        substeps += 1
        if not np.all(np.isfinite(y)):
            bad = int(np.argwhere(~np.isfinite(y))[0][0])
            raise SimulationError(t_now, engine.system.state_names()[bad],
                                  "non-finite state after series evaluation")
        t_now += target
        remaining -= target
        if remaining <= 1e-12 * h_step:
            return substeps
    raise SimulationError(t_now, "limiter",
                          "too many limiter crossings within one step")


def _trap_step_inplace(engine: _PackedEngine, y, flags, h_step, t_now,
                       config: SolverConfig) -> int:
    kernels.clamp_update_kernel(y, flags, engine.params[0],
                                engine.gov, engine.exc)
    f0 = engine.rhs(y, flags, t_now)
    jac = engine.fd_jacobian(y, flags)
    a = np.eye(engine.n) - 0.5 * h_step * jac
    lu = scipy.linalg.lu_factor(a)
    x = y + h_step * f0
    refreshed = False
    for it in range(config.newton_max_iter):
        fx = engine.rhs(x, flags, t_now)
        r = x - y - 0.5 * h_step * (f0 + fx)
        if np.max(np.abs(r)) < config.newton_tol:
            y[:] = x
            return 1
        x -= scipy.linalg.lu_solve(lu, r)
        if not refreshed and it + 1 >= config.newton_max_iter // 2:
            jac = engine.fd_jacobian(x, flags)
            a = np.eye(engine.n) - 0.5 * h_step * jac
            lu = scipy.linalg.lu_factor(a)
            refreshed = True
    raise SimulationError(t_now, "newton",
                          f"trapezoidal Newton stalled after {config.newton_max_iter} iterations")


# ---------------------------------------------------------------------------
# error metric and admissible-step search
# ---------------------------------------------------------------------------

def interpolate_onto(benchmark: RunResult, times: np.ndarray,
                     names: list[str]) -> np.ndarray:
    """Linearly interpolate benchmark columns onto the given timestamps."""
    col = {nm: i for i, nm in enumerate(benchmark.state_names)}
    missing = [nm for nm in names if nm not in col]
    if missing:
        raise ValueError(f"benchmark lacks states: {missing[:5]}")
    bt = benchmark.times
    if times[0] < bt[0] - 1e-9 or times[-1] > bt[-1] + 1e-9:
        raise ValueError(
            f"benchmark span [{bt[0]:.6g}, {bt[-1]:.6g}] does not cover "
            f"result span [{times[0]:.6g}, {times[-1]:.6g}]")
    sel = np.array([col[nm] for nm in names], dtype=np.intp)
    idx = np.clip(np.searchsorted(bt, times), 1, len(bt) - 1)
    t_lo = bt[idx - 1]
    w = np.clip((times - t_lo) / (bt[idx] - t_lo), 0.0, 1.0)
    lo = benchmark.states[np.ix_(idx - 1, sel)]
    hi = benchmark.states[np.ix_(idx, sel)]
    return lo + w[:, None] * (hi - lo)


def max_abs_error(result: RunResult, benchmark: RunResult,
                  t_min: float | None = None) -> float:
    """Max over all states and result timestamps of |result - benchmark|."""
    return compare_runs(result, benchmark, t_min)["max_abs_error"]


def compare_runs(result: RunResult, benchmark: RunResult,
                 t_min: float | None = None) -> dict:
    """Error report of a run against a benchmark run.

    Returns max_abs_error plus the per-state worst deviation and the
    timestamp where the overall worst deviation occurs.
    """
    mask = slice(None) if t_min is None else result.times >= t_min
    times = result.times[mask]
    states = result.states[mask]
    ref = interpolate_onto(benchmark, times, result.state_names)
    diff = np.abs(states - ref)
    per_state = diff.max(axis=0)
    worst_flat = np.unravel_index(np.argmax(diff), diff.shape)
    return {
        "max_abs_error": float(diff.max()) if diff.size else 0.0,
        "per_state": dict(zip(result.state_names, per_state.tolist())),
        "worst_state": result.state_names[worst_flat[1]],
        "worst_time": float(times[worst_flat[0]]),
    }


def admissible_step_search(error_fn, tolerance: float,
                           h_lo: float = 2e-6, h_hi: float = 1e-3,
                           resolution: float = 2e-6) -> float:
    """Largest step in [h_lo, h_hi] with error_fn(h) <= tolerance.

    error_fn failures (simulation blow-up) count as infinite error.
    Assumes error grows with the step, which holds for these fixed-step
    methods away from pathological resonances; bisection resolves the
    boundary to `resolution`.
    """
    cache: dict[float, float] = {}

    def err(h):
        h = round(h / resolution) * resolution
        if h not in cache:
            try:
                cache[h] = error_fn(h)
            except (SimulationError, FloatingPointError, ValueError):
                cache[h] = math.inf
        return cache[h]

    if err(h_hi) <= tolerance:
        return h_hi
    if err(h_lo) > tolerance:
        raise NoAdmissibleStepError(
            f"no step in [{h_lo:.3g}, {h_hi:.3g}] meets tolerance {tolerance:.3g}")
    lo, hi = h_lo, h_hi
    while hi - lo > resolution * 1.5:
        mid = round((lo + hi) / 2.0 / resolution) * resolution
        if mid <= lo or mid >= hi:
            break
        if err(mid) <= tolerance:
            lo = mid
        else:
            hi = mid
    return round(lo / resolution) * resolution


# ---------------------------------------------------------------------------
# generic single-step helpers (arbitrary ODEs; used by the toy-problem tests)
# ---------------------------------------------------------------------------

def rk4_step(f, t, y, h):
    """Classical 4th-order Runge-Kutta update for dy/dt = f(t, y)."""
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(f(t, y))
    k2 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k1))
    k3 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k2))
    k4 = np.asarray(f(t + h, y + h * k3))
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def modified_euler_step(f, t, y, h):
    """Heun predictor-corrector update."""
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(f(t, y))
    k2 = np.asarray(f(t + h, y + h * k1))
    return y + 0.5 * h * (k1 + k2)


def trapezoidal_step(f, t, y, h, newton_tol=1e-12, newton_max_iter=30):
    """Implicit trapezoidal update solved by chord Newton.

    The Jacobian is forward finite differences about the step start and
    is reused across iterations; it is refreshed once if convergence is
    slow.  Raises SimulationError on non-convergence.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.shape[0]
    f0 = np.atleast_1d(np.asarray(f(t, y), dtype=float))

    def fd_jac(y_at):
        jac = np.empty((n, n))
        fy = np.atleast_1d(np.asarray(f(t, y_at), dtype=float))
        for i in range(n):
            delta = 1e-7 * max(1.0, abs(y_at[i]))
            yp = y_at.copy()
            yp[i] += delta
            jac[:, i] = (np.atleast_1d(np.asarray(f(t, yp), dtype=float)) - fy) / delta
        return jac

    a = np.eye(n) - 0.5 * h * fd_jac(y)
    lu = scipy.linalg.lu_factor(a)
    x = y + h * f0
    refreshed = False
    for it in range(newton_max_iter):
        fx = np.atleast_1d(np.asarray(f(t + h, x), dtype=float))
        r = x - y - 0.5 * h * (f0 + fx)
        if np.max(np.abs(r)) < newton_tol:
            return x if x.shape != (1,) else x
        x -= scipy.linalg.lu_solve(lu, r)
        if not refreshed and it + 1 >= newton_max_iter // 2:
            a = np.eye(n) - 0.5 * h * fd_jac(x)
            lu = scipy.linalg.lu_factor(a)
            refreshed = True
    raise SimulationError(t, "newton", "trapezoidal Newton did not converge")


def dt_step(y0, fill_order_fn, K, h):
    """Generic one-step series integration.

    `fill_order_fn(C, j)` must write order-j coefficients C[:, j] of every
    state given orders < j; order 0 is seeded with y0.  Returns the state
    at t + h and the coefficient array.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    coeffs = np.zeros((y0.shape[0], K + 1))
    coeffs[:, 0] = y0
    for j in range(1, K + 1):
        fill_order_fn(coeffs, j)
    out = np.empty(y0.shape[0])
    kernels.eval_states_kernel(coeffs, h, out)
    return out, coeffs
