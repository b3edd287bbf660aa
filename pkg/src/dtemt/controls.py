"""Turbine governor and exciter with windup limits.

The governor is a droop regulator followed by a lead-lag reheat stage:

    dp1/dt = (1/T1) * ((p_ref - dw) / R - p1),   Vmin <= p1 <= Vmax
    dp2/dt = (1/T3) * (T2 * dp1/dt + p1 - p2)
    p_m    = p2 - Dt * dw

with dw the per-unit speed deviation.  Note the droop gain 1/R acts on
the whole difference (p_ref - dw), so p_ref carries a factor R relative
to the dispatched mechanical power; initialization back-solves it.

The exciter is a lead-lag voltage regulator plus a first-order gain:

    v2     = v_ref - v_t
    dv3/dt = (1/TB) * (TA * dv2/dt + v2 - v3)
    de/dt  = (1/TE) * (KE * v3 - e_fd),          Emin <= e_fd <= Emax

Both limited states use windup clamps: when a state sits at a limit and
its unclamped derivative points outward, the state is frozen (all series
coefficients of order >= 1 are zero), and it releases as soon as the
unclamped derivative points back inside.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class Tgov1Params:
    r: float          # droop, p.u.
    t1: float
    t2: float
    t3: float
    dt_damp: float    # turbine damping on speed deviation
    vmax: float
    vmin: float
    p_ref: float = 0.0

    def __post_init__(self):
        if self.t1 <= 0.0 or self.t3 <= 0.0:
            raise ConfigError("governor time constants t1, t3 must be positive")
        if not self.vmin < self.vmax:
            raise ConfigError("governor limits require vmin < vmax")


@dataclass
class SexsParams:
    ke: float
    te: float
    ta: float
    tb: float
    emax: float
    emin: float
    v_ref: float = 0.0

    def __post_init__(self):
        if self.te <= 0.0 or self.tb <= 0.0:
            raise ConfigError("exciter time constants te, tb must be positive")
        if not self.emin < self.emax:
            raise ConfigError("exciter limits require emin < emax")


@dataclass
class ControlState:
    p1: float
    p2: float
    e_fd: float
    v3: float
    p1_at_limit: bool = False
    efd_at_limit: bool = False


def clamp_state(value: float, lo: float, hi: float, unclamped_deriv: float):
    """Windup-limit decision at an expansion point.

    Returns (clamped_value, at_limit).  A state at (or beyond) a limit is
    held there while the unclamped derivative points outward and released
    otherwise.
    """
    if value >= hi and unclamped_deriv > 0.0:
        return hi, True
    if value <= lo and unclamped_deriv < 0.0:
        return lo, True
    return min(max(value, lo), hi), False


def tgov1_derivatives(state: ControlState, params: Tgov1Params, dw_pu: float):
    """(dp1, dp2, p_m) with the clamp applied to dp1."""
    dp1 = ((params.p_ref - dw_pu) / params.r - state.p1) / params.t1
    if state.p1_at_limit:
        dp1 = 0.0
    dp2 = (params.t2 * dp1 + state.p1 - state.p2) / params.t3
    p_m = state.p2 - params.dt_damp * dw_pu
    return dp1, dp2, p_m


def tgov1_unclamped_dp1(p1: float, params: Tgov1Params, dw_pu: float) -> float:
    return ((params.p_ref - dw_pu) / params.r - p1) / params.t1


def sexs_derivatives(state: ControlState, params: SexsParams,
                     v_t: float, dv_t: float = 0.0):
    """(de_fd, dv3) with the clamp applied to de_fd.

    `dv_t` is the time derivative of the terminal-voltage magnitude,
    needed by the lead-lag derivative feedthrough; it is an algebraic
    function of the machine/network states and is supplied by the caller.
    """
    de = (params.ke * state.v3 - state.e_fd) / params.te
    if state.efd_at_limit:
        de = 0.0
    v2 = params.v_ref - v_t
    dv2 = -dv_t
    dv3 = (params.ta * dv2 + v2 - state.v3) / params.tb
    return de, dv3


def sexs_unclamped_defd(e_fd: float, v3: float, params: SexsParams) -> float:
    return (params.ke * v3 - e_fd) / params.te


# ---------------------------------------------------------------------------
# order-by-order recursion on a machine series bundle
# ---------------------------------------------------------------------------

def fill_controls_state_order(b, gov: Tgov1Params, exc: SexsParams,
                              omega0: float, j: int):
    """Fill order j of the governor/exciter integrator states p1 and e_fd.

    Clamped states keep all coefficients of order >= 1 at zero, which
    makes the evaluated series exactly constant over the step.
    """
    k = j - 1
    if b.p1_clamped:
        b.p1[j] = 0.0
    else:
        pref_k = gov.p_ref if k == 0 else 0.0
        b.p1[j] = ((pref_k - b.dw[k] / omega0) / gov.r - b.p1[k]) / gov.t1 / j
    if b.efd_clamped:
        b.efd[j] = 0.0
    else:
        b.efd[j] = (exc.ke * b.v3[k] - b.efd[k]) / exc.te / j


def fill_controls_algebraic_order(b, gov: Tgov1Params, exc: SexsParams,
                                  omega0: float, j: int):
    """Fill order j of p2, p_m, v2 and v3.

    These need same-order inputs (p1, dw and v_t at order j), so they run
    after the machine algebraic chain of the same order.
    """
    if j == 0:
        b.p_m[0] = b.p2[0] - gov.dt_damp * b.dw[0] / omega0
        b.v2[0] = exc.v_ref - b.v_t[0]
        return
    k = j - 1
    b.p2[j] = (j * gov.t2 * b.p1[j] + b.p1[k] - b.p2[k]) / gov.t3 / j
    b.p_m[j] = b.p2[j] - gov.dt_damp * b.dw[j] / omega0
    b.v2[j] = -b.v_t[j]
    b.v3[j] = (j * exc.ta * b.v2[j] + b.v2[k] - b.v3[k]) / exc.tb / j
