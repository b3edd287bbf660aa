"""Compiled hot-path kernels over packed parameter arrays.

The readable reference implementation lives in `system`/`machine`/
`controls`/`network`; these kernels compute the same right-hand side and
the same coefficient recursion on flat arrays so the per-step cost stays
in compiled code.  `pack_params` flattens an AssembledSystem into the
tuple of arrays every kernel takes.  Tests pin kernel outputs against the
reference path to rounding.

State layout (see `system`): 14 states per machine, then 3 per branch,
then 3 per node.  Clamp flags are (n_m, 2) ints: column 0 the governor
valve state p1, column 1 the field voltage, values -1/0/+1 for clamped
at the lower limit / free / clamped at the upper limit.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .series import EPS_SQRT, conv_at, sincos_order, sqrt_sumsq_order

NM = 14                      # states per machine
SHIFT_B = -2.0 * math.pi / 3.0
SHIFT_C = 2.0 * math.pi / 3.0

# machine scalar columns
MS_H, MS_D, MS_PF, MS_RFD, MS_LFDL, MS_R1D, MS_L1DL, MS_R1Q, MS_L1QL, \
    MS_R2Q, MS_L2QL, MS_LADPP, MS_LAQPP = range(13)
# governor columns
GV_R, GV_T1, GV_T2, GV_T3, GV_DT, GV_VMAX, GV_VMIN, GV_PREF = range(8)
# exciter columns
EX_KE, EX_TE, EX_TA, EX_TB, EX_EMAX, EX_EMIN, EX_VREF = range(7)
# algebraic series columns
A_ID, A_IQ, A_LAD, A_LAQ, A_LPPD, A_LPPQ, A_VPPD, A_VPPQ, A_WR, \
    A_VD, A_VQ, A_VT, A_U, A_TQ, A_PE, A_PM, A_V2 = range(17)
N_ALG = 17

STATUS_OK = 0
STATUS_SINGULAR_VT = 1
STATUS_NONFINITE = 2


def pack_params(system):
    """Flatten an AssembledSystem into kernel-ready arrays."""
    n_m = system.n_m
    msc = np.empty((n_m, 13))
    rs = np.empty((n_m, 3, 3))
    linv = np.empty((n_m, 3, 3))
    mnode = np.empty(n_m, dtype=np.int64)
    gov = np.empty((n_m, 8))
    exc = np.empty((n_m, 7))
    for m, u in enumerate(system.machines):
        p = u.params
        msc[m] = (p.h, p.d, p.power_factor, p.r_fd, p.l_fdl, p.r_1d, p.l_1dl,
                  p.r_1q, p.l_1ql, p.r_2q, p.l_2ql, p.l_ad_pp, p.l_aq_pp)
        rs[m] = p.r_s
        linv[m] = p.l_abc_pp_inv
        mnode[m] = system.model.node_index[u.node]
        g = u.gov
        gov[m] = (g.r, g.t1, g.t2, g.t3, g.dt_damp, g.vmax, g.vmin, g.p_ref)
        e = u.exc
        exc[m] = (e.ke, e.te, e.ta, e.tb, e.emax, e.emin, e.v_ref)
    model = system.model
    n_b = model.n_branches
    bfrom = np.empty(n_b, dtype=np.int64)
    bto = np.empty(n_b, dtype=np.int64)
    rb = np.empty((n_b, 3, 3))
    lbinv = np.empty((n_b, 3, 3))
    for b, br in enumerate(model.branches):
        bfrom[b] = model.node_index[br.from_node]
        bto[b] = -1 if br.to_node is None else model.node_index[br.to_node]
        rb[b] = br.r
        lbinv[b] = model.l_inv[b]
    cinv = np.empty((model.n_nodes, 3, 3))
    for n in range(model.n_nodes):
        cinv[n] = model.c_inv[n]
    gfault = np.zeros(model.n_nodes)
    for node, r in model.faults.items():
        gfault[model.node_index[node]] = 1.0 / r
    return (system.omega0, msc, rs, linv, mnode, gov, exc,
            bfrom, bto, rb, lbinv, cinv, gfault)


@njit(cache=True)
def _matvec3(m, x0, x1, x2, out):
    out[0] = m[0, 0] * x0 + m[0, 1] * x1 + m[0, 2] * x2
    out[1] = m[1, 0] * x0 + m[1, 1] * x1 + m[1, 2] * x2
    out[2] = m[2, 0] * x0 + m[2, 1] * x1 + m[2, 2] * x2


@njit(cache=True)
def rhs_kernel(y, flags, omega0, msc, rs, linv, mnode, gov, exc,
               bfrom, bto, rb, lbinv, cinv, gfault, out, wrk):
    """Full-system derivative into `out`; returns a status code.

    `wrk` is an (n_nodes + 3, 3) scratch buffer (no allocation in here;
    this sits inside the benchmark hot loop).
    """
    n_m = msc.shape[0]
    n_b = bfrom.shape[0]
    n_n = cinv.shape[0]
    ob = NM * n_m
    on = ob + 3 * n_b

    # node current balance: machine injections minus/plus branch flows
    i_node = wrk[:n_n]
    i_node[:, :] = 0.0
    for m in range(n_m):
        o = NM * m
        nd = mnode[m]
        for p in range(3):
            i_node[nd, p] += y[o + 6 + p]

    tmp = wrk[n_n]
    for b in range(n_b):
        fo = on + 3 * bfrom[b]
        i0 = y[ob + 3 * b]
        i1 = y[ob + 3 * b + 1]
        i2 = y[ob + 3 * b + 2]
        _matvec3(rb[b], i0, i1, i2, tmp)
        v0 = y[fo] - tmp[0]
        v1 = y[fo + 1] - tmp[1]
        v2 = y[fo + 2] - tmp[2]
        if bto[b] >= 0:
            to = on + 3 * bto[b]
            v0 -= y[to]
            v1 -= y[to + 1]
            v2 -= y[to + 2]
        _matvec3(lbinv[b], v0, v1, v2, tmp)
        out[ob + 3 * b] = tmp[0]
        out[ob + 3 * b + 1] = tmp[1]
        out[ob + 3 * b + 2] = tmp[2]
        i_node[bfrom[b], 0] -= i0
        i_node[bfrom[b], 1] -= i1
        i_node[bfrom[b], 2] -= i2
        if bto[b] >= 0:
            i_node[bto[b], 0] += i0
            i_node[bto[b], 1] += i1
            i_node[bto[b], 2] += i2

    for n in range(n_n):
        g = gfault[n]
        if g != 0.0:
            for p in range(3):
                i_node[n, p] -= g * y[on + 3 * n + p]
        _matvec3(cinv[n], i_node[n, 0], i_node[n, 1], i_node[n, 2], tmp)
        out[on + 3 * n] = tmp[0]
        out[on + 3 * n + 1] = tmp[1]
        out[on + 3 * n + 2] = tmp[2]

    eabc = wrk[n_n + 1]
    stat = wrk[n_n + 2]
    for m in range(n_m):
        o = NM * m
        dw = y[o + 1]
        lfd = y[o + 2]
        l1d = y[o + 3]
        l1q = y[o + 4]
        l2q = y[o + 5]
        ia = y[o + 6]
        ib = y[o + 7]
        ic = y[o + 8]
        theta = y[o + 9]
        p1 = y[o + 10]
        p2 = y[o + 11]
        efd = y[o + 12]
        v3 = y[o + 13]
        nd = mnode[m]
        va = y[on + 3 * nd]
        vb = y[on + 3 * nd + 1]
        vc = y[on + 3 * nd + 2]

        ca = math.cos(theta)
        sa = math.sin(theta)
        cb_ = math.cos(theta + SHIFT_B)
        sb_ = math.sin(theta + SHIFT_B)
        cc_ = math.cos(theta + SHIFT_C)
        sc_ = math.sin(theta + SHIFT_C)

        i_d = 2.0 / 3.0 * (ca * ia + cb_ * ib + cc_ * ic)
        i_q = -2.0 / 3.0 * (sa * ia + sb_ * ib + sc_ * ic)
        v_d = 2.0 / 3.0 * (ca * va + cb_ * vb + cc_ * vc)
        v_q = -2.0 / 3.0 * (sa * va + sb_ * vb + sc_ * vc)

        ladpp = msc[m, MS_LADPP]
        laqpp = msc[m, MS_LAQPP]
        lfdl = msc[m, MS_LFDL]
        l1dl = msc[m, MS_L1DL]
        l1ql = msc[m, MS_L1QL]
        l2ql = msc[m, MS_L2QL]
        rfd = msc[m, MS_RFD]
        r1d = msc[m, MS_R1D]
        r1q = msc[m, MS_R1Q]
        r2q = msc[m, MS_R2Q]

        lam_ad = ladpp * (-i_d + lfd / lfdl + l1d / l1dl)
        lam_aq = laqpp * (-i_q + l1q / l1ql + l2q / l2ql)
        lpp_d = ladpp * (lfd / lfdl + l1d / l1dl)
        lpp_q = laqpp * (l1q / l1ql + l2q / l2ql)
        wr = omega0 + dw

        vppd = (ladpp * (rfd / lfdl ** 2 * (lam_ad - lfd)
                         + r1d / l1dl ** 2 * (lam_ad - l1d))
                + ladpp / lfdl * efd - wr * lpp_q)
        vppq = (laqpp * (r1q / l1ql ** 2 * (lam_aq - l1q)
                         + r2q / l2ql ** 2 * (lam_aq - l2q))
                + wr * lpp_d)

        v_t = math.sqrt(v_d * v_d + v_q * v_q)
        if v_t < EPS_SQRT:
            return STATUS_SINGULAR_VT
        p_e = msc[m, MS_PF] * wr * (lam_ad * i_q - lam_aq * i_d)

        dw_pu = dw / omega0
        if flags[m, 0] != 0:
            dp1 = 0.0
        else:
            dp1 = ((gov[m, GV_PREF] - dw_pu) / gov[m, GV_R] - p1) / gov[m, GV_T1]
        dp2 = (gov[m, GV_T2] * dp1 + p1 - p2) / gov[m, GV_T3]
        p_m = p2 - gov[m, GV_DT] * dw_pu

        # d(v_t)/dt through the rotating transform and node derivative
        dva = out[on + 3 * nd]
        dvb = out[on + 3 * nd + 1]
        dvc = out[on + 3 * nd + 2]
        dvd = wr * v_q + 2.0 / 3.0 * (ca * dva + cb_ * dvb + cc_ * dvc)
        dvq = -wr * v_d - 2.0 / 3.0 * (sa * dva + sb_ * dvb + sc_ * dvc)
        dv_t = (v_d * dvd + v_q * dvq) / v_t

        if flags[m, 1] != 0:
            de = 0.0
        else:
            de = (exc[m, EX_KE] * v3 - efd) / exc[m, EX_TE]
        dv3 = (exc[m, EX_TA] * (-dv_t) + (exc[m, EX_VREF] - v_t) - v3) / exc[m, EX_TB]

        eabc[0] = ca * vppd - sa * vppq
        eabc[1] = cb_ * vppd - sb_ * vppq
        eabc[2] = cc_ * vppd - sc_ * vppq
        _matvec3(rs[m], ia, ib, ic, stat)
        r0 = va + stat[0] - eabc[0]
        r1 = vb + stat[1] - eabc[1]
        r2 = vc + stat[2] - eabc[2]
        _matvec3(linv[m], r0, r1, r2, stat)

        out[o] = dw
        out[o + 1] = omega0 / (2.0 * msc[m, MS_H]) * (p_m - p_e - msc[m, MS_D] * dw_pu)
        out[o + 2] = efd - rfd / lfdl * (lfd - lam_ad)
        out[o + 3] = -r1d / l1dl * (l1d - lam_ad)
        out[o + 4] = -r1q / l1ql * (l1q - lam_aq)
        out[o + 5] = -r2q / l2ql * (l2q - lam_aq)
        out[o + 6] = -stat[0]
        out[o + 7] = -stat[1]
        out[o + 8] = -stat[2]
        out[o + 9] = wr
        out[o + 10] = dp1
        out[o + 11] = dp2
        out[o + 12] = de
        out[o + 13] = dv3
    return STATUS_OK


@njit(cache=True)
def clamp_update_kernel(y, flags, omega0, gov, exc):
    """Expansion-point windup-limit update (projection + flag decision)."""
    n_m = gov.shape[0]
    for m in range(n_m):
        o = NM * m
        dw_pu = y[o + 1] / omega0

        p1 = y[o + 10]
        if p1 > gov[m, GV_VMAX]:
            p1 = gov[m, GV_VMAX]
        elif p1 < gov[m, GV_VMIN]:
            p1 = gov[m, GV_VMIN]
        d1 = ((gov[m, GV_PREF] - dw_pu) / gov[m, GV_R] - p1) / gov[m, GV_T1]
        if p1 >= gov[m, GV_VMAX] and d1 > 0.0:
            flags[m, 0] = 1
            p1 = gov[m, GV_VMAX]
        elif p1 <= gov[m, GV_VMIN] and d1 < 0.0:
            flags[m, 0] = -1
            p1 = gov[m, GV_VMIN]
        else:
            flags[m, 0] = 0
        y[o + 10] = p1

        efd = y[o + 12]
        if efd > exc[m, EX_EMAX]:
            efd = exc[m, EX_EMAX]
        elif efd < exc[m, EX_EMIN]:
            efd = exc[m, EX_EMIN]
        de = (exc[m, EX_KE] * y[o + 13] - efd) / exc[m, EX_TE]
        if efd >= exc[m, EX_EMAX] and de > 0.0:
            flags[m, 1] = 1
            efd = exc[m, EX_EMAX]
        elif efd <= exc[m, EX_EMIN] and de < 0.0:
            flags[m, 1] = -1
            efd = exc[m, EX_EMIN]
        else:
            flags[m, 1] = 0
        y[o + 12] = efd


@njit(cache=True)
def dt_fill_kernel(y, flags, omega0, msc, rs, linv, mnode, gov, exc,
                   bfrom, bto, rb, lbinv, cinv, gfault, K, YC, ALG, SIN3, COS3, INJ):
    """Fill every state/algebraic coefficient series to order K.

    YC: (n_states, K+1); ALG: (n_m, N_ALG, K+1); SIN3/COS3: (n_m, 3, K+1);
    INJ: (n_n, 3, K+1) scratch for machine-injection series.
    Returns a status code.
    """
    n_m = msc.shape[0]
    n_b = bfrom.shape[0]
    n_n = cinv.shape[0]
    ob = NM * n_m
    on = ob + 3 * n_b

    YC[:, :] = 0.0
    ALG[:, :, :] = 0.0
    INJ[:, :, :] = 0.0
    for i in range(y.shape[0]):
        YC[i, 0] = y[i]

    tmp = np.empty(3)

    # ---- order-0 algebraic chain ----
    for m in range(n_m):
        o = NM * m
        nd = mnode[m]
        theta0 = y[o + 9]
        SIN3[m, 0, 0] = math.sin(theta0)
        COS3[m, 0, 0] = math.cos(theta0)
        SIN3[m, 1, 0] = math.sin(theta0 + SHIFT_B)
        COS3[m, 1, 0] = math.cos(theta0 + SHIFT_B)
        SIN3[m, 2, 0] = math.sin(theta0 + SHIFT_C)
        COS3[m, 2, 0] = math.cos(theta0 + SHIFT_C)
        for p in range(3):
            INJ[nd, p, 0] += y[o + 6 + p]

    for j in range(K + 1):
        if j > 0:
            # ---- machine + control state series at order j ----
            for m in range(n_m):
                o = NM * m
                k = j - 1
                h2 = 2.0 * msc[m, MS_H]
                YC[o, j] = YC[o + 1, k] / j
                YC[o + 1, j] = (omega0 / h2 * (ALG[m, A_PM, k] - ALG[m, A_PE, k]
                                               - msc[m, MS_D] * YC[o + 1, k] / omega0)) / j
                YC[o + 2, j] = (YC[o + 12, k] - msc[m, MS_RFD] / msc[m, MS_LFDL]
                                * (YC[o + 2, k] - ALG[m, A_LAD, k])) / j
                YC[o + 3, j] = -msc[m, MS_R1D] / msc[m, MS_L1DL] \
                    * (YC[o + 3, k] - ALG[m, A_LAD, k]) / j
                YC[o + 4, j] = -msc[m, MS_R1Q] / msc[m, MS_L1QL] \
                    * (YC[o + 4, k] - ALG[m, A_LAQ, k]) / j
                YC[o + 5, j] = -msc[m, MS_R2Q] / msc[m, MS_L2QL] \
                    * (YC[o + 5, k] - ALG[m, A_LAQ, k]) / j

                nd = mnode[m]
                no = on + 3 * nd
                for p in range(3):
                    tmp[p] = (conv_at(COS3[m, p], ALG[m, A_VPPD], k)
                              - conv_at(SIN3[m, p], ALG[m, A_VPPQ], k))
                r0 = YC[no, k] + (rs[m, 0, 0] * YC[o + 6, k] + rs[m, 0, 1] * YC[o + 7, k]
                                  + rs[m, 0, 2] * YC[o + 8, k]) - tmp[0]
                r1 = YC[no + 1, k] + (rs[m, 1, 0] * YC[o + 6, k] + rs[m, 1, 1] * YC[o + 7, k]
                                      + rs[m, 1, 2] * YC[o + 8, k]) - tmp[1]
                r2 = YC[no + 2, k] + (rs[m, 2, 0] * YC[o + 6, k] + rs[m, 2, 1] * YC[o + 7, k]
                                      + rs[m, 2, 2] * YC[o + 8, k]) - tmp[2]
                _matvec3(linv[m], r0, r1, r2, tmp)
                YC[o + 6, j] = -tmp[0] / j
                YC[o + 7, j] = -tmp[1] / j
                YC[o + 8, j] = -tmp[2] / j
                YC[o + 9, j] = ALG[m, A_WR, k] / j

                if flags[m, 0] != 0:
                    YC[o + 10, j] = 0.0
                else:
                    pref_k = gov[m, GV_PREF] if k == 0 else 0.0
                    YC[o + 10, j] = ((pref_k - YC[o + 1, k] / omega0) / gov[m, GV_R]
                                     - YC[o + 10, k]) / gov[m, GV_T1] / j
                if flags[m, 1] != 0:
                    YC[o + 12, j] = 0.0
                else:
                    YC[o + 12, j] = (exc[m, EX_KE] * YC[o + 13, k]
                                     - YC[o + 12, k]) / exc[m, EX_TE] / j

                for p in range(3):
                    INJ[nd, p, j] += YC[o + 6 + p, j]

            # ---- network state series at order j ----
            k = j - 1
            for b in range(n_b):
                fo = on + 3 * bfrom[b]
                bo = ob + 3 * b
                i0 = YC[bo, k]
                i1 = YC[bo + 1, k]
                i2 = YC[bo + 2, k]
                _matvec3(rb[b], i0, i1, i2, tmp)
                v0 = YC[fo, k] - tmp[0]
                v1 = YC[fo + 1, k] - tmp[1]
                v2_ = YC[fo + 2, k] - tmp[2]
                if bto[b] >= 0:
                    to = on + 3 * bto[b]
                    v0 -= YC[to, k]
                    v1 -= YC[to + 1, k]
                    v2_ -= YC[to + 2, k]
                _matvec3(lbinv[b], v0, v1, v2_, tmp)
                YC[bo, j] = tmp[0] / j
                YC[bo + 1, j] = tmp[1] / j
                YC[bo + 2, j] = tmp[2] / j
                INJ[bfrom[b], 0, k] -= i0
                INJ[bfrom[b], 1, k] -= i1
                INJ[bfrom[b], 2, k] -= i2
                if bto[b] >= 0:
                    INJ[bto[b], 0, k] += i0
                    INJ[bto[b], 1, k] += i1
                    INJ[bto[b], 2, k] += i2
            for n in range(n_n):
                no = on + 3 * n
                g = gfault[n]
                if g != 0.0:
                    for p in range(3):
                        INJ[n, p, k] -= g * YC[no + p, k]
                _matvec3(cinv[n], INJ[n, 0, k], INJ[n, 1, k], INJ[n, 2, k], tmp)
                YC[no, j] = tmp[0] / j
                YC[no + 1, j] = tmp[1] / j
                YC[no + 2, j] = tmp[2] / j

        # ---- machine algebraic chain at order j ----
        for m in range(n_m):
            o = NM * m
            nd = mnode[m]
            no = on + 3 * nd
            if j > 0:
                theta_ser = YC[o + 9]
                for p in range(3):
                    fk, gk = sincos_order(theta_ser, SIN3[m, p], COS3[m, p], j)
                    SIN3[m, p, j] = fk
                    COS3[m, p, j] = gk

            id_j = 0.0
            iq_j = 0.0
            vd_j = 0.0
            vq_j = 0.0
            for p in range(3):
                id_j += conv_at(COS3[m, p], YC[o + 6 + p], j)
                iq_j -= conv_at(SIN3[m, p], YC[o + 6 + p], j)
                vd_j += conv_at(COS3[m, p], YC[no + p], j)
                vq_j -= conv_at(SIN3[m, p], YC[no + p], j)
            ALG[m, A_ID, j] = 2.0 / 3.0 * id_j
            ALG[m, A_IQ, j] = 2.0 / 3.0 * iq_j
            ALG[m, A_VD, j] = 2.0 / 3.0 * vd_j
            ALG[m, A_VQ, j] = 2.0 / 3.0 * vq_j

            ladpp = msc[m, MS_LADPP]
            laqpp = msc[m, MS_LAQPP]
            lfdl = msc[m, MS_LFDL]
            l1dl = msc[m, MS_L1DL]
            l1ql = msc[m, MS_L1QL]
            l2ql = msc[m, MS_L2QL]

            ALG[m, A_LAD, j] = ladpp * (-ALG[m, A_ID, j] + YC[o + 2, j] / lfdl
                                        + YC[o + 3, j] / l1dl)
            ALG[m, A_LAQ, j] = laqpp * (-ALG[m, A_IQ, j] + YC[o + 4, j] / l1ql
                                        + YC[o + 5, j] / l2ql)
            ALG[m, A_LPPD, j] = ladpp * (YC[o + 2, j] / lfdl + YC[o + 3, j] / l1dl)
            ALG[m, A_LPPQ, j] = laqpp * (YC[o + 4, j] / l1ql + YC[o + 5, j] / l2ql)
            ALG[m, A_WR, j] = YC[o + 1, j] + (omega0 if j == 0 else 0.0)

            ALG[m, A_VPPD, j] = (ladpp * (
                msc[m, MS_RFD] / lfdl ** 2 * (ALG[m, A_LAD, j] - YC[o + 2, j])
                + msc[m, MS_R1D] / l1dl ** 2 * (ALG[m, A_LAD, j] - YC[o + 3, j]))
                + ladpp / lfdl * YC[o + 12, j]
                - conv_at(ALG[m, A_WR], ALG[m, A_LPPQ], j))
            ALG[m, A_VPPQ, j] = (laqpp * (
                msc[m, MS_R1Q] / l1ql ** 2 * (ALG[m, A_LAQ, j] - YC[o + 4, j])
                + msc[m, MS_R2Q] / l2ql ** 2 * (ALG[m, A_LAQ, j] - YC[o + 5, j]))
                + conv_at(ALG[m, A_WR], ALG[m, A_LPPD], j))

            if j == 0:
                u0 = ALG[m, A_VD, 0] ** 2 + ALG[m, A_VQ, 0] ** 2
                ALG[m, A_U, 0] = u0
                vt0 = math.sqrt(u0)
                if vt0 < EPS_SQRT:
                    return STATUS_SINGULAR_VT
                ALG[m, A_VT, 0] = vt0
            else:
                uk, vtk = sqrt_sumsq_order(ALG[m, A_VD], ALG[m, A_VQ], ALG[m, A_VT], j)
                ALG[m, A_U, j] = uk
                ALG[m, A_VT, j] = vtk

            ALG[m, A_TQ, j] = (conv_at(ALG[m, A_LAD], ALG[m, A_IQ], j)
                               - conv_at(ALG[m, A_LAQ], ALG[m, A_ID], j))
            ALG[m, A_PE, j] = msc[m, MS_PF] * conv_at(ALG[m, A_WR], ALG[m, A_TQ], j)

            # ---- controls algebraic chain at order j ----
            if j == 0:
                ALG[m, A_PM, 0] = YC[o + 11, 0] - gov[m, GV_DT] * YC[o + 1, 0] / omega0
                ALG[m, A_V2, 0] = exc[m, EX_VREF] - ALG[m, A_VT, 0]
            else:
                k = j - 1
                YC[o + 11, j] = (j * gov[m, GV_T2] * YC[o + 10, j] + YC[o + 10, k]
                                 - YC[o + 11, k]) / gov[m, GV_T3] / j
                ALG[m, A_PM, j] = YC[o + 11, j] - gov[m, GV_DT] * YC[o + 1, j] / omega0
                ALG[m, A_V2, j] = -ALG[m, A_VT, j]
                YC[o + 13, j] = (j * exc[m, EX_TA] * ALG[m, A_V2, j] + ALG[m, A_V2, k]
                                 - YC[o + 13, k]) / exc[m, EX_TB] / j
    return STATUS_OK


@njit(cache=True)
def eval_states_kernel(YC, h, out):
    n, kp1 = YC.shape
    for i in range(n):
        acc = 0.0
        for k in range(kp1 - 1, -1, -1):
            acc = acc * h + YC[i, k]
        out[i] = acc


@njit(cache=True)
def scan_limit_crossing(YC, flags, gov, exc, h):
    """Earliest in-step crossing time of a free limited state, else h.

    Samples each free p1/e_fd series on a fine grid over (0, h], then
    bisects the first bracketing interval down to 1e-9 in state value.
    """
    n_m = gov.shape[0]
    t_cross = h
    n_samp = 16
    for m in range(n_m):
        for which in range(2):
            if flags[m, which] != 0:
                continue
            if which == 0:
                row = NM * m + 10
                hi = gov[m, GV_VMAX]
                lo = gov[m, GV_VMIN]
            else:
                row = NM * m + 12
                hi = exc[m, EX_EMAX]
                lo = exc[m, EX_EMIN]
            ser = YC[row]
            prev_t = 0.0
            kp1 = ser.shape[0]
            for s in range(1, n_samp + 1):
                t = h * s / n_samp
                acc = 0.0
                for k in range(kp1 - 1, -1, -1):
                    acc = acc * t + ser[k]
                if acc > hi or acc < lo:
                    # bisect in (prev_t, t] against whichever bound was hit
                    bound = hi if acc > hi else lo
                    a = prev_t
                    b = t
                    for _ in range(80):
                        mid = 0.5 * (a + b)
                        val = 0.0
                        for k in range(kp1 - 1, -1, -1):
                            val = val * mid + ser[k]
                        out_of = val > hi or val < lo
                        if out_of:
                            b = mid
                        else:
                            a = mid
                        if b - a < 1e-15 or abs(val - bound) < 1e-9:
                            break
                    if b < t_cross:
                        t_cross = b
                    break
                prev_t = t
    return t_cross


@njit(cache=True)
def run_explicit_segment(y, flags, omega0, msc, rs, linv, mnode, gov, exc,
                         bfrom, bto, rb, lbinv, cinv, gfault,
                         t_start, h, n_steps, use_rk4,
                         rec_times, rec_states, rec_stride, gstart, scratch, wrk):
    """March n_steps fixed explicit steps (RK4 or modified Euler).

    Records steps whose global grid index (gstart + i + 1) is a multiple
    of rec_stride, plus the final one, into the preallocated
    rec_times/rec_states; returns (status, n_recorded).  Clamp flags
    update at every step boundary.
    """
    n = y.shape[0]
    k1 = scratch[0]
    k2 = scratch[1]
    k3 = scratch[2]
    k4 = scratch[3]
    yw = scratch[4]
    n_rec = 0
    for i in range(n_steps):
        clamp_update_kernel(y, flags, omega0, gov, exc)
        st = rhs_kernel(y, flags, omega0, msc, rs, linv, mnode, gov, exc,
                        bfrom, bto, rb, lbinv, cinv, gfault, k1, wrk)
        if st != STATUS_OK:
            return st, n_rec
        if use_rk4:
            for q in range(n):
                yw[q] = y[q] + 0.5 * h * k1[q]
            st = rhs_kernel(yw, flags, omega0, msc, rs, linv, mnode, gov, exc,
                            bfrom, bto, rb, lbinv, cinv, gfault, k2, wrk)
            if st != STATUS_OK:
                return st, n_rec
            for q in range(n):
                yw[q] = y[q] + 0.5 * h * k2[q]
            st = rhs_kernel(yw, flags, omega0, msc, rs, linv, mnode, gov, exc,
                            bfrom, bto, rb, lbinv, cinv, gfault, k3, wrk)
            if st != STATUS_OK:
                return st, n_rec
            for q in range(n):
                yw[q] = y[q] + h * k3[q]
            st = rhs_kernel(yw, flags, omega0, msc, rs, linv, mnode, gov, exc,
                            bfrom, bto, rb, lbinv, cinv, gfault, k4, wrk)
            if st != STATUS_OK:
                return st, n_rec
            for q in range(n):
                y[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
        else:
            # Heun predictor-corrector
            for q in range(n):
                yw[q] = y[q] + h * k1[q]
            st = rhs_kernel(yw, flags, omega0, msc, rs, linv, mnode, gov, exc,
                            bfrom, bto, rb, lbinv, cinv, gfault, k2, wrk)
            if st != STATUS_OK:
                return st, n_rec
            for q in range(n):
                y[q] += 0.5 * h * (k1[q] + k2[q])
        if not math.isfinite(y[0]):
            return STATUS_NONFINITE, n_rec
        if ((gstart + i + 1) % rec_stride == 0) or (i == n_steps - 1):
            rec_times[n_rec] = t_start + (i + 1) * h
            for q in range(n):
                rec_states[n_rec, q] = y[q]
            n_rec += 1
    return STATUS_OK, n_rec
