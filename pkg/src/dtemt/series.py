"""Truncated Taylor-coefficient arithmetic.

A function f(t) smooth at t0 is represented by the array of its scaled
derivatives F(k) = f^(k)(t0) / k!, k = 0..K.  Linear operations act
coefficientwise, products become truncated Cauchy convolutions, and
composed nonlinearities (sin/cos of a series, sqrt of a sum of squares)
turn into order-by-order recurrences.  Evaluating the truncated series at
t0 + h recovers the function value to O(h^(K+1)).

The low-level kernels operate on plain float64 arrays and are numba
compiled so the simulation hot loops can call them directly; the public
functions wrap them with a small `CoeffSeries` record used throughout the
tests and the reference (non-packed) model code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import SeriesMismatchError, SingularMagnitudeError

# Guard on the order-0 magnitude in the sqrt recursion; below this the
# division by 2*F(0) is meaningless and the caller must treat the point
# as a voltage collapse.
EPS_SQRT = 1e-9


# ---------------------------------------------------------------------------
# numba kernels (plain arrays, no validation)
# ---------------------------------------------------------------------------

@njit(cache=True)
def conv_at(g, h, k):
    """Cauchy-product coefficient: sum_{m=0}^{k} g[m] * h[k-m]."""
    acc = 0.0
    for m in range(k + 1):
        acc += g[m] * h[k - m]
    return acc


@njit(cache=True)
def sincos_order(h, f, g, k):
    """Order-k coefficients of f = sin(h), g = cos(h), k >= 1.

    Requires f[0..k-1], g[0..k-1] already filled and writes nothing:
    returns (F(k), G(k)).
    """
    sf = 0.0
    sg = 0.0
    for m in range(k):
        w = (k - m) / k * h[k - m]
        sf += w * g[m]
        sg -= w * f[m]
    return sf, sg


@njit(cache=True)
def sqrt_sumsq_order(g, h, f, k):
    """Order-k coefficients of s = g^2 + h^2 and f = sqrt(s), k >= 1.

    Requires f[0..k-1] filled with f[0] = sqrt(g[0]^2 + h[0]^2) != 0.
    Returns (S(k), F(k)).
    """
    s = 0.0
    for m in range(k + 1):
        s += g[m] * g[k - m] + h[m] * h[k - m]
    acc = s
    for m in range(1, k):
        acc -= f[m] * f[k - m]
    return s, acc / (2.0 * f[0])


@njit(cache=True)
def horner_eval(coeffs, h):
    """Evaluate sum_k coeffs[k] * h^k by Horner's scheme."""
    acc = 0.0
    for k in range(coeffs.shape[0] - 1, -1, -1):
        acc = acc * h + coeffs[k]
    return acc


@njit(cache=True)
def fill_sincos(hser, f, g):
    """Fill full sin/cos series of the argument series `hser` in place."""
    f[0] = math.sin(hser[0])
    g[0] = math.cos(hser[0])
    for k in range(1, hser.shape[0]):
        fk, gk = sincos_order(hser, f, g, k)
        f[k] = fk
        g[k] = gk


# ---------------------------------------------------------------------------
# public series type and rule functions
# ---------------------------------------------------------------------------

@dataclass
class CoeffSeries:
    """Taylor coefficients of one variable about expansion time t0."""

    coeffs: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 1 or self.coeffs.shape[0] < 1:
            raise SeriesMismatchError("coefficient array must be 1-D and non-empty")

    @property
    def order(self) -> int:
        """Truncation order K (length is K + 1)."""
        return self.coeffs.shape[0] - 1

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def __getitem__(self, k):
        return self.coeffs[k]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coeffs)))


def _check_pair(g: CoeffSeries, h: CoeffSeries):
    if len(g) != len(h):
        raise SeriesMismatchError(
            f"series lengths differ: {len(g)} vs {len(h)}"
        )
    if g.t0 != h.t0:
        raise SeriesMismatchError(f"expansion times differ: {g.t0} vs {h.t0}")


def dt_const(c: float, K: int, t0: float = 0.0) -> CoeffSeries:
    """Series of the constant function c: [c, 0, ..., 0]."""
    if K < 0:
        raise SeriesMismatchError("truncation order must be >= 0")
    coeffs = np.zeros(K + 1)
    coeffs[0] = c
    return CoeffSeries(coeffs, t0)


def dt_add(g: CoeffSeries, h: CoeffSeries) -> CoeffSeries:
    _check_pair(g, h)
    return CoeffSeries(g.coeffs + h.coeffs, g.t0)


def dt_sub(g: CoeffSeries, h: CoeffSeries) -> CoeffSeries:
    _check_pair(g, h)
    return CoeffSeries(g.coeffs - h.coeffs, g.t0)


def dt_scale(c: float, g: CoeffSeries) -> CoeffSeries:
    return CoeffSeries(c * g.coeffs, g.t0)


def dt_mul(g: CoeffSeries, h: CoeffSeries) -> CoeffSeries:
    """Truncated Cauchy product: F(k) = sum_m G(m) H(k-m)."""
    _check_pair(g, h)
    out = np.empty(len(g))
    for k in range(len(g)):
        out[k] = conv_at(g.coeffs, h.coeffs, k)
    return CoeffSeries(out, g.t0)


def dt_sincos_order(h: CoeffSeries, f: CoeffSeries, g: CoeffSeries, k: int):
    """Order-k pair (F(k), G(k)) for f = sin(h), g = cos(h).

    Valid for k >= 1 with orders < k already stored in f and g; the k = 0
    seeds must come from the platform sin/cos of H(0).
    """
    if k < 1:
        raise SeriesMismatchError("order-0 sin/cos coefficients are seeds, not recursed")
    _check_pair(h, f)
    _check_pair(h, g)
    return sincos_order(h.coeffs, f.coeffs, g.coeffs, k)


def dt_sin_cos(h: CoeffSeries):
    """Full sin/cos series of the argument series h."""
    f = np.empty(len(h))
    g = np.empty(len(h))
    fill_sincos(h.coeffs, f, g)
    return CoeffSeries(f, h.t0), CoeffSeries(g, h.t0)


def dt_sqrt_sumsq_order(g: CoeffSeries, h: CoeffSeries, s: CoeffSeries,
                        f: CoeffSeries, k: int):
    """Order-k pair (S(k), F(k)) for s = g^2 + h^2, f = sqrt(s).

    Orders < k of f must be stored, with F(0) = sqrt(G(0)^2 + H(0)^2)
    seeded by the caller.  Raises SingularMagnitudeError when |F(0)| is
    below EPS_SQRT.
    """
    _check_pair(g, h)
    if abs(f.coeffs[0]) < EPS_SQRT:
        raise SingularMagnitudeError(
            f"magnitude series has |F(0)| = {abs(f.coeffs[0]):.3e} < {EPS_SQRT:.0e}"
        )
    if k < 1:
        return g.coeffs[0] ** 2 + h.coeffs[0] ** 2, f.coeffs[0]
    return sqrt_sumsq_order(g.coeffs, h.coeffs, f.coeffs, k)


def dt_sqrt_sumsq(g: CoeffSeries, h: CoeffSeries):
    """Full series pair (s, f) with s = g^2 + h^2 and f = sqrt(s)."""
    _check_pair(g, h)
    K = len(g)
    s = np.empty(K)
    f = np.empty(K)
    s[0] = g.coeffs[0] ** 2 + h.coeffs[0] ** 2
    f[0] = math.sqrt(s[0])
    if abs(f[0]) < EPS_SQRT:
        raise SingularMagnitudeError(
            f"magnitude series has |F(0)| = {abs(f[0]):.3e} < {EPS_SQRT:.0e}"
        )
    fser = CoeffSeries(f, g.t0)
    for k in range(1, K):
        s[k], f[k] = sqrt_sumsq_order(g.coeffs, h.coeffs, fser.coeffs, k)
    return CoeffSeries(s, g.t0), fser


def dt_deriv_relation(g: CoeffSeries) -> CoeffSeries:
    """Series of dg/dt: F(k) = (k+1) G(k+1), one order shorter."""
    k = np.arange(1, len(g))
    return CoeffSeries(k * g.coeffs[1:], g.t0)


def series_eval(f: CoeffSeries, h: float) -> float:
    """Evaluate the truncated series at t0 + h (Horner)."""
    return horner_eval(f.coeffs, h)


def eta(k: int) -> float:
    """Kronecker-delta coefficient picker: 1 at order 0, else 0."""
    return 1.0 if k == 0 else 0.0
