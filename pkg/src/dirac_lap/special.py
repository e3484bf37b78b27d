"""First-kind Hankel functions of order 0 and 1, computed in-repo.

Two regimes, split at ``|w| = SERIES_ASYMPTOTIC_SPLIT``:

* ascending power series for J_nu / Y_nu (36 terms, alternating with
  factorial-squared decay; worst-case cancellation at the split point costs
  about three digits, leaving ~1e-12 relative accuracy),
* large-argument asymptotic expansion
  ``H_nu(w) ~ sqrt(2/(pi w)) exp(i(w - nu pi/2 - pi/4)) sum_k a_k(nu) (i/w)^k``
  with 25 terms; at the split point the smallest term is ~1e-11 and shrinks
  rapidly for larger ``|w|``.

Arguments may be complex with nonnegative imaginary part (principal branch of
log and sqrt; both expansions remain valid in the closed upper half plane away
from 0).  Accuracy against an independent oracle is pinned in the test suite
at 1e-10 relative error over moduli 1e-4 .. 1e3.  Off the real axis the
J + iY combination cancels like exp(2 Im w) in the series regime, so the
relative error degrades where H itself is exponentially small; the absolute
error stays near machine level, which is what the complex-energy operator
sweeps consume.

Each routine has a numba scalar-loop variant and a vectorized numpy variant;
``DIRAC_LAP_BACKEND`` selects which one the public wrappers use.
"""

import cmath
import math

import numpy as np

from ._backend import BACKEND, HAVE_NUMBA

EULER_GAMMA = 0.5772156649015329
SERIES_ASYMPTOTIC_SPLIT = 12.0

_SERIES_TERMS = 36
_ASYM_TERMS = 25
_TWO_OVER_PI = 2.0 / math.pi


# ---------------------------------------------------------------------------
# pure-numpy variant (vectorized, two masked passes)
# ---------------------------------------------------------------------------

def _hankel01_numpy(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = np.ascontiguousarray(w, dtype=np.complex128)
    h0 = np.empty(w.shape, np.complex128)
    h1 = np.empty(w.shape, np.complex128)

    small = np.abs(w) <= SERIES_ASYMPTOTIC_SPLIT
    if small.any():
        ws = w[small]
        lg = np.log(0.5 * ws) + EULER_GAMMA
        q = -0.25 * ws * ws

        t = np.ones_like(ws)
        j0 = np.ones_like(ws)
        s0 = np.zeros_like(ws)
        u = np.ones_like(ws)
        j1s = np.ones_like(ws)
        s1 = np.ones_like(ws)          # (H_0 + H_1) u_0 = 1
        hk = 0.0
        hk1 = 1.0
        for k in range(1, _SERIES_TERMS):
            t = t * q / (k * k)
            u = u * q / (k * (k + 1))
            hk += 1.0 / k
            hk1 += 1.0 / (k + 1)
            j0 += t
            s0 += hk * t
            j1s += u
            s1 += (hk + hk1) * u
        y0 = _TWO_OVER_PI * (lg * j0 - s0)
        j1 = 0.5 * ws * j1s
        y1 = (_TWO_OVER_PI * lg * j1
              - _TWO_OVER_PI / ws
              - (0.5 / math.pi) * ws * s1)
        h0[small] = j0 + 1j * y0
        h1[small] = j1 + 1j * y1

    big = ~small
    if big.any():
        wb = w[big]
        pref = np.sqrt(2.0 / (math.pi * wb))
        iw = 1j / wb
        a0 = 1.0
        a1 = 1.0
        c = np.ones_like(wb)
        sum0 = np.ones_like(wb)
        sum1 = np.ones_like(wb)
        for k in range(1, _ASYM_TERMS):
            odd2 = float((2 * k - 1) ** 2)
            a0 *= -odd2 / (8.0 * k)
            a1 *= (4.0 - odd2) / (8.0 * k)
            c = c * iw
            sum0 += a0 * c
            sum1 += a1 * c
        h0[big] = pref * np.exp(1j * (wb - 0.25 * math.pi)) * sum0
        h1[big] = pref * np.exp(1j * (wb - 0.75 * math.pi)) * sum1

    return h0, h1


# ---------------------------------------------------------------------------
# numba variant (scalar core reused by the assembly loops elsewhere)
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _h01_scalar(w):
        if abs(w) <= SERIES_ASYMPTOTIC_SPLIT:
            lg = cmath.log(0.5 * w) + EULER_GAMMA
            q = -0.25 * w * w
            t = 1.0 + 0j
            j0 = 1.0 + 0j
            s0 = 0.0 + 0j
            u = 1.0 + 0j
            j1s = 1.0 + 0j
            s1 = 1.0 + 0j
            hk = 0.0
            hk1 = 1.0
            for k in range(1, _SERIES_TERMS):
                t = t * q / (k * k)
                u = u * q / (k * (k + 1))
                hk += 1.0 / k
                hk1 += 1.0 / (k + 1)
                j0 += t
                s0 += hk * t
                j1s += u
                s1 += (hk + hk1) * u
            y0 = _TWO_OVER_PI * (lg * j0 - s0)
            j1 = 0.5 * w * j1s
            y1 = (_TWO_OVER_PI * lg * j1
                  - _TWO_OVER_PI / w
                  - (0.5 / math.pi) * w * s1)
            return j0 + 1j * y0, j1 + 1j * y1

        pref = cmath.sqrt(2.0 / (math.pi * w))
        iw = 1j / w
        a0 = 1.0
        a1 = 1.0
        c = 1.0 + 0j
        sum0 = 1.0 + 0j
        sum1 = 1.0 + 0j
        for k in range(1, _ASYM_TERMS):
            odd2 = float((2 * k - 1) ** 2)
            a0 *= -odd2 / (8.0 * k)
            a1 *= (4.0 - odd2) / (8.0 * k)
            c = c * iw
            sum0 += a0 * c
            sum1 += a1 * c
        h0 = pref * cmath.exp(1j * (w - 0.25 * math.pi)) * sum0
        h1 = pref * cmath.exp(1j * (w - 0.75 * math.pi)) * sum1
        return h0, h1

    @njit(cache=True)
    def _hankel01_numba(w):
        n = w.shape[0]
        h0 = np.empty(n, np.complex128)
        h1 = np.empty(n, np.complex128)
        for i in range(n):
            h0[i], h1[i] = _h01_scalar(w[i])
        return h0, h1
else:
    _h01_scalar = None
    _hankel01_numba = None


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------

def _validate(w: np.ndarray) -> None:
    if w.size and not np.all(np.abs(w) > 0.0):
        raise ValueError("Hankel argument must be nonzero")
    # tolerate roundoff straying just below the real axis
    if w.size and np.min(w.imag) < -1e-12:
        raise ValueError("Hankel argument must lie in the closed upper half plane")


def hankel1_pair(w) -> tuple[np.ndarray, np.ndarray]:
    """H^(1)_0(w) and H^(1)_1(w) for scalar or array ``w``."""
    arr = np.atleast_1d(np.asarray(w, dtype=np.complex128))
    _validate(arr)
    flat = np.ascontiguousarray(arr.reshape(-1))
    if BACKEND == "numba":
        h0, h1 = _hankel01_numba(flat)
    else:
        h0, h1 = _hankel01_numpy(flat)
    h0 = h0.reshape(arr.shape)
    h1 = h1.reshape(arr.shape)
    if np.isscalar(w) or np.asarray(w).ndim == 0:
        return h0[()] if h0.ndim == 0 else h0[0], h1[()] if h1.ndim == 0 else h1[0]
    return h0, h1


def hankel1_0(w):
    """First-kind Hankel function of order zero."""
    return hankel1_pair(w)[0]


def hankel1_1(w):
    """First-kind Hankel function of order one (radial derivative partner:
    d/dr H0(z r) = -z H1(z r))."""
    return hankel1_pair(w)[1]
