"""Closed-form resolvent kernels at real energies, their oscillatory/local
split, and radially/directionally truncated variants.

Boundary kernels for the two branches come from the explicit formulas:

* n = 3: ``exp(+/- i z r) / (4 pi r)``
* n = 2: ``+/- (i/4) H0^(1)(z r)`` with the "-" branch equal to the complex
  conjugate of the "+" branch at real z.

The spinor-valued (first-order operator) kernel is obtained by applying
``-i alpha . grad + mass beta + lam`` to the scalar kernel, which for a radial
function reduces to the radial derivative times the displacement direction.

Complex energies in the open upper half plane are supported by the private
``_plus``-suffixed entry points (the resolvent is evaluated with
``Im sqrt(lam^2 - mass^2) >= 0`` so the kernel decays); the public functions
take real energies only.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .clifford import DiracMatrices
from .special import hankel1_pair

BRANCHES = ("+", "-")


def _branch_check(branch: str) -> None:
    if branch not in BRANCHES:
        raise ValueError("branch must be '+' or '-', got %r" % (branch,))


def _dim_check(n: int) -> None:
    if n not in (2, 3):
        raise ValueError("kernel formulas are implemented for n in (2, 3), got %r" % (n,))


# ---------------------------------------------------------------------------
# cutoff profiles (fixed quintic smoothstep)
# ---------------------------------------------------------------------------

def smoothstep(t):
    """0 for t <= 0, 1 for t >= 1, C^2 quintic ramp 6t^5 - 15t^4 + 10t^3."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def transition(r, lo: float, hi: float):
    """Smoothstep ramp from 0 at ``r <= lo`` to 1 at ``r >= hi``."""
    if not hi > lo:
        raise ValueError("need hi > lo")
    return smoothstep((np.asarray(r, dtype=float) - lo) / (hi - lo))


SPLIT_LO = 0.5
SPLIT_HI = 0.75


# ---------------------------------------------------------------------------
# scalar (second-order operator) kernels
# ---------------------------------------------------------------------------

def _scalar_plus(n: int, z: complex, r: np.ndarray) -> np.ndarray:
    """Outgoing-branch scalar kernel; z may be complex with Im z >= 0."""
    if n == 3:
        return np.exp(1j * z * r) / (4.0 * math.pi * r)
    return 0.25j * hankel1_pair(z * r)[0]


def _scalar_plus_dr(n: int, z: complex, r: np.ndarray) -> np.ndarray:
    """Radial derivative of the outgoing scalar kernel."""
    if n == 3:
        return (1j * z - 1.0 / r) * np.exp(1j * z * r) / (4.0 * math.pi * r)
    return -0.25j * z * hankel1_pair(z * r)[1]


def _validate_radii(r: np.ndarray) -> None:
    if r.size and not np.all(r > 0.0):
        raise ValueError("radii must be positive")


def _validate_energy(z) -> float:
    z = float(z)
    if not z > 0.0:
        raise ValueError("kernel energy parameter must be positive")
    return z


def schrodinger_kernel(n: int, z, r, branch: str = "+"):
    """Free second-order resolvent kernel at energy z^2, |x - y| = r."""
    _dim_check(n)
    _branch_check(branch)
    z = _validate_energy(z)
    rr = np.atleast_1d(np.asarray(r, dtype=float))
    _validate_radii(rr)
    out = _scalar_plus(n, z, rr)
    if branch == "-":
        out = np.conj(out)
    return out if np.ndim(r) else out[0]


@dataclass(frozen=True)
class KernelSplit:
    """Oscillatory/local decomposition of the scalar kernel.

    ``oscillatory + local`` recovers the full kernel.  The ramp runs in the
    energy-scaled radius ``z * r``: the oscillatory part vanishes for
    ``z r <= cutoff_lo`` and carries the whole kernel for ``z r >= cutoff_hi``.
    """

    radius: np.ndarray
    scaled_radius: np.ndarray
    oscillatory: np.ndarray
    local: np.ndarray
    cutoff_lo: float = SPLIT_LO
    cutoff_hi: float = SPLIT_HI


def kernel_split(n: int, z, r, branch: str = "+") -> KernelSplit:
    """Split the scalar kernel into far oscillatory and near local parts."""
    z = _validate_energy(z)
    full = schrodinger_kernel(n, z, r, branch)
    scaled = z * np.asarray(r, dtype=float)
    ramp = transition(scaled, SPLIT_LO, SPLIT_HI)
    osc = ramp * full
    return KernelSplit(
        radius=np.asarray(r, dtype=float),
        scaled_radius=scaled,
        oscillatory=osc,
        local=full - osc,
    )


def oscillatory_amplitude(n: int, r, branch: str = "+"):
    """Amplitude of the far part at unit energy: the oscillatory summand with
    the phase ``exp(+/- i r)`` and the power ``r^-(n-1)/2`` removed."""
    sp = kernel_split(n, 1.0, r, branch)
    sign = 1.0 if branch == "+" else -1.0
    rr = np.asarray(r, dtype=float)
    return sp.oscillatory * rr ** ((n - 1) / 2.0) * np.exp(-1j * sign * rr)


def local_amplitude(n: int, r, branch: str = "+"):
    """Amplitude of the near part at unit energy, ``r^(n-2)`` removed."""
    sp = kernel_split(n, 1.0, r, branch)
    return sp.local * np.asarray(r, dtype=float) ** (n - 2)


# ---------------------------------------------------------------------------
# spinor-valued (first-order operator) kernels
# ---------------------------------------------------------------------------

def _energy_to_wavenumber(lam: complex, mass: float) -> complex:
    """Root of lam^2 - mass^2 with nonnegative imaginary part."""
    z = np.lib.scimath.sqrt(np.complex128(lam) ** 2 - mass**2)
    if z.imag < 0 or (z.imag == 0 and z.real < 0):
        z = -z
    return complex(z)


def _dirac_blocks(
    mats: DiracMatrices,
    mass: float,
    lam: complex,
    dx: np.ndarray,
    branch: str = "+",
) -> np.ndarray:
    """Spinor kernel blocks for displacements ``dx`` of shape (k, n).

    The "-" branch conjugates the radial factors, which at real energies is
    the adjoint-reflection partner of the "+" kernel.
    """
    n = mats.dim
    r = np.sqrt(np.sum(dx * dx, axis=-1))
    _validate_radii(r)
    z = _energy_to_wavenumber(lam, mass)
    k0 = _scalar_plus(n, z, r)
    k1 = _scalar_plus_dr(n, z, r)
    if branch == "-":
        k0 = np.conj(k0)
        k1 = np.conj(k1)
    c = mats.spinor_dim
    zero_order = mass * mats.beta + lam * np.eye(c, dtype=np.complex128)
    out = np.multiply.outer(k0, zero_order)
    alpha_u = np.einsum("kj,jab->kab", dx / r[:, None], np.stack(mats.alphas))
    out += (-1j * k1)[:, None, None] * alpha_u
    return out


def dirac_kernel(
    mats: DiracMatrices, mass: float, lam: float, x_minus_y, branch: str = "+"
) -> np.ndarray:
    """Free first-order resolvent kernel at real energy ``lam``.

    ``x_minus_y`` is a displacement vector (n,) or a stack (k, n).  Requires
    ``|lam| > mass`` (strictly outside the spectral gap); the massless case
    needs ``lam != 0``.
    """
    _dim_check(mats.dim)
    _branch_check(branch)
    mass = float(mass)
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    lam = float(lam)
    if not abs(lam) > mass:
        raise ValueError("energy must satisfy |lam| > mass")
    dx = np.atleast_2d(np.asarray(x_minus_y, dtype=float))
    if dx.shape[-1] != mats.dim:
        raise ValueError("displacement dimension mismatch")
    blocks = _dirac_blocks(mats, mass, lam, dx, branch)
    if np.ndim(x_minus_y) == 1:
        return blocks[0]
    return blocks


# ---------------------------------------------------------------------------
# truncated kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationSpec:
    """Radial + directional truncation of the scalar kernel.

    The radial cutoff vanishes for ``|x-y| < d/2`` and saturates at ``d``;
    the directional cutoff is supported in a cap of angular radius ``2 delta``
    around ``center`` (a unit vector).  A custom ``profile`` (direction array
    -> weights, e.g. one member of a sphere partition) overrides the default
    cap bump.
    """

    d: float
    delta: float
    center: np.ndarray
    profile: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None)

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("inner truncation radius d must be positive")
        if not 0 < self.delta <= math.pi:
            raise ValueError("cap width delta must lie in (0, pi]")
        c = np.asarray(self.center, dtype=float)
        if abs(np.linalg.norm(c) - 1.0) > 1e-10:
            raise ValueError("cap center must be a unit vector")
        object.__setattr__(self, "center", c)

    def radial_weight(self, r):
        return transition(r, 0.5 * self.d, self.d)

    def cap_weight(self, directions: np.ndarray):
        if self.profile is not None:
            return self.profile(directions)
        cosang = np.clip(directions @ self.center, -1.0, 1.0)
        ang = np.arccos(cosang)
        return 1.0 - smoothstep(ang / self.delta - 1.0)


def truncated_kernel(
    n: int, z, x_minus_y, branch: str, trunc: TruncationSpec
) -> np.ndarray:
    """Scalar kernel times radial cutoff times directional cap weight."""
    _dim_check(n)
    _branch_check(branch)
    z = _validate_energy(z)
    dx = np.atleast_2d(np.asarray(x_minus_y, dtype=float))
    r = np.sqrt(np.sum(dx * dx, axis=-1))
    out = np.zeros(r.shape, dtype=np.complex128)
    live = r >= 0.5 * trunc.d          # kernel vanishes inside, avoid 1/0 there
    if live.any():
        rr = r[live]
        vals = schrodinger_kernel(n, z, rr, branch)
        vals = vals * trunc.radial_weight(rr)
        vals = vals * trunc.cap_weight(dx[live] / rr[:, None])
        out[live] = vals
    if np.ndim(x_minus_y) == 1:
        return out[0]
    return out


def short_range_kernel(n: int, z, x_minus_y, branch: str, d: float):
    """Complementary near-diagonal piece: full kernel times (1 - radial cutoff)."""
    _dim_check(n)
    _branch_check(branch)
    z = _validate_energy(z)
    if not d > 0:
        raise ValueError("inner truncation radius d must be positive")
    dx = np.atleast_2d(np.asarray(x_minus_y, dtype=float))
    r = np.sqrt(np.sum(dx * dx, axis=-1))
    _validate_radii(r)
    vals = schrodinger_kernel(n, z, r, branch) * (1.0 - transition(r, 0.5 * d, d))
    if np.ndim(x_minus_y) == 1:
        return vals[0]
    return vals
