"""Grids, spinor fields, potentials, operator assembly, and norms.

Operators over a box come in three interchangeable flavours:

* ``KernelOperator``    dense matrix, exact but memory-bound;
* ``MultiplicationOperator``  pointwise matrix blocks (potentials);
* ``LatticeOperator``   translation-invariant kernel applied by FFT
  circular convolution over a doubled index lattice.  Materializing a
  ``LatticeOperator`` reproduces the dense assembly entry for entry, so
  every dense construction below goes through the displacement table.

Discretization rule: entry (x, y) = kernel(x - y) * h^n off the
diagonal; the diagonal entry integrates the leading singularity over a
ball of cell volume analytically and adds the regular remainder times
h^n.
"""

from __future__ import annotations

import math
import os
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._backend import BACKEND, HAVE_NUMBA
from .clifford import DiracMatrices
from .kernels import (
    TruncationSpec,
    _dirac_blocks,
    _energy_to_wavenumber,
    schrodinger_kernel,
    short_range_kernel,
    truncated_kernel,
)
from .special import EULER_GAMMA

DEFAULT_DENSE_DIM = 20_000

POTENTIAL_KINDS = ("gaussian_bump", "inverse_power", "compact_smooth")
MATRIX_PROFILES = ("scalar", "beta", "fixed_hermitian")

_DUMP_MAGIC = b"DLAP"
_DUMP_VERSION = 1
# magic, version, n, points_per_axis, spinor_dim, rows, cols, L, h, pad
_DUMP_HEADER = "<4sIIIIIIdd20x"


class MemoryCapError(RuntimeError):
    """Dense materialization would exceed the configured cap."""


class PowerIterationError(RuntimeError):
    def __init__(self, message, estimate, residual, iterations):
        super().__init__(message)
        self.estimate = estimate
        self.residual = residual
        self.iterations = iterations


def dense_dim_cap() -> int:
    """Largest dense operator dimension allowed.

    DIRAC_LAP_MEMCAP, if set, gives a budget in bytes for one complex
    matrix; otherwise a flat dimension cap applies.
    """
    raw = os.environ.get("DIRAC_LAP_MEMCAP")
    if raw is None:
        return DEFAULT_DENSE_DIM
    try:
        budget = int(raw)
    except ValueError as exc:
        raise RuntimeError(f"DIRAC_LAP_MEMCAP must be an integer: {raw!r}") from exc
    if budget <= 0:
        raise RuntimeError("DIRAC_LAP_MEMCAP must be positive")
    return max(1, math.isqrt(budget // 16))


def _check_dense_dim(dim: int) -> None:
    cap = dense_dim_cap()
    if dim > cap:
        raise MemoryCapError(
            f"dense dimension {dim} exceeds cap {cap}; "
            "raise DIRAC_LAP_MEMCAP or use the lattice form"
        )


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid on the box [-L, L]^n.

    Points along each axis sit at -L + i*h for i = 0..points_per_axis-1
    with h = 2L/points_per_axis, so +L is identified with -L when the
    grid is used periodically.
    """

    n: int
    L: float
    points_per_axis: int
    periodic: bool = False

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.n}")
        if not self.L > 0:
            raise ValueError("box half-width must be positive")
        if self.points_per_axis < 2:
            raise ValueError("need at least two points per axis")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.points_per_axis

    @property
    def num_points(self) -> int:
        return self.points_per_axis**self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.points_per_axis)

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def l2_norm(self, values: np.ndarray) -> float:
        return self.h ** (self.n / 2.0) * float(np.linalg.norm(values))


@dataclass
class SpinorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=complex)
        if self.values.shape[0] != self.grid.num_points or self.values.ndim != 2:
            raise ValueError(
                f"values must be (num_points, spinor_dim), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")

    @property
    def spinor_dim(self) -> int:
        return self.values.shape[1]

    def norm(self) -> float:
        return self.grid.l2_norm(self.values)

    @classmethod
    def zeros(cls, grid: Grid, spinor_dim: int) -> "SpinorField":
        return cls(grid, np.zeros((grid.num_points, spinor_dim), dtype=complex))

    @classmethod
    def from_function(cls, grid: Grid, spinor_dim: int, fn) -> "SpinorField":
        vals = np.asarray(fn(grid.points), dtype=complex)
        if vals.ndim == 1:
            vals = np.repeat(vals[:, None], spinor_dim, axis=1)
        return cls(grid, vals)


# --------------------------------------------------------------------------
# operator classes


def _flip(branch: str) -> str:
    return "-" if branch == "+" else "+"


class KernelOperator:
    """Dense operator on spinor fields over a grid."""

    def __init__(self, grid: Grid, matrix: np.ndarray, branch: str = "+", label: str = ""):
        matrix = np.ascontiguousarray(matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("operator matrix must be square")
        if matrix.shape[0] % grid.num_points:
            raise ValueError("matrix dimension must be num_points * spinor_dim")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("operator matrix has non-finite entries")
        self.grid = grid
        self.matrix = matrix
        self.branch = branch
        self.label = label

    @property
    def spinor_dim(self) -> int:
        return self.matrix.shape[0] // self.grid.num_points

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        flat = np.asarray(values, dtype=complex).reshape(self.dim)
        return (self.matrix @ flat).reshape(self.grid.num_points, self.spinor_dim)

    def apply_adjoint(self, values: np.ndarray) -> np.ndarray:
        flat = np.asarray(values, dtype=complex).reshape(self.dim)
        return (flat.conj() @ self.matrix).conj().reshape(
            self.grid.num_points, self.spinor_dim
        )

    def adjoint(self) -> "KernelOperator":
        return KernelOperator(
            self.grid, self.matrix.conj().T, _flip(self.branch), self.label + "^*"
        )

    def materialize(self) -> np.ndarray:
        return self.matrix


class MultiplicationOperator:
    """Pointwise matrix multiplication, stored as one block per point."""

    def __init__(self, grid: Grid, blocks: np.ndarray, label: str = ""):
        blocks = np.ascontiguousarray(blocks, dtype=complex)
        if blocks.ndim == 1:
            blocks = blocks[:, None, None]
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ValueError("blocks must be (num_points, s, s)")
        if blocks.shape[0] != grid.num_points:
            raise ValueError("one block per grid point required")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("potential has non-finite entries")
        self.grid = grid
        self.blocks = blocks
        self.branch = "+"
        self.label = label

    @property
    def spinor_dim(self) -> int:
        return self.blocks.shape[1]

    @property
    def dim(self) -> int:
        return self.grid.num_points * self.spinor_dim

    def apply(self, values: np.ndarray) -> np.ndarray:
        vals = np.asarray(values, dtype=complex).reshape(
            self.grid.num_points, self.spinor_dim
        )
        return np.einsum("pab,pb->pa", self.blocks, vals)

    def apply_adjoint(self, values: np.ndarray) -> np.ndarray:
        vals = np.asarray(values, dtype=complex).reshape(
            self.grid.num_points, self.spinor_dim
        )
        return np.einsum("pba,pb->pa", self.blocks.conj(), vals)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.blocks - self.blocks.conj().transpose(0, 2, 1))))

    def pointwise_operator_norms(self) -> np.ndarray:
        return np.linalg.norm(self.blocks, ord=2, axis=(1, 2))

    def materialize(self) -> np.ndarray:
        _check_dense_dim(self.dim)
        s = self.spinor_dim
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for p in range(self.grid.num_points):
            out[p * s : (p + 1) * s, p * s : (p + 1) * s] = self.blocks[p]
        return out


class LatticeOperator:
    """Translation-invariant kernel applied by FFT convolution.

    ``table`` holds the quadrature-weighted kernel on the displacement
    lattice, shape (2N-1,)*n + (s, s); entry at offset o is the matrix
    coupling point x to point x - o*h.  Application embeds fields in a
    circular buffer of period 2N, so no wrap-around aliasing occurs.
    """

    def __init__(self, grid: Grid, table: np.ndarray, branch: str = "+", label: str = ""):
        table = np.ascontiguousarray(table, dtype=complex)
        m = 2 * grid.points_per_axis - 1
        if table.ndim == grid.n:
            table = table[..., None, None]
        if table.shape[: grid.n] != (m,) * grid.n or table.shape[-1] != table.shape[-2]:
            raise ValueError(f"table must be ({m},)*{grid.n} + (s, s)")
        if not np.all(np.isfinite(table)):
            raise ValueError("kernel table has non-finite entries")
        self.grid = grid
        self.table = table
        self.branch = branch
        self.label = label
        self._period = 2 * grid.points_per_axis
        self._khat = self._build_khat()

    def _build_khat(self) -> np.ndarray:
        n, npts, p = self.grid.n, self.grid.points_per_axis, self._period
        s = self.spinor_dim
        padded = np.zeros((p,) * n + (s, s), dtype=complex)
        # offset o in [-(N-1), N-1] lives at index o mod 2N
        idx = np.arange(-(npts - 1), npts) % p
        padded[np.ix_(*([idx] * n))] = self.table
        return np.fft.fftn(padded, axes=tuple(range(n)))

    @property
    def spinor_dim(self) -> int:
        return self.table.shape[-1]

    @property
    def dim(self) -> int:
        return self.grid.num_points * self.spinor_dim

    def _conv(self, values: np.ndarray, khat: np.ndarray) -> np.ndarray:
        n, npts, p = self.grid.n, self.grid.points_per_axis, self._period
        s = self.spinor_dim
        vals = np.asarray(values, dtype=complex).reshape((npts,) * n + (s,))
        padded = np.zeros((p,) * n + (s,), dtype=complex)
        padded[(slice(0, npts),) * n] = vals
        fhat = np.fft.fftn(padded, axes=tuple(range(n)))
        out = np.fft.ifftn(
            np.einsum("...ab,...b->...a", khat, fhat), axes=tuple(range(n))
        )
        return out[(slice(0, npts),) * n].reshape(self.grid.num_points, s)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self._conv(values, self._khat)

    def apply_adjoint(self, values: np.ndarray) -> np.ndarray:
        return self._conv(values, self._khat.conj().swapaxes(-1, -2))

    def materialize(self) -> np.ndarray:
        _check_dense_dim(self.dim)
        grid, s = self.grid, self.spinor_dim
        npts = grid.points_per_axis
        idx = np.stack(
            np.meshgrid(*([np.arange(npts)] * grid.n), indexing="ij"), axis=-1
        ).reshape(grid.num_points, grid.n)
        diff = idx[:, None, :] - idx[None, :, :] + (npts - 1)
        lin = np.ravel_multi_index(
            tuple(diff[..., k] for k in range(grid.n)), (2 * npts - 1,) * grid.n
        )
        flat = self.table.reshape(-1, s, s)
        blocks = flat[lin]
        return (
            blocks.transpose(0, 2, 1, 3).reshape(self.dim, self.dim)
        )

    def as_kernel_operator(self) -> KernelOperator:
        return KernelOperator(self.grid, self.materialize(), self.branch, self.label)


# --------------------------------------------------------------------------
# displacement tables and assembly


def displacement_lattice(grid: Grid) -> np.ndarray:
    """All pairwise displacements x - y, shape (2N-1,)*n + (n,)."""
    offs = grid.h * np.arange(-(grid.points_per_axis - 1), grid.points_per_axis)
    mesh = np.meshgrid(*([offs] * grid.n), indexing="ij")
    return np.stack(mesh, axis=-1)


def scalar_diagonal(n: int, z: complex, h: float, branch: str = "+") -> complex:
    """Cell integral of the resolvent kernel over one grid cell.

    The cell is replaced by the ball of equal volume centred at the
    singularity; the singular factor integrates in closed form and the
    regular remainder contributes its value at zero times h^n.
    """
    if n == 3:
        rb = (3.0 * h**3 / (4.0 * math.pi)) ** (1.0 / 3.0)
        val = 0.5 * rb * rb + 1j * z * h**3 / (4.0 * math.pi)
    else:
        rb = h / math.sqrt(math.pi)
        singular = 0.25 * rb * rb - 0.5 * rb * rb * math.log(rb)
        regular = 0.25j - (np.log(z / 2.0) + EULER_GAMMA) / (2.0 * math.pi)
        val = singular + regular * h * h
    return np.conj(val) if branch == "-" else val


def schrodinger_table(grid: Grid, z: complex, branch: str = "+") -> np.ndarray:
    disp = displacement_lattice(grid)
    r = np.linalg.norm(disp, axis=-1)
    centre = (np.s_[grid.points_per_axis - 1],) * grid.n
    r[centre] = 1.0
    table = schrodinger_kernel(grid.n, z, r.ravel(), branch).reshape(r.shape)
    table *= grid.h**grid.n
    table[centre] = scalar_diagonal(grid.n, z, grid.h, branch)
    return table


def dirac_table(
    grid: Grid, mats: DiracMatrices, mass: float, lam: float, branch: str = "+"
) -> np.ndarray:
    disp = displacement_lattice(grid).reshape(-1, grid.n)
    flat_centre = (disp == 0).all(axis=1).nonzero()[0][0]
    disp[flat_centre] = [1.0] * grid.n  # placeholder, overwritten below
    blocks = _dirac_blocks(mats, mass, lam, disp, branch)
    blocks *= grid.h**grid.n
    s = mats.spinor_dim
    z = _energy_to_wavenumber(lam, mass)
    zero_order = mass * mats.beta + lam * np.eye(s)
    blocks[flat_centre] = zero_order * scalar_diagonal(grid.n, z, grid.h, branch)
    m = 2 * grid.points_per_axis - 1
    return blocks.reshape((m,) * grid.n + (s, s))


def threshold_table(grid: Grid, mats: DiracMatrices, mass: float) -> np.ndarray:
    """Kernel table of the zero-energy boundary operator.

    In three dimensions this is m(beta+1)/(4 pi r) + i alpha.u/(4 pi r^2)
    with u the unit displacement; in two dimensions the massless form
    i alpha.u/(2 pi r).  The gradient part is odd, so its cell integral
    vanishes and only the mass part contributes on the diagonal.
    """
    if grid.n == 2 and mass != 0.0:
        raise ValueError("two-dimensional threshold operator requires zero mass")
    disp = displacement_lattice(grid).reshape(-1, grid.n)
    flat_centre = (disp == 0).all(axis=1).nonzero()[0][0]
    disp[flat_centre] = [1.0] * grid.n
    r = np.linalg.norm(disp, axis=1)
    unit = disp / r[:, None]
    s = mats.spinor_dim
    alpha_u = np.einsum("kj,jab->kab", unit, np.stack(mats.alphas))
    if grid.n == 3:
        blocks = (
            mass * (mats.beta + np.eye(s)) / (4.0 * math.pi * r)[:, None, None]
            * np.ones((1, s, s))
            + 1j * alpha_u / (4.0 * math.pi * r * r)[:, None, None]
        )
    else:
        blocks = 1j * alpha_u / (2.0 * math.pi * r)[:, None, None]
    blocks = blocks.astype(complex) * grid.h**grid.n
    if grid.n == 3:
        rb = (3.0 * grid.h**3 / (4.0 * math.pi)) ** (1.0 / 3.0)
        blocks[flat_centre] = mass * (mats.beta + np.eye(s)) * (0.5 * rb * rb)
    else:
        blocks[flat_centre] = 0.0
    m = 2 * grid.points_per_axis - 1
    return blocks.reshape((m,) * grid.n + (s, s))


def truncated_table(
    grid: Grid, z: float, branch: str, trunc: TruncationSpec
) -> np.ndarray:
    disp = displacement_lattice(grid).reshape(-1, grid.n)
    vals = truncated_kernel(grid.n, z, disp, branch, trunc) * grid.h**grid.n
    m = 2 * grid.points_per_axis - 1
    return vals.reshape((m,) * grid.n)


def short_range_table(grid: Grid, z: float, branch: str, d: float) -> np.ndarray:
    disp = displacement_lattice(grid).reshape(-1, grid.n)
    flat_centre = (disp == 0).all(axis=1).nonzero()[0][0]
    disp[flat_centre] = [1.0] * grid.n
    vals = short_range_kernel(grid.n, z, disp, branch, d) * grid.h**grid.n
    # the short-range cutoff equals one at zero displacement
    vals[flat_centre] = scalar_diagonal(grid.n, z, grid.h, branch)
    m = 2 * grid.points_per_axis - 1
    return vals.reshape((m,) * grid.n)


def assemble_operator(
    kernel_fn, grid: Grid, branch: str = "+", diagonal=0.0, label: str = ""
) -> KernelOperator:
    """Dense operator with entries kernel_fn(x - y) * h^n off-diagonal.

    ``kernel_fn`` maps displacements (k, n) to (k,) or (k, s, s) values;
    ``diagonal`` supplies the analytic cell integral across the
    singularity (see ``scalar_diagonal``).
    """
    disp = displacement_lattice(grid).reshape(-1, grid.n)
    flat_centre = (disp == 0).all(axis=1).nonzero()[0][0]
    probe = disp.copy()
    probe[flat_centre] = [1.0] * grid.n
    vals = np.asarray(kernel_fn(probe), dtype=complex) * grid.h**grid.n
    vals[flat_centre] = np.asarray(diagonal, dtype=complex)
    m = 2 * grid.points_per_axis - 1
    table = vals.reshape((m,) * grid.n + vals.shape[1:])
    lat = LatticeOperator(grid, table, branch, label)
    return lat.as_kernel_operator()


def schrodinger_lattice(grid: Grid, z: complex, branch: str = "+") -> LatticeOperator:
    return LatticeOperator(grid, schrodinger_table(grid, z, branch), branch, "R0")


def dirac_lattice(
    grid: Grid, mats: DiracMatrices, mass: float, lam: float, branch: str = "+"
) -> LatticeOperator:
    table = dirac_table(grid, mats, mass, lam, branch)
    return LatticeOperator(grid, table, branch, f"dirac_resolvent(lam={lam:g})")


def threshold_lattice(grid: Grid, mats: DiracMatrices, mass: float) -> LatticeOperator:
    return LatticeOperator(grid, threshold_table(grid, mats, mass), "+", "G")


# --------------------------------------------------------------------------
# potentials


_FIXED_PROFILE_SEED = 1789


def fixed_hermitian_profile(spinor_dim: int) -> np.ndarray:
    """Deterministic dense Hermitian matrix of unit spectral norm."""
    rng = np.random.default_rng(_FIXED_PROFILE_SEED)
    a = rng.normal(size=(spinor_dim, spinor_dim)) + 1j * rng.normal(
        size=(spinor_dim, spinor_dim)
    )
    h = 0.5 * (a + a.conj().T)
    return h / np.linalg.norm(h, ord=2)


@dataclass(frozen=True)
class PotentialSpec:
    """Matrix potential V(x) = s * envelope(|x|) * M with |V| <= |s|<x>^-rho."""

    kind: str
    coupling: float
    decay: float
    matrix_profile: str = "scalar"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"kind must be one of {POTENTIAL_KINDS}")
        if self.matrix_profile not in MATRIX_PROFILES:
            raise ValueError(f"matrix_profile must be one of {MATRIX_PROFILES}")
        if not self.decay > 0:
            raise ValueError("decay exponent must be positive")
        if self.kind == "gaussian_bump" and self.decay > 2.0:
            # exp(-r^2) <= <r>^-rho fails beyond rho = 2 near r = 1
            raise ValueError("gaussian_bump guarantees decay only up to rho = 2")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def envelope(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        bracket = np.sqrt(1.0 + r * r)
        if self.kind == "gaussian_bump":
            return np.exp(-r * r)
        if self.kind == "inverse_power":
            return bracket**-self.decay
        t = r / self.radius
        out = np.zeros_like(r)
        inside = t < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
        return out * bracket**-self.decay


def sample_potential(
    spec: PotentialSpec, grid: Grid, mats: DiracMatrices
) -> MultiplicationOperator:
    if spec.decay <= 1.0:
        warnings.warn(
            "decay exponent <= 1 is too weak for the weighted resolvent "
            "experiments downstream",
            stacklevel=2,
        )
    s = mats.spinor_dim
    if spec.matrix_profile == "scalar":
        profile = np.eye(s)
    elif spec.matrix_profile == "beta":
        profile = mats.beta
    else:
        profile = fixed_hermitian_profile(s)
    env = spec.coupling * spec.envelope(grid.radii)
    blocks = env[:, None, None] * profile[None]
    return MultiplicationOperator(grid, blocks, label=f"V[{spec.kind}]")


# --------------------------------------------------------------------------
# direct pairwise assembly (second route used for cross-checks and timing)


def _direct_dirac_matrix_numpy(
    grid: Grid, mats: DiracMatrices, mass: float, lam: float, branch: str
) -> np.ndarray:
    _check_dense_dim(grid.num_points * mats.spinor_dim)
    pts = grid.points
    diff = pts[:, None, :] - pts[None, :, :]
    flat = diff.reshape(-1, grid.n)
    keep = np.linalg.norm(flat, axis=1) > 0
    s = mats.spinor_dim
    blocks = np.zeros((flat.shape[0], s, s), dtype=complex)
    blocks[keep] = _dirac_blocks(mats, mass, lam, flat[keep], branch)
    blocks *= grid.h**grid.n
    z = _energy_to_wavenumber(lam, mass)
    diag = (mass * mats.beta + lam * np.eye(s)) * scalar_diagonal(
        grid.n, z, grid.h, branch
    )
    blocks[~keep] = diag
    npts = grid.num_points
    return (
        blocks.reshape(npts, npts, s, s).transpose(0, 2, 1, 3).reshape(npts * s, npts * s)
    )


if HAVE_NUMBA:
    import numba

    from .special import _h01_scalar

    @numba.njit(cache=True)
    def _direct_fill_numba(
        points, alphas, beta, mass, lam, z, weight, conj_branch, diag, out
    ):
        npts, n = points.shape
        s = beta.shape[0]
        pi4 = 4.0 * math.pi
        for p in range(npts):
            for q in range(npts):
                if p == q:
                    for a in range(s):
                        for b in range(s):
                            out[p * s + a, q * s + b] = diag[a, b]
                    continue
                r = 0.0
                for k in range(n):
                    d = points[p, k] - points[q, k]
                    r += d * d
                r = math.sqrt(r)
                if n == 3:
                    phase = np.exp(1j * z * r)
                    k0 = phase / (pi4 * r)
                    k1 = (1j * z - 1.0 / r) * phase / (pi4 * r)
                else:
                    h0, h1 = _h01_scalar(z * r + 0j)
                    k0 = 0.25j * h0
                    k1 = -0.25j * z * h1
                if conj_branch:
                    k0 = np.conj(k0)
                    k1 = np.conj(k1)
                k0 *= weight
                k1 *= weight
                for a in range(s):
                    for b in range(s):
                        acc = k0 * (mass * beta[a, b] + (lam if a == b else 0.0))
                        for k in range(n):
                            d = (points[p, k] - points[q, k]) / r
                            acc += -1j * k1 * d * alphas[k, a, b]
                        out[p * s + a, q * s + b] = acc
        return out


def direct_dirac_matrix(
    grid: Grid, mats: DiracMatrices, mass: float, lam: float, branch: str = "+"
) -> np.ndarray:
    """Entrywise pairwise assembly; same matrix as the lattice route.

    Kept as an independent construction for tests and as the numba
    benchmark kernel.  Falls back to vectorized numpy when numba is
    unavailable or disabled.
    """
    if BACKEND == "numba" and HAVE_NUMBA:
        _check_dense_dim(grid.num_points * mats.spinor_dim)
        z = complex(_energy_to_wavenumber(lam, mass))
        s = mats.spinor_dim
        diag = (mass * mats.beta + lam * np.eye(s)) * scalar_diagonal(
            grid.n, z, grid.h, branch
        )
        out = np.empty((grid.num_points * s, grid.num_points * s), dtype=complex)
        _direct_fill_numba(
            grid.points,
            np.stack(mats.alphas).astype(complex),
            mats.beta.astype(complex),
            float(mass),
            float(lam),
            z,
            grid.h**grid.n,
            branch == "-",
            diag.astype(complex),
            out,
        )
        return out
    return _direct_dirac_matrix_numpy(grid, mats, mass, lam, branch)


def apply_discrete_dirac(
    values: np.ndarray, grid: Grid, mats: DiracMatrices, mass: float
) -> np.ndarray:
    """First-order operator by central differences with periodic wrap.

    Rows within two cells of the boundary carry wrap-around error on a
    non-periodic grid; consumers restrict to the interior.
    """
    n, npts = grid.n, grid.points_per_axis
    s = mats.spinor_dim
    vals = np.asarray(values, dtype=complex).reshape((npts,) * n + (s,))
    out = np.einsum("ab,...b->...a", mass * mats.beta, vals)
    for j in range(n):
        grad = (np.roll(vals, -1, axis=j) - np.roll(vals, 1, axis=j)) / (2.0 * grid.h)
        out += np.einsum("ab,...b->...a", -1j * mats.alphas[j], grad)
    return out.reshape(grid.num_points, s)


# --------------------------------------------------------------------------
# norms


def weight_values(grid: Grid, sigma: float) -> np.ndarray:
    return (1.0 + grid.radii**2) ** (-sigma / 2.0)


class _WeightedOp:
    def __init__(self, op, w_left: np.ndarray, w_right: np.ndarray):
        self.op = op
        self.grid = op.grid
        self.dim = op.dim
        self.w_left = w_left
        self.w_right = w_right

    def apply(self, values):
        return self.w_left[:, None] * self.op.apply(self.w_right[:, None] * values)

    def apply_adjoint(self, values):
        return self.w_right[:, None] * self.op.apply_adjoint(
            self.w_left[:, None] * values
        )


def _start_vector(num_points: int, spinor_dim: int, grid: Grid) -> np.ndarray:
    # all-ones plus a small deterministic tilt; the tilt breaks parity so
    # odd kernels cannot hide from the iteration
    v = np.ones((num_points, spinor_dim), dtype=complex)
    ramp = np.sum(
        grid.points * (1.0 + np.arange(grid.n))[None, :], axis=1
    ) / (3.0 * grid.L)
    for a in range(spinor_dim):
        v[:, a] += 0.01 * (1.0 + 0.5 * a) * np.sin(ramp + a)
    return v


def operator_norm(op, rtol: float = 1e-6, maxiter: int = 10_000) -> float:
    """Spectral norm by power iteration on the normal operator."""
    num_points = op.grid.num_points
    spinor_dim = op.dim // num_points
    v = _start_vector(num_points, spinor_dim, op.grid)
    v /= np.linalg.norm(v)
    est = 0.0
    for it in range(1, maxiter + 1):
        w = op.apply_adjoint(op.apply(v))
        lam = np.linalg.norm(w)
        if lam == 0.0:
            return 0.0
        new = math.sqrt(lam)
        v = w / lam
        if it > 1 and abs(new - est) <= rtol * new:
            return new
        est = new
    residual = abs(new - est) / max(new, 1e-300)
    raise PowerIterationError(
        f"power iteration did not converge in {maxiter} steps "
        f"(estimate {new:.6e}, residual {residual:.2e})",
        estimate=new,
        residual=residual,
        iterations=maxiter,
    )


def weighted_operator_norm(
    op, sigma: float, rtol: float = 1e-6, maxiter: int = 10_000
) -> float:
    """Norm of <x>^-sigma A <x>^-sigma on L^2 of the box."""
    if not sigma > 0:
        raise ValueError("weight exponent must be positive")
    w = weight_values(op.grid, sigma)
    return operator_norm(_WeightedOp(op, w, w), rtol=rtol, maxiter=maxiter)


# --------------------------------------------------------------------------
# dyadic shells and B / B* norms


@dataclass(frozen=True, eq=False)
class DyadicShells:
    grid: Grid
    j_max: int
    labels: np.ndarray = field(repr=False)

    @cached_property
    def masks(self) -> tuple:
        return tuple(self.labels == j for j in range(self.j_max + 1))

    @cached_property
    def weights_half(self) -> np.ndarray:
        return 2.0 ** (0.5 * np.arange(self.j_max + 1))


def dyadic_shells(grid: Grid) -> DyadicShells:
    """Annuli D_0 = {r <= 1}, D_j = {2^(j-1) < r <= 2^j} tiling the box.

    j_max = ceil(log2 L); box corners beyond 2^j_max are absorbed into
    the outermost shell.
    """
    j_max = max(1, math.ceil(math.log2(grid.L)))
    r = grid.radii
    with np.errstate(divide="ignore"):
        raw = np.ceil(np.log2(np.maximum(r, 1e-300)))
    labels = np.clip(raw, 0, j_max).astype(int)
    return DyadicShells(grid, j_max, labels)


def shell_l2_norms(field_values: np.ndarray, shells: DyadicShells) -> np.ndarray:
    grid = shells.grid
    vals = np.asarray(field_values, dtype=complex).reshape(grid.num_points, -1)
    out = np.empty(shells.j_max + 1)
    for j, mask in enumerate(shells.masks):
        out[j] = grid.l2_norm(vals[mask])
    return out

def b_norm(f: SpinorField, shells: DyadicShells | None = None) -> float:
    shells = shells or dyadic_shells(f.grid)
    return float(np.sum(shells.weights_half * shell_l2_norms(f.values, shells)))


def bstar_norm(f: SpinorField, shells: DyadicShells | None = None) -> float:
    shells = shells or dyadic_shells(f.grid)
    return float(np.max(shell_l2_norms(f.values, shells) / shells.weights_half))


class _MaskedOp:
    def __init__(self, op, mask_left, mask_right):
        self.op = op
        self.grid = op.grid
        self.dim = op.dim
        self.mask_left = mask_left
        self.mask_right = mask_right

    def apply(self, values):
        return self.mask_left[:, None] * self.op.apply(self.mask_right[:, None] * values)

    def apply_adjoint(self, values):
        return self.mask_right[:, None] * self.op.apply_adjoint(
            self.mask_left[:, None] * values
        )


def shell_block_norms(op, shells: DyadicShells | None = None) -> np.ndarray:
    """Spectral norms of the shell-to-shell blocks P_j A P_k."""
    shells = shells or dyadic_shells(op.grid)
    jm = shells.j_max + 1
    out = np.zeros((jm, jm))
    dense = op.matrix if isinstance(op, KernelOperator) else None
    s = op.dim // op.grid.num_points
    for j in range(jm):
        for k in range(jm):
            if not shells.masks[j].any() or not shells.masks[k].any():
                continue
            if dense is not None:
                rows = np.repeat(shells.masks[j], s)
                cols = np.repeat(shells.masks[k], s)
                block = dense[np.ix_(rows, cols)]
                out[j, k] = np.linalg.norm(block, ord=2)
            else:
                masked = _MaskedOp(
                    op, shells.masks[j].astype(float), shells.masks[k].astype(float)
                )
                out[j, k] = operator_norm(masked, rtol=1e-6)
    return out


def b_to_bstar_norm(op, shells: DyadicShells | None = None) -> float:
    """Operator norm from the summed-shell space to its dual.

    Block duality makes this exactly the largest 2^-(j+k)/2-weighted
    shell block norm; the volume factors cancel between the two sides.
    """
    shells = shells or dyadic_shells(op.grid)
    sig = shell_block_norms(op, shells)
    j = np.arange(shells.j_max + 1)
    scale = 2.0 ** (-0.5 * (j[:, None] + j[None, :]))
    return float(np.max(scale * sig))


def b_to_b_bracket(op, shells: DyadicShells | None = None) -> tuple:
    """Lower and upper bounds for the shell-summed operator norm.

    Any single block gives a lower bound; the triangle inequality over
    target shells gives the upper one.
    """
    shells = shells or dyadic_shells(op.grid)
    sig = shell_block_norms(op, shells)
    j = np.arange(shells.j_max + 1)
    scale = 2.0 ** (0.5 * (j[:, None] - j[None, :]))
    lo = float(np.max(scale * sig))
    hi = float(np.max(np.sum(scale * sig, axis=0)))
    return lo, hi


# --------------------------------------------------------------------------
# binary dump


def dump_operator(op, path) -> None:
    """Write the dense matrix as row-major complex128 with a 64-byte header."""
    matrix = op.matrix if isinstance(op, KernelOperator) else op.materialize()
    grid = op.grid
    header = struct.pack(
        _DUMP_HEADER,
        _DUMP_MAGIC,
        _DUMP_VERSION,
        grid.n,
        grid.points_per_axis,
        op.dim // grid.num_points,
        matrix.shape[0],
        matrix.shape[1],
        grid.L,
        grid.h,
    )
    assert len(header) == 64
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(matrix, dtype=np.complex128).tobytes())


def read_operator(path):
    """Read a dumped operator; returns (matrix, meta dict)."""
    with open(path, "rb") as fh:
        header = fh.read(64)
        if len(header) != 64:
            raise ValueError("truncated operator file")
        magic, version, n, npts, s, rows, cols, L, h = struct.unpack(
            _DUMP_HEADER, header
        )
        if magic != _DUMP_MAGIC:
            raise ValueError("not an operator dump (bad magic)")
        if version != _DUMP_VERSION:
            raise ValueError(f"unsupported dump version {version}")
        data = np.frombuffer(fh.read(), dtype=np.complex128)
    if data.size != rows * cols:
        raise ValueError("operator file payload size mismatch")
    meta = {
        "n": n,
        "points_per_axis": npts,
        "spinor_dim": s,
        "L": L,
        "h": h,
    }
    return data.reshape(rows, cols).copy(), meta
