"""Directional resolvent pieces and high-frequency product experiments.

The free resolvent splits into a short-range piece plus one directional
piece per cap of a partition of unity on the sphere.  Iterated products
of (potential times first-order factor times directional piece) behave
very differently depending on whether consecutive caps point the same
way: aligned ("directed") chains keep their size as the frequency
grows, while chains with a large angular separation decay.  This module
builds the partitions, classifies and measures the products, and checks
the scaling of the truncated pieces and of the underlying windowed
oscillatory operator.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull

from .clifford import DiracMatrices
from .fields import (
    Grid,
    LatticeOperator,
    MultiplicationOperator,
    apply_discrete_dirac,
    b_to_b_bracket,
    b_to_bstar_norm,
    displacement_lattice,
    operator_norm,
    schrodinger_lattice,
    short_range_table,
    truncated_table,
)
from .kernels import TruncationSpec, oscillatory_amplitude, smoothstep, transition

MAX_CAPS = 10_000
SEPARATION_FACTOR = 10.0

# windowed oscillatory norm at the calibration point delta = 1/2,
# p = 1/2, unit annuli, on the reference box L = 6, 64 points per axis
OSC_CALIBRATION = 0.31884577842791795


def _cap_bump(t: np.ndarray) -> np.ndarray:
    """1 on t <= 1/2, smooth fall to 0 at t = 1."""
    return 1.0 - smoothstep(2.0 * np.asarray(t, dtype=float) - 1.0)


def _arc(dots: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(dots, -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class SpherePartition:
    """Overlapping caps whose normalized bumps sum to one on the sphere."""

    n: int
    delta: float
    centers: np.ndarray  # (count, n) unit vectors
    radii: np.ndarray    # (count,) angular support radii

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    def raw_weights(self, directions: np.ndarray) -> np.ndarray:
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        ang = _arc(dirs @ self.centers.T)
        return _cap_bump(ang / self.radii[None, :])

    def weights(self, directions: np.ndarray) -> np.ndarray:
        raw = self.raw_weights(directions)
        return raw / np.sum(raw, axis=1, keepdims=True)

    def cap_profile(self, i: int):
        """Single normalized bump as a direction-array callable."""
        if not 0 <= i < self.count:
            raise ValueError(f"cap index {i} out of range [0, {self.count})")
        return lambda dirs: self.weights(dirs)[:, i]

    @cached_property
    def separation_matrix(self) -> np.ndarray:
        """Great-circle distance between cap supports, clipped at zero."""
        ang = _arc(self.centers @ self.centers.T)
        gap = ang - self.radii[:, None] - self.radii[None, :]
        np.fill_diagonal(gap, 0.0)
        return np.maximum(gap, 0.0)


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = [
        (0.0, s1, s2 * phi)
        for s1 in (-1.0, 1.0)
        for s2 in (-1.0, 1.0)
    ]
    v += [(s1, s2 * phi, 0.0) for s1 in (-1.0, 1.0) for s2 in (-1.0, 1.0)]
    v += [(s1 * phi, 0.0, s2) for s1 in (-1.0, 1.0) for s2 in (-1.0, 1.0)]
    verts = np.asarray(v, dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = ConvexHull(verts).simplices
    return verts, faces


def _subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vlist = [tuple(p) for p in verts]
    cache: dict[frozenset, int] = {}

    def midpoint(i, j):
        key = frozenset((i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            m /= np.linalg.norm(m)
            cache[key] = len(vlist)
            vlist.append(tuple(m))
        return cache[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.asarray(vlist, dtype=float), np.asarray(new_faces, dtype=int)


def _max_edge_arc(verts: np.ndarray, faces: np.ndarray) -> float:
    worst = 0.0
    for a, b, c in faces:
        for i, j in ((a, b), (b, c), (c, a)):
            worst = max(worst, float(_arc(verts[i] @ verts[j])))
    return worst


def _coverage_check(part: SpherePartition) -> None:
    rng = np.random.default_rng(97)
    dirs = rng.normal(size=(2000, part.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([dirs, part.centers])
    low = np.min(np.sum(part.raw_weights(dirs), axis=1))
    if low <= 1e-9:
        raise RuntimeError("cap supports fail to cover the sphere")


def sphere_partition(n: int, delta: float) -> SpherePartition:
    """Partition of unity by caps of angular size ~delta.

    Two dimensions uses equally spaced arc centers; three uses the
    vertices of a subdivided icosahedral mesh.  Support diameters stay
    below 1.2 delta and cap count grows like delta^(1-n).
    """
    if n not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    if not 0.0 < delta <= math.pi / 2.0:
        raise ValueError("cap width must lie in (0, pi/2]")
    if n == 2:
        count = math.ceil(2.0 * math.pi / delta)
        if count > MAX_CAPS:
            raise ValueError(f"delta = {delta:g} would produce {count} caps")
        angles = 2.0 * math.pi * np.arange(count) / count
        centers = np.column_stack([np.cos(angles), np.sin(angles)])
        radii = np.full(count, 0.55 * delta)
    else:
        verts, faces = _icosahedron()
        while _max_edge_arc(verts, faces) > 0.95 * delta:
            if 4 * len(faces) > 2 * MAX_CAPS:
                raise ValueError(f"delta = {delta:g} would produce too many caps")
            verts, faces = _subdivide(verts, faces)
        if len(verts) > MAX_CAPS:
            raise ValueError(f"delta = {delta:g} would produce {len(verts)} caps")
        centers = verts
        radii = np.full(len(verts), 0.62 * _max_edge_arc(verts, faces))
    part = SpherePartition(n, float(delta), centers, radii)
    _coverage_check(part)
    return part


# --------------------------------------------------------------------------
# product descriptors and classification


@dataclass(frozen=True)
class ProductSpec:
    """Index word over caps plus the short-range marker "d"."""

    indices: tuple
    z: float
    d: float

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(self.indices))
        if not self.indices:
            raise ValueError("product needs at least one factor")
        for i in self.indices:
            if i != "d" and not isinstance(i, (int, np.integer)):
                raise ValueError(f"index must be a cap number or 'd', got {i!r}")
        if not self.z > 0:
            raise ValueError("frequency z must be positive")
        if not self.d > 0:
            raise ValueError("inner radius d must be positive")

    @property
    def M(self) -> int:
        return len(self.indices)


def classify_product(spec: ProductSpec, partition: SpherePartition) -> str:
    """directed when every adjacent surviving cap pair is nearly aligned.

    Short-range factors are dropped first; the all-short-range word is
    directed by convention.  Alignment means support separation below
    10 delta in great-circle distance.
    """
    caps = [i for i in spec.indices if i != "d"]
    for i in caps:
        if not 0 <= i < partition.count:
            raise ValueError(f"cap index {i} out of range [0, {partition.count})")
    if len(caps) <= 1:
        return "directed"
    sep = partition.separation_matrix
    cut = SEPARATION_FACTOR * partition.delta
    for a, b in zip(caps, caps[1:]):
        if sep[a, b] >= cut:
            return "undirected"
    return "directed"


def count_directed_products(partition: SpherePartition, M: int) -> int:
    """Number of length-M cap words classified directed (no "d" entries)."""
    if M < 1:
        raise ValueError("product length must be at least 1")
    adj = partition.separation_matrix < SEPARATION_FACTOR * partition.delta
    total = np.ones(partition.count)
    for _ in range(M - 1):
        total = adj @ total
    return int(round(float(np.sum(total))))


# --------------------------------------------------------------------------
# product chains


def _check_resolution(grid: Grid, z: float) -> None:
    if grid.h > math.pi / (4.0 * z):
        raise ValueError(
            f"grid spacing {grid.h:g} cannot resolve frequency {z:g}; "
            f"need h <= pi / (4 z) = {math.pi / (4 * z):g}"
        )


def _apply_scalar_columns(lat: LatticeOperator, vals: np.ndarray, adjoint=False):
    cols = []
    for a in range(vals.shape[1]):
        col = lat.apply_adjoint(vals[:, a]) if adjoint else lat.apply(vals[:, a])
        cols.append(col[:, 0])
    return np.stack(cols, axis=1)


class _ProductChain:
    """Right-to-left product of factors V (D + lam) R_k.

    R_k are scalar kernels applied per spinor component; the first-order
    part acts by central differences, which is self-adjoint under the
    periodic wrap.
    """

    def __init__(self, lattices, V, mats, mass, lam, grid):
        self.lattices = list(lattices)
        self.V = V
        self.mats = mats
        self.mass = mass
        self.lam = lam
        self.grid = grid
        self.dim = grid.num_points * mats.spinor_dim

    def _first_order(self, vals):
        return apply_discrete_dirac(vals, self.grid, self.mats, self.mass) + (
            self.lam * vals
        )

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.asarray(values, dtype=complex).reshape(
            self.grid.num_points, self.mats.spinor_dim
        )
        for lat in reversed(self.lattices):
            out = _apply_scalar_columns(lat, out)
            out = self.V.apply(self._first_order(out))
        return out

    def apply_adjoint(self, values: np.ndarray) -> np.ndarray:
        out = np.asarray(values, dtype=complex).reshape(
            self.grid.num_points, self.mats.spinor_dim
        )
        for lat in self.lattices:
            out = self._first_order(self.V.apply_adjoint(out))
            out = _apply_scalar_columns(lat, out, adjoint=True)
        return out


def directional_pieces(
    grid: Grid, z: float, branch: str, d: float, partition: SpherePartition
):
    """All cap-truncated kernels plus the short-range complement.

    The tables sum back to the untruncated kernel table exactly, because
    the cap bumps form a partition of unity and the radial cutoffs are
    complementary.
    """
    caps = [
        LatticeOperator(
            grid,
            truncated_table(
                grid,
                z,
                branch,
                TruncationSpec(d, partition.delta, partition.centers[i],
                               profile=partition.cap_profile(i)),
            ),
            branch,
            f"R[cap {i}]",
        )
        for i in range(partition.count)
    ]
    short = LatticeOperator(
        grid, short_range_table(grid, z, branch, d), branch, "R[short]"
    )
    return caps, short


def _chain_for(spec: ProductSpec, partition, V, mats, m, grid, branch):
    _check_resolution(grid, spec.z)
    lam = math.sqrt(spec.z**2 + m**2)
    lattices = []
    cache: dict = {}
    for i in spec.indices:
        if i not in cache:
            if i == "d":
                table = short_range_table(grid, spec.z, branch, spec.d)
            else:
                if not 0 <= i < partition.count:
                    raise ValueError(
                        f"cap index {i} out of range [0, {partition.count})"
                    )
                trunc = TruncationSpec(
                    spec.d, partition.delta, partition.centers[i],
                    profile=partition.cap_profile(i),
                )
                table = truncated_table(grid, spec.z, branch, trunc)
            cache[i] = LatticeOperator(grid, table, branch, f"R[{i}]")
        lattices.append(cache[i])
    return _ProductChain(lattices, V, mats, m, lam, grid)


def product_norm(
    spec: ProductSpec,
    partition: SpherePartition,
    V: MultiplicationOperator,
    mats: DiracMatrices,
    m: float,
    grid: Grid,
    branch: str = "+",
) -> tuple:
    """Shell-norm bracket (lower, upper) of the iterated truncated product."""
    chain = _chain_for(spec, partition, V, mats, m, grid, branch)
    return b_to_b_bracket(chain)


def product_norm_table(
    specs,
    partition: SpherePartition,
    V: MultiplicationOperator,
    mats: DiracMatrices,
    m: float,
    grid: Grid,
    branch: str = "+",
    threads: int = 1,
):
    """(spec, class, lo, hi) rows; independent specs run in parallel."""

    def one(spec):
        lo, hi = product_norm(spec, partition, V, mats, m, grid, branch)
        return spec, classify_product(spec, partition), lo, hi

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, specs))
    return [one(s) for s in specs]


# --------------------------------------------------------------------------
# tail smallness of the iterated full product


@dataclass
class NeumannReport:
    m_power: int
    z: float
    norm_lo: float
    norm_hi: float
    passed: bool
    inverse_bound: float | None
    power_brackets: list
    submultiplicative_discrepancy: bool

    def __iter__(self):
        # (norm, pass) unpacking
        return iter((self.norm_hi, self.passed))


def neumann_tail_check(
    M: int,
    z: float,
    V: MultiplicationOperator,
    mats: DiracMatrices,
    m: float,
    grid: Grid,
) -> NeumannReport:
    """Bracket the M-fold full product and test the 1/2 smallness gate.

    When the upper bound is at most one half the inverse of (I + V
    times first-order factor times free kernel) is geometrically
    summable; the implied bound sums the measured shorter powers
    against the tail ratio.
    """
    if M < 1:
        raise ValueError("power must be at least 1")
    _check_resolution(grid, z)
    lam = math.sqrt(z**2 + m**2)
    free = schrodinger_lattice(grid, z, "+")
    brackets = []
    for j in range(1, M + 1):
        chain = _ProductChain([free] * j, V, mats, m, lam, grid)
        brackets.append((j,) + b_to_b_bracket(chain))
    lo, hi = brackets[-1][1], brackets[-1][2]
    passed = hi <= 0.5
    bound = None
    if passed:
        partial = 1.0 + sum(b[2] for b in brackets[:-1])  # powers 0 .. M-1
        bound = partial / (1.0 - hi)
    discrepancy = False
    if M >= 2:
        lo2, hi1 = brackets[1][1], brackets[0][2]
        discrepancy = lo2 > 1.05 * hi1 * hi1
    return NeumannReport(
        m_power=M,
        z=z,
        norm_lo=lo,
        norm_hi=hi,
        passed=passed,
        inverse_bound=bound,
        power_brackets=brackets,
        submultiplicative_discrepancy=discrepancy,
    )


# --------------------------------------------------------------------------
# scaling of the truncated pieces


class _DiffChain:
    """Central difference along one axis composed with a lattice kernel."""

    def __init__(self, lat: LatticeOperator, axis: int = 0):
        self.lat = lat
        self.axis = axis
        self.grid = lat.grid
        self.dim = lat.dim

    def _diff(self, vals):
        n, npts = self.grid.n, self.grid.points_per_axis
        cols = vals.shape[1]
        cube = vals.reshape((npts,) * n + (cols,))
        out = (np.roll(cube, -1, self.axis) - np.roll(cube, 1, self.axis)) / (
            2.0 * self.grid.h
        )
        return out.reshape(self.grid.num_points, cols)

    def apply(self, values):
        vals = np.asarray(values, dtype=complex).reshape(self.grid.num_points, -1)
        return self._diff(self.lat.apply(vals))

    def apply_adjoint(self, values):
        vals = np.asarray(values, dtype=complex).reshape(self.grid.num_points, -1)
        return self.lat.apply_adjoint(-self._diff(vals))


@dataclass
class ScalingTable:
    alpha_order: int
    rows: list  # (lambda, norm)
    exponent: float


def _fit_exponent(rows) -> float:
    lams = np.log([r[0] for r in rows])
    norms = np.log([r[1] for r in rows])
    return float(np.polyfit(lams, norms, 1)[0])


def dir_res_scaling_check(
    d: float,
    delta: float,
    alpha_order: int,
    lambda_list,
    grid: Grid,
) -> ScalingTable:
    """Fit the frequency exponent of the directional piece.

    Measures the shell-dual norm of (derivative-order alpha of) the
    cap-and-radially-truncated kernel over the frequency list and
    returns the log-log slope; expected near -1 + alpha.
    """
    if alpha_order not in (0, 1):
        raise ValueError("derivative order must be 0 or 1")
    lams = [float(l) for l in lambda_list]
    if any(l < 1.0 for l in lams):
        raise ValueError("frequencies must be at least 1")
    _check_resolution(grid, max(lams))
    center = np.zeros(grid.n)
    center[0] = 1.0
    trunc = TruncationSpec(d, delta, center)
    rows = []
    for lam in lams:
        lat = LatticeOperator(grid, truncated_table(grid, lam, "+", trunc))
        op = lat if alpha_order == 0 else _DiffChain(lat)
        rows.append((lam, b_to_bstar_norm(op)))
    return ScalingTable(alpha_order, rows, _fit_exponent(rows))


@dataclass
class ShortRangeTable:
    d: float
    rows: list  # (lambda, norm at order 0, norm at order 1)
    raw_exponents: dict
    scaled_exponents: dict  # after dividing out <d lambda>


def short_range_check(d: float, lambda_list, grid: Grid) -> ShortRangeTable:
    """Frequency scaling of the near-diagonal piece at orders 0 and 1.

    The plain norms should follow lambda^(-2 + alpha) times the bracket
    factor sqrt(1 + (d lambda)^2); both the raw and the bracket-scaled
    slopes are returned.
    """
    lams = [float(l) for l in lambda_list]
    if any(l < 1.0 for l in lams):
        raise ValueError("frequencies must be at least 1")
    _check_resolution(grid, max(lams))
    rows = []
    for lam in lams:
        lat = LatticeOperator(grid, short_range_table(grid, lam, "+", d))
        rows.append((lam, operator_norm(lat), operator_norm(_DiffChain(lat))))
    raw, scaled = {}, {}
    for alpha in (0, 1):
        sub = [(r[0], r[1 + alpha]) for r in rows]
        raw[alpha] = _fit_exponent(sub)
        scaled[alpha] = _fit_exponent(
            [(lam, v / math.hypot(1.0, d * lam)) for lam, v in sub]
        )
    return ShortRangeTable(d, rows, raw, scaled)


# --------------------------------------------------------------------------
# windowed oscillatory operator


def _annulus_cutoff(r: np.ndarray) -> np.ndarray:
    """Smooth window supported on 1 < r < 2."""
    r = np.asarray(r, dtype=float)
    return transition(r, 1.0, 1.25) * (1.0 - transition(r, 1.75, 2.0))


class _WindowedOp:
    def __init__(self, lat: LatticeOperator, left: np.ndarray, right: np.ndarray):
        self.lat = lat
        self.left = left
        self.right = right
        self.grid = lat.grid
        self.dim = lat.dim

    def apply(self, values):
        vals = np.asarray(values, dtype=complex).reshape(self.grid.num_points, -1)
        return self.left[:, None] * self.lat.apply(self.right[:, None] * vals)

    def apply_adjoint(self, values):
        vals = np.asarray(values, dtype=complex).reshape(self.grid.num_points, -1)
        return self.right[:, None] * self.lat.apply_adjoint(
            self.left[:, None] * vals
        )


def oscillatory_norm_check(
    delta: float, p: float, r1: float, r2: float, grid2d: Grid
) -> tuple:
    """Measured vs predicted norm of the cap-localized oscillatory kernel.

    The operator integrates exp(i|x-y|) |x-y|^(-p) a(|x-y|) against a
    directional cap bump, windowed to annuli of radii r1 and r2.  The
    prediction is the frozen calibration constant times
    delta^(p - 1/2) sqrt(r1 r2).
    """
    if grid2d.n != 2:
        raise ValueError("the windowed oscillatory check is two-dimensional")
    if not 0.0 < delta < 1.0:
        raise ValueError("cap width must lie in (0, 1)")
    if not 0.5 <= p <= 1.5:
        raise ValueError("kernel power must lie in [1/2, 3/2]")
    if min(r1, r2) < 1.0:
        raise ValueError("annulus radii must be at least 1")
    if grid2d.L < 2.0 * max(r1, r2):
        raise ValueError("box too small for the outer annulus")
    disp = displacement_lattice(grid2d).reshape(-1, 2)
    flat_centre = (disp == 0).all(axis=1).nonzero()[0][0]
    disp[flat_centre] = [1.0, 1.0]
    r = np.linalg.norm(disp, axis=1)
    cap = TruncationSpec(1.0, delta, np.array([1.0, 0.0]))
    vals = (
        np.exp(1j * r)
        * r ** (-p)
        * oscillatory_amplitude(2, r)
        * cap.cap_weight(disp / r[:, None])
        * grid2d.h**2
    )
    vals[flat_centre] = 0.0  # amplitude vanishes below r = 1/2
    mside = 2 * grid2d.points_per_axis - 1
    lat = LatticeOperator(grid2d, vals.reshape(mside, mside))
    windowed = _WindowedOp(
        lat, _annulus_cutoff(grid2d.radii / r1), _annulus_cutoff(grid2d.radii / r2)
    )
    measured = operator_norm(windowed)
    bound = OSC_CALIBRATION * delta ** (p - 0.5) * math.sqrt(r1 * r2)
    return measured, bound
