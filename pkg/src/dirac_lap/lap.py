"""Perturbed resolvents, weighted-norm sweeps, and threshold regularity.

The perturbed resolvent is built by the Birman-Schwinger route: assemble
the free resolvent densely, solve (I + V R) from the right by LU with
partial pivoting, and keep the reciprocal-condition estimate so that
near-singular solves (candidate embedded eigenvalues or resonances) are
flagged rather than silently returned.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.sparse.linalg import LinearOperator, eigsh

from .clifford import DiracMatrices
from .fields import (
    Grid,
    KernelOperator,
    MultiplicationOperator,
    PotentialSpec,
    b_to_bstar_norm,
    dirac_lattice,
    operator_norm,
    sample_potential,
    threshold_lattice,
    weight_values,
    weighted_operator_norm,
)

REFINE_CONDITION = 1e8
RESONANCE_CONDITION = 1e12
REGULARITY_TOL = 1e-6


class ResonanceError(RuntimeError):
    """The Birman-Schwinger solve was numerically singular."""

    def __init__(self, lam, condition):
        super().__init__(
            f"I + V*R0 nearly singular at lambda = {lam} "
            f"(condition {condition:.3e}); possible embedded eigenvalue "
            "or resonance"
        )
        self.lam = lam
        self.condition = condition


@dataclass
class LapReport:
    lambdas: list
    sigma: float
    norms_weighted: list
    branch: str
    sup_norm: float
    norms_b_bstar: list | None = None
    norms_unweighted: list | None = None
    boundary_gap: list | None = None
    conditions: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)


@dataclass
class ThresholdReport:
    m: float
    sigma: float
    smallest_singular_value: float
    regular: bool
    blambda_decay: list
    resonance_profile: np.ndarray | None = None


@dataclass
class CouplingSweepResult:
    """Table of (coupling, smallest singular value) with crossing bracket."""

    table: list
    bracket: tuple | None = None
    crossing: float | None = None

    def __iter__(self):
        return iter(self.table)

    def __len__(self):
        return len(self.table)


# --------------------------------------------------------------------------
# Birman-Schwinger solve


def _left_multiply_potential(V: MultiplicationOperator, matrix: np.ndarray) -> np.ndarray:
    """V @ matrix using the pointwise block structure of V."""
    npts, s = V.blocks.shape[0], V.blocks.shape[1]
    cols = matrix.shape[1]
    resh = matrix.reshape(npts, s, cols)
    return np.einsum("pab,pbc->pac", V.blocks, resh).reshape(npts * s, cols)


def _right_multiply_potential(matrix: np.ndarray, V: MultiplicationOperator) -> np.ndarray:
    """matrix @ V using the pointwise block structure of V."""
    npts, s = V.blocks.shape[0], V.blocks.shape[1]
    rows = matrix.shape[0]
    resh = matrix.reshape(rows, npts, s)
    return np.einsum("dqb,qbc->dqc", resh, V.blocks).reshape(rows, npts * s)


def _lu_with_condition(a: np.ndarray):
    """LU factorization plus a one-norm reciprocal condition estimate."""
    anorm = np.linalg.norm(a, 1)
    lu, piv, info = lapack.zgetrf(a)
    if info != 0:
        return lu, piv, math.inf
    rcond, _ = lapack.zgecon(lu, anorm, norm="1")
    cond = math.inf if rcond == 0 else 1.0 / rcond
    return lu, piv, cond


def _solve_right(lu, piv, rhs: np.ndarray) -> np.ndarray:
    """X with X A = rhs, via the transposed factorization."""
    xt, info = lapack.zgetrs(lu, piv, rhs.T, trans=1)
    if info != 0:
        raise RuntimeError(f"LU back-substitution failed (info={info})")
    return xt.T


def _check_spectral_parameter(lam: complex, mass: float) -> complex:
    lam = complex(lam)
    if lam.imag < 0:
        raise ValueError("spectral parameter must satisfy Im lambda >= 0")
    if lam.imag == 0 and abs(lam.real) <= mass:
        raise ValueError(
            f"real spectral parameter must satisfy |lambda| > m = {mass}"
        )
    return lam if lam.imag > 0 else lam.real


def perturbed_resolvent(
    lam,
    branch: str,
    V: MultiplicationOperator,
    mats: DiracMatrices,
    grid: Grid,
    mass: float,
) -> KernelOperator:
    """Resolvent of the potential-perturbed operator at ``lam``.

    Returns R0 (I + V R0)^{-1} as a dense operator; the condition
    estimate of the solve is stored on the result as
    ``solve_condition``.
    """
    lam = _check_spectral_parameter(lam, mass)
    if isinstance(lam, complex) and branch != "+":
        raise ValueError("upper half-plane points belong to the + branch")
    r0 = dirac_lattice(grid, mats, mass, lam, branch).materialize()
    dim = r0.shape[0]
    a = np.eye(dim, dtype=complex)
    a += _left_multiply_potential(V, r0)
    lu, piv, cond = _lu_with_condition(a)
    if cond > RESONANCE_CONDITION:
        raise ResonanceError(lam, cond)
    x = _solve_right(lu, piv, r0)
    if cond > REFINE_CONDITION:
        x += _solve_right(lu, piv, r0 - x @ a)
    out = KernelOperator(grid, x, branch, f"RV(lam={lam})")
    out.solve_condition = cond
    return out


def perturbed_resolvent_apply(
    lam,
    branch: str,
    V: MultiplicationOperator,
    mats: DiracMatrices,
    grid: Grid,
    mass: float,
    values: np.ndarray,
):
    """Apply the perturbed resolvent to one field without forming it.

    Memory-lean variant for larger grids: only the Birman-Schwinger
    matrix is factorized; the result of the vector solve is pushed back
    through the free resolvent.  Returns (values, condition).
    """
    lam = _check_spectral_parameter(lam, mass)
    lat = dirac_lattice(grid, mats, mass, lam, branch)
    r0 = lat.materialize()
    dim = r0.shape[0]
    a = np.eye(dim, dtype=complex)
    a += _left_multiply_potential(V, r0)
    lu, piv, cond = _lu_with_condition(a)
    if cond > RESONANCE_CONDITION:
        raise ResonanceError(lam, cond)
    flat = np.asarray(values, dtype=complex).reshape(dim)
    y, info = lapack.zgetrs(lu, piv, flat)
    if info != 0:
        raise RuntimeError(f"LU back-substitution failed (info={info})")
    if cond > REFINE_CONDITION:
        correction, info = lapack.zgetrs(lu, piv, flat - a @ y)
        if info:
            raise RuntimeError("refinement solve failed")
        y = y + correction
    out = (r0 @ y).reshape(grid.num_points, mats.spinor_dim)
    return out, cond


# --------------------------------------------------------------------------
# sweeps


def lap_sweep(
    lambda_grid,
    sigma: float,
    V: MultiplicationOperator,
    mats: DiracMatrices,
    grid: Grid,
    mass: float,
    branch: str = "+",
    include_b_bstar: bool = False,
    threads: int = 1,
) -> LapReport:
    """Weighted resolvent norms over a real spectral window."""
    if not sigma > 0.5:
        raise ValueError("weight exponent must exceed 1/2")
    lambdas = [float(l) for l in lambda_grid]
    for l in lambdas:
        if abs(l) <= mass:
            raise ValueError(f"sweep point {l} lies in the spectral gap")

    def one(lam):
        try:
            op = perturbed_resolvent(lam, branch, V, mats, grid, mass)
        except ResonanceError as exc:
            return math.nan, math.nan, exc.condition, "resonance?"
        norm = weighted_operator_norm(op, sigma)
        nb = b_to_bstar_norm(op) if include_b_bstar else math.nan
        return norm, nb, op.solve_condition, ""

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, lambdas))
    else:
        rows = [one(l) for l in lambdas]
    norms = [r[0] for r in rows]
    finite = [x for x in norms if not math.isnan(x)]
    return LapReport(
        lambdas=lambdas,
        sigma=sigma,
        norms_weighted=norms,
        branch=branch,
        sup_norm=max(finite) if finite else math.nan,
        norms_b_bstar=[r[1] for r in rows] if include_b_bstar else None,
        conditions=[r[2] for r in rows],
        flags=[r[3] for r in rows],
        config_echo={"mass": mass, "grid": (grid.n, grid.L, grid.points_per_axis)},
    )


def complex_sweep(
    lam: float,
    gamma_grid,
    sigma: float,
    V: MultiplicationOperator,
    mats: DiracMatrices,
    grid: Grid,
    mass: float,
) -> LapReport:
    """Norms off the axis plus the gap to the boundary value.

    For each gamma > 0 the report carries the weighted norm of
    R_V(lam + i gamma), the plain operator norm, and the weighted norm
    of the difference to the boundary operator R_V^+(lam).
    """
    if not sigma > 0.5:
        raise ValueError("weight exponent must exceed 1/2")
    gammas = [float(g) for g in gamma_grid]
    if any(g <= 0 for g in gammas):
        raise ValueError("offsets must be positive")
    boundary = perturbed_resolvent(lam, "+", V, mats, grid, mass)
    norms, gaps, plain, conds, flags = [], [], [], [], []
    for g in gammas:
        try:
            op = perturbed_resolvent(lam + 1j * g, "+", V, mats, grid, mass)
        except ResonanceError as exc:
            norms.append(math.nan)
            gaps.append(math.nan)
            plain.append(math.nan)
            conds.append(exc.condition)
            flags.append("resonance?")
            continue
        norms.append(weighted_operator_norm(op, sigma))
        diff = KernelOperator(grid, op.matrix - boundary.matrix)
        gaps.append(weighted_operator_norm(diff, sigma))
        plain.append(operator_norm(op))
        conds.append(op.solve_condition)
        flags.append("")
    finite = [x for x in norms if not math.isnan(x)]
    return LapReport(
        lambdas=[lam + 1j * g for g in gammas],
        sigma=sigma,
        norms_weighted=norms,
        branch="+",
        sup_norm=max(finite) if finite else math.nan,
        norms_unweighted=plain,
        boundary_gap=gaps,
        conditions=conds,
        flags=flags,
        config_echo={"mass": mass, "lambda": lam},
    )


# --------------------------------------------------------------------------
# threshold analysis


def threshold_operator(mats: DiracMatrices, m: float, grid: Grid) -> KernelOperator:
    """Boundary value of the free resolvent at the spectral edge."""
    return threshold_lattice(grid, mats, m).as_kernel_operator()


def _check_threshold_sigma(sigma: float, m: float) -> None:
    if m > 0 and not sigma > 1:
        raise ValueError("massive threshold analysis needs sigma > 1")
    if m == 0 and not sigma > 0.5:
        raise ValueError("massless threshold analysis needs sigma > 1/2")


def _birman_schwinger_matrix(
    V: MultiplicationOperator, sigma: float, mats: DiracMatrices, m: float, grid: Grid
) -> np.ndarray:
    g_dense = threshold_operator(mats, m, grid).matrix
    gv = _right_multiply_potential(g_dense, V)
    w = np.repeat(weight_values(grid, sigma), mats.spinor_dim)
    return np.eye(gv.shape[0], dtype=complex) + (w[:, None] * gv) / w[None, :]


def regularity_check(
    V: MultiplicationOperator,
    sigma: float,
    mats: DiracMatrices,
    m: float,
    grid: Grid,
    approach_lambdas=None,
) -> ThresholdReport:
    """Threshold regularity plus the approach of the resolvent to it.

    Builds I + w G V w^{-1} densely, takes its smallest singular value,
    and tabulates the weighted norm of R0+(lambda) - G for lambda
    descending to the edge.
    """
    _check_threshold_sigma(sigma, m)
    bs = _birman_schwinger_matrix(V, sigma, mats, m, grid)
    svals = np.linalg.svd(bs, compute_uv=False)
    ssv = float(svals[-1])
    profile = None
    if ssv <= REGULARITY_TOL:
        _, _, vh = np.linalg.svd(bs)
        profile = vh[-1].conj()
    if approach_lambdas is None:
        approach_lambdas = [m + 0.4, m + 0.2, m + 0.1]
    g_op = threshold_lattice(grid, mats, m)
    g_mat = g_op.materialize()
    decay = []
    for lam in approach_lambdas:
        r0 = dirac_lattice(grid, mats, m, lam, "+").materialize()
        diff = KernelOperator(grid, r0 - g_mat)
        decay.append((float(lam), weighted_operator_norm(diff, sigma)))
    return ThresholdReport(
        m=m,
        sigma=sigma,
        smallest_singular_value=ssv,
        regular=ssv > REGULARITY_TOL,
        blambda_decay=decay,
        resonance_profile=profile,
    )


class _BirmanSchwingerAction:
    """Matrix-free x -> (I + w G V w^{-1}) x built on the fft lattice."""

    def __init__(self, V, sigma, mats, m, grid):
        self.V = V
        self.g = threshold_lattice(grid, mats, m)
        self.w = np.repeat(weight_values(grid, sigma), mats.spinor_dim)
        self.shape2 = (grid.num_points, mats.spinor_dim)
        self.dim = grid.num_points * mats.spinor_dim

    def matvec(self, x):
        x = np.asarray(x, dtype=complex).reshape(self.dim)
        y = self.V.apply((x / self.w).reshape(self.shape2))
        y = self.g.apply(y).reshape(self.dim)
        return x + self.w * y

    def rmatvec(self, x):
        x = np.asarray(x, dtype=complex).reshape(self.dim)
        y = self.g.apply_adjoint((self.w * x).reshape(self.shape2))
        y = self.V.apply_adjoint(y).reshape(self.dim)
        return x + y / self.w


def _smallest_singular_value_dense(bs_matrix: np.ndarray) -> float:
    return float(np.linalg.svd(bs_matrix, compute_uv=False)[-1])


def _smallest_singular_value_lanczos(action, maxiter: int = 20000) -> float:
    op = LinearOperator(
        (action.dim, action.dim),
        matvec=lambda x: action.rmatvec(action.matvec(x)),
        dtype=complex,
    )
    rng = np.random.default_rng(29)
    v0 = rng.normal(size=action.dim) + 1j * rng.normal(size=action.dim)
    vals = eigsh(
        op, k=1, which="SA", maxiter=maxiter, tol=1e-9, v0=v0,
        return_eigenvectors=False,
    )
    return float(math.sqrt(max(vals[0], 0.0)))


_DENSE_SWEEP_DIM = 2600


def _scaled_potential(base: MultiplicationOperator, s: float) -> MultiplicationOperator:
    return MultiplicationOperator(base.grid, s * base.blocks, base.label)


def coupling_sweep(
    base_potential,
    s_grid,
    sigma: float,
    mats: DiracMatrices,
    m: float,
    grid: Grid,
    crossing_tol: float = 1e-3,
) -> CouplingSweepResult:
    """Smallest singular value of I + w G (sV) w^{-1} over couplings s.

    The first sign change of (value - crossing_tol) is refined by
    bisection until the bracket is narrower than 1e-3 of its midpoint.
    When the table never drops below the tolerance the interior minimum
    is refined instead, since a resonance coupling is a transversal
    touch of zero that a coarse table straddles without sampling.
    """
    _check_threshold_sigma(sigma, m)
    if isinstance(base_potential, PotentialSpec):
        base = sample_potential(base_potential, grid, mats)
    else:
        base = base_potential
    dim = grid.num_points * mats.spinor_dim
    dense = dim <= _DENSE_SWEEP_DIM

    if dense:
        g_dense = threshold_operator(mats, m, grid).matrix
        w = np.repeat(weight_values(grid, sigma), mats.spinor_dim)
        gv = _right_multiply_potential(g_dense, base)
        k_mat = (w[:, None] * gv) / w[None, :]
        eye = np.eye(dim, dtype=complex)

        def value(s):
            return _smallest_singular_value_dense(eye + s * k_mat)

    else:

        def value(s):
            action = _BirmanSchwingerAction(
                _scaled_potential(base, s), sigma, mats, m, grid
            )
            return _smallest_singular_value_lanczos(action)

    table = [(float(s), value(float(s))) for s in s_grid]

    def bisect(lo, f_lo, hi):
        while hi - lo > 1e-3 * 0.5 * (hi + lo):
            mid = 0.5 * (lo + hi)
            f_mid = value(mid) - crossing_tol
            if f_lo * f_mid <= 0:
                hi = mid
            else:
                lo, f_lo = mid, f_mid
        return lo, hi

    for (s_lo, v_lo), (s_hi, v_hi) in zip(table, table[1:]):
        if (v_lo - crossing_tol) * (v_hi - crossing_tol) < 0:
            lo, hi = bisect(s_lo, v_lo - crossing_tol, s_hi)
            return CouplingSweepResult(
                table=table, bracket=(lo, hi), crossing=0.5 * (lo + hi)
            )

    # a transversal dip touches zero between table points without ever
    # leaving a sub-tolerance entry behind; refine the interior minimum
    # (locally V-shaped) by golden-section search
    idx = min(range(len(table)), key=lambda i: table[i][1])
    if 0 < idx < len(table) - 1:
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        lo, hi = table[idx - 1][0], table[idx + 1][0]
        a = hi - invphi * (hi - lo)
        b = lo + invphi * (hi - lo)
        fa, fb = value(a), value(b)
        while hi - lo > 1e-3 * 0.5 * (hi + lo):
            if fa <= fb:
                hi, b, fb = b, a, fa
                a = hi - invphi * (hi - lo)
                fa = value(a)
            else:
                lo, a, fa = a, b, fb
                b = lo + invphi * (hi - lo)
                fb = value(b)
        mid = 0.5 * (lo + hi)
        if value(mid) < crossing_tol:
            return CouplingSweepResult(table=table, bracket=(lo, hi), crossing=mid)
    return CouplingSweepResult(table=table, bracket=None, crossing=None)


def hermitian_threshold_crossing(
    base_potential: MultiplicationOperator,
    mats: DiracMatrices,
    m: float,
    grid: Grid,
) -> float:
    """Crossing coupling for attractive scalar wells, via a Hermitian form.

    For V = -s g(x) I with g >= 0 the operator I + w G V w^{-1} is
    singular exactly when 1/s is an eigenvalue of w G g w^{-1}, which is
    similar to the Hermitian sqrt(g) G sqrt(g); the first crossing is the
    reciprocal of its largest eigenvalue.  Independent of the weight, so
    it cross-checks the singular-value sweep.
    """
    blocks = base_potential.blocks
    s_dim = blocks.shape[1]
    c = blocks[:, 0, 0]
    scalar_defect = np.max(np.abs(blocks - c[:, None, None] * np.eye(s_dim)))
    if scalar_defect > 1e-12 or np.max(np.abs(c.imag)) > 1e-14:
        raise ValueError("base potential must be a real scalar multiple of I")
    if np.any(c.real > 1e-15):
        raise ValueError("well profile must be attractive (V <= 0)")
    g_vals = np.repeat(-c.real, s_dim)  # -V diagonal, nonnegative
    sqrt_g = np.sqrt(np.maximum(g_vals, 0.0))
    lat = threshold_lattice(grid, mats, m)
    shape2 = (grid.num_points, s_dim)

    def matvec(x):
        y = sqrt_g * np.asarray(x, dtype=complex).reshape(-1)
        y = lat.apply(y.reshape(shape2)).reshape(-1)
        return sqrt_g * y

    op = LinearOperator((lat.dim, lat.dim), matvec=matvec, dtype=complex)
    rng = np.random.default_rng(31)
    v0 = rng.normal(size=lat.dim) + 1j * rng.normal(size=lat.dim)
    top = eigsh(op, k=1, which="LA", maxiter=20000, tol=1e-10, v0=v0,
                return_eigenvectors=False)[0]
    if top <= 0:
        raise RuntimeError("no positive eigenvalue; no crossing for s > 0")
    return float(1.0 / top)
