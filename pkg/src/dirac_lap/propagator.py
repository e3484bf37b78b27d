"""Time evolution on the periodic box and its space-time size estimates.

The continuum operator lives on the whole space; here it is replaced by
its exact Fourier realization on a periodic grid, so every spectral
quantity comes from one dense Hermitian eigendecomposition.  Wrap-around
pollutes dispersive measurements once waves cross the box, which caps
every time window at half the box width (group velocity is at most one).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clifford import DiracMatrices
from .fields import (
    Grid,
    KernelOperator,
    LatticeOperator,
    MultiplicationOperator,
    SpinorField,
    _check_dense_dim,
    dirac_lattice,
    weight_values,
    weighted_operator_norm,
)
from .lap import perturbed_resolvent

log = logging.getLogger(__name__)

# an eigenvector counts as spatially localized when it occupies fewer
# than this fraction of the box's sites (inverse participation ratio)
LOCALIZATION_FRACTION = 0.1
# relative margin around the localization cutoff that triggers a warning
AMBIGUITY_BAND = 0.2
# least number of time samples per period of the fastest discrete mode
SAMPLES_PER_PERIOD = 32

HERMITICITY_TOL = 1e-10


# --------------------------------------------------------------------------
# dense Hamiltonian on the periodic box


@dataclass(eq=False)
class DiscreteHamiltonian:
    """Dense Hermitian matrix of the operator plus its eigendecomposition.

    ``point_spectrum_flags[k]`` marks eigenpairs treated as discrete
    spectrum surrogates: either the eigenvalue sits strictly inside the
    mass gap or the eigenvector is spatially localized.  Borderline
    participation ratios are recorded in ``classification_notes`` and
    logged as warnings.
    """

    grid: Grid
    mats: DiracMatrices
    mass: float
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    point_spectrum_flags: np.ndarray
    classification_notes: tuple = field(default=())
    gap_band: float = 0.0
    participation_cutoff: float = 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def flagged_count(self) -> int:
        return int(np.sum(self.point_spectrum_flags))


def _axis_frequencies(grid: Grid) -> np.ndarray:
    return 2.0 * math.pi * np.fft.fftfreq(grid.points_per_axis, d=grid.h)


def _axis_multiplier(grid: Grid) -> np.ndarray:
    """Position-space matrix of the frequency coordinate along one axis."""
    npts = grid.points_per_axis
    dft = np.fft.fft(np.eye(npts), axis=0) / math.sqrt(npts)
    return dft.conj().T @ (_axis_frequencies(grid)[:, None] * dft)


def _free_matrix(mats: DiracMatrices, mass: float, grid: Grid) -> np.ndarray:
    """First-order operator realized exactly through the discrete Fourier basis."""
    npts = grid.points_per_axis
    m1 = _axis_multiplier(grid)
    eye1 = np.eye(npts)
    total = mass * np.kron(np.eye(grid.num_points), mats.beta).astype(complex)
    for j in range(grid.n):
        space = m1 if j == 0 else eye1
        for k in range(1, grid.n):
            space = np.kron(space, m1 if k == j else eye1)
        total += np.kron(space, mats.alphas[j])
    return total


def _classify_point_spectrum(eigenvalues, eigenvectors, mass, grid, spinor_dim, blocks):
    site_density = np.sum(
        np.abs(eigenvectors.reshape(grid.num_points, spinor_dim, -1)) ** 2, axis=1
    )
    participation = 1.0 / np.sum(site_density**2, axis=0)
    cutoff = LOCALIZATION_FRACTION * grid.num_points
    flags = participation < cutoff
    # band-edge states drift into the gap at first order by the box mean
    # of the potential; only eigenvalues deeper than twice that drift are
    # gap evidence on their own
    band = 1e-8 * (1.0 + mass)
    if blocks is not None:
        band += 2.0 * float(np.mean(np.linalg.norm(blocks, ord=2, axis=(1, 2))))
    if mass > 0:
        flags = flags | (np.abs(eigenvalues) < mass - band)
    lo, hi = (1.0 - AMBIGUITY_BAND) * cutoff, (1.0 + AMBIGUITY_BAND) * cutoff
    notes = tuple(
        f"eigenvalue {eigenvalues[k]:.6g}: participation {participation[k]:.4g} "
        f"is within {AMBIGUITY_BAND:.0%} of the localization cutoff {cutoff:.4g}"
        for k in np.nonzero((participation >= lo) & (participation <= hi))[0]
    )
    return flags, notes, band, cutoff


def discretize_hamiltonian(
    mats: DiracMatrices,
    mass: float,
    V: MultiplicationOperator | np.ndarray | None,
    grid: Grid,
) -> DiscreteHamiltonian:
    """Assemble and diagonalize the perturbed operator on a periodic grid.

    The free part is diagonal over discrete frequencies with symbol
    ``alpha . xi + mass * beta``; the potential adds one pointwise block
    per site.  A non-Hermitian assembly aborts before diagonalization.
    """
    if mats.dim != grid.n:
        raise ValueError("matrix family dimension must match the grid")
    if not grid.periodic:
        raise ValueError("evolution requires a grid marked periodic")
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    s = mats.spinor_dim
    dim = grid.num_points * s
    _check_dense_dim(dim)
    h_mat = _free_matrix(mats, mass, grid)
    blocks = None
    if V is not None:
        blocks = V.blocks if isinstance(V, MultiplicationOperator) else None
        if blocks is None:
            blocks = np.asarray(V, dtype=complex)
        if blocks.shape != (grid.num_points, s, s):
            raise ValueError("potential blocks must be (num_points, s, s)")
        view = h_mat.reshape(grid.num_points, s, grid.num_points, s)
        idx = np.arange(grid.num_points)
        view[idx, :, idx, :] += blocks
    scale = 1.0 + float(np.max(np.abs(h_mat)))
    defect = float(np.max(np.abs(h_mat - h_mat.conj().T)))
    if defect > HERMITICITY_TOL * scale:
        raise ValueError(f"assembled operator is not Hermitian (defect {defect:.3e})")
    h_mat = 0.5 * (h_mat + h_mat.conj().T)
    eigenvalues, eigenvectors = np.linalg.eigh(h_mat)
    flags, notes, band, cutoff = _classify_point_spectrum(
        eigenvalues, eigenvectors, mass, grid, s, blocks
    )
    log.info("classification thresholds: gap band %.6g, participation %.6g", band, cutoff)
    for note in notes:
        log.warning(note)
    return DiscreteHamiltonian(
        grid, mats, float(mass), h_mat, eigenvalues, eigenvectors, flags, notes,
        gap_band=band, participation_cutoff=cutoff,
    )


def continuous_projection(H: DiscreteHamiltonian) -> np.ndarray:
    """Orthogonal projector off the flagged eigenpairs (dense matrix)."""
    proj = np.eye(H.dim, dtype=complex)
    flagged = H.eigenvectors[:, H.point_spectrum_flags]
    if flagged.size:
        proj -= flagged @ flagged.conj().T
    return proj


# --------------------------------------------------------------------------
# evolution and time sampling


def _check_same_grid(a: Grid, b: Grid) -> None:
    if (a.n, a.L, a.points_per_axis) != (b.n, b.L, b.points_per_axis):
        raise ValueError("field lives on a different grid than the operator")


def _check_window(grid: Grid, T: float) -> None:
    if not T > 0:
        raise ValueError("time window must be positive")
    if T > grid.L / 2.0 + 1e-12:
        raise ValueError(
            "time window exceeds half the box width; wrap-around would "
            "pollute the measurement"
        )


def _time_axis(H: DiscreteHamiltonian, T: float, requested) -> np.ndarray:
    top = float(np.max(np.abs(H.eigenvalues)))
    needed = max(2, int(math.ceil(T * top * SAMPLES_PER_PERIOD / (2.0 * math.pi))) + 1)
    if requested is None:
        count = needed
    elif requested < needed:
        raise ValueError(
            f"{requested} samples undersample the fastest mode; need >= {needed}"
        )
    else:
        count = int(requested)
    return np.linspace(0.0, T, count)


def _spectral_coefficients(H, values, project):
    c = H.eigenvectors.conj().T @ np.asarray(values, dtype=complex).reshape(H.dim)
    if project:
        c = c.copy()
        c[H.point_spectrum_flags] = 0.0
    return c


def _evolved_states(H, coeffs, times):
    phases = np.exp(-1j * np.outer(H.eigenvalues, times))
    return H.eigenvectors @ (phases * coeffs[:, None])


def evolve(H: DiscreteHamiltonian, f: SpinorField, times) -> list:
    """Exact spectral evolution of one field at the given times."""
    _check_same_grid(H.grid, f.grid)
    coeffs = _spectral_coefficients(H, f.values, project=False)
    states = _evolved_states(H, coeffs, np.asarray(list(times), dtype=float))
    s = f.values.shape[1]
    return [
        SpinorField(H.grid, states[:, k].reshape(H.grid.num_points, s))
        for k in range(states.shape[1])
    ]


# --------------------------------------------------------------------------
# mixed space-time norms


@dataclass(frozen=True)
class StrichartzQuery:
    """L^p-in-time of L^q-in-space query for the filtered evolution.

    ``theta`` is the smoothing order of the Fourier filter applied to
    each snapshot: massive queries use the inhomogeneous filter
    (1 + |xi|^2)^(-theta/2), massless ones use |xi|^(-theta) with the
    zero mode projected out.  ``time_samples=None`` picks the coarsest
    trapezoid grid that still resolves the fastest discrete mode.
    """

    p: float
    q: float
    theta: float
    massive: bool
    time_window: float
    time_samples: int | None = None

    def __post_init__(self):
        if not self.p >= 2.0:
            raise ValueError("time exponent p must be at least 2")
        if not self.massive and not self.p > 2.0:
            raise ValueError("p = 2 is excluded for massless queries")
        if not self.q >= 2.0:
            raise ValueError("space exponent q must be at least 2")
        if self.theta < 0:
            raise ValueError("smoothing order must be nonnegative")
        if not self.time_window > 0:
            raise ValueError("time window must be positive")
        if self.time_samples is not None and self.time_samples < 2:
            raise ValueError("need at least two time samples")


def _check_admissibility(query: StrichartzQuery, n: int) -> None:
    problems = []
    p, q, theta = query.p, query.q, query.theta
    if query.massive:
        if abs(2.0 / p + n / q - n / 2.0) > 1e-9:
            problems.append("exponents off the scaling line 2/p + n/q = n/2")
        if n > 2 and not q < 2.0 * n / (n - 2.0):
            problems.append("space exponent q beyond the admissible range")
        if theta < 0.5 + 1.0 / p - 1.0 / q - 1e-12:
            problems.append("smoothing order theta below the admissible floor")
    else:
        if math.isinf(q):
            problems.append("massless queries need a finite space exponent")
        else:
            if abs(theta - (n / 2.0 - 1.0 / p - n / q)) > 1e-9:
                problems.append("smoothing order theta off the massless scaling line")
            if 2.0 / p + (n - 1.0) / q > (n - 1.0) / 2.0 + 1e-12:
                problems.append(
                    "massless admissibility requires 2/p + (n-1)/q <= (n-1)/2"
                )
    if problems:
        raise ValueError("inadmissible query: " + "; ".join(problems))


def _frequency_magnitudes(grid: Grid) -> np.ndarray:
    mesh = np.meshgrid(*([_axis_frequencies(grid)] * grid.n), indexing="ij")
    return np.sqrt(sum(m**2 for m in mesh))


def _smoothing_filter(grid: Grid, theta: float, massive: bool) -> np.ndarray:
    xi = _frequency_magnitudes(grid)
    if massive:
        return (1.0 + xi**2) ** (-theta / 2.0)
    out = np.zeros_like(xi)
    nonzero = xi > 0
    out[nonzero] = xi[nonzero] ** (-theta)
    return out


def _apply_filter(flat, grid, spinor_dim, mult):
    shape = (grid.points_per_axis,) * grid.n
    arr = flat.reshape(shape + (spinor_dim,))
    hat = np.fft.fftn(arr, axes=tuple(range(grid.n)))
    hat *= mult[..., None]
    out = np.fft.ifftn(hat, axes=tuple(range(grid.n)))
    return out.reshape(grid.num_points, spinor_dim)


def _mean_mode_fraction(values: np.ndarray) -> float:
    flat_norm = float(np.linalg.norm(values))
    if flat_norm == 0.0:
        return 0.0
    mean = np.abs(np.sum(values, axis=0)) / math.sqrt(values.shape[0])
    return float(np.max(mean)) / flat_norm


def strichartz_norm(H: DiscreteHamiltonian, f: SpinorField, query: StrichartzQuery) -> float:
    """Mixed norm of the filtered evolution, divided by the data's L2 size.

    Evolves off the flagged eigenpairs, filters each time snapshot by
    the smoothing Fourier multiplier, takes the L^q spatial norm by grid
    quadrature per sample and the L^p time norm over [0, T] by the
    trapezoid rule.
    """
    _check_same_grid(H.grid, f.grid)
    if query.massive != (H.mass > 0):
        raise ValueError("query mass flag disagrees with the operator's mass")
    _check_admissibility(query, H.grid.n)
    _check_window(H.grid, query.time_window)
    grid = H.grid
    fnorm = grid.l2_norm(f.values)
    if fnorm == 0.0:
        return 0.0
    if not query.massive and _mean_mode_fraction(f.values) > 1e-8:
        raise ValueError(
            "massless smoothing filter requires mean-free data; subtract the "
            "zero mode first"
        )
    times = _time_axis(H, query.time_window, query.time_samples)
    coeffs = _spectral_coefficients(H, f.values, project=True)
    states = _evolved_states(H, coeffs, times)
    mult = _smoothing_filter(grid, query.theta, query.massive)
    s = f.values.shape[1]
    space_norms = np.empty(times.size)
    for k in range(times.size):
        filtered = _apply_filter(states[:, k], grid, s, mult)
        mag = np.sqrt(np.sum(np.abs(filtered) ** 2, axis=1))
        if math.isinf(query.q):
            space_norms[k] = float(np.max(mag))
        else:
            space_norms[k] = float(
                (np.sum(mag**query.q) * grid.h**grid.n) ** (1.0 / query.q)
            )
    if math.isinf(query.p):
        mixed = float(np.max(space_norms))
    else:
        mixed = float(np.trapezoid(space_norms**query.p, times) ** (1.0 / query.p))
    return mixed / fnorm


def strichartz_table(H, f, queries, threads: int = 1) -> list:
    """Rows (p, q, theta, T, ratio); queries share one decomposition."""
    queries = list(queries)
    if threads > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ratios = list(pool.map(lambda q: strichartz_norm(H, f, q), queries))
    else:
        ratios = [strichartz_norm(H, f, q) for q in queries]
    return [
        (q.p, q.q, q.theta, q.time_window, r) for q, r in zip(queries, ratios)
    ]


def kato_smoothing_norm(
    H: DiscreteHamiltonian,
    f: SpinorField,
    sigma: float,
    T: float,
    project: bool = True,
    time_samples=None,
) -> float:
    """Space-time L2 size of the weighted evolution over [0, T].

    Computes (integral of |<x>^-sigma psi(t)|_2^2 dt)^(1/2) divided by
    the data's L2 norm.  With ``project=False`` the flagged eigenpairs
    are kept; a localized bound state then contributes a non-decaying
    mass and the ratio grows like sqrt(T).
    """
    if not sigma > 0.5:
        raise ValueError("spatial weight must decay faster than power 1/2")
    _check_same_grid(H.grid, f.grid)
    _check_window(H.grid, T)
    grid = H.grid
    fnorm = grid.l2_norm(f.values)
    if fnorm == 0.0:
        return 0.0
    times = _time_axis(H, T, time_samples)
    coeffs = _spectral_coefficients(H, f.values, project=project)
    states = _evolved_states(H, coeffs, times)
    w2 = weight_values(grid, sigma) ** 2
    dens = np.sum(
        np.abs(states.reshape(grid.num_points, -1, times.size)) ** 2, axis=1
    )
    weighted_sq = grid.h**grid.n * (w2 @ dens)
    return float(math.sqrt(np.trapezoid(weighted_sq, times))) / fnorm


# --------------------------------------------------------------------------
# stationary counterpart: weighted boundary-jump norms


@dataclass(frozen=True)
class SmoothingTable:
    """Per-energy weighted norms of the resolvent boundary jump."""

    sigma: float
    rows: tuple
    sup: float

    def __len__(self):
        return len(self.rows)


def smoothing_resolvent_check(
    lambda_grid,
    sigma: float,
    V: MultiplicationOperator | None,
    mats: DiracMatrices,
    grid: Grid,
    mass: float,
) -> SmoothingTable:
    """Sweep the weighted jump W (R+ - R-) W over a real energy window.

    The supremum over the window is the stationary surrogate for the
    smoothing constant of the evolution.  ``V=None`` keeps the jump in
    displacement-table form, so large grids stay affordable; a genuine
    potential goes through the dense perturbed solve.
    """
    if not sigma > 0.5:
        raise ValueError("weight exponent must exceed 1/2")
    lambdas = [float(l) for l in lambda_grid]
    for lam in lambdas:
        if not lam > mass:
            raise ValueError("energy window must sit above the continuum edge")
    free = V is None or not np.any(V.blocks)
    rows = []
    for lam in lambdas:
        if free:
            plus = dirac_lattice(grid, mats, mass, lam, "+")
            minus = dirac_lattice(grid, mats, mass, lam, "-")
            jump = LatticeOperator(grid, plus.table - minus.table, "+", f"jump({lam})")
        else:
            plus = perturbed_resolvent(lam, "+", V, mats, grid, mass)
            minus = perturbed_resolvent(lam, "-", V, mats, grid, mass)
            jump = KernelOperator(grid, plus.matrix - minus.matrix, "+", f"jump({lam})")
        rows.append((lam, weighted_operator_norm(jump, sigma)))
    return SmoothingTable(sigma, tuple(rows), max(r[1] for r in rows))
