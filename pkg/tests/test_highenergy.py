"""Sphere partitions, product classification, and high-frequency scaling."""

import math

import numpy as np
import pytest

from dirac_lap import fields as F
from dirac_lap import highenergy as H
from dirac_lap.clifford import build_dirac_matrices

MATS2 = build_dirac_matrices(2)


def _circle(count=360):
    ang = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
    return np.column_stack([np.cos(ang), np.sin(ang)])


def _compact_well(grid, mats, coupling=-0.5, radius=2.0):
    spec = F.PotentialSpec("compact_smooth", coupling, 2.0, "scalar", radius=radius)
    return F.sample_potential(spec, grid, mats)


def test_partition_of_unity_quarter_circle():
    part = H.sphere_partition(2, math.pi / 2)
    assert part.count == 4
    sums = np.sum(part.weights(_circle(360)), axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12


def test_partition_support_diameter():
    for n, deltas in ((2, (0.4, 0.2, 0.1)), (3, (1.0, 0.5, 0.25))):
        for delta in deltas:
            part = H.sphere_partition(n, delta)
            assert 2.0 * float(np.max(part.radii)) < 1.2 * delta


def test_partition_count_scaling():
    c1 = H.sphere_partition(2, 0.2).count
    c2 = H.sphere_partition(2, 0.1).count
    assert 1.8 <= c2 / c1 <= 2.2


def test_partition_separated_pairs():
    # a pair of caps separated by >= 10 delta requires 10 delta < pi,
    # i.e. roughly two dozen caps on the circle; at 16 caps the circle
    # is simply too small for that separation
    fine = H.sphere_partition(2, 0.25)
    assert fine.count >= 23
    assert float(np.max(fine.separation_matrix)) >= 10.0 * fine.delta
    coarse = H.sphere_partition(2, 0.4)
    assert coarse.count == 16
    assert float(np.max(coarse.separation_matrix)) < 10.0 * coarse.delta


def test_partition_three_dimensional_cover():
    part = H.sphere_partition(3, 0.5)
    rng = np.random.default_rng(61)
    dirs = rng.normal(size=(500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sums = np.sum(part.weights(dirs), axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12
    assert part.count == 162


def test_partition_validation():
    with pytest.raises(ValueError):
        H.sphere_partition(4, 0.3)
    with pytest.raises(ValueError):
        H.sphere_partition(2, 2.0)  # wider than a quarter sphere
    with pytest.raises(ValueError):
        H.sphere_partition(2, 0.0005)  # cap explosion
    with pytest.raises(ValueError):
        H.sphere_partition(3, 0.05)


def test_classify_product():
    part = H.sphere_partition(2, 0.1)
    sep = part.separation_matrix
    far = np.unravel_index(np.argmax(sep), sep.shape)
    assert sep[far] >= 10.0 * part.delta
    d_only = H.ProductSpec(("d", "d", "d"), 1.0, 1.0)
    assert H.classify_product(d_only, part) == "directed"
    twice = H.ProductSpec((3, 3), 1.0, 1.0)
    assert H.classify_product(twice, part) == "directed"
    apart = H.ProductSpec((int(far[0]), int(far[1])), 1.0, 1.0)
    assert H.classify_product(apart, part) == "undirected"
    with pytest.raises(ValueError):
        H.classify_product(H.ProductSpec((part.count + 5,), 1.0, 1.0), part)


def test_classification_ignores_short_range_entries():
    part = H.sphere_partition(2, 0.2)
    rng = np.random.default_rng(67)
    for _ in range(50):
        word = list(rng.integers(0, part.count, size=rng.integers(1, 4)))
        base = H.ProductSpec(tuple(int(w) for w in word), 2.0, 1.0)
        spot = rng.integers(0, len(word) + 1)
        padded_word = [int(w) for w in word]
        padded_word.insert(spot, "d")
        padded = H.ProductSpec(tuple(padded_word), 2.0, 1.0)
        assert H.classify_product(base, part) == H.classify_product(padded, part)


def test_product_spec_validation():
    with pytest.raises(ValueError):
        H.ProductSpec((), 1.0, 1.0)
    with pytest.raises(ValueError):
        H.ProductSpec((0,), -1.0, 1.0)
    with pytest.raises(ValueError):
        H.ProductSpec((0,), 1.0, 0.0)
    with pytest.raises(ValueError):
        H.ProductSpec(("x",), 1.0, 1.0)
    assert H.ProductSpec((0, "d", 1), 2.0, 1.0).M == 3


def test_directed_count_geometric_growth():
    part = H.sphere_partition(2, 0.25)
    adjacency = part.separation_matrix < 10.0 * part.delta
    degree = int(np.max(np.sum(adjacency, axis=1)))
    assert degree < part.count  # some pairs are genuinely separated
    counts = [H.count_directed_products(part, M) for M in (1, 2, 3, 4)]
    assert counts[0] == part.count
    ratios = [b / a for a, b in zip(counts, counts[1:])]
    assert all(r <= degree for r in ratios)
    # per-step growth settles to a constant factor
    assert abs(ratios[2] - ratios[1]) < 0.05 * ratios[1]


def test_decomposition_completeness():
    for n, npts, delta, z in ((2, 24, 0.4, 2.0), (3, 8, 0.5, 1.5)):
        g = F.Grid(n, 4.0 if n == 2 else 3.0, npts)
        part = H.sphere_partition(n, delta)
        caps, short = H.directional_pieces(g, z, "+", 1.0, part)
        total = short.table.copy()
        for cap in caps:
            total = total + cap.table
        full = F.schrodinger_table(g, z, "+")
        assert np.max(np.abs(total[..., 0, 0] - full)) < 1e-12


def test_zero_potential_product_vanishes():
    g = F.Grid(2, 4.0, 16)
    part = H.sphere_partition(2, 0.4)
    zero = F.MultiplicationOperator(g, np.zeros((g.num_points, 2, 2), dtype=complex))
    for word in ((0,), (0, "d")):
        lo, hi = H.product_norm(H.ProductSpec(word, 1.0, 1.0), part, zero, MATS2, 0.0, g)
        assert lo == 0.0 and hi == 0.0


def test_chain_adjoint_matches_apply():
    g = F.Grid(2, 3.0, 8)
    part = H.sphere_partition(2, 0.4)
    V = _compact_well(g, MATS2, radius=1.5)
    spec = H.ProductSpec((0, "d"), 1.0, 1.0)
    chain = H._chain_for(spec, part, V, MATS2, 0.5, g, "+")
    dim = chain.dim
    fwd = np.zeros((dim, dim), dtype=complex)
    adj = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(dim)
    for k in range(dim):
        fwd[:, k] = chain.apply(eye[:, k]).reshape(dim)
        adj[:, k] = chain.apply_adjoint(eye[:, k]).reshape(dim)
    assert np.max(np.abs(adj - fwd.conj().T)) < 1e-11


def test_diff_chain_adjoint():
    g = F.Grid(2, 3.0, 8)
    lat = F.schrodinger_lattice(g, 1.5)
    op = H._DiffChain(lat)
    dim = op.dim
    fwd = np.zeros((dim, dim), dtype=complex)
    adj = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(dim)
    for k in range(dim):
        fwd[:, k] = op.apply(eye[:, k]).reshape(dim)
        adj[:, k] = op.apply_adjoint(eye[:, k]).reshape(dim)
    assert np.max(np.abs(adj - fwd.conj().T)) < 1e-11


def test_undirected_decays_directed_does_not():
    # the aligned 2-chain keeps its size as the frequency doubles while
    # the anti-aligned chain loses at least 30 percent per doubling
    g = F.Grid(2, 6.0, 64)
    part = H.sphere_partition(2, 0.25)
    V = _compact_well(g, MATS2)
    sep = part.separation_matrix
    i, j = np.unravel_index(np.argmax(sep), sep.shape)
    apart = (int(i), int(j))
    undirected_hi, directed_hi = [], []
    for z in (1.0, 2.0, 4.0):
        su = H.ProductSpec(apart, z, 2.0)
        sd = H.ProductSpec((0, 1), z, 2.0)
        assert H.classify_product(su, part) == "undirected"
        assert H.classify_product(sd, part) == "directed"
        undirected_hi.append(H.product_norm(su, part, V, MATS2, 0.0, g)[1])
        directed_hi.append(H.product_norm(sd, part, V, MATS2, 0.0, g)[1])
    assert undirected_hi[1] <= 0.7 * undirected_hi[0]
    assert undirected_hi[2] <= 0.7 * undirected_hi[1]
    assert max(directed_hi) / min(directed_hi) < 2.0


def test_product_norm_resolution_guard():
    g = F.Grid(2, 6.0, 16)  # h = 0.75 resolves only z <= 1.05
    part = H.sphere_partition(2, 0.4)
    V = _compact_well(g, MATS2)
    with pytest.raises(ValueError):
        H.product_norm(H.ProductSpec((0,), 4.0, 1.0), part, V, MATS2, 0.0, g)


def test_product_norm_table_parallel():
    g = F.Grid(2, 4.0, 24)
    part = H.sphere_partition(2, 0.4)
    V = _compact_well(g, MATS2, radius=1.5)
    specs = [H.ProductSpec((0,), 1.0, 1.0), H.ProductSpec(("d",), 1.0, 1.0)]
    serial = H.product_norm_table(specs, part, V, MATS2, 0.0, g)
    parallel = H.product_norm_table(specs, part, V, MATS2, 0.0, g, threads=2)
    for (s1, c1, lo1, hi1), (s2, c2, lo2, hi2) in zip(serial, parallel):
        assert s1 is s2 and c1 == c2
        assert lo1 == pytest.approx(lo2, rel=1e-9)
        assert hi1 == pytest.approx(hi2, rel=1e-9)


def test_neumann_tail_gate():
    g = F.Grid(2, 6.0, 64)
    V = _compact_well(g, MATS2)
    first = H.neumann_tail_check(1, 4.0, V, MATS2, 0.0, g)
    second = H.neumann_tail_check(2, 4.0, V, MATS2, 0.0, g)
    assert not first.passed and first.norm_hi > 0.5
    assert second.passed and second.norm_hi <= 0.5
    assert second.inverse_bound is not None and 1.0 < second.inverse_bound < 3.0
    assert not second.submultiplicative_discrepancy
    norm, passed = second  # tuple protocol
    assert norm == second.norm_hi and passed
    with pytest.raises(ValueError):
        H.neumann_tail_check(0, 4.0, V, MATS2, 0.0, g)


def test_neumann_small_potential_passes_immediately():
    g = F.Grid(2, 6.0, 64)
    tiny = _compact_well(g, MATS2, coupling=-0.01, radius=1.0)
    rep = H.neumann_tail_check(1, 4.0, tiny, MATS2, 0.0, g)
    assert rep.passed and rep.norm_hi < 0.1


def test_directional_scaling_exponent_order_zero():
    # needs a deep shell family: small boxes flatten the slope
    g = F.Grid(2, 12.0, 256)
    table = H.dir_res_scaling_check(1.0, 0.3, 0, [2.0, 4.0, 8.0], g)
    assert -1.3 <= table.exponent <= -0.7


def test_directional_scaling_exponent_order_one():
    g = F.Grid(2, 6.0, 128)
    table = H.dir_res_scaling_check(1.0, 0.3, 1, [1.0, 2.0, 4.0, 8.0], g)
    assert -0.3 <= table.exponent <= 0.3
    with pytest.raises(ValueError):
        H.dir_res_scaling_check(1.0, 0.3, 2, [1.0], g)
    with pytest.raises(ValueError):
        H.dir_res_scaling_check(1.0, 0.3, 0, [0.5], g)


def test_full_sphere_tiny_inner_radius_recovers_free_kernel():
    from dirac_lap.kernels import TruncationSpec

    g = F.Grid(2, 3.0, 16)
    trunc = TruncationSpec(1e-6, math.pi, np.array([1.0, 0.0]))
    table = F.truncated_table(g, 1.5, "+", trunc)
    full = F.schrodinger_table(g, 1.5, "+")
    centre = (g.points_per_axis - 1,) * 2
    mask = np.ones(table.shape, dtype=bool)
    mask[centre] = False
    assert np.max(np.abs((table - full)[mask])) < 1e-12


def test_short_range_scaling_when_cutoff_dominates():
    # d lambda >= 4 throughout: norms track frequency^(-1) raw and
    # frequency^(-2) after dividing out the cutoff bracket
    g = F.Grid(2, 6.0, 128)
    table = H.short_range_check(4.0, [1.0, 2.0, 4.0, 8.0], g)
    assert -1.3 <= table.raw_exponents[0] <= -0.7
    assert -2.3 <= table.scaled_exponents[0] <= -1.7
    assert all(r[1] > 0 and r[2] > 0 for r in table.rows)


def test_short_range_small_cutoff_is_log_flat():
    # with d fixed and d lambda <= 1 the norm is dominated by the
    # logarithmic near field, so it decays far slower than the
    # square-of-frequency envelope suggests
    g = F.Grid(2, 6.0, 128)
    table = H.short_range_check(0.25, [1.0, 2.0, 4.0], g)
    norms = [r[1] for r in table.rows]
    assert norms[0] > norms[1] > norms[2]
    assert -0.8 <= table.raw_exponents[0] <= -0.1


def test_short_range_saturates_to_full_kernel():
    g = F.Grid(2, 3.0, 12)
    saturated = F.short_range_table(g, 1.5, "+", 100.0)
    full = F.schrodinger_table(g, 1.5, "+")
    assert np.array_equal(saturated, full)


def test_oscillatory_calibration_point_is_frozen():
    g = F.Grid(2, 6.0, 64)
    measured, bound = H.oscillatory_norm_check(0.5, 0.5, 1.0, 1.0, g)
    assert measured == pytest.approx(H.OSC_CALIBRATION, rel=1e-9)
    assert bound == pytest.approx(H.OSC_CALIBRATION, rel=1e-12)


def test_oscillatory_cap_halving_ratio():
    g = F.Grid(2, 6.0, 64)
    m_full, b_full = H.oscillatory_norm_check(0.5, 1.0, 1.0, 1.0, g)
    m_half, b_half = H.oscillatory_norm_check(0.25, 1.0, 1.0, 1.0, g)
    assert 1.2 <= m_full / m_half <= 2.0
    assert m_full <= 1.2 * b_full
    assert m_half <= 1.2 * b_half


def test_oscillatory_annulus_growth():
    g = F.Grid(2, 16.0, 128)
    m_one, _ = H.oscillatory_norm_check(0.5, 1.0, 1.0, 1.0, g)
    m_four, _ = H.oscillatory_norm_check(0.5, 1.0, 4.0, 1.0, g)
    assert m_four / m_one <= 2.4


def test_oscillatory_validation():
    g = F.Grid(2, 6.0, 32)
    g3 = F.Grid(3, 3.0, 8)
    with pytest.raises(ValueError):
        H.oscillatory_norm_check(0.5, 0.5, 1.0, 1.0, g3)
    with pytest.raises(ValueError):
        H.oscillatory_norm_check(1.5, 0.5, 1.0, 1.0, g)
    with pytest.raises(ValueError):
        H.oscillatory_norm_check(0.5, 2.0, 1.0, 1.0, g)
    with pytest.raises(ValueError):
        H.oscillatory_norm_check(0.5, 0.5, 0.5, 1.0, g)
    with pytest.raises(ValueError):
        H.oscillatory_norm_check(0.5, 0.5, 4.0, 1.0, g)  # annulus outside box
