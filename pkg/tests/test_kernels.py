"""Kernel formulas: frozen values, scaling, splits, truncations."""

import math

import numpy as np
import pytest

from dirac_lap.clifford import build_dirac_matrices
from dirac_lap.kernels import (
    SPLIT_HI,
    SPLIT_LO,
    TruncationSpec,
    _energy_to_wavenumber,
    dirac_kernel,
    kernel_split,
    local_amplitude,
    oscillatory_amplitude,
    schrodinger_kernel,
    short_range_kernel,
    smoothstep,
    transition,
    truncated_kernel,
)

EULER_GAMMA = 0.5772156649015329


def _exp_series(w: complex, terms: int = 40) -> complex:
    # independent Taylor evaluation of exp(w)
    acc = 1.0 + 0j
    term = 1.0 + 0j
    for k in range(1, terms):
        term *= w / k
        acc += term
    return acc


def test_frozen_value_3d_unit_energy_unit_radius():
    want = _exp_series(1j) / (4.0 * math.pi)
    got = schrodinger_kernel(3, 1.0, 1.0, "+")
    assert abs(got - want) < 1e-14
    # frozen numeric value of the same quantity
    assert abs(got - (0.04299589137143181 + 0.06696213335029094j)) < 1e-12


def test_minus_branch_is_conjugate():
    r = np.geomspace(1e-3, 40.0, 200)
    for n in (2, 3):
        plus = schrodinger_kernel(n, 1.7, r, "+")
        minus = schrodinger_kernel(n, 1.7, r, "-")
        assert np.max(np.abs(minus - np.conj(plus))) < 1e-14


def test_energy_scaling_identity():
    # K_lam(r) = lam^(n-2) K_1(lam r) on 1000 seeded samples per dimension
    rng = np.random.default_rng(31)
    for n in (2, 3):
        lam = np.exp(rng.uniform(np.log(0.1), np.log(50.0), 1000))
        r = np.exp(rng.uniform(np.log(1e-3), np.log(20.0), 1000))
        lhs = np.array([schrodinger_kernel(n, l, x) for l, x in zip(lam, r)])
        rhs = lam ** (n - 2) * np.array(
            [schrodinger_kernel(n, 1.0, l * x) for l, x in zip(lam, r)]
        )
        assert np.max(np.abs(lhs - rhs) / np.abs(rhs)) < 1e-10


def test_split_reassembles_and_cuts_off():
    r = np.geomspace(1e-3, 30.0, 500)
    for n in (2, 3):
        for z in (0.5, 1.0, 4.0):
            sp = kernel_split(n, z, r)
            full = schrodinger_kernel(n, z, r)
            assert np.max(np.abs(sp.oscillatory + sp.local - full)) < 1e-14
            inner = sp.scaled_radius <= SPLIT_LO
            outer = sp.scaled_radius >= SPLIT_HI
            assert np.all(sp.oscillatory[inner] == 0)
            assert np.max(np.abs(sp.local[outer])) == 0


def test_split_example_points():
    sp = kernel_split(2, 1.0, 0.3)
    assert sp.oscillatory == 0
    sp = kernel_split(2, 1.0, 1.0)
    assert sp.local == 0


def test_oscillatory_amplitude_bounded():
    r = np.geomspace(SPLIT_HI, 1e3, 2000)
    a2 = np.abs(oscillatory_amplitude(2, r))
    # |H0(r)| <= sqrt(2/(pi r)) (1 + small), amplitude = |H0| r^(1/2) / 4
    assert a2.max() < 0.25 * math.sqrt(2.0 / math.pi) * 1.05
    a3 = np.abs(oscillatory_amplitude(3, r))
    assert np.max(np.abs(a3 - 1.0 / (4.0 * math.pi))) < 1e-12


def test_local_amplitude_2d_expansion():
    # b(r) = -(1/2pi)(log(r/2) + gamma) + i/4 + E(r), |E| <= C r^2 |log r|.
    # Fit C on a coarse sample, then verify the bound with slack on a fine one.
    def leading(r):
        return -(np.log(r / 2.0) + EULER_GAMMA) / (2.0 * math.pi) + 0.25j

    r_fit = np.geomspace(1e-3, 0.1, 25)
    err_fit = np.abs(local_amplitude(2, r_fit) - leading(r_fit))
    c_fit = np.max(err_fit / (r_fit**2 * np.abs(np.log(r_fit))))
    assert np.isfinite(c_fit) and c_fit < 1.0

    r = np.geomspace(1e-3, 0.1, 400)
    err = np.abs(local_amplitude(2, r) - leading(r))
    assert np.all(err <= 1.5 * c_fit * r**2 * np.abs(np.log(r)))


def test_local_amplitude_3d_constant():
    # below the ramp the 3d near part is exp(ir)/(4 pi) * r^(n-2) scaling
    r = np.geomspace(1e-3, SPLIT_LO, 100)
    b = local_amplitude(3, r)
    assert np.max(np.abs(b - np.exp(1j * r) / (4 * math.pi))) < 1e-14


def test_dirac_kernel_matches_finite_difference_oracle():
    # apply -i alpha.grad + m beta + lam to the scalar kernel by central
    # differences and compare with the closed form at 100 seeded points
    rng = np.random.default_rng(41)
    step = 1e-5
    for n, mass in ((2, 0.0), (2, 1.0), (3, 0.0), (3, 1.5)):
        mats = build_dirac_matrices(n)
        lam = mass + 1.3
        z = math.sqrt(lam * lam - mass * mass)
        eye = np.eye(mats.spinor_dim)
        for _ in range(25):
            dx = rng.normal(size=n)
            dx *= rng.uniform(0.3, 3.0) / np.linalg.norm(dx)
            grad = np.zeros(n, dtype=complex)
            for j in range(n):
                e = np.zeros(n)
                e[j] = step
                kp = schrodinger_kernel(n, z, np.linalg.norm(dx + e))
                km = schrodinger_kernel(n, z, np.linalg.norm(dx - e))
                grad[j] = (kp - km) / (2 * step)
            k0 = schrodinger_kernel(n, z, np.linalg.norm(dx))
            want = (mass * mats.beta + lam * eye) * k0
            for j in range(n):
                want = want + (-1j) * grad[j] * mats.alphas[j]
            got = dirac_kernel(mats, mass, lam, dx, "+")
            assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 1e-6


def test_dirac_branches_are_adjoint_reflections():
    rng = np.random.default_rng(42)
    for n, mass in ((2, 0.0), (3, 1.0)):
        mats = build_dirac_matrices(n)
        lam = mass + 0.9
        for _ in range(20):
            dx = rng.normal(size=n)
            plus = dirac_kernel(mats, mass, lam, -dx, "+")
            minus = dirac_kernel(mats, mass, lam, dx, "-")
            assert np.max(np.abs(minus - plus.conj().T)) < 1e-12


def test_dirac_kernel_rejects_gap_energy():
    mats = build_dirac_matrices(3)
    with pytest.raises(ValueError):
        dirac_kernel(mats, 1.0, 0.5, np.array([1.0, 0.0, 0.0]))


def test_wavenumber_branch():
    assert abs(_energy_to_wavenumber(2.0, 1.0) - math.sqrt(3.0)) < 1e-14
    assert abs(_energy_to_wavenumber(-2.0, 1.0) - math.sqrt(3.0)) < 1e-14
    z = _energy_to_wavenumber(2.0 + 0.5j, 1.0)
    assert z.imag > 0
    assert abs(z * z - ((2.0 + 0.5j) ** 2 - 1.0)) < 1e-14


def test_truncated_kernel_support():
    spec = TruncationSpec(d=1.0, delta=0.3, center=np.array([1.0, 0.0]))
    # dead inside r < d/2
    assert truncated_kernel(2, 1.0, np.array([0.3, 0.1]), "+", spec) == 0
    # dead outside the 2 delta cap
    ang = 2.5 * spec.delta
    dx = 2.0 * np.array([math.cos(ang), math.sin(ang)])
    assert truncated_kernel(2, 1.0, dx, "+", spec) == 0
    # alive on-axis beyond d
    dx = np.array([2.0, 0.0])
    val = truncated_kernel(2, 1.0, dx, "+", spec)
    assert abs(val - schrodinger_kernel(2, 1.0, 2.0)) < 1e-14


def test_trivial_cap_plus_short_range_reassembles():
    spec = TruncationSpec(
        d=1.0,
        delta=math.pi,
        center=np.array([0.0, 1.0]),
        profile=lambda dirs: np.ones(len(dirs)),
    )
    rng = np.random.default_rng(43)
    dx = rng.normal(size=(200, 2))
    total = truncated_kernel(2, 2.0, dx, "+", spec) + short_range_kernel(
        2, 2.0, dx, "+", 1.0
    )
    full = schrodinger_kernel(2, 2.0, np.linalg.norm(dx, axis=1), "+")
    assert np.max(np.abs(total - full)) < 1e-12


def test_smoothstep_profile():
    assert smoothstep(-1.0) == 0.0 and smoothstep(2.0) == 1.0
    assert abs(smoothstep(0.5) - 0.5) < 1e-15
    t = np.linspace(0, 1, 100)
    assert np.all(np.diff(smoothstep(t)) >= 0)
    ramp = transition(np.array([0.5, 0.625, 0.75]), 0.5, 0.75)
    assert ramp[0] == 0 and abs(ramp[1] - 0.5) < 1e-15 and ramp[2] == 1.0
