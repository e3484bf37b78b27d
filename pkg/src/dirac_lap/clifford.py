"""Dirac alpha/beta matrices in arbitrary dimension and the symbol map.

Conventions are fixed so downstream kernels are reproducible:

* n = 2 uses the 2x2 family
  ``alpha_1 = [[0,-i],[i,0]]``, ``alpha_2 = [[0,1],[1,0]]``,
  ``beta = [[1,0],[0,-1]]``.
* n = 3 uses the 4x4 block family ``beta = diag(I2, -I2)`` and
  ``alpha_j = offdiag(s_j, s_j)`` with ``s_j`` the n = 2 family above
  (so ``s_3 = beta_2x2``).
* n >= 4 grows by tensor doubling.  Odd n reuses the even n-1 family with
  its beta appended as the extra alpha inside an off-diagonal block, as in
  the n = 3 case.  Even n tensors the n-2 family (alphas plus beta) with
  the 2x2 generators and adds one fresh alpha and a fresh beta.

Spinor dimension is ``2**floor((n+1)/2)``.
"""

from dataclasses import dataclass, field

import numpy as np

# 2x2 generators, in the ordering used by the n = 2 family.
_S1 = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
_S2 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
_S3 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


def spinor_dimension(n: int) -> int:
    return 2 ** ((n + 1) // 2)


@dataclass(frozen=True, eq=False)
class DiracMatrices:
    """Anticommuting family for the n-dimensional Dirac operator."""

    dim: int
    spinor_dim: int
    alphas: tuple[np.ndarray, ...]
    beta: np.ndarray = field(repr=False)


def build_dirac_matrices(n: int) -> DiracMatrices:
    """Alpha_1..alpha_n and beta satisfying the Clifford relations.

    Raises ValueError for n < 2.
    """
    if n < 2:
        raise ValueError("dimension must be at least 2, got %r" % (n,))

    if n == 2:
        alphas = (_S1.copy(), _S2.copy())
        beta = _S3.copy()
        return DiracMatrices(2, 2, alphas, beta)

    if n % 2 == 1:
        # odd n: off-diagonal blocks of the even (n-1) family plus its beta
        prev = build_dirac_matrices(n - 1)
        gens = list(prev.alphas) + [prev.beta]
        s = prev.spinor_dim
        alphas = []
        for g in gens:
            a = np.zeros((2 * s, 2 * s), dtype=np.complex128)
            a[:s, s:] = g
            a[s:, :s] = g
            alphas.append(a)
        beta = np.zeros((2 * s, 2 * s), dtype=np.complex128)
        beta[:s, :s] = np.eye(s)
        beta[s:, s:] = -np.eye(s)
        return DiracMatrices(n, 2 * s, tuple(alphas), beta)

    # even n >= 4: tensor the (n-2) family (with its beta) against the
    # 2x2 generators, then append one fresh alpha and a fresh beta
    prev = build_dirac_matrices(n - 2)
    gens = list(prev.alphas) + [prev.beta]
    s = prev.spinor_dim
    alphas = [np.kron(_S1, g) for g in gens]
    alphas.append(np.kron(_S2, np.eye(s, dtype=np.complex128)))
    beta = np.kron(_S3, np.eye(s, dtype=np.complex128))
    return DiracMatrices(n, 2 * s, tuple(alphas), beta)


def dirac_symbol(mats: DiracMatrices, xi, mass: float) -> np.ndarray:
    """Momentum-space matrix ``sum_j xi_j alpha_j + mass * beta``.

    Hermitian, with ``symbol @ symbol = (|xi|^2 + mass^2) I``.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (mats.dim,):
        raise ValueError(
            "xi must have shape (%d,), got %r" % (mats.dim, xi.shape)
        )
    out = mass * mats.beta.astype(np.complex128, copy=True)
    for j in range(mats.dim):
        out += xi[j] * mats.alphas[j]
    return out
