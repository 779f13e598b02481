"""Collective-spin sector, truncated Fock space and their tensor product.

Basis ordering on the product space is boson-major: the flat index of the
ket ``|n> (x) |M>_z`` is ``k = n * (N + 1) + (M + N/2)``, with ``M`` ascending
inside each boson block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln


class TruncationError(RuntimeError):
    """Raised when a boson state does not fit inside the Fock truncation."""


def _freeze(mat: sparse.spmatrix) -> sparse.csr_matrix:
    out = sparse.csr_matrix(mat)
    out.sum_duplicates()
    out.sort_indices()
    out.eliminate_zeros()
    return out


@dataclass(frozen=True, eq=False)
class SpinSector:
    """Fully symmetric S = N/2 manifold in the S_z eigenbasis."""

    N: int
    sz: sparse.csr_matrix = field(repr=False)
    sp: sparse.csr_matrix = field(repr=False)
    sm: sparse.csr_matrix = field(repr=False)
    sx: sparse.csr_matrix = field(repr=False)
    sy: sparse.csr_matrix = field(repr=False)

    @property
    def dim(self) -> int:
        return self.N + 1

    @property
    def S(self) -> float:
        return self.N / 2

    @property
    def m(self) -> np.ndarray:
        """Magnetic quantum numbers, ascending."""
        return np.arange(self.N + 1) - self.N / 2

    def index(self, M: float) -> int:
        idx = M + self.N / 2
        if abs(idx - round(idx)) > 1e-9 or not 0 <= round(idx) <= self.N:
            raise ValueError(f"M={M} is not a valid projection for N={self.N}")
        return int(round(idx))


@dataclass(frozen=True, eq=False)
class FockSpace:
    """Bosonic mode truncated to occupations 0..n_max."""

    n_max: int
    a: sparse.csr_matrix = field(repr=False)
    adag: sparse.csr_matrix = field(repr=False)
    num: sparse.csr_matrix = field(repr=False)

    @property
    def dim(self) -> int:
        return self.n_max + 1

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.n_max + 1)


def build_spin_sector(N: int) -> SpinSector:
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    N = int(N)
    S = N / 2
    m = np.arange(N + 1) - S
    # <M+1|S_+|M> for M = -S..S-1, stored on the first subdiagonal
    up = np.sqrt(S * (S + 1) - m[:-1] * (m[:-1] + 1))
    sp = _freeze(sparse.diags(up, -1, shape=(N + 1, N + 1)))
    sm = _freeze(sp.T)
    sz = _freeze(sparse.diags(m))
    sx = _freeze((sp + sm) * 0.5)
    sy = _freeze((sp - sm) * (-0.5j))
    return SpinSector(N, sz, sp, sm, sx, sy)


def build_fock_space(n_max: int) -> FockSpace:
    if int(n_max) != n_max or n_max < 1:
        raise ValueError(f"n_max must be an integer >= 1, got {n_max}")
    n_max = int(n_max)
    a = _freeze(sparse.diags(np.sqrt(np.arange(1, n_max + 1)), 1))
    adag = _freeze(a.T)
    num = _freeze(sparse.diags(np.arange(n_max + 1, dtype=float)))
    return FockSpace(n_max, a, adag, num)


@dataclass(frozen=True, eq=False)
class ProductSpace:
    spin: SpinSector
    fock: FockSpace

    @property
    def N(self) -> int:
        return self.spin.N

    @property
    def n_max(self) -> int:
        return self.fock.n_max

    @property
    def dim(self) -> int:
        return self.spin.dim * self.fock.dim

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of a state reshaped to ``(boson, spin)`` amplitudes."""
        return (self.fock.dim, self.spin.dim)

    def index(self, n: int, M: float) -> int:
        if not 0 <= n <= self.n_max:
            raise ValueError(f"n={n} outside 0..{self.n_max}")
        return n * self.spin.dim + self.spin.index(M)

    def label(self, k: int) -> tuple[int, float]:
        if not 0 <= k < self.dim:
            raise ValueError(f"index {k} outside 0..{self.dim - 1}")
        n, mi = divmod(k, self.spin.dim)
        return n, mi - self.N / 2

    @cached_property
    def x_quadrature(self) -> sparse.csr_matrix:
        """Embedded a + a^dagger."""
        return embed(self.fock.a + self.fock.adag, self, factor="boson")

    @cached_property
    def number(self) -> sparse.csr_matrix:
        return embed(self.fock.num, self, factor="boson")

    def embedded_spin(self, name: str) -> sparse.csr_matrix:
        return self._spin_ops[name]

    @cached_property
    def _spin_ops(self) -> dict[str, sparse.csr_matrix]:
        return {
            name: embed(getattr(self.spin, name), self, factor="spin")
            for name in ("sx", "sy", "sz", "sp", "sm")
        }

    def basis_state(self, n: int, M: float) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(n, M)] = 1.0
        return v


def build_product_space(N: int, n_max: int) -> ProductSpace:
    return ProductSpace(build_spin_sector(N), build_fock_space(n_max))


def embed(op, space: ProductSpace, factor: str | None = None) -> sparse.csr_matrix:
    """Lift a single-factor operator onto the product space.

    ``factor`` ("spin" or "boson") is inferred from the operator shape and is
    only required when both factors have the same dimension.
    """
    shape = op.shape
    if shape[0] != shape[1]:
        raise ValueError(f"operator must be square, got {shape}")
    d = shape[0]
    if factor is None:
        fits = [name for name, fd in (("spin", space.spin.dim), ("boson", space.fock.dim)) if fd == d]
        if not fits:
            raise ValueError(
                f"operator dimension {d} matches neither spin ({space.spin.dim}) "
                f"nor boson ({space.fock.dim}) factor"
            )
        if len(fits) == 2:
            raise ValueError("spin and boson factors share a dimension; pass factor explicitly")
        factor = fits[0]
    if factor == "spin":
        if d != space.spin.dim:
            raise ValueError(f"spin operator has dimension {d}, expected {space.spin.dim}")
        return _freeze(sparse.kron(sparse.identity(space.fock.dim), sparse.csr_matrix(op)))
    if factor == "boson":
        if d != space.fock.dim:
            raise ValueError(f"boson operator has dimension {d}, expected {space.fock.dim}")
        return _freeze(sparse.kron(sparse.csr_matrix(op), sparse.identity(space.spin.dim)))
    raise ValueError(f"unknown factor {factor!r}")


def fix_phase(v: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Rotate the global phase so the first non-negligible amplitude is real positive."""
    nz = np.flatnonzero(np.abs(v) > atol * max(np.abs(v).max(), 1.0))
    if nz.size == 0:
        return v
    first = v[nz[0]]
    return v * (abs(first) / first)


def spin_x_eigenstate(spin: SpinSector | ProductSpace, M_x: float) -> np.ndarray:
    """Eigenvector of S_x with eigenvalue M_x, expanded in the S_z basis."""
    if isinstance(spin, ProductSpace):
        spin = spin.spin
    i = spin.index(M_x)
    S = spin.S
    m = spin.m
    off = 0.5 * np.sqrt(S * (S + 1) - m[:-1] * (m[:-1] + 1))
    # S_x is real symmetric tridiagonal with the non-degenerate spectrum -S..S
    _, vec = eigh_tridiagonal(np.zeros(spin.dim), off, select="i", select_range=(i, i))
    v = vec[:, 0].astype(complex)
    v /= np.linalg.norm(v)
    return fix_phase(v)


def coherent_amplitudes(alpha: complex, size: int) -> np.ndarray:
    n = np.arange(size)
    if alpha == 0:
        out = np.zeros(size, dtype=complex)
        out[0] = 1.0
        return out
    logmag = -0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(logmag) * np.exp(1j * np.angle(alpha) * n)


def displaced_fock_state(
    fock: FockSpace | ProductSpace, alpha: complex, n: int, tol: float = 1e-8
) -> np.ndarray:
    """Boson amplitudes of D(alpha)|n>, truncated to the Fock space.

    Built as (a^dagger - alpha*)^n / sqrt(n!) applied to a coherent state on a
    padded grid, so truncation only happens once at the end. Raises
    ``TruncationError`` when the discarded weight exceeds ``tol``.
    """
    if isinstance(fock, ProductSpace):
        fock = fock.fock
    if n < 0:
        raise ValueError("Fock index must be non-negative")
    r = abs(alpha) + np.sqrt(n)
    size = max(fock.dim, int(np.ceil(r * r + 12 * r + 40))) + n + 1
    v = coherent_amplitudes(alpha, size)
    sq = np.sqrt(np.arange(1, size))
    for k in range(1, n + 1):
        w = -np.conj(alpha) * v
        w[1:] += sq * v[:-1]
        v = w / np.sqrt(k)
    out = v[: fock.dim].copy()
    leak = 1.0 - np.vdot(out, out).real
    if leak > tol:
        raise TruncationError(
            f"D({alpha})|{n}> leaks {leak:.3e} beyond n_max={fock.n_max}; increase n_max"
        )
    return out


def product_state(space: ProductSpace, boson: np.ndarray, spin: np.ndarray) -> np.ndarray:
    """Flat boson-major vector for ``boson (x) spin``."""
    boson = np.asarray(boson)
    spin = np.asarray(spin)
    if boson.shape != (space.fock.dim,) or spin.shape != (space.spin.dim,):
        raise ValueError("factor vectors do not match the product space")
    return np.kron(boson, spin).astype(complex)


def fock_state(fock: FockSpace | ProductSpace, n: int) -> np.ndarray:
    if isinstance(fock, ProductSpace):
        fock = fock.fock
    if not 0 <= n <= fock.n_max:
        raise ValueError(f"n={n} outside 0..{fock.n_max}")
    v = np.zeros(fock.dim, dtype=complex)
    v[n] = 1.0
    return v


def spin_z_state(spin: SpinSector | ProductSpace, M: float) -> np.ndarray:
    if isinstance(spin, ProductSpace):
        spin = spin.spin
    v = np.zeros(spin.dim, dtype=complex)
    v[spin.index(M)] = 1.0
    return v
