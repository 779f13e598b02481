"""Low-lying spectrum, parity classification and the parity-resolved gap."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.sparse.linalg import norm as sparse_norm

from .hilbert import ProductSpace, build_product_space
from .model import DickeConfig, default_n_max, dicke_hamiltonian, parity_operator
from .observables import expectations

DENSE_LIMIT = 2000


class SpectrumError(RuntimeError):
    pass


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    parity: np.ndarray
    parity_expectation: np.ndarray
    residual: float
    mixed: bool = False
    gap: float | None = None
    ground_index: int = 0

    @property
    def ground_parity(self) -> int:
        return int(self.parity[self.ground_index])

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[self.ground_index])

    @property
    def ground_vector(self) -> np.ndarray:
        return self.eigenvectors[:, self.ground_index]


def operator_scale(H) -> float:
    """Cheap upper bound on the spectral norm (max absolute row sum)."""
    if sparse.issparse(H):
        return float(sparse_norm(H, np.inf))
    return float(np.max(np.sum(np.abs(H), axis=1)))


def _raw_eigenpairs(H, k: int, dense: bool | None = None):
    dim = H.shape[0]
    if dense is None:
        dense = dim < DENSE_LIMIT
    if dense or k >= dim - 1:
        Hd = H.toarray() if sparse.issparse(H) else np.asarray(H)
        w, v = np.linalg.eigh(Hd)
        return w[:k], v[:, :k]
    try:
        w, v = eigsh(H, k=k, which="SA", tol=1e-13, ncv=max(2 * k + 1, 40))
    except ArpackNoConvergence as exc:
        raise SpectrumError(f"sparse eigensolver did not converge for k={k}") from exc
    order = np.argsort(w)
    return w[order], v[:, order]


def _resolve_parity(w, v, P, scale, cluster_tol):
    """Rotate each near-degenerate cluster onto eigenvectors of the parity operator."""
    v = v.astype(complex)
    k = w.size
    start = 0
    while start < k:
        stop = start + 1
        while stop < k and w[stop] - w[stop - 1] < cluster_tol * scale:
            stop += 1
        if stop - start > 1:
            block = v[:, start:stop]
            Pb = block.conj().T @ (P @ block)
            pw, pv = np.linalg.eigh(0.5 * (Pb + Pb.conj().T))
            v[:, start:stop] = block @ pv
        start = stop
    pe = np.real(np.einsum("ij,ij->j", v.conj(), P @ v))
    return v, pe


def lowest_eigenpairs(
    H,
    k: int,
    space: ProductSpace | None = None,
    parity=None,
    cluster_tol: float = 1e-8,
    dense: bool | None = None,
) -> SpectrumResult:
    """The ``k`` lowest eigenpairs of a Hermitian ``H`` with parity labels.

    Dense ``eigh`` is used below :data:`DENSE_LIMIT`, ARPACK above.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if parity is None:
        if space is None:
            raise ValueError("need either a product space or a parity operator")
        parity = parity_operator(space)
    k = min(k, H.shape[0])
    w, v = _raw_eigenpairs(H, k, dense)
    scale = max(operator_scale(H), 1.0)
    v, pe = _resolve_parity(w, v, parity, scale, cluster_tol)
    res = np.max(np.linalg.norm(H @ v - v * w, axis=0))
    if res > 1e-8 * scale:
        raise SpectrumError(f"eigenpair residual {res:.2e} exceeds {1e-8 * scale:.2e}")
    labels = np.where(pe >= 0, 1, -1)
    mixed = bool(np.any(np.abs(pe) < 0.99))
    # an exactly degenerate ground doublet is resolved in favour of the even
    # sector, which holds the normal-phase ground state |0>|-N/2>_x
    tied = np.flatnonzero(w - w[0] < cluster_tol * scale)
    even = tied[labels[tied] == 1]
    ground = int(even[0]) if even.size else 0
    return SpectrumResult(w, v, labels, pe, float(res / scale), mixed, ground_index=ground)


def _gap_from(result: SpectrumResult) -> float | None:
    g = result.ground_index
    same = np.flatnonzero(result.parity[g + 1 :] == result.parity[g])
    if same.size == 0:
        return None
    return float(result.eigenvalues[same[0] + g + 1] - result.eigenvalues[g])


def spectrum_space(cfg: DickeConfig) -> ProductSpace:
    n_max = cfg.n_max if cfg.n_max is not None else default_n_max(cfg)
    return build_product_space(cfg.N, n_max)


def solve(cfg: DickeConfig, B: float, k: int = 6, k_max: int = 48, space=None) -> SpectrumResult:
    """Lowest eigenpairs at field ``B``, escalating ``k`` until a same-parity
    excitation above the ground state is found."""
    space = space or spectrum_space(cfg)
    H = dicke_hamiltonian(space, cfg, B)
    P = parity_operator(space)
    while True:
        result = lowest_eigenpairs(H, k, parity=P)
        result.gap = _gap_from(result)
        # the last cluster may be cut by k; only trust gaps strictly inside
        if result.gap is not None and result.gap < result.eigenvalues[-1] - result.ground_energy:
            return result
        if k >= min(k_max, space.dim):
            if result.gap is not None:
                return result
            raise SpectrumError(f"no same-parity excitation among the lowest {k} states at B={B}")
        k = min(2 * k, k_max, space.dim)


def parity_gap(cfg: DickeConfig, B: float, space=None, k: int = 6) -> float:
    """Energy gap between the ground state and the lowest excited state of equal parity."""
    return solve(cfg, B, k=k, space=space).gap


def ground_state(cfg: DickeConfig, B: float, space=None) -> tuple[float, np.ndarray, ProductSpace]:
    space = space or spectrum_space(cfg)
    result = solve(cfg, B, space=space)
    return result.ground_energy, result.ground_vector, space


def default_field_grid(cfg: DickeConfig, points: int = 81, span: float = 4.0) -> np.ndarray:
    b_c = cfg.g0**2 / abs(cfg.delta)
    return np.linspace(0.0, span * b_c, points)


def scan_gap_vs_N_and_B(cfg: DickeConfig, N_list, B_grid) -> list[dict]:
    """Rows of (N, B, gap, ground-state <(a + a^dag) S_z>) over the grid."""
    rows = []
    for N in N_list:
        cfg_n = replace(cfg, N=int(N))
        space = spectrum_space(cfg_n)
        for B in B_grid:
            result = solve(cfg_n, float(B), space=space)
            order = expectations(result.ground_vector, space)["corr_sz"]
            rows.append({"N": int(N), "B": float(B), "gap": result.gap, "orderparam": order})
    return rows


def scan_gap_vs_detuning(b_c: float, delta_list, N: int, template: DickeConfig | None = None) -> list[dict]:
    """Gap at B = b_c for each detuning, with g0 = sqrt(b_c |delta|) holding B_c fixed."""
    rows = []
    for delta in delta_list:
        delta = -abs(float(delta))
        g0 = math.sqrt(b_c * abs(delta))
        cfg = DickeConfig(N=N, g0=g0, delta=delta) if template is None else replace(
            template, N=N, g0=g0, delta=delta, n_max=None
        )
        rows.append({"delta": delta, "g0": g0, "gap": parity_gap(cfg, b_c)})
    return rows


def interior_minima(values) -> np.ndarray:
    """Indices of strict interior local minima (plateaus count once)."""
    v = np.asarray(values, dtype=float)
    out = []
    i = 1
    while i < v.size - 1:
        j = i
        while j + 1 < v.size - 1 and v[j + 1] == v[i]:
            j += 1
        if v[i - 1] > v[i] and v[j + 1] > v[j]:
            out.append(i)
        i = j + 1
    return np.array(out, dtype=int)


def local_minima_positions(x, values) -> np.ndarray:
    return np.asarray(x)[interior_minima(values)]
