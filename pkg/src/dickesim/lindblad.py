"""Density-matrix integration of the dephasing master equation for tiny systems.

Individual sigma_z^i dephasing leaves the symmetric spin manifold, so this
module works on the full 2^N spin space tensored with a small Fock space,
using its own operator builder. Basis order is boson-major with spins in
ascending order of the per-spin projection (down, up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import expm

from .hilbert import build_fock_space, displaced_fock_state
from .model import ConstantRamp, DickeConfig, default_n_max, per_s_to_per_ms
from .observables import infer_spin_phonon

MAX_SPINS = 4
MAX_FOCK = 40
_DENSE_DIM = 200

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, 1j], [-1j, 0]], dtype=complex),  # basis (down, up)
    "z": np.array([[-1, 0], [0, 1]], dtype=complex),
}


class PositivityError(RuntimeError):
    pass


def _site_op(pauli: np.ndarray, site: int, N: int) -> sparse.csr_matrix:
    out = sparse.identity(1, format="csr", dtype=complex)
    for j in range(N):
        out = sparse.kron(out, pauli if j == site else sparse.identity(2), format="csr")
    return out


@dataclass(frozen=True, eq=False)
class FullSpace:
    N: int
    n_max: int
    ops: dict = field(repr=False)
    dephasing_mask: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return (2**self.N) * (self.n_max + 1)


def build_full_space(N: int, n_max: int) -> FullSpace:
    if not 1 <= N <= MAX_SPINS:
        raise ValueError(f"full-space oracle supports 1 <= N <= {MAX_SPINS}")
    if not 1 <= n_max <= MAX_FOCK:
        raise ValueError(f"full-space oracle supports 1 <= n_max <= {MAX_FOCK}")
    fock = build_fock_space(n_max)
    Ib = sparse.identity(fock.dim, format="csr")
    Is = sparse.identity(2**N, format="csr")
    ops = {}
    for name, pauli in _PAULI.items():
        coll = sum(_site_op(pauli, i, N) for i in range(N)) * 0.5
        ops["s" + name] = sparse.csr_matrix(sparse.kron(Ib, coll))
    ops["x_quad"] = sparse.csr_matrix(sparse.kron(fock.a + fock.adag, Is))
    ops["number"] = sparse.csr_matrix(sparse.kron(fock.num, Is))
    ops["s_total_sq"] = sparse.csr_matrix(ops["sx"] @ ops["sx"] + ops["sy"] @ ops["sy"] + ops["sz"] @ ops["sz"])
    # sigma_z^i are diagonal, so sum_i (Z_i rho Z_i - rho) = mask * rho elementwise
    z = np.array([_site_op(_PAULI["z"], i, N).diagonal().real for i in range(N)])
    z = np.tile(z, (1, fock.dim))
    mask = (z.T @ z) - N
    return FullSpace(N, n_max, ops, mask)


def full_hamiltonian_parts(space: FullSpace, cfg: DickeConfig):
    ops = space.ops
    static = (-cfg.g0 / math.sqrt(cfg.N)) * (ops["x_quad"] @ ops["sz"]) - cfg.delta * ops["number"]
    if cfg.bias_epsilon:
        static = static + cfg.bias_epsilon * ops["sz"]
    return sparse.csr_matrix(static), ops["sx"]


def full_normal_state(space: FullSpace, n: int = 0, alpha: complex = 0.0) -> np.ndarray:
    """D(alpha)|n> (x) |-1/2>_x^(x)N as a pure-state vector."""
    fock = build_fock_space(space.n_max)
    boson = displaced_fock_state(fock, alpha, n)
    minus_x = np.array([1.0, -1.0]) / math.sqrt(2.0)
    spins = np.ones(1)
    for _ in range(space.N):
        spins = np.kron(spins, minus_x)
    return np.kron(boson, spins).astype(complex)


def pure_density(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


def lindblad_rhs(rho, H, gamma: float, mask: np.ndarray, h_rho=None) -> np.ndarray:
    """-i[H, rho] + (gamma/2) sum_i (Z_i rho Z_i - rho); gamma in 1/ms."""
    if h_rho is None:
        h_rho = H @ rho
    out = -1j * (h_rho - h_rho.conj().T)
    if gamma:
        out += (0.5 * gamma) * mask * rho
    return out


def _observe(rho, space: FullSpace) -> dict:
    ops = space.ops
    def ev(op):
        return float(np.real(np.sum(op.T.multiply(rho)))) if sparse.issparse(op) else float(np.real(np.trace(op @ rho)))

    return {
        "sx": ev(ops["sx"]),
        "sy": ev(ops["sy"]),
        "sz": ev(ops["sz"]),
        "n_phonon": ev(ops["number"]),
        "corr_sy": ev(ops["x_quad"] @ ops["sy"]),
        "corr_sz": ev(ops["x_quad"] @ ops["sz"]),
        "s_total_sq": ev(ops["s_total_sq"]),
        "trace": float(np.real(np.trace(rho))),
    }


@dataclass
class LindbladResult:
    times: np.ndarray
    series: dict
    rho: np.ndarray
    dt: float
    halvings: int
    convergence: float
    min_eigenvalue: float
    hermiticity: float
    sx_derivative: np.ndarray | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]


def _rk4_run(rho0, static, drive, ramp, gamma, mask, space, t0, sample_times, n_sub, derivative=False):
    rho = rho0.copy()
    obs = [_observe(rho, space)]
    dsx = []
    sx_op = space.ops["sx"]

    if static.shape[0] <= _DENSE_DIM:
        static, drive = static.toarray(), drive.toarray()

    def L(t, r):
        h_rho = static @ r + ramp.field_at(t) * (drive @ r)
        return lindblad_rhs(r, None, gamma, mask, h_rho)

    def sx_rate(t, r):
        return float(np.real(np.sum(sx_op.T.multiply(L(t, r)))))

    if derivative:
        dsx.append(sx_rate(t0, rho))
    t = t0
    min_eig = 0.0
    for t_next in sample_times[1:]:
        h = (t_next - t) / n_sub
        for _ in range(n_sub):
            k1 = L(t, rho)
            k2 = L(t + 0.5 * h, rho + 0.5 * h * k1)
            k3 = L(t + 0.5 * h, rho + 0.5 * h * k2)
            k4 = L(t + h, rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        t = t_next
        obs.append(_observe(rho, space))
        if derivative:
            dsx.append(sx_rate(t, rho))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]))
    series = {k: np.array([o[k] for o in obs]) for k in obs[0]}
    return rho, series, min_eig, (np.array(dsx) if derivative else None)


def evolve_lindblad(
    rho0: np.ndarray,
    cfg: DickeConfig,
    t0: float,
    t1: float,
    space: FullSpace | None = None,
    sample_times=None,
    conv_tol: float = 1e-6,
    max_halvings: int = 6,
    positivity_tol: float = 1e-7,
    derivative: bool = False,
) -> LindbladResult:
    """RK4 integration of the master equation with per-spin sigma_z dephasing.

    The integration step is halved until every sampled observable changes by
    less than ``conv_tol`` between successive refinements. ``derivative=True``
    also records the exact d<S_x>/dt = Tr(S_x L[rho]) at each sample.
    """
    if cfg.N > MAX_SPINS:
        raise ValueError(f"oracle limited to N <= {MAX_SPINS}")
    space = space or build_full_space(cfg.N, min(MAX_FOCK, cfg.n_max or default_n_max(cfg)))
    if sample_times is None:
        sample_times = np.linspace(t0, t1, cfg.n_samples)
    sample_times = np.asarray(sample_times, dtype=float)
    if abs(sample_times[0] - t0) > 1e-12 or abs(sample_times[-1] - t1) > 1e-12:
        raise ValueError("sample grid must start at t0 and end at t1")
    static, drive = full_hamiltonian_parts(space, cfg)
    gamma = per_s_to_per_ms(cfg.gamma_el)
    b_max = max(abs(cfg.ramp.field_at(t)) for t in sample_times)
    scale = (
        abs(cfg.delta) * space.n_max
        + b_max * cfg.N / 2
        + cfg.g0 * math.sqrt(space.n_max + 1) * math.sqrt(cfg.N)
        + gamma * cfg.N
    )
    spacing = float(np.max(np.diff(sample_times)))
    n_sub = max(1, math.ceil(spacing * scale / 0.25))
    prev = None
    for halving in range(max_halvings + 1):
        rho, series, min_eig, dsx = _rk4_run(
            rho0, static, drive, cfg.ramp, gamma, space.dephasing_mask, space, t0, sample_times, n_sub, derivative
        )
        if min_eig < -positivity_tol:
            if halving == max_halvings:
                raise PositivityError(f"density matrix eigenvalue {min_eig:.2e} below -{positivity_tol:.0e}")
            n_sub *= 2
            prev = None
            continue
        if prev is not None:
            diff = max(float(np.max(np.abs(series[k] - prev[k]))) for k in series)
            if diff < conv_tol:
                herm = float(np.max(np.abs(rho - rho.conj().T)))
                return LindbladResult(
                    sample_times, series, rho, spacing / n_sub, halving, diff, min_eig, herm, dsx
                )
        prev = series
        n_sub *= 2
    raise RuntimeError(f"master equation did not converge to {conv_tol:.0e} after {max_halvings} halvings")


def fit_decay_rate(times, values) -> float:
    """Rate k of |values| ~ A exp(-k t) by least squares on the logarithm."""
    times = np.asarray(times, dtype=float)
    y = np.log(np.abs(np.asarray(values, dtype=float)))
    slope, _ = np.polyfit(times, y, 1)
    return float(-slope)


def sx_decay_rate(cfg: DickeConfig, n_max: int | None = None) -> float:
    """Fitted decay rate (1/ms) of <S_x> from |-N/2>_x (x) |0> under the full master equation."""
    n_max = n_max or min(MAX_FOCK, cfg.n_max or default_n_max(cfg))
    space = build_full_space(cfg.N, n_max)
    rho0 = pure_density(full_normal_state(space))
    res = evolve_lindblad(rho0, cfg, 0.0, cfg.duration, space)
    return fit_decay_rate(res.times, res["sx"])


def validate_inference(cfg: DickeConfig, production_samples: int = 100, dense_factor: int = 10,
                       gamma_inference: float | None = None) -> dict:
    """Check d<S_x>/dt = (g0/sqrt N)<(a + a^dag) S_y> - gamma_el <S_x> along a ramp.

    The identity is checked exactly via the Liouvillian at every sample of a
    dense grid. The one-sided finite-difference reconstruction is then
    compared against the directly computed correlator at ``production_samples``
    and at ``dense_factor`` times that many samples. ``gamma_inference``
    overrides the rate used in both the identity and the reconstruction, as a
    negative control.
    """
    if cfg.N > 3:
        raise ValueError("inference validation is limited to N <= 3")
    T = cfg.duration
    n_dense = (production_samples - 1) * dense_factor + 1
    times = np.linspace(0.0, T, n_dense)
    space = build_full_space(cfg.N, min(MAX_FOCK, cfg.n_max or default_n_max(cfg)))
    rho0 = pure_density(full_normal_state(space))
    res = evolve_lindblad(rho0, cfg, 0.0, T, space, times, derivative=True)
    g_inf = cfg.gamma_el if gamma_inference is None else gamma_inference
    predicted = (cfg.g0 / math.sqrt(cfg.N)) * res["corr_sy"] - per_s_to_per_ms(g_inf) * res["sx"]
    identity_residual = float(np.max(np.abs(res.sx_derivative - predicted)))

    def reconstruction_error(stride):
        t = times[::stride]
        inferred = infer_spin_phonon(res["sx"][::stride], t, cfg.N, cfg.g0, g_inf)
        direct = res["corr_sy"][::stride]
        peak = float(np.max(np.abs(direct)))
        return float(np.max(np.abs(inferred - direct)) / peak), peak

    err_prod, peak = reconstruction_error(dense_factor)
    err_dense, _ = reconstruction_error(1)
    return {
        "N": cfg.N,
        "gamma_inference": g_inf,
        "identity_residual": identity_residual,
        "identity_threshold": 1e-5 * cfg.N,
        "identity_ok": identity_residual < 1e-5 * cfg.N,
        "peak_correlator": peak,
        "production_samples": production_samples,
        "fd_error_production": err_prod,
        "fd_error_dense": err_dense,
        "fd_error_ratio": err_prod / err_dense if err_dense > 0 else math.inf,
        "integration_dt": res.dt,
        "min_eigenvalue": res.min_eigenvalue,
        "trace_error": float(np.max(np.abs(res["trace"] - 1.0))),
    }


def closed_system_check(cfg: DickeConfig, n_max: int | None = None) -> dict:
    """Gamma_el = 0 master equation vs exact pure-state propagation at constant field.

    The pure state is propagated with a dense matrix exponential of the
    full-space Hamiltonian, independent of the Krylov propagator.
    """
    cfg = cfg.with_(gamma_el=0.0)
    n_max = n_max or min(MAX_FOCK, cfg.n_max or default_n_max(cfg))
    space = build_full_space(cfg.N, n_max)
    psi0 = full_normal_state(space)
    res = evolve_lindblad(pure_density(psi0), cfg, 0.0, cfg.duration, space)
    static, drive = full_hamiltonian_parts(space, cfg)
    H = (static + cfg.ramp.field_at(0.0) * drive).toarray()
    psi = expm(-1j * cfg.duration * H) @ psi0
    diff = res.rho - pure_density(psi)
    dist = float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
    s2 = (cfg.N / 2) * (cfg.N / 2 + 1)
    return {
        "trace_distance": dist,
        "total_spin_drift": float(np.max(np.abs(res["s_total_sq"] - s2))),
    }


def pure_dephasing_check(N: int, gamma_el: float, t_final: float, n_samples: int = 41) -> dict:
    """g0 = 0, B = 0 from |-N/2>_x: compare with <S_x> = -(N/2) exp(-gamma_el t)."""
    cfg = DickeConfig(N=N, g0=0.0, delta=-1.0, ramp=ConstantRamp(0.0, t_final), gamma_el=gamma_el,
                      n_max=1, n_samples=n_samples)
    space = build_full_space(N, 1)
    res = evolve_lindblad(pure_density(full_normal_state(space)), cfg, 0.0, t_final, space)
    exact = -(N / 2) * np.exp(-per_s_to_per_ms(gamma_el) * res.times)
    rate = fit_decay_rate(res.times, res["sx"])
    return {
        "max_abs_error": float(np.max(np.abs(res["sx"] - exact))),
        "fitted_rate": rate,
        "expected_rate": per_s_to_per_ms(gamma_el),
        "relative_rate_error": abs(rate / per_s_to_per_ms(gamma_el) - 1.0),
    }


def dephasing_model_discrepancy(cfg: DickeConfig, n_max: int | None = None) -> dict:
    """Exact dephased <S_x>(t) vs the unitary trace attenuated by exp(-gamma_el t / 2)."""
    n_max = n_max or min(MAX_FOCK, cfg.n_max or default_n_max(cfg))
    space = build_full_space(cfg.N, n_max)
    rho0 = pure_density(full_normal_state(space))
    open_run = evolve_lindblad(rho0, cfg, 0.0, cfg.duration, space)
    closed = evolve_lindblad(rho0, cfg.with_(gamma_el=0.0), 0.0, cfg.duration, space)
    model = closed["sx"] * np.exp(-0.5 * per_s_to_per_ms(cfg.gamma_el) * closed.times)
    return {
        "max_abs_difference": float(np.max(np.abs(open_run["sx"] - model))),
        "max_relative_to_spin_length": float(np.max(np.abs(open_run["sx"] - model)) / (cfg.N / 2)),
    }
