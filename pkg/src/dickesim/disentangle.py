"""Protocols that return the phonon mode to vacuum after a superradiant ramp,
leaving a pure spin cat, plus reduced-state diagnostics."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sparse

from .hilbert import ProductSpace, TruncationError, embed
from .model import DickeConfig, ExponentialRamp, alpha0, experiment_config, hamiltonian_parts, space_for
from .propagate import evolve_ramp, evolve_step, normal_state
from .spectrum import ground_state


def partial_trace_boson(psi, space: ProductSpace) -> np.ndarray:
    """rho_s[M, M'] = sum_n <n, M|psi><psi|n, M'>."""
    amp = np.asarray(psi).reshape(space.shape)
    rho = amp.T @ amp.conj()
    return 0.5 * (rho + rho.conj().T)


def partial_trace_spin(psi, space: ProductSpace) -> np.ndarray:
    amp = np.asarray(psi).reshape(space.shape)
    rho = amp @ amp.conj().T
    return 0.5 * (rho + rho.conj().T)


def cat_coherence(rho_s: np.ndarray) -> float:
    """|<N/2| rho_s |-N/2>|."""
    return float(abs(rho_s[-1, 0]))


def vacuum_fidelity(psi, space: ProductSpace) -> float:
    amp = np.asarray(psi).reshape(space.shape)
    return float(np.vdot(amp[0], amp[0]).real)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(rho - sigma))))


def spin_support_leakage(psi, space: ProductSpace) -> float:
    """Population outside M = +-N/2."""
    p = (np.abs(np.asarray(psi).reshape(space.shape)) ** 2).sum(axis=0)
    return float(max(0.0, 1.0 - p[0] - p[-1]))


def _evolve(psi, H, t, space, cfg):
    out = evolve_step(psi, H, t, tol=cfg.krylov_tol)
    top = out.reshape(space.shape)[-5:]
    leak = float(np.vdot(top, top).real)
    if leak > cfg.leak_tol:
        raise TruncationError(f"population {leak:.2e} in the top 5 Fock levels; increase n_max")
    return out


def detuning_quench_time(cfg: DickeConfig) -> float:
    """Half a period of the quenched detuning 2 delta: pi / |2 delta|."""
    return math.pi / abs(2.0 * cfg.delta)


def resonant_drive_time(cfg: DickeConfig) -> float:
    return 1.0 / abs(cfg.delta)


def run_detuning_quench_protocol(psi, space: ProductSpace, cfg: DickeConfig) -> np.ndarray:
    """Hold B = 0, switch delta -> 2 delta and evolve for pi / |2 delta|."""
    quenched = cfg.with_(delta=2.0 * cfg.delta)
    static, _ = hamiltonian_parts(space, quenched)
    return _evolve(np.asarray(psi, dtype=complex), static, detuning_quench_time(cfg), space, cfg)


def resonant_hamiltonian(space: ProductSpace, cfg: DickeConfig) -> sparse.csr_matrix:
    """(i g0 / sqrt N)(a - a^dag) S_z."""
    quad = embed(1j * (space.fock.a - space.fock.adag), space, factor="boson")
    H = sparse.csr_matrix((cfg.g0 / math.sqrt(cfg.N)) * (quad @ space.embedded_spin("sz")))
    H.sort_indices()
    return H


def run_resonant_protocol(psi, space: ProductSpace, cfg: DickeConfig) -> np.ndarray:
    """Drive on resonance with the quadrature shifted by pi/2, for 1 / |delta|."""
    H = resonant_hamiltonian(space, cfg)
    return _evolve(np.asarray(psi, dtype=complex), H, resonant_drive_time(cfg), space, cfg)


PROTOCOLS = {
    "detuning": run_detuning_quench_protocol,
    "resonant": run_resonant_protocol,
}


def coherent_field(psi, space: ProductSpace) -> complex:
    """<a> of the phonon mode."""
    amp = np.asarray(psi).reshape(space.shape)
    shifted = np.sqrt(np.arange(1, space.fock.dim))[:, None] * amp[1:]
    return complex(np.vdot(amp[:-1], shifted))


def displacement_per_spin(t: float, cfg: DickeConfig, M: float) -> complex:
    """Closed-form coherent amplitude reached from vacuum by |M>_z at B = 0.

    With k = g0 M / sqrt(N) the boson obeys da/dt = i delta a + i k, so
    alpha(t) = k (exp(i delta t) - 1) / delta.
    """
    k = cfg.g0 * M / math.sqrt(cfg.N)
    return k * (np.exp(1j * cfg.delta * t) - 1.0) / cfg.delta


def protocol_report(psi_before, psi_after, space: ProductSpace) -> dict:
    from .observables import expectations

    rho_before = partial_trace_boson(psi_before, space)
    rho_after = partial_trace_boson(psi_after, space)
    return {
        "vacuum_fidelity_before": vacuum_fidelity(psi_before, space),
        "vacuum_fidelity_after": vacuum_fidelity(psi_after, space),
        "coherence_before": cat_coherence(rho_before),
        "coherence_after": cat_coherence(rho_after),
        "spin_purity_after": float(np.real(np.trace(rho_after @ rho_after))),
        "parity_before": expectations(psi_before, space)["parity"],
        "parity_after": expectations(psi_after, space)["parity"],
        "spin_leakage_after": spin_support_leakage(psi_after, space),
    }


INITIAL_STATES = ("ground", "normal")


def slow_ramp_config(N: int = 6, slowdown: float = 20.0, hold: float = 12.0, **overrides) -> DickeConfig:
    """Experimental EXP ramp with tau stretched by ``slowdown`` and run for ``hold`` * tau, at nbar = 0."""
    base = experiment_config("exp", N=N, nbar=0.0, gamma_el=0.0, dt_max=0.05)
    tau = base.ramp.tau * slowdown
    cfg = base.with_(ramp=ExponentialRamp(base.ramp.b0, tau, hold * tau))
    return cfg.with_(**overrides) if overrides else cfg


def prepare_initial_state(cfg: DickeConfig, space: ProductSpace, kind: str = "ground") -> np.ndarray:
    """Starting state for a ramp: the exact ground state of H(B(0)) or |0>|-N/2>_x."""
    if kind == "ground":
        return ground_state(cfg, cfg.ramp.field_at(0.0), space=space)[1]
    if kind == "normal":
        return normal_state(space)
    raise ValueError(f"initial state must be one of {INITIAL_STATES}, got {kind!r}")


def run_disentangle(cfg: DickeConfig, protocol: str = "detuning", initial_state: str = "ground",
                    compare: bool = True) -> dict:
    """Ramp into the superradiant phase, apply a disentangling protocol and report.

    With ``compare`` the other protocol is applied to the same ramped state and
    the trace distance between the two reduced spin states is included.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {sorted(PROTOCOLS)}, got {protocol!r}")
    if cfg.nbar != 0:
        raise ValueError("disentangling runs start from a pure state; set nbar = 0")
    space = space_for(cfg)
    psi0 = prepare_initial_state(cfg, space, initial_state)
    psi, rec = evolve_ramp(psi0, space, cfg, 0.0, cfg.duration)
    after = PROTOCOLS[protocol](psi, space, cfg)
    report = protocol_report(psi, after, space)
    report.update(
        protocol=protocol,
        initial_state=initial_state,
        alpha0=alpha0(cfg),
        coherence_bound=math.exp(-alpha0(cfg) ** 2),
        ramp_final_field=rec.field[-1],
        n_max=space.n_max,
    )
    if compare:
        other = "resonant" if protocol == "detuning" else "detuning"
        alt = PROTOCOLS[other](psi, space, cfg)
        report["protocol_trace_distance"] = trace_distance(
            partial_trace_boson(after, space), partial_trace_boson(alt, space)
        )
    return report
