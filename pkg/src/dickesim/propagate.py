"""Time evolution of pure states under the ramped Dicke (or Lipkin) Hamiltonian
and thermally weighted quench ensembles."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import eigh_tridiagonal

from .hilbert import (
    ProductSpace,
    TruncationError,
    build_product_space,
    build_spin_sector,
    fock_state,
    product_state,
    spin_x_eigenstate,
)
from .model import (
    DickeConfig,
    config_hash,
    critical_field,
    default_n_max,
    hamiltonian_parts,
    lipkin_coupling,
)
from .observables import OBSERVABLES, expectations, spin_expectations

log = logging.getLogger(__name__)


class KrylovConvergenceError(RuntimeError):
    pass


# -- Krylov propagator ---------------------------------------------------------


def krylov_expm(H, v: np.ndarray, dt: float, tol: float = 1e-10, m_max: int = 60):
    """exp(-i H dt) v by the Lanczos method.

    The subspace grows until the a-posteriori estimate
    beta_m |e_m^T exp(-i T_m dt) e_1| falls below ``tol`` (relative to |v|).
    Returns ``(w, m, err)``; ``err`` is the final estimate, and exceeds ``tol``
    only when ``m_max`` was reached.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0 or dt == 0:
        return v.copy(), 0, 0.0
    n = v.size
    m_max = min(m_max, n)
    V = np.empty((m_max, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = v / beta0
    err = math.inf
    for j in range(m_max):
        w = H @ V[j]
        a = np.vdot(V[j], w).real
        w -= a * V[j]
        if j > 0:
            w -= beta[j - 1] * V[j - 1]
        alpha[j] = a
        b = np.linalg.norm(w)
        breakdown = b < 1e-13 * max(abs(a), 1.0)
        if j >= 1 or breakdown:
            if j == 0:
                evals, U = alpha[:1], np.ones((1, 1))
            else:
                evals, U = eigh_tridiagonal(alpha[: j + 1], beta[:j])
            c = U @ (np.exp(-1j * dt * evals) * U[0])
            err = 0.0 if breakdown else b * abs(c[-1])
            if err < tol or j == m_max - 1:
                return beta0 * (c @ V[: j + 1]), j + 1, err
        beta[j] = b
        V[j + 1] = w / b
    raise AssertionError("unreachable")


@dataclass
class StepStats:
    steps: int = 0
    matvecs: int = 0
    max_krylov: int = 0
    splits: int = 0

    def merge(self, other: "StepStats") -> None:
        self.steps += other.steps
        self.matvecs += other.matvecs
        self.max_krylov = max(self.max_krylov, other.max_krylov)
        self.splits += other.splits


def evolve_step(
    psi: np.ndarray,
    H,
    dt: float,
    tol: float = 1e-10,
    m_max: int = 60,
    max_splits: int = 10,
    stats: StepStats | None = None,
) -> np.ndarray:
    """psi <- exp(-i H dt) psi.

    A step whose Krylov estimate does not converge within ``m_max`` vectors is
    split in halves, at most ``max_splits`` levels deep.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return np.array(psi, dtype=complex, copy=True)
    psi = np.asarray(psi, dtype=complex)
    w, m, err = krylov_expm(H, psi, dt, tol, m_max)
    if stats is not None:
        stats.matvecs += m
        stats.max_krylov = max(stats.max_krylov, m)
    if err < tol:
        return w
    if max_splits == 0:
        raise KrylovConvergenceError(
            f"Krylov estimate {err:.2e} > {tol:.0e} at subspace size {m}; reduce the step"
        )
    if stats is not None:
        stats.splits += 1
    half = evolve_step(psi, H, dt / 2, tol, m_max, max_splits - 1, stats)
    return evolve_step(half, H, dt / 2, tol, m_max, max_splits - 1, stats)


# -- thermal ensemble ------------------------------------------------------------


@dataclass(frozen=True)
class ThermalEnsemble:
    nbar: float
    members: tuple[tuple[int, float], ...]
    retained: float

    @property
    def n_cut(self) -> int:
        return self.members[-1][0]

    @property
    def occupations(self) -> np.ndarray:
        return np.array([n for n, _ in self.members])

    @property
    def weights(self) -> np.ndarray:
        return np.array([p for _, p in self.members])


def thermal_ensemble(nbar: float, tol: float = 1e-4) -> ThermalEnsemble:
    """Fock-state decomposition of a thermal state, truncated once the retained
    weight reaches 1 - tol, then renormalized."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    if nbar == 0:
        return ThermalEnsemble(0.0, ((0, 1.0),), 1.0)
    r = nbar / (nbar + 1.0)
    probs = []
    cumulative = 0.0
    n = 0
    while cumulative < 1.0 - tol:
        p = r**n / (nbar + 1.0)
        probs.append(p)
        cumulative += p
        n += 1
    total = math.fsum(probs)
    return ThermalEnsemble(float(nbar), tuple((k, p / total) for k, p in enumerate(probs)), total)


# -- trajectory records --------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Observables sampled along a trajectory (or an ensemble average of them)."""

    times: np.ndarray
    field: np.ndarray
    p_mz: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    abs_sz: np.ndarray
    n_phonon: np.ndarray
    corr_sz: np.ndarray
    corr_sy: np.ndarray
    parity: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    meta: dict = field(default_factory=dict)

    SERIES = ("field", *OBSERVABLES, "norm", "energy")

    @property
    def N(self) -> int:
        return self.p_mz.shape[1] - 1

    @property
    def m(self) -> np.ndarray:
        return np.arange(self.N + 1) - self.N / 2

    def final(self) -> dict[str, float]:
        return {name: float(getattr(self, name)[-1]) for name in self.SERIES}

    @classmethod
    def from_samples(cls, times, fields, p_mz, obs: list[dict], meta=None) -> "TrajectoryRecord":
        cols = {name: np.array([o[name] for o in obs]) for name in (*OBSERVABLES, "norm", "energy")}
        return cls(
            times=np.asarray(times, dtype=float),
            field=np.asarray(fields, dtype=float),
            p_mz=np.asarray(p_mz, dtype=float),
            meta=dict(meta or {}),
            **cols,
        )


def combine(records: list[TrajectoryRecord], weights) -> TrajectoryRecord:
    """Weighted sum of member records, accumulated in list order."""
    weights = np.asarray(weights, dtype=float)
    if len(records) != weights.size or not records:
        raise ValueError("need one weight per record")
    first = records[0]
    for r in records[1:]:
        if r.times.shape != first.times.shape or not np.array_equal(r.times, first.times):
            raise ValueError("records sampled on different time grids")
    out = {}
    for f in fields(TrajectoryRecord):
        if f.name in ("times", "field", "meta"):
            continue
        acc = np.zeros_like(getattr(first, f.name))
        for r, w in zip(records, weights):
            acc = acc + w * getattr(r, f.name)
        out[f.name] = acc
    return TrajectoryRecord(times=first.times.copy(), field=first.field.copy(), meta={}, **out)


# -- ramp integration ----------------------------------------------------------


def _reference_field(cfg: DickeConfig) -> float:
    b_c = critical_field(cfg)
    if b_c > 0:
        return b_c
    return max(cfg.ramp.field_at(0.0), 1.0)


def _integrate(psi, static, drive, cfg, t0, t1, sample_times, observe, leak_check=None):
    """Piecewise-constant propagation with B taken at each interval midpoint."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    ramp = cfg.ramp
    db = cfg.eta * _reference_field(cfg)
    samples = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(samples) <= 0):
        raise ValueError("sample times must be strictly increasing")
    samples = samples[(samples >= t0 - 1e-12) & (samples <= t1 + 1e-12)]
    targets = [float(s) for s in samples if s > t0 + 1e-12]
    if not targets or targets[-1] < t1 - 1e-12:
        targets.append(float(t1))
    stats = StepStats()
    rec_t, rec_b, rec_p, rec_obs = [], [], [], []
    max_leak = 0.0

    def record(t, state):
        B = ramp.field_at(t)
        obs, p = observe(state, B)
        rec_t.append(t)
        rec_b.append(B)
        rec_p.append(p)
        rec_obs.append(obs)

    if samples.size and abs(samples[0] - t0) <= 1e-12:
        record(t0, psi)
    t = float(t0)
    for target in targets:
        while t < target - 1e-12:
            dt = min(cfg.dt_max, ramp.step_limit(t, db), target - t)
            if target - (t + dt) < 1e-9 * max(1.0, target):
                dt = target - t
            B = ramp.field_at(t + 0.5 * dt)
            H = static + B * drive
            psi = evolve_step(psi, H, dt, tol=cfg.krylov_tol, stats=stats)
            stats.steps += 1
            t = target if dt == target - t else t + dt
            if leak_check is not None:
                max_leak = max(max_leak, leak_check(psi, t))
        if any(abs(target - s) <= 1e-12 for s in samples):
            record(target, psi)
    meta = {
        "steps": stats.steps,
        "matvecs": stats.matvecs,
        "max_krylov": stats.max_krylov,
        "krylov_splits": stats.splits,
        "max_leakage": max_leak,
    }
    return psi, TrajectoryRecord.from_samples(rec_t, rec_b, rec_p, rec_obs, meta)


def _leak_monitor(space: ProductSpace, tol: float, levels: int = 5):
    cut = (space.fock.dim - levels) * space.spin.dim

    def check(psi, t):
        leak = float(np.vdot(psi[cut:], psi[cut:]).real)
        if leak > tol:
            raise TruncationError(
                f"population {leak:.2e} in the top {levels} Fock levels at t={t:.4f} ms "
                f"exceeds {tol:.0e} (n_max={space.n_max}); increase n_max"
            )
        return leak

    return check


def _dicke_observer(space: ProductSpace, static, drive):
    def observe(psi, B):
        obs = expectations(psi, space)
        obs["norm"] = float(np.linalg.norm(psi))
        obs["energy"] = float(np.vdot(psi, static @ psi + B * (drive @ psi)).real)
        p = (np.abs(psi.reshape(space.shape)) ** 2).sum(axis=0)
        return obs, p

    return observe


def evolve_ramp(
    psi: np.ndarray,
    space: ProductSpace,
    cfg: DickeConfig,
    t0: float,
    t1: float,
    sample_times=None,
    parts=None,
) -> tuple[np.ndarray, TrajectoryRecord]:
    """Propagate ``psi`` from t0 to t1 through cfg.ramp, recording at ``sample_times``.

    Steps satisfy dt <= cfg.dt_max and |B(t + dt) - B(t)| <= cfg.eta * B_c.
    Raises ``TruncationError`` when the top five Fock levels hold more than
    cfg.leak_tol of the population.
    """
    if sample_times is None:
        sample_times = np.linspace(t0, t1, cfg.n_samples)
    static, drive = parts if parts is not None else hamiltonian_parts(space, cfg)
    psi, rec = _integrate(
        np.asarray(psi, dtype=complex),
        static,
        drive,
        cfg,
        t0,
        t1,
        sample_times,
        _dicke_observer(space, static, drive),
        _leak_monitor(space, cfg.leak_tol),
    )
    rec.meta.update(n_max=space.n_max, dim=space.dim)
    return psi, rec


def normal_state(space: ProductSpace, n: int = 0) -> np.ndarray:
    """|n> (x) |-N/2>_x."""
    return product_state(space, fock_state(space, n), spin_x_eigenstate(space, -space.N / 2))


def _run_member(cfg: DickeConfig, n: int, n_max: int) -> TrajectoryRecord:
    space = build_product_space(cfg.N, n_max)
    parts = hamiltonian_parts(space, cfg)
    _, rec = evolve_ramp(normal_state(space, n), space, cfg, 0.0, cfg.duration, cfg.sample_times(), parts)
    rec.meta["n_initial"] = n
    return rec


def run_quench(cfg: DickeConfig, workers: int = 1, return_members: bool = False):
    """Thermally averaged quench starting from rho_nbar (x) |-N/2>_x.

    Members |n> (x) |-N/2>_x are propagated independently (in a process pool
    when ``workers > 1``) and reduced in order of n, so the result does not
    depend on scheduling.
    """
    ens = thermal_ensemble(cfg.nbar, cfg.thermal_tol)
    n_max = cfg.n_max if cfg.n_max is not None else default_n_max(cfg, ens.n_cut)
    occ = [int(n) for n in ens.occupations]
    log.info("quench N=%d n_max=%d members=%d", cfg.N, n_max, len(occ))
    if workers > 1 and len(occ) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_run_member, [cfg] * len(occ), occ, [n_max] * len(occ)))
    else:
        members = [_run_member(cfg, n, n_max) for n in occ]
    avg = combine(members, ens.weights)
    avg.meta = {
        "config_hash": config_hash(cfg),
        "n_max": n_max,
        "dim": (cfg.N + 1) * (n_max + 1),
        "members": len(members),
        "n_cut": ens.n_cut,
        "retained_weight": ens.retained,
        "steps": max(m.meta["steps"] for m in members),
        "max_krylov": max(m.meta["max_krylov"] for m in members),
        "max_leakage": max(m.meta["max_leakage"] for m in members),
        "max_parity_drift": max(float(np.max(np.abs(m.parity - m.parity[0]))) for m in members),
        "max_norm_error": max(float(np.max(np.abs(m.norm - 1.0))) for m in members),
    }
    if return_members:
        return avg, members, ens
    return avg


def run_lipkin_quench(cfg: DickeConfig) -> TrajectoryRecord:
    """Same ramp on the spin sector alone under (J/N) S_z^2 + B S_x."""
    spin = build_spin_sector(cfg.N)
    static = sparse.csr_matrix((lipkin_coupling(cfg) / cfg.N) * (spin.sz @ spin.sz))
    drive = spin.sx

    def observe(psi, B):
        obs = spin_expectations(psi, spin)
        obs["norm"] = float(np.linalg.norm(psi))
        obs["energy"] = float(np.vdot(psi, static @ psi + B * (drive @ psi)).real)
        return obs, np.abs(psi) ** 2

    psi0 = spin_x_eigenstate(spin, -cfg.N / 2)
    _, rec = _integrate(psi0, static, drive, cfg, 0.0, cfg.duration, cfg.sample_times(), observe)
    rec.meta.update(config_hash=config_hash(cfg), dim=spin.dim, model="lipkin")
    return rec


def sweep_nbar(cfg: DickeConfig, nbars, workers: int = 1) -> dict[float, TrajectoryRecord]:
    return {float(nb): run_quench(cfg.with_(nbar=float(nb)), workers=workers) for nb in nbars}
