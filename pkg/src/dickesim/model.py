"""Dicke and Lipkin Hamiltonians, ramp schedules and derived critical quantities.

Frequencies are angular frequencies in rad/ms and times are in ms throughout.
Rates quoted per second (``gamma_el``) are converted with :func:`per_s_to_per_ms`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sparse

from .hilbert import ProductSpace, SpinSector, build_product_space, build_spin_sector


TWO_PI = 2.0 * math.pi


def khz_to_angular(f_khz: float) -> float:
    """Ordinary frequency in kHz -> angular frequency in rad/ms."""
    return TWO_PI * f_khz


def angular_to_khz(w: float) -> float:
    return w / TWO_PI


def per_s_to_per_ms(rate: float) -> float:
    return rate * 1e-3


# -- ramp profiles -----------------------------------------------------------


@dataclass(frozen=True)
class LinearRamp:
    """B(t) = b0 (1 - t / tau_ramp), clamped at zero after tau_ramp."""

    b0: float
    tau_ramp: float
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        if self.b0 < 0 or self.tau_ramp <= 0:
            raise ValueError("linear ramp needs b0 >= 0 and tau_ramp > 0")

    def field_at(self, t: float) -> float:
        return self.b0 * max(0.0, 1.0 - t / self.tau_ramp)

    def step_limit(self, t: float, db: float) -> float:
        """Largest dt with |B(t + dt) - B(t)| <= db."""
        if t >= self.tau_ramp or self.b0 == 0:
            return math.inf
        return db * self.tau_ramp / self.b0

    @property
    def default_duration(self) -> float:
        return self.tau_ramp


@dataclass(frozen=True)
class ExponentialRamp:
    """B(t) = b0 exp(-t / tau)."""

    b0: float
    tau: float
    duration: float | None = None
    kind: str = field(default="exponential", init=False)

    def __post_init__(self):
        if self.b0 < 0 or self.tau <= 0:
            raise ValueError("exponential ramp needs b0 >= 0 and tau > 0")

    def field_at(self, t: float) -> float:
        return self.b0 * math.exp(-t / self.tau)

    def step_limit(self, t: float, db: float) -> float:
        b = self.field_at(t)
        if b <= db:
            return math.inf
        return -self.tau * math.log1p(-db / b)

    @property
    def default_duration(self) -> float:
        return self.duration if self.duration is not None else 2.0


@dataclass(frozen=True)
class ConstantRamp:
    b: float
    duration: float = 1.0
    kind: str = field(default="constant", init=False)

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("constant field must be non-negative")

    def field_at(self, t: float) -> float:
        return self.b

    def step_limit(self, t: float, db: float) -> float:
        return math.inf

    @property
    def default_duration(self) -> float:
        return self.duration


RampProfile = LinearRamp | ExponentialRamp | ConstantRamp


def field_at(ramp: RampProfile, t: float) -> float:
    if t < 0:
        raise ValueError("ramp is defined for t >= 0 only")
    return ramp.field_at(t)


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class DickeConfig:
    """Physical parameters and numerical controls of one simulation.

    ``g0``, ``delta``, ``bias_epsilon`` are angular frequencies (rad/ms),
    ``gamma_el`` is in 1/s, times are in ms. ``delta`` keeps its sign and must
    be negative.
    """

    N: int
    g0: float
    delta: float
    ramp: RampProfile = ConstantRamp(0.0)
    gamma_el: float = 0.0
    nbar: float = 0.0
    bias_epsilon: float = 0.0
    n_max: int | None = None
    t_final: float | None = None
    n_samples: int = 100
    eta: float = 0.02
    dt_max: float = 0.01
    krylov_tol: float = 1e-10
    leak_tol: float = 1e-6
    thermal_tol: float = 1e-4

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not self.delta < 0:
            raise ValueError(f"delta must be strictly negative, got {self.delta}")
        if self.g0 < 0:
            raise ValueError(f"g0 must be non-negative, got {self.g0}")
        if self.nbar < 0:
            raise ValueError(f"nbar must be non-negative, got {self.nbar}")
        if self.gamma_el < 0:
            raise ValueError(f"gamma_el must be non-negative, got {self.gamma_el}")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.eta <= 0 or self.dt_max <= 0:
            raise ValueError("eta and dt_max must be positive")

    @property
    def duration(self) -> float:
        return self.t_final if self.t_final is not None else self.ramp.default_duration

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.n_samples)

    def with_(self, **changes) -> "DickeConfig":
        return replace(self, **changes)


def experiment_config(protocol: str = "exp", **overrides) -> DickeConfig:
    """Parameters of the trapped-ion quench experiment (EXP: N=68, LIN: N=69)."""
    g0 = khz_to_angular(1.32)
    delta = khz_to_angular(-1.0)
    b0 = khz_to_angular(7.1)
    if protocol == "exp":
        base = DickeConfig(N=68, g0=g0, delta=delta, ramp=ExponentialRamp(b0, 0.6), nbar=6.0, gamma_el=120.0)
    elif protocol == "lin":
        base = DickeConfig(N=69, g0=g0, delta=delta, ramp=LinearRamp(b0, 2.0), nbar=6.0, gamma_el=280.0)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return replace(base, **overrides)


# -- derived quantities ------------------------------------------------------


def critical_field(cfg: DickeConfig) -> float:
    """B_c = g0^2 / |delta|."""
    if cfg.delta == 0:
        raise ValueError("critical field undefined for delta = 0")
    return cfg.g0**2 / abs(cfg.delta)


def alpha0(cfg: DickeConfig) -> float:
    """Superradiant coherent displacement g0 sqrt(N) / (2 delta); negative for delta < 0."""
    if cfg.delta == 0:
        raise ValueError("alpha0 undefined for delta = 0")
    return cfg.g0 * math.sqrt(cfg.N) / (2.0 * cfg.delta)


def lipkin_coupling(cfg: DickeConfig) -> float:
    """Signed J = g0^2 / delta."""
    return cfg.g0**2 / cfg.delta


def crossing_time(ramp: RampProfile, b_c: float) -> float | None:
    """First time at which B(t) <= b_c, or None if it never happens."""
    if isinstance(ramp, LinearRamp):
        if ramp.b0 <= b_c:
            return 0.0
        return ramp.tau_ramp * (1.0 - b_c / ramp.b0)
    if isinstance(ramp, ExponentialRamp):
        if ramp.b0 <= b_c:
            return 0.0
        return ramp.tau * math.log(ramp.b0 / b_c) if b_c > 0 else None
    return 0.0 if ramp.b <= b_c else None


def default_n_max(cfg: DickeConfig, n_cut: int = 0) -> int:
    """Fock truncation ceil((|alpha0| + 4)^2 + n_cut)."""
    return int(math.ceil((abs(alpha0(cfg)) + 4.0) ** 2 + n_cut))


# -- Hamiltonians ------------------------------------------------------------


def _check_space(space: ProductSpace, cfg: DickeConfig) -> None:
    if space.N != cfg.N:
        raise ValueError(f"space built for N={space.N}, config has N={cfg.N}")


def hamiltonian_parts(space: ProductSpace, cfg: DickeConfig) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Split H(B) = H_static + B * S_x; both parts are Hermitian CSR matrices."""
    _check_space(space, cfg)
    sz = space.embedded_spin("sz")
    static = (-cfg.g0 / math.sqrt(cfg.N)) * (space.x_quadrature @ sz) - cfg.delta * space.number
    if cfg.bias_epsilon:
        static = static + cfg.bias_epsilon * sz
    static = sparse.csr_matrix(static)
    static.sort_indices()
    return static, space.embedded_spin("sx")


def dicke_hamiltonian(space: ProductSpace, cfg: DickeConfig, B: float) -> sparse.csr_matrix:
    """-(g0/sqrt N)(a + a^dag) S_z + B S_x - delta a^dag a + bias_epsilon S_z."""
    static, sx = hamiltonian_parts(space, cfg)
    H = sparse.csr_matrix(static + B * sx)
    H.sort_indices()
    return H


def lipkin_hamiltonian(spin: SpinSector, cfg: DickeConfig, B: float) -> sparse.csr_matrix:
    """(J / N) S_z^2 + B S_x with signed J = g0^2 / delta."""
    if spin.N != cfg.N:
        raise ValueError(f"spin sector built for N={spin.N}, config has N={cfg.N}")
    J = lipkin_coupling(cfg)
    H = sparse.csr_matrix((J / cfg.N) * (spin.sz @ spin.sz) + B * spin.sx)
    H.sort_indices()
    return H


@lru_cache(maxsize=64)
def spin_parity(N: int) -> sparse.csr_matrix:
    """exp(i pi (S_x + N/2)) on the S_z basis.

    Diagonal with entries (-1)^(M_x + N/2) in the S_x eigenbasis; in the S_z
    basis this is a signed reflection M -> -M, snapped to exact +-1 entries.
    """
    from .hilbert import spin_x_eigenstate

    spin = build_spin_sector(N)
    V = np.column_stack([spin_x_eigenstate(spin, M) for M in spin.m])
    signs = (-1.0) ** np.arange(N + 1)  # (-1)^(M_x + N/2) with M_x ascending from -N/2
    P = (V * signs) @ V.conj().T
    snapped = np.round(P.real)
    if np.max(np.abs(P - snapped)) > 1e-8:
        raise RuntimeError("spin parity did not reduce to a signed permutation")
    out = sparse.csr_matrix(snapped)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def parity_operator(space: ProductSpace) -> sparse.csr_matrix:
    """Pi = exp(i pi (a^dag a + S_x + N/2)) on the boson-major product basis."""
    boson = sparse.diags((-1.0) ** np.arange(space.fock.dim))
    out = sparse.csr_matrix(sparse.kron(boson, spin_parity(space.N)))
    out.sort_indices()
    return out


def space_for(cfg: DickeConfig, n_cut: int = 0) -> ProductSpace:
    n_max = cfg.n_max if cfg.n_max is not None else default_n_max(cfg, n_cut)
    return build_product_space(cfg.N, n_max)


def ramp_to_dict(ramp: RampProfile) -> dict:
    if isinstance(ramp, LinearRamp):
        return {"kind": "linear", "b0": ramp.b0, "tau_ramp": ramp.tau_ramp}
    if isinstance(ramp, ExponentialRamp):
        return {"kind": "exponential", "b0": ramp.b0, "tau": ramp.tau, "duration": ramp.duration}
    return {"kind": "constant", "b": ramp.b, "duration": ramp.duration}


def config_to_dict(cfg: DickeConfig) -> dict:
    """Plain-data view of a config in internal units (rad/ms, ms, 1/s)."""
    out = {}
    for name in cfg.__dataclass_fields__:
        value = getattr(cfg, name)
        out[name] = ramp_to_dict(value) if name == "ramp" else value
    return out


def config_hash(cfg: DickeConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
