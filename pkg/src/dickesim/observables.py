"""Expectation values on product-space states, dephasing attenuation and
spin-phonon correlator inference from <S_x>(t)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hilbert import ProductSpace, SpinSector
from .model import per_s_to_per_ms, spin_parity


OBSERVABLES = ("sx", "sy", "sz", "abs_sz", "n_phonon", "corr_sz", "corr_sy", "parity")


def _amplitudes(psi: np.ndarray, space: ProductSpace) -> np.ndarray:
    psi = np.asarray(psi)
    if psi.shape != (space.dim,):
        raise ValueError(f"state has shape {psi.shape}, expected ({space.dim},)")
    return psi.reshape(space.shape)


def _apply_x(amp: np.ndarray) -> np.ndarray:
    """(a + a^dag) on the boson axis of a (boson, spin) amplitude array."""
    sq = np.sqrt(np.arange(1, amp.shape[0]))[:, None]
    out = np.zeros_like(amp)
    out[:-1] += sq * amp[1:]
    out[1:] += sq * amp[:-1]
    return out


def sz_distribution(psi, space: ProductSpace | SpinSector) -> np.ndarray:
    """P(M) over M = -N/2..N/2 for a product-space or spin-only state."""
    psi = np.asarray(psi)
    if isinstance(space, SpinSector):
        return np.abs(psi) ** 2
    return (np.abs(_amplitudes(psi, space)) ** 2).sum(axis=0)


def ensemble_sz_distribution(states, weights, space) -> np.ndarray:
    total = np.zeros(space.spin.dim if isinstance(space, ProductSpace) else space.dim)
    for psi, w in zip(states, weights):
        total += w * sz_distribution(psi, space)
    return total


def abs_sz(p_m: np.ndarray) -> float:
    """<|S_z|> from a distribution over ascending M."""
    N = p_m.shape[-1] - 1
    return float(np.abs(np.arange(N + 1) - N / 2) @ p_m)


def expectations(psi, space: ProductSpace) -> dict[str, float]:
    """Quadratic forms of the recorded observables for a normalized state."""
    amp = _amplitudes(psi, space)
    spin = space.spin
    pop = np.abs(amp) ** 2
    p_m = pop.sum(axis=0)
    p_n = pop.sum(axis=1)
    sy_amp = amp @ spin.sy.T
    sz_amp = amp * spin.m[None, :]
    x_amp = _apply_x(amp)
    par = (amp * ((-1.0) ** np.arange(amp.shape[0]))[:, None]) @ spin_parity(space.N).T
    return {
        "sx": float(np.vdot(amp, amp @ spin.sx.T).real),
        "sy": float(np.vdot(amp, sy_amp).real),
        "sz": float(spin.m @ p_m),
        "abs_sz": float(np.abs(spin.m) @ p_m),
        "n_phonon": float(np.arange(amp.shape[0]) @ p_n),
        # (a + a^dag) is Hermitian, so <psi|X S|psi> = <X psi|S psi>
        "corr_sz": float(np.vdot(x_amp, sz_amp).real),
        "corr_sy": float(np.vdot(x_amp, sy_amp).real),
        "parity": float(np.vdot(amp, par).real),
    }


def spin_expectations(psi, spin: SpinSector) -> dict[str, float]:
    """Spin-only counterpart of :func:`expectations`; phonon entries are NaN."""
    psi = np.asarray(psi)
    p_m = np.abs(psi) ** 2
    return {
        "sx": float(np.vdot(psi, spin.sx @ psi).real),
        "sy": float(np.vdot(psi, spin.sy @ psi).real),
        "sz": float(spin.m @ p_m),
        "abs_sz": float(np.abs(spin.m) @ p_m),
        "n_phonon": math.nan,
        "corr_sz": math.nan,
        "corr_sy": math.nan,
        "parity": float(np.vdot(psi, spin_parity(spin.N) @ psi).real),
    }


# -- dephasing ---------------------------------------------------------------


@dataclass(frozen=True)
class DephasingModel:
    """Single-particle dephasing at rate gamma_el (1/s); <S_x> decays at gamma_el / 2."""

    gamma_el: float

    def __post_init__(self):
        if self.gamma_el < 0:
            raise ValueError("gamma_el must be non-negative")

    @property
    def gamma_el_per_ms(self) -> float:
        return per_s_to_per_ms(self.gamma_el)

    @property
    def sx_decay_per_ms(self) -> float:
        return 0.5 * self.gamma_el_per_ms


def apply_dephasing(sx, times, model: DephasingModel | float) -> np.ndarray:
    """<S_x>(t) -> <S_x>(t) exp(-gamma_el t / 2); times in ms."""
    if not isinstance(model, DephasingModel):
        model = DephasingModel(float(model))
    return np.asarray(sx, dtype=float) * np.exp(-model.sx_decay_per_ms * np.asarray(times, dtype=float))


def one_sided_derivative(values, times) -> np.ndarray:
    """Backward difference; the first sample uses the forward difference."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if values.shape != times.shape or values.ndim != 1:
        raise ValueError("values and times must be 1-D arrays of equal length")
    if values.size < 2:
        raise ValueError("need at least two samples for a finite difference")
    dv = np.diff(values) / np.diff(times)
    return np.concatenate([dv[:1], dv])


def infer_spin_phonon(sx, times, N: int, g0: float, gamma_el: float) -> np.ndarray:
    """Spin-phonon correlator (sqrt N / g0)(gamma_el <S_x> + d<S_x>/dt).

    ``g0`` in rad/ms, ``gamma_el`` in 1/s, ``times`` in ms.
    """
    if g0 == 0:
        raise ValueError("inference needs g0 != 0")
    sx = np.asarray(sx, dtype=float)
    deriv = one_sided_derivative(sx, times)
    return (math.sqrt(N) / g0) * (per_s_to_per_ms(gamma_el) * sx + deriv)


# -- trace analysis ----------------------------------------------------------


def max_slope(values, times, t_min: float = -math.inf) -> float:
    """Largest forward-difference slope among intervals starting at t >= t_min."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    slopes = np.diff(values) / np.diff(times)
    keep = times[:-1] >= t_min
    if not np.any(keep):
        raise ValueError("no sample interval after t_min")
    return float(np.max(slopes[keep]))


def local_extrema(values) -> np.ndarray:
    """Indices of interior sign changes of the first difference."""
    dv = np.sign(np.diff(np.asarray(values, dtype=float)))
    nz = np.flatnonzero(dv)
    if nz.size < 2:
        return np.array([], dtype=int)
    turns = nz[1:][dv[nz[1:]] != dv[nz[:-1]]]
    return turns


def oscillation_amplitude(values, times, t_max: float = 1.0) -> float:
    """Largest swing between adjacent local extrema for t < t_max (0 if monotone)."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    window = values[times < t_max]
    idx = local_extrema(window)
    if idx.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(window[idx]))))


def bimodal_peaks(p_m: np.ndarray) -> tuple[float, float] | None:
    """M positions of the largest maximum on each side of M = 0, or None."""
    p_m = np.asarray(p_m, dtype=float)
    N = p_m.size - 1
    m = np.arange(N + 1) - N / 2
    left, right = m < 0, m > 0
    if not left.any() or not right.any():
        return None
    lo = m[left][np.argmax(p_m[left])]
    hi = m[right][np.argmax(p_m[right])]
    centre = p_m[np.abs(m) <= 0.5].max()
    if min(p_m[m == lo][0], p_m[m == hi][0]) <= centre:
        return None
    return float(lo), float(hi)
