import math

import numpy as np
import pytest

from dickesim.lindblad import (
    build_full_space,
    closed_system_check,
    evolve_lindblad,
    fit_decay_rate,
    full_normal_state,
    lindblad_rhs,
    pure_density,
    pure_dephasing_check,
    validate_inference,
)
from dickesim.model import ConstantRamp, DickeConfig, ExponentialRamp, critical_field, khz_to_angular

from conftest import DELTA, G0


def test_space_limits():
    with pytest.raises(ValueError):
        build_full_space(5, 4)
    with pytest.raises(ValueError):
        build_full_space(2, 41)
    sp = build_full_space(3, 4)
    assert sp.dim == 8 * 5


def test_collective_operators():
    sp = build_full_space(3, 2)
    sx, sy, sz = (sp.ops[k].toarray() for k in ("sx", "sy", "sz"))
    assert np.allclose(sx @ sy - sy @ sx, 1j * sz)
    psi = full_normal_state(sp)
    assert np.vdot(psi, sx @ psi).real == pytest.approx(-1.5)


def test_dephasing_mask_matches_jump_operators():
    from dickesim.lindblad import _PAULI, _site_op

    N, n_max = 2, 1
    sp = build_full_space(N, n_max)
    rng = np.random.default_rng(1)
    rho = rng.normal(size=(sp.dim, sp.dim)) + 1j * rng.normal(size=(sp.dim, sp.dim))
    ref = np.zeros_like(rho)
    Ib = np.eye(n_max + 1)
    for i in range(N):
        Z = np.kron(Ib, _site_op(_PAULI["z"], i, N).toarray())
        ref += Z @ rho @ Z - rho
    out = lindblad_rhs(rho, np.zeros_like(rho), 2.0, sp.dephasing_mask)
    assert np.allclose(out, ref)


def test_pure_dephasing_analytic():
    rep = pure_dephasing_check(2, 500.0, 2.0)
    assert rep["max_abs_error"] < 1e-5
    assert rep["relative_rate_error"] < 0.01


def test_closed_system_matches_pure_state():
    cfg = DickeConfig(N=2, g0=G0, delta=DELTA, n_samples=11)
    cfg = cfg.with_(ramp=ConstantRamp(critical_field(cfg), 0.2))
    rep = closed_system_check(cfg, n_max=12)
    assert rep["trace_distance"] < 1e-6
    assert rep["total_spin_drift"] < 1e-8


def test_state_invariants_under_dephasing():
    cfg = DickeConfig(N=2, g0=G0, delta=DELTA, gamma_el=2000.0, n_samples=11,
                      ramp=ExponentialRamp(khz_to_angular(7.1), 0.6, 0.3))
    sp = build_full_space(2, 10)
    res = evolve_lindblad(pure_density(full_normal_state(sp)), cfg, 0.0, 0.3, sp)
    assert np.max(np.abs(res["trace"] - 1.0)) < 1e-7
    assert res.hermiticity < 1e-10
    assert res.min_eigenvalue > -1e-7
    # individual dephasing leaks out of the symmetric manifold
    assert res["s_total_sq"][-1] < 2.0 - 1e-3


def test_fit_decay_rate():
    t = np.linspace(0, 1, 20)
    assert fit_decay_rate(t, -3 * np.exp(-0.7 * t)) == pytest.approx(0.7)


def test_inference_identity_small():
    cfg = DickeConfig(N=2, g0=G0, delta=DELTA, gamma_el=300.0, n_max=12,
                      ramp=ExponentialRamp(khz_to_angular(7.1), 0.6, 0.5))
    rep = validate_inference(cfg, production_samples=26, dense_factor=4)
    assert rep["identity_ok"]
    assert rep["identity_residual"] < 1e-5 * cfg.N
    bad = validate_inference(cfg, production_samples=26, dense_factor=4, gamma_inference=3000.0)
    assert not bad["identity_ok"]
    with pytest.raises(ValueError):
        validate_inference(cfg.with_(N=4))
