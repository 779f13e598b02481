import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dickesim.hilbert import (
    build_product_space,
    build_spin_sector,
    displaced_fock_state,
    fock_state,
    product_state,
    spin_x_eigenstate,
    spin_z_state,
)
from dickesim.model import DickeConfig, alpha0
from dickesim.observables import (
    DephasingModel,
    abs_sz,
    apply_dephasing,
    bimodal_peaks,
    ensemble_sz_distribution,
    expectations,
    infer_spin_phonon,
    local_extrema,
    max_slope,
    one_sided_derivative,
    oscillation_amplitude,
    spin_expectations,
    sz_distribution,
)
from dickesim.propagate import normal_state
from dickesim.spectrum import ground_state

from conftest import DELTA, G0


def test_distribution_of_z_state():
    sp = build_product_space(4, 3)
    psi = product_state(sp, fock_state(sp, 0), spin_z_state(sp, -2))
    p = sz_distribution(psi, sp)
    assert p[0] == 1.0 and p.sum() == 1.0


def test_distribution_of_x_state_is_binomial():
    N = 7
    sp = build_product_space(N, 2)
    p = sz_distribution(normal_state(sp), sp)
    assert np.allclose(p, [math.comb(N, k) / 2**N for k in range(N + 1)])


def test_cat_state_distribution():
    N = 6
    sp = build_product_space(N, 30)
    a = 1.5
    up = product_state(sp, displaced_fock_state(sp, a, 0), spin_z_state(sp, N / 2))
    dn = product_state(sp, displaced_fock_state(sp, -a, 0), spin_z_state(sp, -N / 2))
    cat = (up + dn) / np.linalg.norm(up + dn)
    p = sz_distribution(cat, sp)
    assert p[0] == pytest.approx(0.5) and p[-1] == pytest.approx(0.5)
    assert bimodal_peaks(p) == (-3.0, 3.0)


def test_ensemble_distribution_and_abs_sz():
    sp = build_product_space(2, 2)
    s1 = product_state(sp, fock_state(sp, 0), spin_z_state(sp, -1))
    s2 = product_state(sp, fock_state(sp, 1), spin_z_state(sp, 0))
    p = ensemble_sz_distribution([s1, s2], [0.25, 0.75], sp)
    assert np.allclose(p, [0.25, 0.75, 0.0])
    assert abs_sz(p) == pytest.approx(0.25)


def test_expectations_normal_state():
    sp = build_product_space(5, 4)
    e = expectations(normal_state(sp), sp)
    assert e["sx"] == pytest.approx(-2.5)
    assert e["sy"] == pytest.approx(0.0, abs=1e-14)
    assert e["corr_sz"] == pytest.approx(0.0, abs=1e-14)
    assert e["corr_sy"] == pytest.approx(0.0, abs=1e-14)
    assert e["n_phonon"] == 0.0
    assert e["parity"] == pytest.approx(1.0)


def test_expectations_coherent_up_state():
    N, a = 4, 0.8
    sp = build_product_space(N, 30)
    psi = product_state(sp, displaced_fock_state(sp, a, 0), spin_z_state(sp, N / 2))
    e = expectations(psi, sp)
    assert e["corr_sz"] == pytest.approx(a * N, rel=1e-10)
    assert e["n_phonon"] == pytest.approx(a * a, rel=1e-10)
    assert e["abs_sz"] == pytest.approx(N / 2)


def test_expectations_against_dense_operators(rng):
    sp = build_product_space(3, 5)
    psi = rng.normal(size=sp.dim) + 1j * rng.normal(size=sp.dim)
    psi /= np.linalg.norm(psi)
    e = expectations(psi, sp)
    X = sp.x_quadrature
    for key, op in [("sx", sp.embedded_spin("sx")), ("sy", sp.embedded_spin("sy")),
                    ("corr_sy", X @ sp.embedded_spin("sy")), ("corr_sz", X @ sp.embedded_spin("sz")),
                    ("n_phonon", sp.number)]:
        assert e[key] == pytest.approx(np.vdot(psi, op @ psi).real, abs=1e-12)
    assert e["abs_sz"] >= abs(e["sz"])


def test_superradiant_ground_state_order_parameter():
    # at B = 0, completing the square gives <(a + a^dag) S_z> = 2 |alpha0| N / 2
    cfg = DickeConfig(N=6, g0=G0, delta=DELTA)
    E, vec, sp = ground_state(cfg, 0.0)
    order = expectations(vec, sp)["corr_sz"]
    assert order == pytest.approx(2 * abs(alpha0(cfg)) * cfg.N / 2, abs=1e-6)
    assert E == pytest.approx(-G0**2 * cfg.N / (4 * abs(DELTA)), abs=1e-8)


def test_spin_expectations():
    s = build_spin_sector(4)
    e = spin_expectations(spin_x_eigenstate(s, -2), s)
    assert e["sx"] == pytest.approx(-2.0)
    assert math.isnan(e["corr_sy"])
    assert e["parity"] == pytest.approx(1.0)


def test_dephasing_factors():
    t = np.array([0.0, 2.0])
    assert apply_dephasing(np.ones(2), t, 0.0).tolist() == [1.0, 1.0]
    assert apply_dephasing(np.ones(2), t, 120.0)[1] == pytest.approx(math.exp(-0.12), rel=1e-12)
    assert apply_dephasing(np.ones(2), t, DephasingModel(280.0))[1] == pytest.approx(0.7558, abs=1e-4)
    with pytest.raises(ValueError):
        DephasingModel(-1.0)


def test_one_sided_derivative():
    t = np.array([0.0, 0.1, 0.3])
    v = np.array([1.0, 2.0, 2.5])
    d = one_sided_derivative(v, t)
    assert np.allclose(d, [10.0, 10.0, 2.5])
    with pytest.raises(ValueError):
        one_sided_derivative(np.ones(1), np.zeros(1))


def test_inference_of_constant_series_is_zero():
    t = np.linspace(0, 1, 11)
    assert np.allclose(infer_spin_phonon(np.full(11, -3.0), t, 6, G0, 0.0), 0.0)
    with pytest.raises(ValueError):
        infer_spin_phonon(np.ones(3), np.arange(3.0), 6, 0.0, 10.0)


@given(st.floats(10.0, 2000.0), st.integers(20, 400))
@settings(max_examples=30, deadline=None)
def test_inference_error_on_exponential_is_first_order(gamma_el, samples):
    # <S_x> = s exp(-G t): the backward difference underestimates the decay by
    # the factor (1 - exp(-G dt)) / (G dt), so the error is O(dt)
    N, s = 4, -2.0
    G = gamma_el * 1e-3
    t = np.linspace(0.0, 2.0, samples)
    dt = t[1] - t[0]
    sx = s * np.exp(-G * t)
    c = infer_spin_phonon(sx, t, N, G0, gamma_el)
    factor = (1 - math.exp(-G * dt)) / (G * dt)
    expected = (math.sqrt(N) / G0) * G * sx[1:] * (1 - factor * math.exp(G * dt))
    assert np.allclose(c[1:], expected, rtol=1e-9, atol=1e-12)
    bound = (math.sqrt(N) / G0) * G * abs(s) * (math.exp(G * dt) - 1)
    assert np.max(np.abs(c[1:])) <= bound * (1 + 1e-9)


def test_trace_helpers():
    t = np.linspace(0, 2, 201)
    y = 0.1 * t + 0.05 * np.sin(2 * np.pi * 5 * t)
    assert max_slope(y, t) == pytest.approx(0.1 + 0.05 * 2 * np.pi * 5, rel=3e-2)
    assert max_slope(t**2, t, t_min=1.0) == pytest.approx(4.0, rel=1e-2)
    amp = oscillation_amplitude(y, t, t_max=1.0)
    assert 0.09 < amp < 0.12
    assert oscillation_amplitude(t, t) == 0.0
    assert list(local_extrema([0, 1, 0, 1])) == [1, 2]
    assert bimodal_peaks(np.array([0.1, 0.2, 0.4, 0.2, 0.1])) is None
