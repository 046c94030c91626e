import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from snls.field import Grid
from snls.noise import (HorizonError, NoiseConfigError, QUANTUM, SpatialProfile, TemporalProfile,
                        build_model, coeff_b, coeff_b_star, coeff_c, coeff_c_star, epsilon_theta,
                        flatness_report, lensed_weight_exponent, mu, mu_hat, mu_hat_symmetric, path_csv,
                        phi, phi_star, sample_path)
from snls.transforms import exponents

GRID = Grid(1, 64, 20.0)
amps = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2 ** 63 - 1)


def one_channel(amp, kind="gaussian_decay", temporal=None, T=1.0, cells=64, seed=5, lam=-1):
    tp = temporal or TemporalProfile("constant", 1.0)
    return build_model([(SpatialProfile(kind, amp, 2.0), tp)], lam, T, cells, seed)


def test_path_deterministic():
    a = sample_path(1.0, 100, 42, 0)
    b = sample_path(1.0, 100, 42, 0)
    c = sample_path(1.0, 100, 42, 1)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)


def test_path_clt_mean():
    p = sample_path(1.0, 10 ** 5, 2024, 0)
    z = p.increments / math.sqrt(p.dt)
    assert abs(z.mean()) <= 4 / math.sqrt(10 ** 5)
    assert z.var() == pytest.approx(1.0, abs=0.02)


def test_increments_on_lattice():
    p = sample_path(2.0, 64, 9, 0).refine().refine()
    assert np.array_equal(np.rint(p.increments / QUANTUM) * QUANTUM, p.increments)


@given(seed=seeds, cells=st.integers(1, 40), levels=st.integers(1, 4))
def test_refine_coarsen_exact(seed, cells, levels):
    p = sample_path(1.0, cells, seed, 0)
    q = p
    for _ in range(levels):
        q = q.refine()
    for _ in range(levels):
        q = q.coarsen()
    assert np.array_equal(q.increments, p.increments)


def test_refine_keeps_quadratic_variation():
    p = sample_path(1.0, 256, 11, 0)
    q = p.refine().refine().refine()
    assert np.sum(q.increments ** 2) == pytest.approx(1.0, abs=0.15)


def test_stochastic_integral_coarse_equals_fine():
    m = one_channel(0.5j)
    f = m.refine(3)
    assert np.array_equal(m.channels[0].I, f.channels[0].I[::8])
    m2 = one_channel(0.5j, temporal=TemporalProfile("exp_decay", 1.0, rate=0.7))
    # piecewise constant g on the coarse mesh: weight fine cells by the coarse node value
    ch, fch = m2.channels[0], m2.refine(1).channels[0]
    coarse_g = np.repeat(ch.g_nodes[:-1], 2)
    fine = np.concatenate(([0.0], np.cumsum(coarse_g * fch.path.increments)))[::2]
    np.testing.assert_allclose(fine, ch.I, rtol=1e-13, atol=1e-15)


def test_phi_zero_without_noise():
    m = build_model([], -1, 1.0, 10, 0)
    assert np.all(phi(m, 0.5, GRID).values == 0)
    assert np.all(mu(m, 0.5, GRID).values == 0)
    assert np.all(mu_hat(m, 0.5, GRID).values == 0)


@given(im=st.floats(-3, 3), seed=seeds, kind=st.sampled_from(["constant", "gaussian_decay", "inverse_poly"]))
def test_conservative_phi_is_imaginary(im, seed, kind):
    m = one_channel(1j * im, kind=kind, seed=seed, cells=32)
    for t in (0.25, 1.0):
        assert np.max(np.abs(phi(m, t, GRID).values.real)) <= 1e-14
    assert np.all(mu_hat(m, 0.5, GRID).values == 0)


@given(a=amps, b=amps, seed=seeds)
def test_phi_star_consistency(a, b, seed):
    m = build_model([(SpatialProfile("gaussian_decay", a, 1.5), TemporalProfile("exp_decay", 1.0, rate=2.0)),
                     (SpatialProfile("inverse_poly", b, power=4.0), TemporalProfile("constant", 0.5))],
                    1, 2.0, 32, seed)
    for t in (0.0, 0.5, 1.25):
        lhs = phi_star(m, t, GRID).values
        rhs = phi(m, t, GRID).values - phi(m, m.T, GRID).values
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_compact_support_phi_star_vanishes():
    m = one_channel(0.3 + 0.4j, temporal=TemporalProfile("compact", 1.0, T0=0.5), T=2.0, cells=40)
    assert np.all(phi_star(m, 0.75, GRID).values == 0)
    assert np.all(phi_star(m, 2.0, GRID).values == 0)
    assert np.any(phi_star(m, 0.25, GRID).values != 0)


def test_horizon_error():
    m = one_channel(1j)
    with pytest.raises(HorizonError):
        phi(m, 1.5, GRID)


@given(a=amps, b=amps, t=st.floats(0, 1))
def test_mu_hat_identity(a, b, t):
    m = build_model([(SpatialProfile("gaussian_decay", a, 1.0), TemporalProfile("exp_decay", 1.0, rate=1.0)),
                     (SpatialProfile("inverse_poly", b, power=3.0), TemporalProfile("constant", 2.0))],
                    -1, 1.0, 8, 0)
    np.testing.assert_allclose(mu_hat(m, t, GRID).values, mu_hat_symmetric(m, t, GRID).values,
                               rtol=0, atol=1e-14 * (1 + 4 * (abs(a) + abs(b)) ** 2))


def test_mu_example_one_plus_i():
    g = 0.7
    m = one_channel(1 + 1j, kind="constant", temporal=TemporalProfile("constant", g))
    np.testing.assert_allclose(mu(m, 0.3, GRID).values, g * g, rtol=1e-15)
    np.testing.assert_allclose(mu_hat(m, 0.3, GRID).values, g * g * (1 + 1j), rtol=1e-15)


def test_b_matches_scalar_quadrature():
    a, w, c, rate = 0.8, 2.0, 1.3, 0.9
    m = one_channel(a, temporal=TemporalProfile("exp_decay", c, rate=rate), T=1.0, cells=50, seed=77)
    path = m.channels[0].path
    i_t = 30
    t = path.mesh[i_t]
    # independent loop quadrature of int g dbeta (left point) and int g^2 ds (trapezoid)
    I = 0.0
    J = 0.0
    for i in range(i_t):
        s0, s1 = path.mesh[i], path.mesh[i + 1]
        I += c * math.exp(-rate * s0) * path.increments[i]
        J += 0.5 * (c * c * math.exp(-2 * rate * s0) + c * c * math.exp(-2 * rate * s1)) * (s1 - s0)
    b = coeff_b(m, t, GRID)[0].values
    for j in (20, 32, 45):
        x = GRID.x1[j]
        F = math.exp(-x * x / (2 * w * w))
        dF = -x / (w * w) * F
        want = 2.0 * (a * I * dF - a * a * J * 2.0 * F * dF)
        assert b[j] == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_constant_profiles_have_flat_coefficients():
    m = build_model([(SpatialProfile("constant", 0.5 + 1j), TemporalProfile("constant", 1.0)),
                     (SpatialProfile("constant", -0.2j), TemporalProfile("constant", 0.3))], 1, 1.0, 16, 3)
    g2 = Grid(2, 16, 8.0)
    for f in coeff_b(m, 0.5, g2) + coeff_b_star(m, 0.5, g2):
        assert np.all(f.values == 0)
    assert np.all(coeff_c(m, 0.5, g2).values == 0)
    assert np.all(coeff_c_star(m, 0.5, g2).values == 0)
    rows = flatness_report(m, [0.0, 0.5], g2)
    assert all(v == 0 for r in rows for k, v in r.items() if k != "t")


def test_zero_model_flatness():
    rows = flatness_report(build_model([], 1, 1.0, 4, 0), [0.0, 1.0], Grid(3, 8, 4.0))
    assert all(v == 0 for r in rows for k, v in r.items() if k != "t")


def test_flatness_tail_decays():
    m = one_channel(0.5 + 0.5j, temporal=TemporalProfile("exp_decay", 1.0, rate=1.0), T=8.0, cells=256, seed=4)
    rows = flatness_report(m, [1.0, 2.0, 4.0], Grid(2, 32, 20.0))
    for key in ("b0", "b1", "b2", "c0", "c1"):
        assert rows[1][key] <= rows[0][key]
        assert rows[2][key] <= rows[1][key]
    assert rows[0]["b0"] > 0


def test_epsilon_theta_no_noise():
    m = build_model([], 1, 10.0, 100, 0)
    assert epsilon_theta(m, 2.0, 2.0, 10.0) == pytest.approx(10.0, rel=1e-14)


def test_epsilon_theta_decreases_with_real_part():
    base = build_model([(SpatialProfile("constant", 1.0 + 0.5j), TemporalProfile("constant", 0.5))],
                       1, 8.0, 400, 12)
    e1 = epsilon_theta(base, 1.5, 8 / 7, 8.0)
    e2 = epsilon_theta(base.with_amplitude(0, 2.0 + 0.5j), 1.5, 8 / 7, 8.0)
    assert e2 < e1


def test_epsilon_theta_rejects_small_theta():
    with pytest.raises(ValueError):
        epsilon_theta(build_model([], 1, 1.0, 4, 0), 2.0, 1.0, 1.0)


def test_lensed_exponent_arithmetic():
    tab = exponents(3, 3, -1)
    assert tab.theta == 2.0
    # -(d(alpha-1) - 4) theta / 2 - 2 = -(6 - 4) * 2 / 2 - 2
    assert lensed_weight_exponent(3, 3.0, tab.theta) == -4.0
    m = build_model([], 1, 4.0, 400, 0)
    lensed = epsilon_theta(m, 3.0, 2.0, 4.0, lensed=True, d=3)
    # int_0^4 (1+s)^-4 ds; trapezoid error h^2/12 |f'(0) - f'(4)| ~ 3.3e-5
    assert abs(lensed - (1 - 5.0 ** -3) / 3) <= 0.01 ** 2 / 12 * 4 * 1.01


def test_profile_validation():
    with pytest.raises(NoiseConfigError):
        SpatialProfile("inverse_poly", 1.0, power=2.0)
    with pytest.raises(NoiseConfigError):
        TemporalProfile("poly_decay", 1.0, rate=2.0)
    assert math.isinf(TemporalProfile("constant").tail_l2sq(10.0))
    assert TemporalProfile("exp_decay", 2.0, rate=3.0).tail_l2sq(1.0) == pytest.approx(4 * math.exp(-6) / 6)
    assert TemporalProfile("poly_decay", 1.0, rate=3.0).weighted_l2sq() < math.inf


def test_path_csv_layout():
    m = build_model([(SpatialProfile("constant", 1j), TemporalProfile("constant"))] * 2, -1, 1.0, 4, 1)
    lines = path_csv(m).splitlines()
    assert lines[0] == "t,dbeta_0,dbeta_1"
    assert len(lines) == 5
