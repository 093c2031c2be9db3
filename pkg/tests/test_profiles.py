import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unit_vectors
from chiralab.continuum import continuum_energy
from chiralab.energies import ModelParams, eval_Hsl_scaled
from chiralab.geometry import E1, E2, E3, PERIODIC, bond_cosines, bond_cross, rotation_exp
from chiralab.profiles import (bridge, circle_intersection, finite_difference_w, ground_helix,
                               load_profile, loads_profile, dumps_profile, oscillating_chain,
                               pure_rotation_profile, sample_to_lattice, save_profile, soft_profile,
                               soft_speed, tanh_profile, unit, zero_cost_profile)

HARD = 8.0 / 3.0


# --- ground helix -------------------------------------------------------------------------


def test_helix_consecutive_products():
    chain = ground_helix(0.02, n_sites=200)
    np.testing.assert_allclose(bond_cosines(chain.spins), 0.98, rtol=0, atol=1e-14)


def test_helix_next_nearest_products():
    d = 0.3
    u = ground_helix(d, n_sites=50).spins
    nnn = np.sum(u[2:] * u[:-2], axis=1)
    np.testing.assert_allclose(nnn, 2 * (1 - d) ** 2 - 1, atol=1e-14)


def test_helix_period_twelve():
    u = ground_helix(0.5, n_sites=25).spins
    np.testing.assert_allclose(u[12], u[0], atol=1e-14)
    np.testing.assert_allclose(u[24], u[0], atol=1e-14)


def test_helix_rejects_bad_delta():
    with pytest.raises(ValueError):
        ground_helix(1.0)


@given(unit_vectors(), st.floats(0.01, math.pi))
def test_rotated_helix_is_a_ground_state(axis, angle):
    rot = rotation_exp(axis, angle)
    chain = ground_helix(0.05, rot, n_sites=80, lam=0.01)
    assert chain.boundary == PERIODIC
    assert eval_Hsl_scaled(chain, ModelParams(0.01, 0.05)) <= 1e-12


# --- zero-cost rotating-axis transition -----------------------------------------------------


def test_zero_cost_same_axis_is_free():
    p = zero_cost_profile(E3, E3, 8.0, h=1e-2)
    np.testing.assert_allclose(p.w, np.tile(E3, (len(p.t), 1)), atol=1e-15)
    assert continuum_energy(p) <= 1e-20


def test_zero_cost_tails_are_constant_bit_exact():
    rho = 8.0
    p = zero_cost_profile(E3, E2, rho, t_lo=-3.0, t_hi=rho + 3.0, h=1e-2)
    left = p.w[p.t <= 0]
    right = p.w[p.t >= rho]
    assert np.all(left == left[0]) and np.all(right == right[0])
    np.testing.assert_allclose(left[0], E3, atol=1e-15)
    np.testing.assert_allclose(right[0], E2, atol=1e-15)


def test_zero_cost_energy_decays_like_inverse_rho():
    rhos = [8.0, 16.0, 32.0, 64.0]
    e = [continuum_energy(zero_cost_profile(E3, E2, r, h=1e-3)) for r in rhos]
    assert all(b < a for a, b in zip(e, e[1:]))
    slope = np.polyfit(np.log(rhos), np.log(e), 1)[0]
    assert abs(slope + 1.0) < 0.1
    # C measured at rho = 8 bounds the later values
    c = e[0] * rhos[0]
    assert all(v <= c / r * 1.001 for v, r in zip(e, rhos))


def test_zero_cost_half_turn():
    e16 = continuum_energy(zero_cost_profile(E3, -E3, 16.0, h=1e-3))
    e32 = continuum_energy(zero_cost_profile(E3, -E3, 32.0, h=1e-3))
    assert np.isfinite(e16) and e32 < e16
    assert e32 <= 16.0 * e16 / 32.0


def test_zero_cost_rejects_small_rho():
    with pytest.raises(ValueError):
        zero_cost_profile(E3, E2, 0.5)


def test_finite_difference_w_is_second_order():
    errs = []
    for h in (2e-2, 1e-2):
        p = zero_cost_profile(E3, E2, 4.0, h=h)
        fd = finite_difference_w(p.t, p.u)
        errs.append(np.max(np.abs(fd[1:-1] - p.w[1:-1])))
    ratio = errs[0] / errs[1]
    assert 3.5 < ratio < 4.5


# --- tanh and soft transitions --------------------------------------------------------------


def test_tanh_energy():
    p = tanh_profile(E3, -E3, t_span=12.0, h=1e-3)
    assert abs(continuum_energy(p) - HARD) < 1e-4


def test_tanh_w_vanishes_at_zero():
    p = tanh_profile(E3, E2, t_span=12.0, h=1e-3)
    i = int(np.argmin(np.abs(p.t)))
    assert p.t[i] == 0.0
    assert np.linalg.norm(p.w[i]) == 0.0


def test_tanh_w_matches_lift():
    p = tanh_profile(E3, E2, t_span=8.0, h=1e-3)
    fd = finite_difference_w(p.t, p.u)
    inner = np.abs(p.t) > 0.01
    assert np.max(np.abs(fd[inner] - p.w[inner])[1:-1]) < 1e-5


def test_tanh_crossing_point():
    p = tanh_profile(E3, E2, t_span=8.0, h=1e-3)
    i = int(np.argmin(np.abs(p.t)))
    np.testing.assert_allclose(np.abs(p.u[i]), E1, atol=1e-12)
    np.testing.assert_allclose(circle_intersection(E3, E2), E1, atol=1e-15)


def test_tanh_energy_increases_with_span():
    spans = [6.0, 8.0, 10.0, 12.0]
    e = [continuum_energy(tanh_profile(E3, -E3, s, h=1e-3)) for s in spans]
    assert all(b > a for a, b in zip(e, e[1:]))
    assert e[-1] < HARD + 1e-6


def test_tanh_rejects_equal_axes():
    with pytest.raises(ValueError):
        tanh_profile(E3, E3)


def test_quadrature_converges_second_order():
    e = [continuum_energy(tanh_profile(E3, -E3, 12.0, h)) for h in (4e-2, 2e-2, 1e-2)]
    d1, d2 = abs(e[1] - e[0]), abs(e[2] - e[1])
    assert d2 <= d1 / 3.5


def test_soft_profile_energy():
    e = continuum_energy(soft_profile(E3, E2, 0.1))
    assert HARD - 0.05 <= e <= HARD + 3.0 * 0.1


def test_soft_speed_shape():
    for eps in (0.05, 0.1, 0.3):
        speed, te = soft_speed(eps)
        assert speed.f(np.array([0.0]))[0] == 0.0
        # odd function, C^1 at both ends of the cubic bridge
        t = np.linspace(-5, 5, 101)
        np.testing.assert_allclose(speed.f(-t), -speed.f(t), atol=1e-15)
        for a in (te, te + eps):
            lo, hi = speed.df(np.array([a - 1e-9, a + 1e-9]))
            assert abs(lo - hi) < 1e-6
        grid = np.linspace(0, te + eps + 1, 100001)
        assert np.max(np.abs(speed.df(grid))) <= 2.0
        assert speed.f(np.array([te + eps + 0.5]))[0] == 1.0


def test_soft_speed_rejects_bad_epsilon():
    for eps in (0.0, 0.5, 0.7):
        with pytest.raises(ValueError):
            soft_speed(eps)


# --- bridge -----------------------------------------------------------------------------------


def _bridge_case(eta):
    w0 = E3 + eta * np.array([0.6, 0.0, 0.8])
    w1 = E3 + eta * np.array([0.0, -0.6, -0.8])
    return w0, w1, unit(np.cross(w0, E2)), unit(np.cross(w1, E1))


def test_bridge_identical_endpoints():
    p = bridge(E3, E3, E1, E1, 0.1)
    assert continuum_energy(p) <= 1e-10
    assert p.t[-1] <= 3 + 4 * math.pi


def test_bridge_endpoints_exact():
    w0, w1, u0, u1 = _bridge_case(0.05)
    p = bridge(w0, w1, u0, u1, 0.05)
    np.testing.assert_allclose(p.u[0], u0, atol=1e-15)
    np.testing.assert_allclose(p.u[-1], u1, atol=1e-15)
    np.testing.assert_allclose(p.w[0], w0, atol=1e-15)
    np.testing.assert_allclose(p.w[-1], w1, atol=1e-15)
    assert p.t[-1] <= 3 + 4 * math.pi
    assert continuum_energy(p) < 0.06


def test_bridge_energy_shrinks_with_eta():
    e = []
    for eta in (0.2, 0.1, 0.05, 0.025):
        w0, w1, u0, u1 = _bridge_case(eta)
        e.append(continuum_energy(bridge(w0, w1, u0, u1, eta)))
    assert all(b < a for a, b in zip(e, e[1:]))
    assert e[-1] < 0.02


def test_bridge_w_matches_lift():
    w0, w1, u0, u1 = _bridge_case(0.1)
    p = bridge(w0, w1, u0, u1, 0.1, h=1e-3)
    fd = finite_difference_w(p.t, p.u)
    assert np.max(np.abs(fd[1:-2] - p.w[1:-2])) < 1e-5


def test_bridge_errors():
    w0, w1, u0, u1 = _bridge_case(0.3)
    with pytest.raises(ValueError):
        bridge(w0, w1, u0, u1, 0.3)
    with pytest.raises(ValueError):
        bridge(E3, E3, E3, E1, 0.1)
    with pytest.raises(ValueError):
        bridge(E3, E1, E1, E3, 0.1)


# --- lattice sampling ------------------------------------------------------------------------


@given(st.floats(1e-4, 0.2), unit_vectors())
@settings(max_examples=30)
def test_pure_rotation_samples_have_ground_products(delta, axis):
    lam = 0.01
    p = pure_rotation_profile(axis, -1.0, 1.0, h=0.1)
    chain = sample_to_lattice(p, lam, delta, n_sites=60)
    np.testing.assert_allclose(bond_cosines(chain.spins), 1.0 - delta, atol=1e-12)


def test_pure_rotation_tail_has_zero_energy():
    delta, lam = 1e-3, 0.05 * math.sqrt(1e-3)
    chain = sample_to_lattice(pure_rotation_profile(E2, 0, 1, h=0.1), lam, delta)
    assert eval_Hsl_scaled(chain, ModelParams(lam, delta)) <= 1e-12


def test_sampled_tanh_energy():
    delta = 1e-3
    lam = 0.05 * math.sqrt(delta)
    chain = sample_to_lattice(tanh_profile(E3, -E3), lam, delta)
    assert abs(eval_Hsl_scaled(chain, ModelParams(lam, delta)) - HARD) <= 0.05 * HARD


def test_sampled_zero_cost_below_continuum_bound():
    delta = 1e-3
    lam = 0.02 * math.sqrt(delta)
    params = ModelParams(lam, delta)
    rho = 16.0
    prof = zero_cost_profile(E3, E2, rho, h=1e-3)
    center = 0.5 - 0.5 * rho * lam / math.acos(1 - delta)
    chain = sample_to_lattice(prof, lam, delta, center=center)
    c = 4.0 * continuum_energy(zero_cost_profile(E3, E2, 4.0, h=1e-3))
    assert eval_Hsl_scaled(chain, params) <= c / rho


def test_sample_errors():
    delta, lam = 1e-3, 0.05 * math.sqrt(1e-3)
    sampled_only = loads_profile(dumps_profile(tanh_profile(E3, -E3, 4.0, h=1e-2)))
    with pytest.raises(ValueError, match="span"):
        sample_to_lattice(sampled_only, lam, delta)
    with pytest.raises(ValueError):
        # speed 2 at delta = 1/2 puts consecutive samples 2 pi / 3 apart
        sample_to_lattice(pure_rotation_profile(E3, -5, 5, speed=2.0), 0.1, 0.5)


# --- oscillating chain -----------------------------------------------------------------------


def _osc(eta):
    delta = 1e-3
    params = ModelParams(0.5 * eta**3 * math.sqrt(delta), delta)
    return oscillating_chain(eta, params), params


def test_oscillating_chain_chirality():
    z_means = []
    for eta in (0.2, 0.1):
        chain, params = _osc(eta)
        z = bond_cross(chain.spins) / math.sqrt(2 * params.delta)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=0.05)
        z_means.append(abs(np.mean(z[:, 2])))
    assert z_means[1] < z_means[0]


def test_oscillating_chain_energy_bound():
    chain, params = _osc(0.2)
    flip = 16.0 * continuum_energy(zero_cost_profile(E3, -E3, 16.0, h=1e-3))
    assert eval_Hsl_scaled(chain, params) <= 0.2 * flip


def test_oscillating_chain_errors():
    with pytest.raises(ValueError):
        oscillating_chain(0.0, ModelParams(0.01, 0.01))
    with pytest.raises(ValueError):
        oscillating_chain(0.1, ModelParams(0.01, 0.01), width=1.5)


# --- serialization ---------------------------------------------------------------------------


def test_profile_round_trip(tmp_path):
    p = tanh_profile(E3, E2, t_span=4.0, h=1e-2)
    path = tmp_path / "p.txt"
    save_profile(path, p)
    q = load_profile(path)
    assert np.array_equal(q.t, p.t) and np.array_equal(q.u, p.u) and np.array_equal(q.w, p.w)
    assert len(path.read_text().splitlines()[-1].split()) == 7


def test_profile_parse_error_line():
    text = dumps_profile(tanh_profile(E3, E2, t_span=4.0, h=0.5))
    lines = text.splitlines()
    lines[3] = "1 2 3"
    with pytest.raises(ValueError, match=":4"):
        loads_profile("\n".join(lines))
