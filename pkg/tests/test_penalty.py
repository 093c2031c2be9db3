import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chiralab.geometry import E1, E2, E3
from chiralab.penalty import DEADBAND, PenaltySpec, dist_to_Qk, example_axes

from conftest import unit_vectors


@pytest.fixture
def pen():
    return PenaltySpec(example_axes(0.2))


def test_zero_on_axes_and_at_origin(pen):
    pts = pen.signed_axes()
    assert np.all(pen.G(pts) == 0.0)
    assert pen.G(np.zeros((1, 3)))[0] == 0.0
    assert pen.G(np.array([[0.5 * DEADBAND, 0.0, 0.0]]))[0] == 0.0


@given(unit_vectors(), st.floats(1e-3, 1e3))
def test_zero_homogeneous_and_nonnegative(z, c):
    pen = PenaltySpec(example_axes(0.2))
    g = pen.G(z[None, :])[0]
    assert g >= 0.0
    assert abs(pen.G((c * z)[None, :])[0] - g) <= 1e-12


def test_chordal_distance_value():
    pen = dist_to_Qk([E3])
    a = np.array([math.sin(0.5), 0.0, math.cos(0.5)])
    assert math.isclose(pen.G(a[None, :])[0], 2 * math.sin(0.25), rel_tol=1e-14)
    assert math.isclose(pen.G(-a[None, :])[0], 2 * math.sin(0.25), rel_tol=1e-14)


def test_duplicate_axes_rejected():
    with pytest.raises(ValueError):
        PenaltySpec(np.array([E1, -E1]))
    with pytest.raises(ValueError):
        PenaltySpec(np.zeros((0, 3)))


def test_gradient_matches_finite_differences(pen, rng):
    w = rng.normal(size=(50, 3))
    g = pen.G_grad(w)
    eps = 1e-6
    for k in range(3):
        d = np.zeros(3)
        d[k] = eps
        fd = (pen.G(w + d) - pen.G(w - d)) / (2 * eps)
        assert np.allclose(g[:, k], fd, atol=1e-7, rtol=1e-6)


def test_gradient_vanishes_on_zero_set(pen):
    assert np.all(pen.G_grad(3.0 * pen.signed_axes()) == 0.0)


def test_scaled_weight(pen, rng):
    w = rng.normal(size=(10, 3))
    assert np.allclose(pen.scaled(2.0).G(w), 2.0 * pen.G(w), rtol=1e-15)


def test_circle_membership_and_labels():
    pen = PenaltySpec(np.array([E3, E1]))
    u = np.array([E1, E2, E3, (E1 + E3) / math.sqrt(2)])
    d = pen.membership_distance(u)
    assert d[0] == 0 and d[1] == 0 and d[2] == 0
    assert d[3] > 0.1
    with pytest.raises(ValueError, match="spin 3"):
        pen.check_membership(u)
    assert pen.labels(E1[None, :])[0] == 0
    assert pen.labels(E3[None, :])[0] == 1


def test_intersections():
    pen = PenaltySpec(np.array([E3, E1]))
    pts = pen.intersections()
    assert len(pts) == 2
    assert np.allclose(np.abs(pts @ E2), 1.0)


def test_circle_point_round_trip(rng):
    pen = PenaltySpec(example_axes(0.7))
    labels = rng.integers(0, 2, size=20)
    t = rng.uniform(-math.pi, math.pi, size=20)
    u = pen.circle_point(labels, t)
    assert np.max(pen.membership_distance(u)) <= 1e-12
    for l, s, ti in zip(labels, u, t):
        assert math.isclose(pen.circle_angle(l, s)[0], ti, abs_tol=1e-12)
