import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from chiralab.continuum import (FREE_S2, HARD_MK, HGTable, ProfileProblem, SolveOptions, continuum_energy,
                                h_G_table, solve_profile)
from chiralab.geometry import E1, E2, E3
from chiralab.penalty import PenaltySpec, example_axes
from chiralab.profiles import finite_difference_w, pure_rotation_profile, tanh_profile, zero_cost_profile

HARD = 8.0 / 3.0
QUICK = SolveOptions(max_iters=1500, seeds=(1,))


# --- quadrature ----------------------------------------------------------------------------------


def test_pure_rotation_costs_nothing():
    pen = PenaltySpec([E2])
    p = pure_rotation_profile(E2, -5.0, 5.0, h=1e-2)
    assert continuum_energy(p) <= 1e-10
    assert continuum_energy(p, pen) <= 1e-10


def test_tanh_energy_value():
    assert abs(continuum_energy(tanh_profile(E1, -E1, 12.0, 1e-3)) - HARD) < 1e-4


def test_zero_cost_energy_bound():
    c = 8.0 * continuum_energy(zero_cost_profile(E3, E2, 8.0, h=1e-3))
    assert continuum_energy(zero_cost_profile(E3, E2, 16.0, h=1e-3)) <= c / 16.0


def test_penalty_term_weight():
    # tanh path from e3 to e2 with G = distance to {±e1}: |w| q sits at chordal distance sqrt(2)
    pen = PenaltySpec([E1])
    p = tanh_profile(E3, E2, 12.0, 1e-3)
    extra = continuum_energy(p, pen) - continuum_energy(p)
    t, r = p.t, np.linalg.norm(p.w, axis=1)
    expected = 0.5 * math.sqrt(2.0) * trapezoid(np.where(r > 1e-8, 1.0, 0.0), t)
    assert abs(extra - expected) < 1e-9
    assert abs(continuum_energy(p, pen, penalty_weight=1.0) - continuum_energy(p) - 2 * expected) < 1e-9


def test_stored_w_is_used():
    p = tanh_profile(E3, E2, 6.0, 1e-2)
    e_exact = continuum_energy(p)
    p.w = finite_difference_w(p.t, p.u)
    # the finite-difference w smears the kink at 0, so energies differ slightly
    assert abs(continuum_energy(p) - e_exact) < 1e-2


# --- profile solver -------------------------------------------------------------------------------


def test_problem_validation():
    with pytest.raises(ValueError):
        ProfileProblem(np.array([1.0, 1.0, 0.0]), E2)
    with pytest.raises(ValueError):
        ProfileProblem(E1, E2, t_span=2.0)
    with pytest.raises(ValueError):
        ProfileProblem(E1, E2, h=0.0)
    with pytest.raises(ValueError):
        ProfileProblem(E1, E2, constraint="Bogus")
    with pytest.raises(ValueError):
        ProfileProblem(E1, E1, constraint=HARD_MK)


def test_hard_solve_is_eight_thirds():
    prof, info = solve_profile(ProfileProblem(E3, E2, None, HARD_MK, 8.0, 0.02), QUICK)
    assert abs(info.energy - HARD) < 1e-3
    assert info.energy <= info.certificate + 1e-9
    np.testing.assert_allclose(np.linalg.norm(prof.u, axis=1), 1.0, atol=1e-12)


def test_free_solve_decays_with_span():
    spans = [6.0, 8.0, 10.0]
    vals = []
    for span in spans:
        _, info = solve_profile(ProfileProblem(E3, E2, None, FREE_S2, span, 0.02), QUICK)
        assert info.energy <= info.certificate + 1e-9
        vals.append(info.energy)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    slope = np.polyfit(np.log(spans), np.log(vals), 1)[0]
    assert -1.4 < slope < -0.7


def test_constraint_nesting():
    prob = dict(q_minus=E3, q_plus=-E3, t_span=8.0, h=0.02)
    _, free = solve_profile(ProfileProblem(constraint=FREE_S2, **prob), QUICK)
    _, hard = solve_profile(ProfileProblem(constraint=HARD_MK, **prob), QUICK)
    assert free.energy <= hard.energy <= HARD + 1e-3


def test_solver_is_deterministic():
    prob = ProfileProblem(E3, E2, None, FREE_S2, 6.0, 0.04)
    a, ia = solve_profile(prob, QUICK)
    b, ib = solve_profile(prob, QUICK)
    assert ia.energy == ib.energy and np.array_equal(a.u, b.u)


def test_penalty_scaling_is_monotone():
    pen = PenaltySpec(example_axes(0.2))
    q2 = example_axes(0.2)[1]
    vals = []
    for factor in (1.0, 2.0):
        prob = ProfileProblem(E1, q2, pen.scaled(factor), FREE_S2, 6.0, 0.04)
        vals.append(solve_profile(prob, QUICK)[1].energy)
    assert vals[1] >= vals[0] > 0


# --- h_G tables -----------------------------------------------------------------------------------


def test_single_axis_table():
    pen = PenaltySpec([E3])
    table = h_G_table(pen, t_span=6.0, h=0.04, opts=QUICK)
    assert table.values.shape == (2, 2)
    assert np.all(np.diag(table.values) == 0.0)
    assert 0.0 < table.values[0, 1] <= HARD + 1e-3
    assert 0.0 < table.values[1, 0] <= HARD + 1e-3
    assert table.asymmetric_pairs() == []


def test_table_flags_and_csv():
    pts = PenaltySpec([E3, E1]).signed_axes()
    vals = np.array([[0, 1.0, 2.0, 2.0], [1.0, 0, 2.0, 2.0], [2.0, 2.0, 0, 1.5], [2.0, 2.0, 1.0, 0]])
    table = HGTable(pts, vals, np.ones((4, 4), dtype=bool), asymmetry_tol=0.02)
    flagged = table.asymmetric_pairs()
    assert [(i, j) for i, j, _ in flagged] == [(2, 3)]
    lines = table.to_csv().splitlines()
    assert lines[0] == "row,row_q,col,col_q,value,converged"
    assert len(lines) == 1 + 16
    assert lines[2].split(",")[4] == "1"
