import math

import numpy as np
import pytest

from oracles import brackets, dirac_vector, random_points
from statelift.chainmodel import StageMap
from statelift.conic import SolveOptions, solve
from statelift.moments import OrderTooSmall
from statelift.problems import gen_random_quadratic_composition, perturbed_identity_chain, quantum_problem
from statelift.relax_push import predicted_push_counts, push_chain, pushforward_alphas


def test_alphas_uniform_quadratic():
    alphas = pushforward_alphas((2, 2), 3)
    assert len(alphas) == math.comb(5, 2) - 1 == 9
    assert (0, 0) not in alphas


def test_alphas_linear_scalar():
    assert pushforward_alphas((1,), 1) == [(1,), (2,)]


def test_alphas_mixed_degrees():
    got = set(pushforward_alphas((1, 3), 2))
    assert got == {(1, 0), (2, 0), (3, 0), (4, 0), (0, 1), (1, 1)}


def test_alphas_accept_stage_maps(space3):
    F = StageMap(2, (space3.x(2) * space3.s(1, 1),))
    assert pushforward_alphas(F, 2) == [(1,), (2,)]


def test_predicted_counts():
    assert predicted_push_counts(2, 4, 2, 2)[0] == 35
    assert predicted_push_counts(2, 3, 2, 2) == (20, 10)
    assert predicted_push_counts(2, 10, 4, 2)[0] == 286


def test_block_and_slope_match_formulas():
    counts = []
    for n in (2, 3, 4):
        rel = push_chain(gen_random_quadratic_composition(n, seed=0), 3)
        assert rel.largest_block == rel.predicted["block"] == 20
        counts.append(rel.program.group_count("push"))
    per_interface = predicted_push_counts(2, 3, 2, 2)[1]
    # the alpha = 0 row is dropped, so each interface contributes one row less
    assert np.diff(counts).tolist() == [per_interface - 1] * 2
    assert rel.program.group_count("normalization") == 4


def test_order_too_small():
    with pytest.raises(OrderTooSmall):
        push_chain(gen_random_quadratic_composition(3, seed=0), 0)


def test_dirac_moments_are_feasible():
    ch = gen_random_quadratic_composition(3, seed=6)
    rel = push_chain(ch, 3)
    for pt in random_points(ch, 20, seed=3):
        eq, eig = rel.program.residuals(dirac_vector(rel, pt))
        assert eq <= 1e-9 and eig >= -1e-9


def test_dirac_feasible_with_stage_equalities():
    ch = quantum_problem(4, theta_max=0.3)
    rel = push_chain(ch, 2)
    for pt in random_points(ch, 10, seed=4):
        eq, eig = rel.program.residuals(dirac_vector(rel, pt))
        assert eq <= 1e-9 and eig >= -1e-9


def test_interfaces_telescope():
    ch = gen_random_quadratic_composition(4, seed=2)
    rel = push_chain(ch, 3)
    opts = SolveOptions(tol=1e-8)
    res = solve(rel.program, opts)
    rows = [i for i, g in enumerate(rel.program.eq_groups) if g == "push"]
    resid = np.abs(rel.program.A[rows] @ res.y - rel.program.b[rows])
    assert resid.max() <= 10 * opts.tol


def test_bound_is_sound():
    ch = gen_random_quadratic_composition(4, seed=8)
    rel = push_chain(ch, 3)
    res = solve(rel.program)
    ok, _ = brackets(ch, rel.bound(res))
    assert ok


def test_perturbed_identity_is_fast_and_tight():
    ch = perturbed_identity_chain(20, seed=0)
    rel = push_chain(ch, 3)
    res = solve(rel.program)
    assert 2 - 1e-6 <= rel.bound(res) <= 2 + 1e-3
    assert res.wall_time < 30
