import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statelift.conic import (
    ProgramBuilder,
    SolveOptions,
    export_sdpa,
    moment_matrix,
    read_sdpa,
    solve,
    prefers_cvxopt,
    solve_clarabel,
    solve_cvxopt,
)
from statelift.polycore import VariableSpace
from statelift.relax_dense import assemble_dense

SP = VariableSpace.for_chain([1])
X = SP.x(1)
XID = SP.id_of(1, "x", 1)


def box_program(objective, k=1):
    return assemble_dense(objective, [1 - X * X], [], k, [XID])


def test_minimize_x_on_box():
    res = solve(box_program(X))
    assert res.ok
    assert res.objective == pytest.approx(-1.0, abs=1e-6)


def test_minimize_square_on_box():
    res = solve(box_program(X * X))
    assert res.objective == pytest.approx(0.0, abs=1e-6)


def test_moment_matrix_structure():
    p = box_program(X, k=2)
    res = solve(p)
    M, labels = moment_matrix(res, 0)
    assert labels[0] == ()
    assert M[0, 0] == pytest.approx(1.0, abs=1e-7)
    assert np.linalg.eigvalsh(M)[0] >= -1e-7
    with pytest.raises(IndexError):
        moment_matrix(res, 99)


def test_dirac_gives_rank_one():
    p = assemble_dense(X + X * X, [X, -X, 1 - X * X], [], 2, [XID])
    res = solve(p)
    M, _ = moment_matrix(res, 0)
    w = np.linalg.eigvalsh(M)
    assert w[-2] <= 1e-5
    assert res.objective == pytest.approx(0.0, abs=1e-6)


def test_motzkin_low_order_is_strictly_weaker():
    sp = VariableSpace.for_chain([1, 1])
    x1, x2 = sp.x(1), sp.x(2)
    ids = [sp.id_of(1, "x", 1), sp.id_of(2, "x", 1)]
    f = x1**4 * x2**2 + x1**2 * x2**4 - x1**2 * x2**2 * 3 + 1  # nonnegative, not SOS
    ball = [10 - x1 * x1 - x2 * x2]
    lo = solve(assemble_dense(f, ball, [], 3, ids)).objective
    hi = solve(assemble_dense(f, ball, [], 4, ids)).objective
    assert lo < hi - 1e-2
    assert hi == pytest.approx(0.0, abs=1e-6)


def test_symmetric_entries_share_ids():
    p = box_program(X, k=2)
    for blk in p.blocks:
        for i in range(blk.dim):
            for j in range(blk.dim):
                assert blk.entry(i, j) == blk.entry(j, i)
    assert np.all(p.blocks[0].rows <= p.blocks[0].cols)


def test_infeasible_reports_status():
    p = assemble_dense(X, [X - 2.0, 1 - X * X], [], 1, [XID])
    res = solve(p)
    assert res.status == "infeasible"
    assert not res.ok and math.isnan(res.objective)


def test_empty_program_exports_header_only():
    p = ProgramBuilder().build()
    text = export_sdpa(p)
    body = [line for line in text.splitlines() if not line.startswith("*")]
    assert body == ["0", "0", "", ""]
    back = read_sdpa(text)
    assert back.n_vars == 0 and back.blocks == []


def test_sdpa_header_and_indices():
    p = box_program(X, k=1)
    text = export_sdpa(p)
    body = [line for line in text.splitlines() if not line.startswith("*")]
    assert int(body[0]) == p.n_vars
    dims = [int(t) for t in body[2].split()]
    assert dims[: len(p.blocks)] == p.block_dims
    assert dims[-1] == -2 * p.n_eq
    for line in body[4:]:
        matno, blk, i, j, _ = line.split()
        assert 1 <= int(i) <= int(j)
        assert int(matno) >= 0 and int(blk) >= 1


def test_sdpa_round_trip_square():
    p = box_program(X * X)
    buf = io.StringIO()
    export_sdpa(p, buf)
    back = read_sdpa(buf.getvalue())
    assert solve(back).objective == pytest.approx(0.0, abs=1e-6)
    assert back.n_eq == p.n_eq and back.block_dims == p.block_dims


def test_sdpa_round_trip_file(tmp_path):
    from statelift.problems import gen_random_quadratic_composition
    from statelift.relax_dense import dense_chain

    rel = dense_chain(gen_random_quadratic_composition(2, seed=3))
    path = tmp_path / "p.dat-s"
    export_sdpa(rel.program, path)
    back = read_sdpa(path)
    a, b = solve(rel.program), solve(back)
    assert b.objective == pytest.approx(a.objective, abs=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_round_trip_random_programs(seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(5)
    f = sum((X**a).scale(float(c)) for a, c in enumerate(coeffs)) + 0.0
    p = assemble_dense(f, [1 - X * X], [], 3, [XID])
    back = read_sdpa(export_sdpa(p))
    assert np.allclose(back.A.toarray(), p.A.toarray())
    assert np.allclose(back.c, p.c) and back.c0 == p.c0
    a, b = solve(p), solve(back)
    assert b.objective == pytest.approx(a.objective, abs=1e-6)


def test_dependent_rows_are_dropped_per_scope():
    b = ProgramBuilder()
    y = [b.new_var() for _ in range(3)]
    b.add_eq({y[0]: 1.0, y[1]: 1.0}, 0.0, "g", scope="a")
    b.add_eq({y[0]: 2.0, y[1]: 2.0}, 0.0, "g", scope="a")  # multiple of the first
    b.add_eq({y[2]: 1.0}, 1.0, "g", scope="a")
    b.add_eq({y[2]: 2.0}, 2.0, "h")  # unscoped, kept even though dependent
    p = b.build()
    keep = list(p.independent_rows())
    assert len(keep) == 3 and keep[1:] == [2, 3]


def test_exact_duplicates_are_hashed_away():
    b = ProgramBuilder()
    v = b.new_var()
    assert b.add_eq({v: 1.0}, 1.0)
    assert not b.add_eq({v: 1.0}, 1.0)
    with pytest.raises(ValueError):
        b.add_eq({}, 1.0)


def test_memory_guard_reports_stall(monkeypatch):
    import statelift.conic as conic

    monkeypatch.setattr(conic, "_available_memory", lambda: 1)
    res = solve_clarabel(box_program(X), SolveOptions())
    assert res.status == "stall" and "GiB" in res.message


def test_missing_external_solver_is_a_status():
    res = solve(box_program(X), SolveOptions(solver="sdpa:/nonexistent/sdpa"))
    assert res.status == "stall" and "not found" in res.message


def test_time_limit_reports_timeout():
    from statelift.problems import gen_random_quadratic_composition
    from statelift.relax_chord import chord_chain

    p = chord_chain(gen_random_quadratic_composition(3, seed=0), 3).program
    res = solve(p, SolveOptions(time_limit=1e-3, solver="clarabel"))
    assert res.status == "timeout"


def test_residuals_of_solution():
    p = box_program(X, k=2)
    res = solve(p)
    eq, eig = p.residuals(res.y)
    assert eq <= 1e-7 and eig >= -1e-7


def test_environment_selects_backend(monkeypatch):
    monkeypatch.setenv("STATELIFT_SOLVER", "clarabel")
    monkeypatch.setenv("STATELIFT_TOL", "1e-7")
    opts = SolveOptions.from_env()
    assert opts.solver == "clarabel" and opts.tol == 1e-7


def test_backends_agree():
    from statelift.problems import gen_random_quadratic_composition
    from statelift.relax_dense import dense_chain

    programs = [box_program(X), box_program(X * X - X, k=2),
                dense_chain(gen_random_quadratic_composition(3, seed=4)).program]
    for p in programs:
        a = solve(p, SolveOptions(solver="clarabel"))
        b = solve_cvxopt(p, SolveOptions())
        assert a.ok and b.ok and b.solver == "cvxopt"
        assert b.objective == pytest.approx(a.objective, abs=1e-6)
        eq, eig = p.residuals(b.y)
        assert eq <= 1e-7 and eig >= -1e-7


def test_cvxopt_reports_infeasible():
    p = assemble_dense(X, [X - 2, 1 - X * X], [], 1, [XID])
    assert solve_cvxopt(p, SolveOptions()).status == "infeasible"


def test_auto_picks_cvxopt_only_for_wide_dense_programs():
    from statelift.problems import gen_random_quadratic_composition
    from statelift.relax_chord import chord_chain
    from statelift.relax_dense import dense_chain

    ch = gen_random_quadratic_composition(4, seed=0)
    assert prefers_cvxopt(dense_chain(ch).program)
    assert not prefers_cvxopt(chord_chain(ch, 3).program)
    assert not prefers_cvxopt(box_program(X, k=2))
    assert solve(box_program(X)).solver == "clarabel"
