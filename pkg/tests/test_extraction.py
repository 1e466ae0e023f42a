import math

import numpy as np
import pytest

from statelift.conic import solve
from statelift.extraction import (
    ExtractionConfig,
    ExtractionError,
    MomentSampler,
    extract_sequential,
    first_moments,
    register_hook,
    sample_candidate,
)
from statelift.polycore import monomials_up_to
from statelift.problems import markov_problem, quantum_problem, rng_for
from statelift.relax_chord import chord_chain
from statelift.relax_push import push_chain


def moment_vector(point, basis):
    return np.array([math.prod(point[v] ** e for v, e in m) for m in basis])


@pytest.fixture(scope="module")
def markov_push():
    ch, oracle = markov_problem(4)
    rel = push_chain(ch, 3)
    res = solve(rel.program)
    assert res.ok
    return ch, oracle, rel, res


def test_dirac_matrix_returns_its_point():
    basis = monomials_up_to([3, 7], 2)
    z = {3: 0.3, 7: -0.8}
    v = moment_vector(z, basis)
    rng = rng_for(0)
    for _ in range(5):
        cand = sample_candidate(np.outer(v, v), basis, rng)
        assert cand[3] == pytest.approx(0.3, abs=1e-12)
        assert cand[7] == pytest.approx(-0.8, abs=1e-12)


def test_samples_have_the_moment_covariance():
    basis = monomials_up_to([0, 1], 1)
    rng = rng_for(1)
    G = rng.standard_normal((3, 3))
    M = G @ G.T + np.eye(3)
    s = MomentSampler(M, basis)
    omega = s.full_V @ rng.standard_normal((3, 10_000))
    emp = omega @ omega.T / omega.shape[1]
    assert np.linalg.norm(emp - M) <= 0.05 * np.linalg.norm(M)


def test_zero_cross_moments_center_on_zero():
    basis = monomials_up_to([0, 1], 1)
    s = MomentSampler(np.eye(3), basis)
    rng = rng_for(2)
    N = 5000
    omega = s.V @ rng.standard_normal((3, N))
    assert np.all(np.abs(omega[1:].mean(axis=1)) <= 3 / math.sqrt(N))
    cands = np.array([list(s.draw(rng).values()) for _ in range(N)])
    # ratios of Gaussians have no mean; their median is still zero
    assert np.all(np.abs(np.median(cands, axis=0)) <= 0.1)


def test_clipped_negative_eigenvalues():
    basis = monomials_up_to([0], 1)
    M = np.array([[1.0, 0.2], [0.2, -1e-9]])
    s = MomentSampler(M, basis)
    assert np.all(np.isfinite(s.V))


def test_threshold_exhaustion_raises():
    basis = monomials_up_to([0], 1)
    M = np.array([[0.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ExtractionError):
        MomentSampler(M, basis).draw(rng_for(0), 1e-6, max_tries=10)


def test_basis_must_start_with_constant():
    with pytest.raises(ValueError):
        MomentSampler(np.eye(2), [((0, 1),), ()])


def test_config_validation():
    with pytest.raises(ValueError):
        ExtractionConfig(tau=0)
    with pytest.raises(ValueError):
        ExtractionConfig(seeds=0)
    assert "tau=0.1" in ExtractionConfig().describe()


def test_markov_first_moments(markov_push):
    ch, oracle, rel, res = markov_push
    fm = first_moments(res, rel)
    assert all(abs(float(c[0])) <= 1e-2 for c in fm.controls)
    assert abs(fm.value - rel.bound(res)) <= 1e-3


def test_markov_sequential(markov_push):
    ch, oracle, rel, res = markov_push
    traj = extract_sequential(res, rel, ExtractionConfig(seeds=3))
    assert all(abs(float(c[0])) <= 1e-2 for c in traj.controls)
    assert traj.value <= rel.bound(res) + 1e-6
    assert traj.value == pytest.approx(oracle, abs=1e-3)


def test_extraction_is_deterministic(markov_push):
    _, _, rel, res = markov_push
    cfg = ExtractionConfig(seeds=2, seed=7, n_samples=50)
    a = extract_sequential(res, rel, cfg)
    b = extract_sequential(res, rel, cfg)
    assert a.seed == b.seed and a.value == b.value
    for x, y in zip(a.controls, b.controls):
        assert np.array_equal(x, y)


def test_states_follow_the_dynamics(markov_push):
    ch, _, rel, res = markov_push
    traj = extract_sequential(res, rel, ExtractionConfig(seeds=1))
    from statelift.chainmodel import eval_chain

    value, states = eval_chain(ch, [float(c[0]) for c in traj.controls])
    assert value == pytest.approx(traj.value, abs=1e-12)
    for a, b in zip(states, traj.states):
        assert np.allclose(a, b, atol=1e-12)


def test_trajectory_csv(markov_push, tmp_path):
    _, _, rel, res = markov_push
    traj = extract_sequential(res, rel, ExtractionConfig(seeds=1))
    path = tmp_path / "t.csv"
    text = traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert text.splitlines() == lines
    assert lines[0] == "stage,x1,s1,s2"
    assert len(lines) == 5


def test_needs_push_relaxation():
    ch, _ = markov_problem(2)
    rel = chord_chain(ch, 3)
    res = solve(rel.program)
    with pytest.raises(ValueError):
        extract_sequential(res, rel)


def test_quantum_hook_keeps_trajectories_feasible():
    ch = quantum_problem(3, theta_max=0.2, target=(1.0, 0.0, 0.0))
    rel = push_chain(ch, 2)
    res = solve(rel.program)
    traj = extract_sequential(res, rel, ExtractionConfig(seeds=2, n_samples=50))
    for c in traj.controls:
        assert c[0] ** 2 + c[1] ** 2 == pytest.approx(1.0, abs=1e-9)
        assert c[1] >= math.cos(0.2) - 1e-9
    for s in traj.states[:-1]:
        assert np.linalg.norm(s) == pytest.approx(1.0, abs=1e-9)
    assert traj.value <= rel.bound(res) + 1e-6


def test_custom_hook_is_used(markov_push):
    _, _, rel, res = markov_push
    calls = []

    def pin(chain, stage, x):
        calls.append(stage)
        return np.zeros_like(x)

    register_hook("pin-zero", pin)
    traj = extract_sequential(res, rel, ExtractionConfig(seeds=1, n_samples=5, hook="pin-zero"))
    assert set(calls) == {1, 2, 3, 4}
    assert traj.value == pytest.approx(0.5 + 0.5 * 0.9**4, abs=1e-12)


@pytest.fixture(scope="module")
def chebyshev_chord():
    from statelift.problems import markov_chebyshev_problem, projected_gradient

    ch = markov_chebyshev_problem(2, seed=0)
    rel = chord_chain(ch, 4)
    res = solve(rel.program)
    assert res.ok
    return rel, res, projected_gradient(ch, seed=0)[1]


def test_chebyshev_first_moments_below_bound(chebyshev_chord):
    rel, res, _ = chebyshev_chord
    fm = first_moments(res, rel)
    assert fm.value <= rel.bound(res) + 1e-6
    assert fm.value >= rel.bound(res) - 1e-3


@pytest.mark.xfail(strict=False, reason="first moments trail the local optimum by about 3e-5 here")
def test_chebyshev_first_moments_match_projected_gradient(chebyshev_chord):
    rel, res, pg = chebyshev_chord
    assert first_moments(res, rel).value >= pg
