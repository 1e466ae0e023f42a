"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Expensive solves live in module-scoped fixtures so that the soundness
criterion can re-check every instance solved by the others.
"""
import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

from oracles import brackets
from statelift.chainmodel import lift
from statelift.conic import export_sdpa, read_sdpa, solve
from statelift.extraction import ExtractionConfig, ExtractionError, extract_sequential, first_moments
from statelift.problems import (
    affine_envelope,
    gen_random_quadratic_composition,
    markov_problem,
    nn_forward,
    nn_params,
    nn_problem,
    perturbed_identity_chain,
    quantum_overlap,
    quantum_problem,
    rng_for,
)
from statelift.relax_chord import chord_chain, predicted_chord_counts
from statelift.relax_dense import dense_chain
from statelift.relax_push import predicted_push_counts, push_chain
from statelift.sparsity import build_graph, chordal_cliques

from test_sparsity import dense_tt

pytestmark = pytest.mark.acceptance

# bound-side comparisons against exact values allow for the interior-point
# accuracy, the same slack the soundness criterion grants
SOLVER_SLACK = 1e-6

# the fixed-length quantum instance steers (0, 0, 1) to (1, 0, 0)
FLIP = (1.0, 0.0, 0.0)


@dataclass
class Solved:
    label: str
    chain: object
    bound: float
    status: str
    seconds: float


def timed_solve(label, chain, build, opts=None):
    t0 = time.perf_counter()
    rel = build(chain)
    res = solve(rel.program, opts)
    secs = time.perf_counter() - t0
    bound = rel.bound(res) if res.ok else math.nan
    return Solved(label, chain, bound, res.status, secs), rel, res


class Checks:
    def __init__(self):
        self.items = []

    def __call__(self, name, ok, info=""):
        self.items.append((name, bool(ok), info))
        return bool(ok)

    @property
    def ok(self):
        return all(ok for _, ok, _ in self.items)

    def failures(self):
        return "; ".join(f"{name} ({info})" for name, ok, info in self.items if not ok)


def finish(record, number, checks, summary):
    detail = summary if checks.ok else f"{summary} | failed: {checks.failures()}"
    record(number, checks.ok, detail)
    assert checks.ok, detail


# ------------------------------------------------------------------ fixtures

@pytest.fixture(scope="module")
def table1_runs():
    runs = []
    for seed in range(5):
        for n in (2, 3, 4):
            ch = gen_random_quadratic_composition(n, seed=seed)
            row = {}
            for name, build in (("dense", dense_chain),
                                ("chord", lambda c: chord_chain(c, 3)),
                                ("push", lambda c: push_chain(c, 4))):
                row[name] = timed_solve(f"quadratic n={n} seed={seed} {name}", ch, build)[0]
            runs.append((seed, n, row))
    return runs


@pytest.fixture(scope="module")
def markov_runs():
    out = []
    for n in range(1, 11):
        ch, oracle = markov_problem(n)
        solved, rel, res = timed_solve(f"markov n={n} chord", ch, lambda c: chord_chain(c, 3))
        fm = first_moments(res, rel) if res.ok else None
        out.append((n, oracle, solved, fm))
    return out


@pytest.fixture(scope="module")
def perturbed_runs():
    out = {}
    for n, hierarchies in ((10, ("chord", "push")), (50, ("chord", "push")), (100, ("push",))):
        ch = perturbed_identity_chain(n, seed=0)
        for h in hierarchies:
            build = (lambda c: chord_chain(c, 3)) if h == "chord" else (lambda c: push_chain(c, 3))
            solved, rel, res = timed_solve(f"perturbed n={n} {h}", ch, build)
            out[(n, h)] = (solved, rel.largest_block, res.message)
    return out


@pytest.fixture(scope="module")
def quantum_runs():
    out = {}
    for key, chain in (("N5", quantum_problem(5, theta_max=None, target=FLIP)),
                       ("N20", quantum_problem(20, theta_max=0.1)),
                       ("N43", quantum_problem(43, theta_max=0.1))):
        out[key] = timed_solve(f"quantum {key}", chain, lambda c: push_chain(c, 2))
    return out


@pytest.fixture(scope="module")
def nn_runs():
    cubic, affine = {}, {}
    for j in range(1, 21):
        for sense in ("min", "max"):
            ch = nn_problem(20, 3, seed=0, stage_index=j, sense=sense)
            cubic[(j, sense)] = timed_solve(f"nn j={j} {sense}", ch, lambda c: chord_chain(c, 2))[0]
            ch0 = nn_problem(20, 3, alpha=0.0, seed=0, stage_index=j, sense=sense)
            affine[(j, sense)] = timed_solve(f"nn affine j={j} {sense}", ch0, lambda c: chord_chain(c, 1))[0]
    return cubic, affine


# ---------------------------------------------------------------- criteria

def test_criterion_01_cross_hierarchy_agreement(table1_runs, record_criterion):
    checks = Checks()
    worst, total = 0.0, 0.0
    for seed, n, row in table1_runs:
        for s in row.values():
            total += s.seconds
            checks(s.label, s.status in ("optimal", "near-optimal"), s.status)
        bounds = [s.bound for s in row.values()]
        spread = float(np.ptp(bounds))
        worst = max(worst, spread) if not math.isnan(spread) else math.inf
        checks(f"n={n} seed={seed} agreement", spread <= 1e-4, f"spread {spread:.2e}")
    checks("total runtime", total < 300.0, f"{total:.0f} s")
    finish(record_criterion, 1, checks, f"max pairwise spread {worst:.2e}, total {total:.0f} s over 45 solves")


def test_criterion_02_markov_closed_form(markov_runs, record_criterion):
    checks = Checks()
    lo, hi, worst_x, worst_val = math.inf, -math.inf, 0.0, 0.0
    for n, oracle, s, fm in markov_runs:
        gap = s.bound - oracle
        lo, hi = min(lo, gap), max(hi, gap)
        checks(f"n={n} gap", -SOLVER_SLACK <= gap <= 1e-3, f"{gap:.2e}")
        if fm is None:
            checks(f"n={n} solved", False, s.status)
            continue
        xmax = max(float(np.abs(c).max()) for c in fm.controls)
        worst_x = max(worst_x, xmax)
        worst_val = max(worst_val, abs(fm.value - s.bound))
        checks(f"n={n} controls", xmax <= 1e-2, f"{xmax:.2e}")
        checks(f"n={n} value", abs(fm.value - s.bound) <= 1e-3, f"{fm.value - s.bound:.2e}")
    finish(record_criterion, 2, checks,
           f"bound-oracle in [{lo:.1e}, {hi:.1e}], max |x| {worst_x:.1e}, max |value-bound| {worst_val:.1e}")


def test_criterion_03_perturbed_identity(perturbed_runs, record_criterion):
    checks = Checks()
    parts = []
    for (n, h), (s, block, message) in sorted(perturbed_runs.items()):
        if n <= 50:
            ok = 2 - 1e-6 <= s.bound <= 2 + 1e-3
            checks(f"n={n} {h} bound", ok, f"{s.bound:.8f} status {s.status} {message}".strip())
        if h == "push":
            checks(f"n={n} push time", s.seconds < 30.0, f"{s.seconds:.1f} s")
        expected = 20 if h == "push" else 56
        checks(f"n={n} {h} block", block == expected, f"{block}")
        parts.append(f"{h} n={n}: {s.bound:.7f} ({s.seconds:.1f} s, block {block})")
    finish(record_criterion, 3, checks, "; ".join(parts))


def test_criterion_04_treewidth(record_criterion):
    rng = rng_for(2024)
    checks = Checks()
    for t in range(50):
        n = int(rng.integers(1, 11))
        ranks = tuple(int(v) for v in rng.integers(1, 5, n - 1)) + (1,)
        pop = lift(dense_tt(ranks, seed=t))
        dec = chordal_cliques(build_graph(pop), pop)
        full = (0,) + ranks
        expected = max(a + b for a, b in zip(full, full[1:])) + 1
        checks(f"profile {ranks}", dec.max_clique_size == expected, f"{dec.max_clique_size} vs {expected}")
    finish(record_criterion, 4, checks, "50 rank profiles, max clique = max(r_i + r_(i+1)) + 1")


def test_criterion_05_complexity_formulas(record_criterion):
    checks = Checks()
    for r in (1, 2, 3):
        for k in (2, 3):
            counts = {}
            for n in (3, 4, 5):
                ch = gen_random_quadratic_composition(n, seed=n, r=r)
                chord, push = chord_chain(ch, k), push_chain(ch, k)
                checks(f"chord r={r} k={k} n={n} block", chord.largest_block == math.comb(2 * r + 1 + k, k),
                       f"{chord.largest_block}")
                checks(f"push r={r} k={k} n={n} block", push.largest_block == math.comb(r + 1 + k, k),
                       f"{push.largest_block}")
                counts[n] = (chord.program.group_count("separator"), chord.program.group_count("lifting"),
                             push.program.group_count("push"))
            sep_slope = predicted_chord_counts(r, k, 2, 2)[1] - predicted_chord_counts(r, k, 2, 1)[1]
            lift_slope = predicted_chord_counts(r, k, 2, 2)[2] - predicted_chord_counts(r, k, 2, 1)[2]
            # alpha = 0 only repeats the per-stage normalization and is not assembled
            push_slope = predicted_push_counts(r, k, 2, 2)[1] - predicted_push_counts(r, k, 2, 1)[1] - 1
            for n in (3, 4):
                for idx, name, slope in ((0, "separator", sep_slope), (1, "lifting", lift_slope),
                                         (2, "push", push_slope)):
                    got = counts[n + 1][idx] - counts[n][idx]
                    checks(f"{name} slope r={r} k={k} n={n}->{n + 1}", got == slope, f"{got} vs {slope}")
    finish(record_criterion, 5, checks, "blocks and separator/lifting/push slopes for r in 1..3, k in 2..3")


def test_criterion_06_quantum_control(quantum_runs, record_criterion):
    checks = Checks()
    s5, rel5, res5 = quantum_runs["N5"]
    checks("N=5 bound", s5.bound >= 0.9999, f"{s5.bound:.8f}")
    cfg = dict(tau=0.5, n_samples=200, target=FLIP)
    best, sandwich_ok = -math.inf, True
    chain = rel5.chain
    for seed in range(20):
        try:
            traj = extract_sequential(res5, rel5, ExtractionConfig(seed=seed, seeds=1, **cfg))
        except ExtractionError:
            continue
        ctrl = np.array(traj.controls)
        feasible = bool(np.all(np.abs((ctrl ** 2).sum(axis=1) - 1) <= 1e-12)
                        and np.all(ctrl[:, 1] >= chain.metadata["c_min"] - 1e-12))
        overlap = quantum_overlap(traj.angles, target=FLIP)
        checks(f"seed {seed} feasible", feasible and abs(overlap - traj.value) <= 1e-9, f"{overlap} vs {traj.value}")
        sandwich_ok &= overlap <= s5.bound + 1e-6
        best = max(best, overlap)
    checks("extraction overlap", best >= 0.999, f"{best:.6f}")
    checks("sandwich", sandwich_ok, "overlap above bound")
    s20, s43 = quantum_runs["N20"][0], quantum_runs["N43"][0]
    checks("N=20 bound", s20.bound < 0.999, f"{s20.bound:.6f}")
    checks("N=43 bound", s43.bound >= 0.999 - 1e-3, f"{s43.bound:.7f}")
    for key, (s, _, _) in quantum_runs.items():
        checks(f"{key} time", s.seconds < 120.0, f"{s.seconds:.1f} s")
    finish(record_criterion, 6, checks,
           f"N=5 bound {s5.bound:.8f}, best overlap {best:.6f}, N=20 {s20.bound:.6f}, N=43 {s43.bound:.7f}")


def test_criterion_07_nn_envelope(nn_runs, record_criterion):
    cubic, affine = nn_runs
    checks = Checks()
    params = nn_params(20, 3, seed=0)
    xs = rng_for(7).uniform(-1.0, 1.0, (20, 50))
    states = nn_forward(params, xs)
    violations = 0
    for j in range(1, 21):
        lo, hi = cubic[(j, "min")], cubic[(j, "max")]
        checks(f"j={j} solved", lo.status in ("optimal", "near-optimal") and hi.status in ("optimal", "near-optimal"),
               f"{lo.status}/{hi.status}")
        vals = states[j - 1, 0]
        violations += int(np.sum((vals < lo.bound) | (vals > hi.bound)))
    checks("trajectories inside envelope", violations == 0, f"{violations} violations")
    params0 = nn_params(20, 3, alpha=0.0, seed=0)
    worst = 0.0
    for j in range(1, 21):
        exact = affine_envelope(params0, j)
        err = max(abs(affine[(j, "min")].bound - exact[0]), abs(affine[(j, "max")].bound - exact[1]))
        worst = max(worst, err) if not math.isnan(err) else math.inf
    checks("affine envelope", worst <= 1e-6, f"{worst:.2e}")
    width = cubic[(20, "max")].bound - cubic[(20, "min")].bound
    finish(record_criterion, 7, checks,
           f"{violations} violations over 50 trajectories x 20 stages, stage-20 width {width:.4f}, affine err {worst:.1e}")


def test_criterion_08_soundness(table1_runs, markov_runs, perturbed_runs, quantum_runs, nn_runs, record_criterion):
    solved = [s for _, _, row in table1_runs for s in row.values()]
    solved += [s for _, _, s, _ in markov_runs]
    solved += [s for s, _, _ in perturbed_runs.values()]
    solved += [s for s, _, _ in quantum_runs.values()]
    solved += list(nn_runs[0].values()) + list(nn_runs[1].values())
    checks = Checks()
    count = 0
    for s in solved:
        if math.isnan(s.bound):
            continue
        count += 1
        ok, extreme = brackets(s.chain, s.bound, m=1000, seed=count, tol=1e-6)
        checks(s.label, ok, f"bound {s.bound:.8g}, sample {extreme:.8g}")
    finish(record_criterion, 8, checks, f"{count} solved instances, 1000 feasible samples each")


def test_criterion_09_monotonicity(record_criterion):
    checks = Checks()
    worst = math.inf
    for seed in range(5):
        ch = gen_random_quadratic_composition(3, seed=seed)
        for name, build in (("chord", chord_chain), ("push", push_chain)):
            bounds = []
            for k in (1, 2, 3):
                rel = build(ch, k)
                res = solve(rel.program)
                checks(f"seed {seed} {name} k={k} solved", res.ok, res.status)
                bounds.append(rel.bound(res))
            for k, (a, b) in enumerate(zip(bounds, bounds[1:]), start=1):
                slack = b - a
                worst = min(worst, slack)
                checks(f"seed {seed} {name} k={k}->{k + 1}", slack >= -1e-7, f"{slack:.2e}")
    finish(record_criterion, 9, checks, f"orders 1->2->3 on 5 instances, min slack {worst:.1e}")


def test_criterion_10_sdpa_round_trip(record_criterion):
    checks = Checks()
    builders = (dense_chain, lambda c: chord_chain(c, 2), lambda c: push_chain(c, 2))
    names = ("dense", "chord", "push")
    worst = 0.0
    for t in range(10):
        ch = gen_random_quadratic_composition(2 + t % 2, seed=100 + t)
        rel = builders[t % 3](ch)
        direct = solve(rel.program)
        again = solve(read_sdpa(export_sdpa(rel.program)))
        diff = abs(direct.objective - again.objective)
        worst = max(worst, diff) if not math.isnan(diff) else math.inf
        checks(f"program {t} {names[t % 3]}", direct.ok and again.ok and diff <= 1e-6,
               f"{direct.status}/{again.status} diff {diff:.1e}")
    finish(record_criterion, 10, checks, f"10 programs, max objective difference {worst:.1e}")
