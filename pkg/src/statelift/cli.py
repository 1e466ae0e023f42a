"""Command-line front end: generate, solve, export, extract and benchmark."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict


from .chainmodel import ChainError, CompositionChain, load_chain, save_chain
from .conic import BACKENDS, SolveOptions, export_sdpa
from .pipeline import HIERARCHIES, RunReport, relax, solve_chain
from .problems import ALIASES, FAMILIES, GeneratorSpec, generate, markov_oracle

log = logging.getLogger("statelift")

EXIT_OK, EXIT_ERROR, EXIT_TIMEOUT = 0, 1, 2


# ------------------------------------------------------------------ problems

def default_order(chain: CompositionChain, hierarchy: str) -> int | None:
    """Family defaults: chord 3 (2 for the cubic network); push 4 for quadratic compositions, 10 for
    degree-4 TT chains, 2 for quantum rotations and 3 otherwise; dense uses
    the minimum admissible."""
    if hierarchy == "dense":
        return None
    fam = chain.metadata.get("family")
    if hierarchy == "chord":
        # cubic maps on rank-3 states: order 3 would need 120-wide blocks
        return 2 if fam == "nn-cubic" else 3
    if fam == "random-quadratic-composition":
        return 4
    if fam == "random-tt" and chain.metadata.get("d") == 4:
        return 10
    if fam == "quantum-rotation":
        return 2
    return 3


def _theta(text: str):
    return None if text.lower() in ("none", "inf", "unconstrained") else float(text)


def _vector(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(","))


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem")
    g.add_argument("problem", nargs="?", help="chain JSON file (omit to use --family)")
    g.add_argument("--family", choices=sorted(set(FAMILIES) | set(ALIASES)))
    g.add_argument("--n", type=int, default=4, help="number of stages")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--r", type=int, default=None, help="rank (family default if omitted)")
    g.add_argument("--d", type=int, default=2, help="local degree of TT cores")
    g.add_argument("--tt-tau", type=float, default=0.1, help="perturbation size (perturbed TT)")
    g.add_argument("--theta-max", type=_theta, default=0.1, help="quantum angle bound or 'none'")
    g.add_argument("--s0", type=_vector, default=(0.0, 0.0, 1.0))
    g.add_argument("--target", type=_vector, default=(0.0, 1.0, 0.0))
    g.add_argument("--alpha", type=float, default=None, help="NN cubic coefficient")
    g.add_argument("--stage", type=int, default=None, help="NN stage whose first state is optimized")
    g.add_argument("--sense", choices=("min", "max"), default="max", help="NN objective sense")


def _add_solve_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("relaxation")
    g.add_argument("--hierarchy", choices=HIERARCHIES, default="push")
    g.add_argument("--order", type=int, default=None)
    g.add_argument("--share-moments", action="store_true", help="chord: reuse separator moment ids")
    g.add_argument("--lifted", action="store_true", help="dense: relax the lifted problem")
    g.add_argument("--tol", type=float, default=None)
    g.add_argument("--time-limit", type=float, default=300.0)
    g.add_argument("--solver", default=None, help=f"{', '.join(BACKENDS)}, sdpa:<exe> or csdp:<exe>")


def spec_from_args(args) -> GeneratorSpec:
    fam = ALIASES.get(args.family, args.family)
    params: dict = {}
    r = args.r
    if fam == "perturbed-identity-tt":
        params["tau"] = args.tt_tau
    elif fam == "quantum-rotation":
        params.update(theta_max=args.theta_max, s0=args.s0, target=args.target)
    elif fam == "nn-cubic":
        params.update(r=r or 3, stage_index=args.stage or args.n, sense=args.sense)
        if args.alpha is not None:
            params["alpha"] = args.alpha
    return GeneratorSpec(fam, args.n, args.seed, r or 2, args.d, params)


def load_problem(args) -> CompositionChain:
    if args.problem:
        return load_chain(args.problem)
    if not args.family:
        raise ChainError("give a problem file or --family")
    return generate(spec_from_args(args))


def _options(args) -> SolveOptions:
    kw = {"time_limit": args.time_limit}
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.solver is not None:
        kw["solver"] = args.solver
    return SolveOptions.from_env(**kw)


def _relax_kw(args) -> dict:
    return {"share_moments": args.share_moments, "lifted": args.lifted}


# -------------------------------------------------------------------- output

def write_reports(rows: list[RunReport], out) -> None:
    path = out if out not in (None, "-") else None
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=RunReport.FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r.row())
    finally:
        if path:
            fh.close()


def read_reports(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["bound"] = float(row["bound"])
        for key in ("n", "order", "block_size", "constraints", "n_blocks"):
            row[key] = int(row[key])
    return rows


def _exit_code(status: str) -> int:
    if status in ("optimal", "near-optimal"):
        return EXIT_OK
    return EXIT_TIMEOUT if status == "timeout" else EXIT_ERROR


# ------------------------------------------------------------------ commands

def cmd_generate(args) -> int:
    chain = generate(spec_from_args(args))
    if args.out in (None, "-"):
        from .chainmodel import chain_to_dict

        json.dump(chain_to_dict(chain), sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        save_chain(chain, args.out)
        print(f"wrote {args.out}: {chain!r}")
    return EXIT_OK


def cmd_solve(args) -> int:
    chain = load_problem(args)
    order = args.order if args.order is not None else default_order(chain, args.hierarchy)
    solved = solve_chain(chain, args.hierarchy, order, _options(args), **_relax_kw(args))
    if args.dump_graph:
        _dump_graph(chain, args.dump_graph)
    write_reports([solved.report], args.out)
    res = solved.result
    print(f"{args.hierarchy} k={solved.relaxation.order}: {res.status} bound={solved.bound:.9g} "
          f"({res.solver}, {res.wall_time:.2f}s) {solved.relaxation.program.summary()}",
          file=sys.stderr)
    if not res.ok and res.message:
        print(f"solver: {res.message}", file=sys.stderr)
    return _exit_code(res.status)


def _dump_graph(chain: CompositionChain, path: str) -> None:
    from .chainmodel import lift
    from .sparsity import build_graph, chordal_cliques

    pop = lift(chain)
    g = build_graph(pop)
    dec = chordal_cliques(g, pop)
    with open(path, "w") as fh:
        fh.write(g.dump(chain.space.name))
    with open(path + ".cliques", "w") as fh:
        for c in dec.cliques:
            fh.write(" ".join(chain.space.name(v) for v in c) + "\n")


def cmd_export(args) -> int:
    chain = load_problem(args)
    order = args.order if args.order is not None else default_order(chain, args.hierarchy)
    rel = relax(chain, args.hierarchy, order, **_relax_kw(args))
    if args.sdpa:
        export_sdpa(rel.program, args.sdpa)
    else:
        sys.stdout.write(export_sdpa(rel.program))
    print(f"{args.hierarchy} k={rel.order}: {rel.program.summary()}", file=sys.stderr)
    return EXIT_OK


def cmd_extract(args) -> int:
    from .extraction import ExtractionConfig, extract_sequential, first_moments

    chain = load_problem(args)
    order = args.order if args.order is not None else default_order(chain, args.hierarchy)
    solved = solve_chain(chain, args.hierarchy, order, _options(args), **_relax_kw(args))
    res = solved.result
    if res.y is None:
        print(f"no solution to extract from ({res.status}: {res.message})", file=sys.stderr)
        return _exit_code(res.status) or EXIT_ERROR
    if args.hierarchy == "push" and not args.first_moments:
        target = chain.metadata.get("target")
        cfg = ExtractionConfig(args.tau, args.samples, args.threshold, args.seed, args.seeds,
                               args.hook, target)
        traj = extract_sequential(res, solved.relaxation, cfg)
        text = traj.to_csv(None if args.out in (None, "-") else args.out)
        if args.out in (None, "-"):
            sys.stdout.write(text)
        achieved, how = traj.value, f"sequential ({cfg.describe()}), best seed {traj.seed}"
    else:
        fm = first_moments(res, solved.relaxation)
        rows = ["stage,x"] + [f"{i},{' '.join(repr(float(v)) for v in x)}" for i, x in enumerate(fm.controls, 1)]
        text = "\n".join(rows) + "\n"
        if args.out in (None, "-"):
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)
        achieved, how = fm.value, f"first moments (max residual {fm.max_residual:.2e})"
    side = "<=" if chain.sense == "max" else ">="
    print(f"bound={solved.bound:.9g} achieved={achieved:.9g} (achieved {side} bound) via {how}",
          file=sys.stderr)
    return _exit_code(res.status)


# --------------------------------------------------------------------- bench

def _bench_job(job: tuple) -> tuple[dict, dict]:
    spec, hierarchy, order, time_limit, extra = job
    chain = generate(spec)
    solved = solve_chain(chain, hierarchy, order, SolveOptions.from_env(time_limit=time_limit))
    report = solved.report
    info = dict(extra)
    if solved.result.ok and extra.get("first_moments"):
        from .extraction import first_moments

        info["achieved"] = first_moments(solved.result, solved.relaxation).value
    report.extraction = ";".join(f"{k}={v}" for k, v in info.items() if k != "first_moments")
    return asdict(report), info


def _suite_jobs(suite: str, seed: int, time_limit: float) -> list[tuple]:
    jobs = []
    if suite == "table1":
        for n in (2, 3, 4):
            spec = GeneratorSpec("random-quadratic-composition", n, seed)
            jobs += [(spec, "dense", None, time_limit, {}), (spec, "chord", 3, time_limit, {}),
                     (spec, "push", 4, time_limit, {})]
    elif suite == "table2":
        for n in (2, 3):
            spec = GeneratorSpec("random-tt", n, seed, 2, 4)
            jobs += [(spec, "dense", 2 * n, time_limit, {}), (spec, "chord", 3, time_limit, {}),
                     (spec, "push", 10, time_limit, {})]
    elif suite == "table3":
        for n in (2, 3):
            spec = GeneratorSpec("random-tt", n, seed, 4, 2)
            jobs += [(spec, "dense", None, time_limit, {}), (spec, "chord", 3, time_limit, {}),
                     (spec, "push", 3, time_limit, {})]
    elif suite == "table4":
        for n in (10, 50, 100):
            spec = GeneratorSpec("perturbed-identity-tt", n, seed, 2, 2, {"tau": 0.1})
            jobs += [(spec, "chord", 3, time_limit, {}), (spec, "push", 3, time_limit, {})]
    elif suite == "markov":
        for n in range(1, 11):
            jobs.append((GeneratorSpec("markov-quadratic", n, seed), "chord", 3, time_limit,
                         {"oracle": markov_oracle(n), "first_moments": True}))
        for n in range(1, 11):
            jobs.append((GeneratorSpec("markov-chebyshev", n, seed), "chord", 3, time_limit,
                         {"first_moments": True}))
    elif suite == "quantum":
        for N in range(5, 50, 2):
            spec = GeneratorSpec("quantum-rotation", N, seed, params={"theta_max": 0.1})
            jobs.append((spec, "push", 2, time_limit, {}))
    elif suite == "nn":
        for j in range(1, 21):
            for sense in ("max", "min"):
                spec = GeneratorSpec("nn-cubic", j, seed, params={"N": 20, "r": 3, "stage_index": j, "sense": sense})
                jobs.append((spec, "chord", 2, time_limit, {}))
    else:
        raise ValueError(f"unknown suite {suite!r}")
    return jobs


SUITES = ("table1", "table2", "table3", "table4", "markov", "quantum", "nn")


def _bench_extras(suite: str, seed: int, outdir: str) -> None:
    """Figure data that needs more than one solve per row."""
    if suite == "markov":
        from .problems import markov_chebyshev_problem, projected_gradient

        path = os.path.join(outdir, "markov_gradient.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "seed", "projected_gradient"])
            for n in range(1, 11):
                _, val = projected_gradient(markov_chebyshev_problem(n, seed), seed)
                w.writerow([n, seed, repr(val)])
    elif suite == "nn":
        from .problems import nn_forward, nn_params, rng_for

        params = nn_params(20, 3, seed=seed)
        xs = rng_for(seed + 1).uniform(-1.0, 1.0, (20, 50))
        states = nn_forward(params, xs)
        path = os.path.join(outdir, "nn_trajectories.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trajectory"] + [f"s{j}" for j in range(1, 21)])
            for t in range(50):
                w.writerow([t] + [repr(float(states[j, 0, t])) for j in range(20)])


def cmd_bench(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    os.makedirs(args.out, exist_ok=True)
    worst = EXIT_OK
    for suite in suites:
        jobs = _suite_jobs(suite, args.seed, args.time_limit)
        t0 = time.perf_counter()
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                results = list(pool.map(_bench_job, jobs))
        else:
            results = [_bench_job(j) for j in jobs]
        reports = [RunReport(**r) for r, _ in results]
        path = os.path.join(args.out, f"{suite}.csv")
        write_reports(reports, path)
        _bench_extras(suite, args.seed, args.out)
        bad = [r for r in reports if r.status not in ("optimal", "near-optimal")]
        print(f"{suite}: {len(reports)} solves in {time.perf_counter() - t0:.1f}s, "
              f"{len(bad)} not solved -> {path}", file=sys.stderr)
        for r, info in results:
            if "oracle" in info and math.isfinite(r["bound"]):
                gap = r["bound"] - info["oracle"]
                print(f"  n={r['n']}: bound {r['bound']:.6f} oracle {info['oracle']:.6f} gap {gap:.1e}",
                      file=sys.stderr)
        if any(r.status == "timeout" for r in bad):
            worst = max(worst, EXIT_TIMEOUT)
    return worst


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="statelift", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a generated chain as JSON")
    _add_problem_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="assemble and solve one relaxation")
    _add_problem_args(p)
    _add_solve_args(p)
    p.add_argument("--out", default=None, help="report CSV (stdout by default)")
    p.add_argument("--dump-graph", default=None, help="write the sparsity graph edge list here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("export", help="write the relaxation as sparse SDPA")
    _add_problem_args(p)
    _add_solve_args(p)
    p.add_argument("--sdpa", default=None, help="output .dat-s path (stdout by default)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("extract", help="solve and extract a candidate trajectory")
    _add_problem_args(p)
    _add_solve_args(p)
    p.add_argument("--tau", type=float, default=0.1, help="state-compatibility radius")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--threshold", type=float, default=1e-6)
    p.add_argument("--hook", default=None)
    p.add_argument("--first-moments", action="store_true", help="read first moments instead of sampling")
    p.add_argument("--out", default=None, help="trajectory CSV (stdout by default)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bench", help="run a benchmark suite and write CSVs")
    p.add_argument("--suite", choices=SUITES + ("all",), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench-out")
    p.add_argument("--time-limit", type=float, default=300.0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .extraction import ExtractionError

    try:
        return args.func(args)
    except (ChainError, ExtractionError, ValueError, OSError, KeyError) as exc:
        print(f"statelift: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
