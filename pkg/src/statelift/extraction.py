"""Candidate minimizers from solved relaxations.

Two readouts are provided: the first-order moments of any relaxation and the
sequential randomized extraction for the push-forward hierarchy, which
samples each stage's moment matrix and glues the samples into one feasible
trajectory by propagating the selected controls.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .chainmodel import CompositionChain, eval_chain
from .conic import SolveResult
from .moments import Relaxation
from .polycore import ONE
from .problems import rng_for

log = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    pass


@dataclass
class ExtractionConfig:
    tau: float = 0.1
    n_samples: int = 200
    threshold: float = 1e-6
    seed: int = 0
    seeds: int = 20
    hook: str | None = None  # None picks the family default
    target: Sequence[float] | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_samples < 1 or self.seeds < 1:
            raise ValueError("n_samples and seeds must be at least 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")

    def describe(self) -> str:
        return (f"tau={self.tau} n_samples={self.n_samples} threshold={self.threshold} "
                f"seeds={self.seed}..{self.seed + self.seeds - 1} hook={self.hook or 'auto'}")


# --------------------------------------------------------------- first moments

@dataclass
class FirstMoments:
    point: dict  # variable id -> value (locals and, when present, states)
    controls: list  # per-stage arrays of local values
    residuals: dict  # name -> absolute residual
    value: float  # objective re-evaluated by propagating ``controls``

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)


def first_moments(res: SolveResult, relaxation: Relaxation) -> FirstMoments:
    """Degree-one moments of every layout, averaged where layouts overlap.

    Residuals report how far the point is from satisfying the lifting
    relations ``s_i = F_i(s_{i-1}, x_i)`` and the stage constraints; the
    controls are re-evaluated through the chain for ``value``.
    """
    if res.y is None:
        raise ValueError(f"no solution available (status {res.status})")
    acc: dict[int, list[float]] = {}
    for lay in relaxation.layouts:
        for v, val in lay.first_moments(res.y).items():
            acc.setdefault(v, []).append(val)
    point = {v: float(np.mean(vals)) for v, vals in acc.items()}
    chain = relaxation.chain
    residuals: dict[str, float] = {}
    if chain is None:
        return FirstMoments(point, [], residuals, math.nan)
    controls = [np.array([point.get(v, 0.0) for v in chain.local_ids(i)]) for i in range(1, chain.n + 1)]
    for vals in acc.values():
        if len(vals) > 1:
            residuals["separator"] = max(residuals.get("separator", 0.0), float(np.ptp(vals)))
    states_known = all(v in point for i in range(1, chain.n + 1) for v in chain.state_ids(i))
    if states_known:
        for m in chain.maps:
            for l, f in enumerate(m.components, 1):
                vid = chain.space.id_of(m.stage, "s", l)
                residuals[f"lift{m.stage}.{l}"] = abs(point[vid] - float(f(point)))
        for j, c in enumerate(chain.constraints):
            val = float(c.poly(point))
            residuals[f"stage{c.stage}.{j}"] = abs(val) if c.sense == "==0" else max(0.0, -val)
    clipped = [_clamp_ball(x, chain.box_radii[i]) for i, x in enumerate(controls)]
    value, _ = eval_chain(chain, [x[0] if len(x) == 1 else x for x in clipped])
    return FirstMoments(point, controls, residuals, float(value))


def _clamp_ball(x: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(x))
    return x * (radius / nrm) if nrm > radius else x


# ------------------------------------------------------------------- sampling

EIG_RTOL = 1e-12


class MomentSampler:
    """Gaussian samples ``omega = V g`` with ``V V^T`` the clipped moment matrix.

    Only the rows of ``V`` for the constant and the degree-one monomials are
    kept, since candidates are read from those entries alone.
    """

    def __init__(self, M: np.ndarray, labels: Sequence):
        labels = list(labels)
        if labels[0] != ONE:
            raise ValueError("moment basis must start with the constant monomial")
        w, U = np.linalg.eigh((M + M.T) / 2)
        # eigenvalues at rounding level are treated as zero, so a rank-one
        # matrix yields its atom exactly
        w[w < EIG_RTOL * max(w[-1], 0.0)] = 0.0
        V = U * np.sqrt(w)
        self.variables = [m[0][0] for m in labels if len(m) == 1 and m[0][1] == 1]
        rows = [0] + [i for i, m in enumerate(labels) if len(m) == 1 and m[0][1] == 1]
        self.V = V[rows]
        self.full_V = V

    def draw(self, rng: np.random.Generator, threshold: float = 1e-6, max_tries: int = 20000) -> dict[int, float]:
        for _ in range(max_tries):
            omega = self.V @ rng.standard_normal(self.V.shape[1])
            if abs(omega[0]) >= threshold:
                return dict(zip(self.variables, omega[1:] / omega[0]))
        raise ExtractionError(f"|omega_1| stayed below {threshold} for {max_tries} samples")


def sample_candidate(M: np.ndarray, labels: Sequence, rng: np.random.Generator,
                     threshold: float = 1e-6, max_tries: int = 20000) -> dict[int, float]:
    """One candidate point (variable id -> value) drawn from moment matrix ``M``."""
    return MomentSampler(M, labels).draw(rng, threshold, max_tries)


# ---------------------------------------------------------------------- hooks

def _box_hook(chain: CompositionChain, stage: int, x: np.ndarray) -> np.ndarray:
    return _clamp_ball(x, chain.box_radii[stage - 1])


def _quantum_hook(chain: CompositionChain, stage: int, x: np.ndarray) -> np.ndarray:
    sx, cy = float(x[0]), float(x[1])
    if math.hypot(sx, cy) == 0.0:
        sx, cy = 0.0, 1.0
    theta = math.atan2(sx, cy)
    tmax = chain.metadata.get("theta_max")
    if tmax is not None:
        theta = min(max(theta, -tmax), tmax)
    return np.array([math.sin(theta), math.cos(theta)])


HOOKS: dict[str, Callable] = {"box": _box_hook, "quantum": _quantum_hook}
FAMILY_HOOKS = {"quantum-rotation": "quantum"}


def register_hook(name: str, fn: Callable, family: str | None = None) -> None:
    """Add a projection ``fn(chain, stage, x) -> x`` (optionally a family default)."""
    HOOKS[name] = fn
    if family is not None:
        FAMILY_HOOKS[family] = name


# -------------------------------------------------------------- trajectories

@dataclass
class Trajectory:
    controls: list  # per-stage arrays
    states: list  # per-stage arrays, s_i = F_i(s_{i-1}, controls_i)
    value: float
    seed: int = 0
    draws: int = 0
    config: ExtractionConfig | None = None
    extra: dict = field(default_factory=dict)

    @property
    def angles(self) -> list[float]:
        """``atan2(x, y)`` per stage, meaningful for (sin, cos) controls."""
        return [math.atan2(float(c[0]), float(c[1])) for c in self.controls]

    def to_csv(self, destination=None) -> str:
        width = max(len(c) for c in self.controls)
        rank = max(len(s) for s in self.states)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage"] + [f"x{j + 1}" for j in range(width)] + [f"s{j + 1}" for j in range(rank)])
        for i, (c, s) in enumerate(zip(self.controls, self.states), start=1):
            cs = [repr(float(v)) for v in c] + [""] * (width - len(c))
            ss = [repr(float(v)) for v in s] + [""] * (rank - len(s))
            w.writerow([i] + cs + ss)
        text = buf.getvalue()
        if destination is not None:
            if hasattr(destination, "write"):
                destination.write(text)
            else:
                with open(destination, "w") as fh:
                    fh.write(text)
        return text


def _stage_samplers(res: SolveResult, relaxation: Relaxation) -> list[MomentSampler]:
    out = []
    for lay in relaxation.layouts:
        M = res.blocks[lay.moment_block]
        out.append(MomentSampler(M, relaxation.program.blocks[lay.moment_block].basis))
    return out


def _propagate(chain: CompositionChain, stage: int, prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    point = dict(zip(chain.state_ids(stage - 1), prev))
    point.update(zip(chain.local_ids(stage), x))
    return np.array([float(f(point)) for f in chain.maps[stage - 1].components])


def _run_seed(chain, samplers, cfg: ExtractionConfig, hook, seed: int) -> Trajectory:
    rng = rng_for(seed)
    target = None if cfg.target is None else np.asarray(cfg.target, dtype=float)
    budget = 100 * cfg.n_samples
    prev = np.zeros(0)
    controls, states, draws = [], [], 0
    for k in range(1, chain.n + 1):
        sampler = samplers[k - 1]
        sids, lids = chain.state_ids(k - 1), chain.local_ids(k)
        best, best_score, m = None, -math.inf, 0
        while m < cfg.n_samples or best is None:
            if m >= budget:
                raise ExtractionError(f"stage {k}: no candidate within tau={cfg.tau} after {m} samples")
            cand = sampler.draw(rng, cfg.threshold)
            m += 1
            s_tilde = np.array([cand[v] for v in sids])
            dist = float(np.linalg.norm(s_tilde - prev)) if len(sids) else 0.0
            if dist > cfg.tau:
                continue
            x = hook(chain, k, np.array([cand[v] for v in lids]))
            s_new = _propagate(chain, k, prev, x)
            if target is not None and len(s_new) == len(target):
                score = float(s_new @ target)
            elif k == chain.n:
                score = -chain.sign * float(s_new[0])
            else:
                score = -dist
            if score > best_score:
                best, best_score = (x, s_new), score
        draws += m
        controls.append(best[0])
        states.append(best[1])
        prev = best[1]
    return Trajectory(controls, states, float(states[-1][0]), seed, draws, cfg)


def extract_sequential(res: SolveResult, relaxation: Relaxation, cfg: ExtractionConfig | None = None) -> Trajectory:
    """Sequential randomized extraction from the stage moment matrices.

    Runs ``cfg.seeds`` independent seeds and keeps the trajectory with the
    best objective in the chain's own sense. A seed that finds no candidate
    within ``tau`` of the propagated state (after ``100 * n_samples`` draws
    at one stage) is skipped. Trajectories are feasible by
    construction: controls pass through the projection hook and states are
    propagated through the exact stage maps.
    """
    cfg = cfg or ExtractionConfig()
    if relaxation.hierarchy != "push":
        raise ValueError("sequential extraction needs a push-forward relaxation")
    if res.y is None:
        raise ValueError(f"no solution available (status {res.status})")
    chain = relaxation.chain
    name = cfg.hook or FAMILY_HOOKS.get(chain.metadata.get("family"), "box")
    hook = HOOKS[name]
    samplers = _stage_samplers(res, relaxation)
    best, failures = None, []
    for seed in range(cfg.seed, cfg.seed + cfg.seeds):
        try:
            traj = _run_seed(chain, samplers, cfg, hook, seed)
        except ExtractionError as exc:
            log.info("extraction seed %d failed: %s", seed, exc)
            failures.append(f"seed {seed}: {exc}")
            continue
        if best is None or chain.sign * traj.value < chain.sign * best.value:
            best = traj
    if best is None:
        raise ExtractionError("every seed failed; " + "; ".join(failures[:3]))
    best.extra["failed_seeds"] = len(failures)
    return best
