"""Problem generators, analytic oracles and local-search baselines.

Randomness always comes from ``numpy.random.Generator(PCG64(seed))`` so a
seed reproduces the same instance on every platform.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .chainmodel import (
    CompositionChain,
    StageConstraint,
    TTCores,
    chain_from_tt,
    eval_chain,
)
from .polycore import Polynomial, VariableSpace

log = logging.getLogger(__name__)

DECAY = 0.7


def rng_for(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ----------------------------------------------------------- random families

def gen_random_quadratic_composition(n: int, seed: int = 0, r: int = 2) -> CompositionChain:
    """Random chain whose stage maps are quadratic in ``(s_{i-1}, x_i)``.

    ``s_{1,l} = c0 + c1 x_1`` and, for ``i >= 2``,
    ``s_{i,l} = sum c_{p,a} s_{i-1}^p x_i^a`` over ``|p| + a <= 2`` with
    ``c_{p,a} = 0.5 * N(0, 1) * 0.7^(|p| + a + 1)``. Boxes are ``[-1, 1]``.
    The expanded polynomial has degree ``2^(n-1)``, so the dense relaxation
    needs order ``2^(n-2)`` (1 for ``n <= 2``).
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = rng_for(seed)
    ranks = [r] * (n - 1) + [1]
    space = VariableSpace.for_chain(ranks)
    maps = []
    for i in range(1, n + 1):
        x = space.x(i)
        comps = []
        for _ in range(ranks[i - 1]):
            if i == 1:
                f = space.zero()
                for a in range(2):
                    f = f + (x**a).scale(0.5 * rng.standard_normal() * DECAY ** (a + 1))
            else:
                f = space.zero()
                prev = [space.s(i - 1, l) for l in range(1, ranks[i - 2] + 1)]
                for exps in product(range(3), repeat=len(prev) + 1):
                    if sum(exps) > 2:
                        continue
                    term = x ** exps[-1]
                    for s, e in zip(prev, exps[:-1]):
                        if e:
                            term = term * s**e
                    f = f + term.scale(0.5 * rng.standard_normal() * DECAY ** (sum(exps) + 1))
            comps.append(f)
        maps.append(comps)
    meta = {"family": "random-quadratic-composition", "seed": seed, "n": n, "r": r}
    return CompositionChain(space, maps, box_radii=1.0, sense="min", metadata=meta)


def gen_random_tt(n: int, r: int = 2, d: int = 2, seed: int = 0) -> CompositionChain:
    """Random TT with entry coefficients ``0.5 * N(0, 1) * 0.7^(a + 1)`` for ``x^a``."""
    rng = rng_for(seed)
    shapes = [(1 if i == 0 else r, 1 if i == n - 1 else r) for i in range(n)]
    coeffs = []
    for a, b in shapes:
        scale = 0.5 * DECAY ** (np.arange(d + 1) + 1)
        coeffs.append(rng.standard_normal((a, b, d + 1)) * scale)
    meta = {"family": "random-tt", "seed": seed, "n": n, "r": r, "d": d}
    return chain_from_tt(TTCores(coeffs), 1.0, sense="min", metadata=meta)


def _shifted_powers(d: int) -> np.ndarray:
    """Monomial coefficients of ``((x + 1) / 2)^k`` for ``k = 0..d`` (rows)."""
    out = np.zeros((d + 1, d + 1))
    for k in range(d + 1):
        for j in range(k + 1):
            out[k, j] = math.comb(k, j) / 2.0**k
    return out


def gen_perturbed_identity_tt(n: int, r: int = 2, d: int = 2, tau: float = 0.1, seed: int = 0):
    """Cores ``P_i = I + sum_k (tau / n) w_k B_{i,k} ((x_i + 1) / 2)^k``.

    ``w_k = (1/k) / sum_j (1/j)``; ``B_{i,k}`` has uniform ``[0, 1]``
    entries scaled to unit Frobenius norm. Returns ``(cores, u, v)`` with
    ``u = v = (1, ..., 1)``; the minimum of ``u^T prod P_i v`` over the box
    is ``u . v``, attained at ``x = -1``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rng = rng_for(seed)
    w = np.array([1.0 / k for k in range(1, d + 1)])
    w /= w.sum()
    sh = _shifted_powers(d)
    cores = []
    for _ in range(n):
        c = np.zeros((r, r, d + 1))
        c[:, :, 0] = np.eye(r)
        for k in range(1, d + 1):
            B = rng.uniform(0.0, 1.0, (r, r))
            B /= np.linalg.norm(B)
            c += (tau / n) * w[k - 1] * B[:, :, None] * sh[k][None, None, :]
        cores.append(c)
    u = np.ones(r)
    v = np.ones(r)
    return cores, u, v


def perturbed_identity_chain(n: int, r: int = 2, d: int = 2, tau: float = 0.1, seed: int = 0) -> CompositionChain:
    cores, u, v = gen_perturbed_identity_tt(n, r, d, tau, seed)
    cores = [c.copy() for c in cores]
    if n == 1:
        cores[0] = np.einsum("a,abk,b->k", u, cores[0], v)[None, None, :]
    else:
        cores[0] = np.einsum("a,abk->bk", u, cores[0])[None, :, :]
        cores[-1] = np.einsum("abk,b->ak", cores[-1], v)[:, None, :]
    meta = {
        "family": "perturbed-identity-tt", "seed": seed, "n": n, "r": r, "d": d, "tau": tau,
        "B_normalization": "frobenius", "w": "(1/k)/H_d", "optimum": float(u @ v),
    }
    return chain_from_tt(TTCores(cores), 1.0, sense="min", metadata=meta)


# -------------------------------------------------------------------- Markov

MARKOV_A = (0.95, 0.0, -0.20)
MARKOV_B = (0.05, 0.0, -0.05)


def markov_oracle(n: int) -> float:
    """``1/2 + 1/2 * 0.9^n``: the optimum of the default quadratic chain."""
    return 0.5 + 0.5 * 0.9**n


def _range_on_box(coeffs) -> tuple[float, float]:
    """Exact range of a univariate polynomial on ``[-1, 1]``."""
    p = np.polynomial.Polynomial(coeffs)
    pts = [-1.0, 1.0] + [float(t.real) for t in p.deriv().roots() if abs(t.imag) < 1e-12 and -1 < t.real < 1]
    vals = p(np.array(pts))
    return float(vals.min()), float(vals.max())


def _markov_chain(n: int, a_list, b_list, meta) -> CompositionChain:
    """``v_0 prod P_i(x_i) v_0^T`` with ``P = [[a, 1 - a], [b, 1 - b]]``."""
    deg = max(max(len(a), len(b)) for a, b in zip(a_list, b_list))
    cores = []
    for a, b in zip(a_list, b_list):
        A = np.zeros(deg)
        B = np.zeros(deg)
        A[: len(a)] = a
        B[: len(b)] = b
        one = np.zeros(deg)
        one[0] = 1.0
        cores.append(np.array([[A, one - A], [B, one - B]]))
    if n == 1:
        cores[0] = cores[0][:1, :1, :]
    else:
        cores[0] = cores[0][:1]
        cores[-1] = cores[-1][:, :1]
    stochastic = True
    for a, b in zip(a_list, b_list):
        for name, c in (("a", a), ("b", b)):
            lo, hi = _range_on_box(c)
            if lo < -1e-12 or hi > 1 + 1e-12:
                log.warning("transition probability %s may leave [0, 1] on the box", name)
                stochastic = False
    # a probability row vector has unit 1-norm, hence Euclidean norm <= 1
    radii = [1.0] * n if stochastic else None
    return chain_from_tt(TTCores(cores), 1.0, sense="max", metadata=meta, state_radii=radii)


def markov_problem(n: int, a_coeffs: Sequence[float] = MARKOV_A, b_coeffs: Sequence[float] = MARKOV_B):
    """Two-state chain with fixed transition polynomials; returns ``(chain, oracle)``.

    The oracle is the closed form for the default coefficients and ``None``
    otherwise.
    """
    meta = {"family": "markov-quadratic", "n": n, "a": list(a_coeffs), "b": list(b_coeffs)}
    chain = _markov_chain(n, [a_coeffs] * n, [b_coeffs] * n, meta)
    default = tuple(a_coeffs) == MARKOV_A and tuple(b_coeffs) == MARKOV_B
    return chain, (markov_oracle(n) if default else None)


def markov_chebyshev_problem(n: int, seed: int = 0) -> CompositionChain:
    """Stage-varying degree-4 Chebyshev transition probabilities.

    ``a_i = 0.5 + 0.45 (w_i T_4 + (1 - w_i) sigma_i T_3)`` and
    ``b_i = 0.5 - 0.45 (v_i T_4 + (1 - v_i) rho_i T_2)`` with ``w, v``
    uniform on ``[0, 1]`` and random signs ``sigma, rho``. Both lie in
    ``[0.05, 0.95]`` on the box and pull the controls in different
    directions, which creates many local optima.
    """
    cheb = np.polynomial.chebyshev.cheb2poly
    T2, T3, T4 = cheb([0, 0, 1]), cheb([0, 0, 0, 1]), cheb([0, 0, 0, 0, 1])
    pad = lambda c: np.pad(c, (0, 5 - len(c)))
    rng = rng_for(seed)
    a_list, b_list = [], []
    for _ in range(n):
        w, v = rng.uniform(size=2)
        sig, rho = rng.choice([-1.0, 1.0], size=2)
        a = pad(0.45 * (w * pad(T4) + (1 - w) * sig * pad(T3)))
        b = pad(-0.45 * (v * pad(T4) + (1 - v) * rho * pad(T2)))
        a[0] += 0.5
        b[0] += 0.5
        a_list.append(a)
        b_list.append(b)
    meta = {"family": "markov-chebyshev", "seed": seed, "n": n}
    return _markov_chain(n, a_list, b_list, meta)


# ------------------------------------------------------------------- quantum

def rotation(k: int, x, y) -> np.ndarray:
    """``P_y`` for odd ``k`` and ``P_z`` for even ``k`` at ``(sin, cos) = (x, y)``."""
    if k % 2 == 1:
        return np.array([[y, 0.0, x], [0.0, 1.0, 0.0], [-x, 0.0, y]])
    return np.array([[y, -x, 0.0], [x, y, 0.0], [0.0, 0.0, 1.0]])


def _rotation_poly(k: int, x: Polynomial, y: Polynomial):
    space = x.space
    one, zero = space.const(1.0), space.zero()
    if k % 2 == 1:
        return [[y, zero, x], [zero, one, zero], [-x, zero, y]]
    return [[y, -x, zero], [x, y, zero], [zero, zero, one]]


def quantum_problem(
    N: int,
    theta_max: float | None = 0.1,
    s0: Sequence[float] = (0.0, 0.0, 1.0),
    target: Sequence[float] = (0.0, 1.0, 0.0),
) -> CompositionChain:
    """Maximize ``s_N . target`` over ``N`` alternating y/z rotations.

    Stage ``k`` has locals ``(x_k, y_k) = (sin t_k, cos t_k)`` with
    ``x_k^2 + y_k^2 = 1`` and ``y_k >= cos(theta_max)``; ``theta_max=None``
    is the unconstrained case, encoded as ``c_min = -1``. Stages ``k >= 2``
    also impose ``||s_{k-1}||^2 = 1``. ``s_0`` is folded into ``F_1`` and the
    target into ``F_N``, so ``r_N = 1``.
    """
    if theta_max is not None and not 0 < theta_max <= math.pi / 2:
        raise ValueError("theta_max must lie in (0, pi/2]")
    s0 = np.asarray(s0, dtype=float)
    target = np.asarray(target, dtype=float)
    c_min = -1.0 if theta_max is None else math.cos(theta_max)
    ranks = [3] * (N - 1) + [1]
    space = VariableSpace.for_chain(ranks, [2] * N)
    maps, cons = [], []
    for k in range(1, N + 1):
        x, y = space.x(k, 1), space.x(k, 2)
        P = _rotation_poly(k, x, y)
        if k == 1:
            prev = [space.const(float(c)) for c in s0]
        else:
            prev = [space.s(k - 1, l) for l in range(1, 4)]
        new = [sum((P[a][b] * prev[b] for b in range(3)), space.zero()) for a in range(3)]
        if k == N:
            new = [sum((new[a].scale(float(target[a])) for a in range(3)), space.zero())]
        maps.append(new)
        cons.append(StageConstraint(k, x * x + y * y - 1.0, "==0"))
        cons.append(StageConstraint(k, y - c_min, ">=0"))
        if k >= 2:
            cons.append(StageConstraint(k, sum((p * p for p in prev), space.zero()) - 1.0, "==0"))
    meta = {
        "family": "quantum-rotation", "n": N, "theta_max": theta_max, "c_min": c_min,
        "s0": s0.tolist(), "target": target.tolist(),
    }
    return CompositionChain(space, maps, cons, 1.0, [1.0] * N, "max", meta)


def quantum_overlap(thetas: Sequence[float], s0=(0.0, 0.0, 1.0), target=(0.0, 1.0, 0.0)) -> float:
    s = np.asarray(s0, dtype=float)
    for k, t in enumerate(thetas, start=1):
        s = rotation(k, math.sin(t), math.cos(t)) @ s
    return float(s @ np.asarray(target, dtype=float))


# -------------------------------------------------------------------- neural

NN_ALPHA = 0.5


@dataclass
class NNParams:
    A: list
    b: list
    c: list
    alpha: float


def nn_params(N: int, r: int = 3, alpha: float = NN_ALPHA, seed: int = 0) -> NNParams:
    rng = rng_for(seed)
    A, b, c = [], [], []
    for _ in range(N):
        A.append(0.1 * rng.standard_normal((r, r)))
        b.append(0.3 * rng.standard_normal(r))
        c.append(0.05 * rng.standard_normal(r))
    return NNParams(A, b, c, alpha)


def nn_forward(params: NNParams, x: np.ndarray) -> np.ndarray:
    """States ``s_1..s_N`` for inputs ``x`` of shape ``(N,)`` or ``(N, m)``."""
    x = np.asarray(x, dtype=float)
    s = np.zeros((params.A[0].shape[0],) + x.shape[1:])
    out = []
    for i in range(x.shape[0]):
        u = np.tensordot(params.A[i], s, axes=1) + np.multiply.outer(params.b[i], x[i]) + (
            params.c[i].reshape((-1,) + (1,) * (x.ndim - 1))
        )
        s = u + params.alpha * u**3
        out.append(s)
    return np.array(out)


def nn_problem(
    N: int = 20,
    r: int = 3,
    alpha: float = NN_ALPHA,
    seed: int = 0,
    stage_index: int | None = None,
    sense: str = "max",
) -> CompositionChain:
    """Chain for ``s_{j,1}`` of a cubic-activation network truncated at ``j``.

    ``u_i = A_i s_{i-1} + b_i x_i + c_i``, ``s_i = u_i + alpha u_i^3``
    componentwise, ``s_0 = 0``.
    """
    params = nn_params(N, r, alpha, seed)
    j = N if stage_index is None else stage_index
    if not 1 <= j <= N:
        raise ValueError("stage_index out of range")
    ranks = [r] * (j - 1) + [1]
    space = VariableSpace.for_chain(ranks)
    maps = []
    for i in range(1, j + 1):
        x = space.x(i)
        comps = []
        for l in range(ranks[i - 1]):
            u = x.scale(float(params.b[i - 1][l])) + float(params.c[i - 1][l])
            if i >= 2:
                for m in range(r):
                    u = u + space.s(i - 1, m + 1).scale(float(params.A[i - 1][l, m]))
            comps.append(u + (u * u * u).scale(alpha) if alpha else u)
        maps.append(comps)
    meta = {"family": "nn-cubic", "seed": seed, "n": j, "N": N, "r": r, "alpha": alpha, "sense": sense}
    return CompositionChain(space, maps, box_radii=1.0, sense=sense, metadata=meta)


def affine_envelope(params: NNParams, j: int) -> tuple[float, float]:
    """Exact range of ``s_{j,1}`` over the box when ``alpha = 0``."""
    r = params.A[0].shape[0]
    G = np.zeros((r, 0))
    h = np.zeros(r)
    for i in range(j):
        G = np.hstack([params.A[i] @ G, params.b[i][:, None]])
        h = params.A[i] @ h + params.c[i]
    spread = float(np.abs(G[0]).sum())
    return float(h[0] - spread), float(h[0] + spread)


# ----------------------------------------------------------------- sampling

def _box_sampler(chain: CompositionChain, rng: np.random.Generator, m: int) -> list:
    out = []
    for i in range(1, chain.n + 1):
        M = chain.box_radii[i - 1]
        w = chain.widths[i - 1]
        if w == 1:
            out.append(rng.uniform(-M, M, m))
        else:
            g = rng.standard_normal((w, m))
            g /= np.linalg.norm(g, axis=0)
            rad = M * rng.uniform(size=m) ** (1.0 / w)
            out.append(g * rad)
    return out


def _quantum_sampler(chain: CompositionChain, rng: np.random.Generator, m: int) -> list:
    c_min = chain.metadata["c_min"]
    tmax = math.acos(max(-1.0, min(1.0, c_min)))
    out = []
    for _ in range(chain.n):
        t = rng.uniform(-tmax, tmax, m)
        out.append(np.array([np.sin(t), np.cos(t)]))
    return out


SAMPLERS: dict[str, Callable] = {"quantum-rotation": _quantum_sampler}


def sample_feasible(chain: CompositionChain, m: int, seed: int = 0) -> list:
    """``m`` random feasible inputs, one array per stage (last axis = sample).

    Families with equality constraints register their own sampler; the
    generic one draws uniformly from the local balls and rejects samples
    violating stage inequalities.
    """
    rng = rng_for(seed)
    family = chain.metadata.get("family")
    if family in SAMPLERS:
        return SAMPLERS[family](chain, rng, m)
    if any(c.sense == "==0" for c in chain.constraints):
        raise ValueError("no feasible-point sampler for chains with stage equalities")
    xs = _box_sampler(chain, rng, m)
    if chain.constraints:
        _, states = eval_chain(chain, xs)
        point = {}
        for i, xi in enumerate(xs, 1):
            ids = chain.local_ids(i)
            for j, vid in enumerate(ids):
                point[vid] = xi if len(ids) == 1 else xi[j]
        for i, comps in enumerate(states, 1):
            for l, v in enumerate(comps, 1):
                point[chain.space.id_of(i, "s", l)] = v
        keep = np.ones(m, dtype=bool)
        for c in chain.constraints:
            keep &= np.asarray(c.poly(point)) >= 0
        xs = [xi[..., keep] for xi in xs]
    return xs


def feasible_values(chain: CompositionChain, m: int = 1000, seed: int = 0) -> np.ndarray:
    xs = sample_feasible(chain, m, seed)
    value, _ = eval_chain(chain, xs)
    return np.asarray(value, dtype=float)


# ---------------------------------------------------------- local baseline

class _Gradients:
    """Partial derivatives of each stage map, computed once."""

    def __init__(self, chain: CompositionChain):
        self.chain = chain
        self.ds = []  # ds[i][l][m] = dF_{i,l}/ds_{i-1,m}
        self.dx = []  # dx[i][l][j] = dF_{i,l}/dx_{i,j}
        for m in chain.maps:
            i = m.stage
            self.ds.append([[f.diff(v) for v in chain.state_ids(i - 1)] for f in m.components])
            self.dx.append([[f.diff(v) for v in chain.local_ids(i)] for f in m.components])

    def value_and_grad(self, xs: list) -> tuple[float, list]:
        chain = self.chain
        point = {}
        for i, xi in enumerate(xs, 1):
            for j, vid in enumerate(chain.local_ids(i)):
                point[vid] = float(np.atleast_1d(xi)[j])
        for m in chain.maps:
            for l, f in enumerate(m.components, 1):
                point[chain.space.id_of(m.stage, "s", l)] = float(f(point))
        value = point[chain.space.id_of(chain.n, "s", 1)]
        adj = np.array([1.0])
        grads = [None] * chain.n
        for i in range(chain.n, 0, -1):
            Jx = np.array([[float(d(point)) if not d.is_zero() else 0.0 for d in row] for row in self.dx[i - 1]])
            grads[i - 1] = adj @ Jx
            if i > 1:
                Js = np.array([[float(d(point)) if not d.is_zero() else 0.0 for d in row] for row in self.ds[i - 1]])
                adj = adj @ Js
        return value, grads


def _project(chain: CompositionChain, xs: list) -> list:
    out = []
    for i, xi in enumerate(xs):
        M = chain.box_radii[i]
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        nrm = np.linalg.norm(xi)
        out.append(xi * (M / nrm) if nrm > M else xi)
    return out


def projected_gradient(
    chain: CompositionChain,
    seed: int = 0,
    steps: int = 200,
    starts: int = 5,
    step0: float = 0.5,
) -> tuple[list, float]:
    """Multi-start projected gradient on the local balls.

    Step ``t`` uses size ``step0 / sqrt(t + 1)``; the best iterate over all
    starts is returned as ``(x per stage, value)``.
    """
    rng = rng_for(seed)
    g = _Gradients(chain)
    sgn = -chain.sign  # ascend for max, descend for min
    best_x, best_v = None, -math.inf
    for _ in range(starts):
        xs = [np.atleast_1d(v[..., 0]) for v in _box_sampler(chain, rng, 1)]
        for t in range(steps):
            v, gr = g.value_and_grad(xs)
            if -chain.sign * v > best_v:
                best_v, best_x = -chain.sign * v, [x.copy() for x in xs]
            xs = _project(chain, [x + sgn * (step0 / math.sqrt(t + 1)) * gi for x, gi in zip(xs, gr)])
        v, _ = g.value_and_grad(xs)
        if -chain.sign * v > best_v:
            best_v, best_x = -chain.sign * v, [x.copy() for x in xs]
    return best_x, -chain.sign * best_v


# ------------------------------------------------------------------ registry

@dataclass
class GeneratorSpec:
    family: str
    n: int
    seed: int = 0
    r: int = 2
    d: int = 2
    params: dict = field(default_factory=dict)


FAMILIES = (
    "random-quadratic-composition", "random-tt", "perturbed-identity-tt",
    "markov-quadratic", "markov-chebyshev", "quantum-rotation", "nn-cubic",
)
ALIASES = {"perturbed-tt": "perturbed-identity-tt", "quadratic-composition": "random-quadratic-composition"}


def generate(spec: GeneratorSpec) -> CompositionChain:
    fam = ALIASES.get(spec.family, spec.family)
    p = spec.params
    if fam == "random-quadratic-composition":
        return gen_random_quadratic_composition(spec.n, spec.seed, spec.r)
    if fam == "random-tt":
        return gen_random_tt(spec.n, spec.r, spec.d, spec.seed)
    if fam == "perturbed-identity-tt":
        return perturbed_identity_chain(spec.n, spec.r, spec.d, p.get("tau", 0.1), spec.seed)
    if fam == "markov-quadratic":
        return markov_problem(spec.n)[0]
    if fam == "markov-chebyshev":
        return markov_chebyshev_problem(spec.n, spec.seed)
    if fam == "quantum-rotation":
        tgt = p.get("target", (0.0, 1.0, 0.0))
        s0 = p.get("s0", (0.0, 0.0, 1.0))
        return quantum_problem(spec.n, p.get("theta_max", 0.1), s0, tgt)
    if fam == "nn-cubic":
        return nn_problem(p.get("N", spec.n), p.get("r", 3), p.get("alpha", NN_ALPHA), spec.seed,
                          p.get("stage_index", spec.n), p.get("sense", "max"))
    raise ValueError(f"unknown family {spec.family!r}")
