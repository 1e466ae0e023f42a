"""Per-stage measures coupled by moment-level push-forward equalities (SL_push)."""
from __future__ import annotations

import math
from itertools import combinations_with_replacement
from typing import Sequence

from .chainmodel import CompositionChain, StageMap, ball
from .conic import ProgramBuilder
from .moments import MomentLayout, OrderTooSmall, Relaxation, half_degree
from .polycore import Polynomial


def predicted_push_counts(r: int, k: int, d: int, n: int) -> tuple[int, int]:
    """(largest block, push equalities) for uniform rank ``r`` and degree ``d``.

    The count includes ``alpha = 0``; the assembler drops that row because it
    only repeats the per-stage normalizations.
    """
    q = (2 * k) // d
    return math.comb(r + 1 + k, k), (n - 1) * math.comb(r + q, q)


def pushforward_alphas(F: StageMap | Sequence[int], k: int) -> list[tuple[int, ...]]:
    """Nonzero ``alpha`` with ``sum_l alpha_l deg F_l <= 2k`` and ``|alpha| <= 2k``."""
    degs = F.degrees if isinstance(F, StageMap) else tuple(F)
    r = len(degs)
    out = []
    for total in range(1, 2 * k + 1):
        for combo in combinations_with_replacement(range(r), total):
            alpha = [0] * r
            for l in combo:
                alpha[l] += 1
            if sum(a * dl for a, dl in zip(alpha, degs)) <= 2 * k:
                out.append(tuple(alpha))
    return out


class _PowerCache:
    """``F^alpha`` built incrementally from ``F^(alpha - e_l) * F_l``."""

    def __init__(self, comps: Sequence[Polynomial]):
        self.comps = list(comps)
        self.cache: dict[tuple[int, ...], Polynomial] = {
            (0,) * len(comps): Polynomial.constant(comps[0].space, 1.0)
        }

    def __call__(self, alpha: tuple[int, ...]) -> Polynomial:
        if alpha in self.cache:
            return self.cache[alpha]
        l = max(i for i, a in enumerate(alpha) if a)
        prev = list(alpha)
        prev[l] -= 1
        out = self(tuple(prev)) * self.comps[l]
        self.cache[alpha] = out
        return out


def assemble_push(chain: CompositionChain, k: int) -> tuple[ProgramBuilder, list[MomentLayout]]:
    space = chain.space
    n = chain.n
    need = max(half_degree(chain.maps[-1].components[0]), 1)
    for c in chain.constraints:
        need = max(need, half_degree(c.poly))
    if k < need:
        raise OrderTooSmall(f"push relaxation needs order >= {need}, got {k}")
    R = chain.state_radii if n > 1 else ()
    builder = ProgramBuilder()
    layouts = []
    for i in range(1, n + 1):
        prev = chain.state_ids(i - 1)
        lay = MomentLayout(builder, prev + chain.local_ids(i), k, name=f"stage{i}")
        layouts.append(lay)
        lay.add_moment_matrix()
        for c in chain.stage_constraints(i, ">=0"):
            lay.add_localizing(c.poly, label=f"{lay.name}:g")
        lay.add_localizing(ball(space, chain.local_ids(i), chain.box_radii[i - 1]), f"{lay.name}:ball_x")
        if i >= 2:
            lay.add_localizing(ball(space, prev, R[i - 2]), f"{lay.name}:ball_s")
        for c in chain.stage_constraints(i, "==0"):
            lay.add_ideal(c.poly, "stage-equality")
        lay.normalize()
    for i in range(1, n):
        F = chain.maps[i - 1]
        powers = _PowerCache(F.components)
        src, dst = layouts[i - 1], layouts[i]
        sids = chain.state_ids(i)
        for alpha in pushforward_alphas(F, k):
            row = dict(src.functional(powers(alpha), -1.0))
            mono = tuple((v, a) for v, a in zip(sids, alpha) if a)
            vid = dst.ids[mono]
            row[vid] = row.get(vid, 0.0) + 1.0
            builder.add_eq(row, 0.0, "push")
    obj = chain.maps[-1].components[0].scale(chain.sign)
    builder.add_objective(layouts[-1].functional(obj))
    return builder, layouts


def push_chain(chain: CompositionChain, k: int = 3) -> Relaxation:
    builder, layouts = assemble_push(chain, k)
    builder.meta.update(hierarchy="push", order=k)
    prog = builder.build()
    predicted = {}
    if len(set(chain.ranks[:-1])) <= 1 and all(w == 1 for w in chain.widths) and chain.n > 1:
        degs = {d for m in chain.maps[:-1] for d in m.degrees}
        block, push = predicted_push_counts(chain.ranks[0], k, max(degs), chain.n)
        predicted = {"block": block}
        if len(degs) == 1:
            predicted["push"] = push
    return Relaxation("push", k, prog, layouts, chain.sign, chain, None, None, predicted)
