"""Clique-based relaxation of the lifted problem (SL_chord)."""
from __future__ import annotations

import math
from collections import deque

from .chainmodel import CompositionChain, LiftedPOP, lift
from .conic import ProgramBuilder
from .moments import MomentLayout, OrderTooSmall, Relaxation
from .polycore import monomials_up_to
from .sparsity import CliqueDecomposition, build_graph, chordal_cliques


def predicted_chord_counts(r: int, k: int, d: int, n: int) -> tuple[int, int, int]:
    """(largest block, separator equalities, lifting equalities) for uniform rank ``r``."""
    block = math.comb(2 * r + 1 + k, k)
    overlap = (n - 1) * math.comb(r + 2 * k, 2 * k)
    lifting = n * r * math.comb(2 * r + 1 + 2 * k - d, 2 * k - d)
    return block, overlap, lifting


def _tree_order(dec: CliqueDecomposition, root: int) -> list[tuple[int, int | None]]:
    """Breadth-first ``(clique, parent)`` pairs covering every tree component."""
    nb = dec.tree_neighbors()
    seen, out = set(), []
    starts = [root] + [i for i in range(len(dec.cliques)) if i != root]
    for s in starts:
        if s in seen:
            continue
        seen.add(s)
        queue = deque([(s, None)])
        while queue:
            a, parent = queue.popleft()
            out.append((a, parent))
            for b in sorted(nb[a]):
                if b not in seen:
                    seen.add(b)
                    queue.append((b, a))
    return out


def assemble_chord(
    pop: LiftedPOP,
    dec: CliqueDecomposition,
    k: int,
    share_moments: bool = False,
) -> tuple[ProgramBuilder, list[MomentLayout]]:
    """Assemble the clique relaxation of order ``k``.

    Separator moments are duplicated per clique and tied together by
    equalities over every monomial of degree ``<= 2k`` on the separator,
    constant included; the single normalization on the root clique therefore
    propagates to all cliques of its tree. With ``share_moments`` the
    separator monomials reuse the parent clique's ids instead.
    """
    cons = pop.constraints
    for idx, con in enumerate(cons):
        if con.poly.degree > 2 * k:
            raise OrderTooSmall(
                f"constraint {idx} ({con.kind}, stage {con.stage}) has degree "
                f"{con.poly.degree} > 2k = {2 * k}"
            )
    builder = ProgramBuilder()
    layouts: list[MomentLayout | None] = [None] * len(dec.cliques)
    by_clique: dict[int, list[int]] = {}
    for idx, ci in dec.assignment.items():
        by_clique.setdefault(ci, []).append(idx)

    for ci, parent in _tree_order(dec, 0):
        clique = dec.cliques[ci]
        shared = None
        if share_moments and parent is not None:
            sep = set(clique) & set(dec.cliques[parent])
            shared = layouts[parent].restrict(sep)
        lay = MomentLayout(builder, clique, k, name=f"clique{ci + 1}", shared=shared)
        layouts[ci] = lay
        lay.add_moment_matrix()
        if parent is None:
            lay.normalize()
        elif not share_moments:
            sep = sorted(set(clique) & set(dec.cliques[parent]))
            plays = layouts[parent]
            for m in monomials_up_to(sep, 2 * k):
                builder.add_eq({plays.ids[m]: 1.0, lay.ids[m]: -1.0}, 0.0, "separator")
        for idx in by_clique.get(ci, []):
            con = cons[idx]
            if idx < len(pop.equalities):
                lay.add_ideal(con.poly, "lifting" if con.kind == "lift" else "stage-equality")
            else:
                lay.add_localizing(con.poly, label=f"{lay.name}:{con.kind}{con.stage}")
    builder.add_objective(layouts[dec.objective_clique].functional(pop.objective))
    return builder, layouts


def chord_chain(chain: CompositionChain, k: int = 3, share_moments: bool = False) -> Relaxation:
    pop = lift(chain)
    dec = chordal_cliques(build_graph(pop), pop)
    builder, layouts = assemble_chord(pop, dec, k, share_moments)
    builder.meta.update(hierarchy="chord", order=k)
    prog = builder.build()
    predicted = {}
    if len(set(chain.ranks[:-1])) <= 1 and all(w == 1 for w in chain.widths):
        r = chain.ranks[0]
        d = chain.degree
        if 2 * k >= d:
            block, overlap, lifting = predicted_chord_counts(r, k, d, chain.n)
            predicted = {"block": block, "separator": overlap, "lifting": lifting}
    return Relaxation("chord", k, prog, layouts, chain.sign, chain, pop, dec, predicted)
