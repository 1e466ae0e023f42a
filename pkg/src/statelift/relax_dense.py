"""Dense moment relaxation over all variables at once (small-n baseline)."""
from __future__ import annotations

import math
from typing import Sequence

from .chainmodel import CompositionChain, LiftedPOP, ball, expand_dense
from .conic import ConicProgram, ProgramBuilder
from .moments import MomentLayout, OrderTooSmall, Relaxation
from .polycore import Polynomial, substitute


def _poly(c) -> Polynomial:
    return c.poly if hasattr(c, "poly") else c


def min_order(objective: Polynomial, ineqs: Sequence = (), eqs: Sequence = ()) -> int:
    degs = [objective.degree] + [_poly(g).degree for g in ineqs] + [_poly(h).degree for h in eqs]
    return max(1, math.ceil(max(degs) / 2))


def _dense_layout(objective, ineqs, eqs, k, variables=None):
    ineqs = [_poly(g) for g in ineqs]
    eqs = [_poly(h) for h in eqs]
    need = min_order(objective, ineqs, eqs)
    if k < need:
        raise OrderTooSmall(f"dense relaxation needs order >= {need}, got {k}")
    if variables is None:
        support = set(objective.support())
        for p in ineqs + eqs:
            support |= p.support()
        variables = sorted(support)
    builder = ProgramBuilder()
    lay = MomentLayout(builder, variables, k, name="dense")
    lay.add_moment_matrix()
    for j, g in enumerate(ineqs):
        lay.add_localizing(g, label=f"dense:g{j}")
    for h in eqs:
        lay.add_ideal(h, "equality")
    lay.normalize()
    builder.add_objective(lay.functional(objective))
    builder.meta.update(hierarchy="dense", order=k)
    return builder, lay


def assemble_dense(
    objective: Polynomial,
    ineqs: Sequence = (),
    eqs: Sequence = (),
    k: int = 1,
    variables: Sequence[int] | None = None,
) -> ConicProgram:
    """Order-``k`` moment relaxation of ``min objective`` s.t. ``g >= 0``, ``h = 0``."""
    builder, _ = _dense_layout(objective, ineqs, eqs, k, variables)
    return builder.build()


def expanded_problem(chain: CompositionChain) -> tuple[Polynomial, list, list]:
    """Objective and constraints of a chain in the local variables only.

    The objective is already multiplied by ``chain.sign`` so it is always
    minimized. Stage constraints referencing states are composed with the
    dense state expressions.
    """
    space = chain.space
    bindings: dict[int, Polynomial] = {}
    for m in chain.maps:
        for l, f in enumerate(m.components, 1):
            bindings[space.id_of(m.stage, "s", l)] = substitute(f, bindings)
    p = expand_dense(chain)
    ineqs, eqs = [], []
    for i in range(1, chain.n + 1):
        ineqs.append(ball(space, chain.local_ids(i), chain.box_radii[i - 1]))
        for c in chain.stage_constraints(i):
            q = substitute(c.poly, bindings)
            (ineqs if c.sense == ">=0" else eqs).append(q)
    return p.scale(chain.sign), ineqs, eqs


def dense_chain(chain: CompositionChain, k: int | None = None, lifted: bool = False) -> Relaxation:
    """Dense relaxation of a chain.

    By default the chain is expanded into a polynomial in ``x``; with
    ``lifted=True`` the dense hierarchy is applied to the lifted problem in
    ``(x, s)`` instead. ``k=None`` selects the minimum admissible order.
    """
    if lifted:
        from .chainmodel import lift

        pop: LiftedPOP = lift(chain)
        objective = pop.objective
        ineqs = [c.poly for c in pop.inequalities]
        eqs = [c.poly for c in pop.equalities]
        variables = list(range(len(chain.space)))
    else:
        pop = None
        objective, ineqs, eqs = expanded_problem(chain)
        variables = chain.x_ids
    if k is None:
        k = min_order(objective, ineqs, eqs)
    builder, lay = _dense_layout(objective, ineqs, eqs, k, variables)
    prog = builder.build()
    predicted = {"block": math.comb(len(variables) + k, k)}
    return Relaxation("dense", k, prog, [lay], chain.sign, chain, pop, None, predicted)
