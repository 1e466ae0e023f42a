"""Truncated moment sequences, moment and localizing matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from .conic import ConicProgram, ProgramBuilder
from .polycore import ONE, MultiIndex, Polynomial, mono_degree, mono_mul, monomials_up_to


class OrderTooSmall(ValueError):
    pass


def half_degree(p: Polynomial) -> int:
    return math.ceil(p.degree / 2)


class MomentLayout:
    """Moment sequence ``y`` over ``variables`` up to degree ``2 * order``.

    Every monomial of the truncated basis gets its own scalar id in the
    builder unless ``shared`` already provides one, which is how separator
    moments are deduplicated between neighbouring cliques.
    """

    def __init__(
        self,
        builder: ProgramBuilder,
        variables: Sequence[int],
        order: int,
        name: str = "",
        shared: dict[MultiIndex, int] | None = None,
    ):
        self.builder = builder
        self.variables = tuple(sorted(variables))
        self.order = order
        self.name = name
        self._vset = set(self.variables)
        self.ids: dict[MultiIndex, int] = {}
        shared = shared or {}
        for m in monomials_up_to(self.variables, 2 * order):
            self.ids[m] = shared[m] if m in shared else builder.new_var((name, m))
        self.moment_block: int | None = None
        self.localizing_blocks: list[int] = []

    def __contains__(self, mono: MultiIndex) -> bool:
        return mono in self.ids

    def covers(self, p: Polynomial) -> bool:
        return p.support() <= self._vset

    def functional(self, p: Polynomial, scale: float = 1.0) -> dict[int, float]:
        """Linear form ``L_y(p)`` as ``{scalar_id: coef}``."""
        out: dict[int, float] = {}
        for m, c in p.terms.items():
            try:
                v = self.ids[m]
            except KeyError:
                raise OrderTooSmall(
                    f"{self.name}: monomial of degree {mono_degree(m)} exceeds 2k = {2 * self.order}"
                ) from None
            out[v] = out.get(v, 0.0) + scale * c
        return out

    def localizing_entries(self, g: Polynomial | None, order: int) -> tuple[dict, list]:
        basis = monomials_up_to(self.variables, order)
        gterms = [(ONE, 1.0)] if g is None else list(g.terms.items())
        entries = {}
        for i, bi in enumerate(basis):
            for j in range(i, len(basis)):
                bij = mono_mul(bi, basis[j])
                expr: dict[int, float] = {}
                for m, c in gterms:
                    key = mono_mul(m, bij)
                    try:
                        v = self.ids[key]
                    except KeyError:
                        raise OrderTooSmall(f"{self.name}: localizing matrix needs a higher order") from None
                    expr[v] = expr.get(v, 0.0) + c
                entries[(i, j)] = expr
        return entries, basis

    def add_moment_matrix(self, label: str | None = None) -> int:
        entries, basis = self.localizing_entries(None, self.order)
        self.moment_block = self.builder.add_block(len(basis), entries, label or f"{self.name}:moment", basis)
        return self.moment_block

    def add_localizing(self, g: Polynomial, label: str = "") -> int | None:
        """``M_{k - d}(g y) >= 0`` with ``d = ceil(deg g / 2)``."""
        d = half_degree(g)
        if d > self.order:
            raise OrderTooSmall(f"{self.name}: constraint of degree {g.degree} needs order >= {d}")
        entries, basis = self.localizing_entries(g, self.order - d)
        blk = self.builder.add_block(len(basis), entries, label or f"{self.name}:localizing")
        self.localizing_blocks.append(blk)
        return blk

    def add_ideal(self, h: Polynomial, group: str) -> int:
        """``L_y(q h) = 0`` for every monomial ``q`` with ``deg(q h) <= 2k``."""
        dh = h.degree
        if dh > 2 * self.order:
            raise OrderTooSmall(f"{self.name}: equality of degree {dh} needs order >= {math.ceil(dh / 2)}")
        added = 0
        for q in monomials_up_to(self.variables, 2 * self.order - dh):
            row: dict[int, float] = {}
            for m, c in h.terms.items():
                v = self.ids[mono_mul(q, m)]
                row[v] = row.get(v, 0.0) + c
            added += self.builder.add_eq(row, 0.0, group, scope=self.name)
        return added

    def restrict(self, variables: Sequence[int]) -> dict[MultiIndex, int]:
        """Ids of the monomials supported on ``variables``."""
        vs = set(variables)
        return {m: v for m, v in self.ids.items() if all(w in vs for w, _ in m)}

    def normalize(self) -> None:
        self.builder.add_eq({self.ids[ONE]: 1.0}, 1.0, "normalization")

    def first_moments(self, y) -> dict[int, float]:
        return {v: float(y[self.ids[((v, 1),)]]) for v in self.variables}

    def value(self, p: Polynomial, y) -> float:
        return float(sum(c * y[v] for v, c in self.functional(p).items()))

    def dirac(self, point) -> dict[int, float]:
        """Scalar assignment of the Dirac moment vector at ``point``."""
        out = {}
        for m, v in self.ids.items():
            val = 1.0
            for var, e in m:
                val *= point[var] ** e
            out[v] = val
        return out


@dataclass
class Relaxation:
    """An assembled relaxation together with the bookkeeping to read it back.

    ``program`` always minimizes; ``sign`` maps its optimal value back to the
    user's objective sense (``bound = sign * value``).
    """

    hierarchy: str
    order: int
    program: ConicProgram
    layouts: list
    sign: float = 1.0
    chain: Any = None
    pop: Any = None
    decomposition: Any = None
    predicted: dict = field(default_factory=dict)

    def bound(self, res) -> float:
        return self.sign * res.objective

    @property
    def largest_block(self) -> int:
        return self.program.largest_block

    @property
    def n_constraints(self) -> int:
        return self.program.n_eq
