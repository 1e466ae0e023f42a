"""Sparse multivariate polynomials over a declared variable space.

Monomials are stored as tuples of ``(variable_id, exponent)`` pairs sorted by
variable id, with no zero exponents. Polynomials map such tuples to float
coefficients. All objects are treated as immutable once built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

MultiIndex = tuple  # tuple[tuple[int, int], ...]

ONE: MultiIndex = ()

PRUNE_THRESHOLD = 1e-14


class VariableSpaceMismatch(ValueError):
    pass


class UnboundVariable(KeyError):
    pass


@dataclass(frozen=True)
class Variable:
    id: int
    stage: int
    kind: str  # "x" (local) or "s" (state)
    component: int  # 1-based within the stage

    @property
    def name(self) -> str:
        return f"{self.kind}[{self.stage}][{self.component}]"


class VariableSpace:
    """Ordered variable descriptors with dense integer ids.

    Chain spaces are laid out stage-major: ``x[1], s[1], x[2], s[2], ...``,
    so that inside any clique the previous state precedes the local
    variables, which precede the new state.
    """

    def __init__(self, variables: Sequence[Variable]):
        self.variables = tuple(variables)
        for expected, v in enumerate(self.variables):
            if v.id != expected:
                raise ValueError("variable ids must be contiguous from 0")
        self._by_key = {(v.stage, v.kind, v.component): v.id for v in self.variables}
        if len(self._by_key) != len(self.variables):
            raise ValueError("duplicate (stage, kind, component) triple")
        self._by_name = {v.name: v.id for v in self.variables}

    @classmethod
    def for_chain(cls, ranks: Sequence[int], widths: Sequence[int] | None = None) -> "VariableSpace":
        """Space for a chain with state dimensions ``ranks = (r_1, ..., r_n)``."""
        n = len(ranks)
        widths = [1] * n if widths is None else list(widths)
        if len(widths) != n:
            raise ValueError("need one local width per stage")
        out = []
        for i in range(1, n + 1):
            for j in range(1, widths[i - 1] + 1):
                out.append(Variable(len(out), i, "x", j))
            for l in range(1, ranks[i - 1] + 1):
                out.append(Variable(len(out), i, "s", l))
        return cls(out)

    def __len__(self) -> int:
        return len(self.variables)

    def __iter__(self):
        return iter(self.variables)

    def id_of(self, stage: int, kind: str, component: int) -> int:
        return self._by_key[(stage, kind, component)]

    def id_by_name(self, name: str) -> int:
        return self._by_name[name.replace(" ", "")]

    def name(self, vid: int) -> str:
        return self.variables[vid].name

    def stage_vars(self, stage: int, kind: str) -> list[int]:
        return [v.id for v in self.variables if v.stage == stage and v.kind == kind]

    def var(self, vid: int) -> "Polynomial":
        return Polynomial.variable(self, vid)

    def x(self, stage: int, component: int = 1) -> "Polynomial":
        return self.var(self.id_of(stage, "x", component))

    def s(self, stage: int, component: int = 1) -> "Polynomial":
        return self.var(self.id_of(stage, "s", component))

    def const(self, c: float) -> "Polynomial":
        return Polynomial.constant(self, c)

    def zero(self) -> "Polynomial":
        return Polynomial(self, {})


# ---------------------------------------------------------------- monomials

def mono_degree(m: MultiIndex) -> int:
    return sum(e for _, e in m)


def mono_mul(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for v, e in b:
        d[v] = d.get(v, 0) + e
    return tuple(sorted(d.items()))


def mono_vars(m: MultiIndex) -> tuple[int, ...]:
    return tuple(v for v, _ in m)


def grlex_key(m: MultiIndex):
    """Sort key: total degree first, then larger exponent on lower ids first."""
    return (mono_degree(m), tuple((v, -e) for v, e in m))


def monomials_up_to(variables: Iterable[int], k: int) -> list[MultiIndex]:
    """All monomials over ``variables`` of total degree at most ``k``, grlex."""
    vs = sorted(set(variables))
    out: list[MultiIndex] = []
    for d in range(k + 1):
        for combo in combinations_with_replacement(vs, d):
            exps: dict[int, int] = {}
            for v in combo:
                exps[v] = exps.get(v, 0) + 1
            out.append(tuple(sorted(exps.items())))
    return out


def n_monomials(nvars: int, k: int) -> int:
    return math.comb(nvars + k, k)


# -------------------------------------------------------------- polynomials

class Polynomial:
    __slots__ = ("space", "terms")

    def __init__(self, space: VariableSpace, terms: Mapping[MultiIndex, float] | None = None):
        self.space = space
        self.terms: dict[MultiIndex, float] = {
            m: float(c) for m, c in (terms or {}).items() if c != 0.0
        }

    @classmethod
    def constant(cls, space: VariableSpace, c: float) -> "Polynomial":
        return cls(space, {ONE: c})

    @classmethod
    def variable(cls, space: VariableSpace, vid: int) -> "Polynomial":
        if not 0 <= vid < len(space):
            raise IndexError(vid)
        return cls(space, {((vid, 1),): 1.0})

    # -- structure
    @property
    def degree(self) -> int:
        return max((mono_degree(m) for m in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def support(self) -> set[int]:
        return {v for m in self.terms for v, _ in m}

    def constant_term(self) -> float:
        return self.terms.get(ONE, 0.0)

    def sorted_terms(self) -> list[tuple[MultiIndex, float]]:
        return sorted(self.terms.items(), key=lambda t: grlex_key(t[0]))

    def pruned(self, threshold: float = PRUNE_THRESHOLD) -> "Polynomial":
        return Polynomial(self.space, {m: c for m, c in self.terms.items() if abs(c) > threshold})

    # -- arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.space is not self.space:
                raise VariableSpaceMismatch("polynomials live in different variable spaces")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.space, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.space, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, a: float) -> "Polynomial":
        if a == 0:
            return Polynomial(self.space, {})
        return Polynomial(self.space, {m: a * c for m, c in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[MultiIndex, float] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = mono_mul(m1, m2)
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(self.space, out)

    __rmul__ = __mul__

    def __pow__(self, e: int) -> "Polynomial":
        if e < 0:
            raise ValueError("negative power")
        result = Polynomial.constant(self.space, 1.0)
        base = self
        while e:
            if e & 1:
                result = result * base
            e >>= 1
            if e:
                base = base * base
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.space is other.space and self.terms == other.terms

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(m, 0.0) - other.terms.get(m, 0.0)) <= atol for m in keys)

    def diff(self, vid: int) -> "Polynomial":
        out: dict[MultiIndex, float] = {}
        for m, c in self.terms.items():
            d = dict(m)
            e = d.get(vid, 0)
            if e == 0:
                continue
            if e == 1:
                del d[vid]
            else:
                d[vid] = e - 1
            key = tuple(sorted(d.items()))
            out[key] = out.get(key, 0.0) + c * e
        return Polynomial(self.space, out)

    # -- evaluation
    def __call__(self, point):
        return evaluate(self, point)

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms():
            mono = "*".join(
                self.space.name(v) + (f"^{e}" if e > 1 else "") for v, e in m
            )
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return " ".join(parts)


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def scale(p: Polynomial, a: float) -> Polynomial:
    return p.scale(a)


def multiply(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def evaluate(p: Polynomial, point) -> float | np.ndarray:
    """Evaluate ``p`` at ``point``.

    ``point`` is a mapping ``variable_id -> value`` or a sequence indexed by
    variable id. Values may be numpy arrays for batched evaluation.
    """
    total = 0.0
    for m, c in p.terms.items():
        term = c
        for v, e in m:
            try:
                val = point[v]
            except (KeyError, IndexError):
                raise UnboundVariable(p.space.name(v)) from None
            term = term * (val if e == 1 else val ** e)
        total = total + term
    return total


def substitute(p: Polynomial, bindings: Mapping[int, Polynomial]) -> Polynomial:
    """Compose ``p`` with ``bindings``; unbound variables pass through.

    Bound images may themselves mention bound variables (``s_2 -> s_1^2 +
    x_2``, ``s_1 -> x_1``); they are resolved recursively, so the bindings
    must not be cyclic.
    """
    space = p.space
    resolved: dict[int, Polynomial] = {}
    active: set[int] = set()
    cache: dict[tuple[int, int], Polynomial] = {}

    def image(v: int) -> Polynomial:
        if v not in resolved:
            if v in active:
                raise ValueError(f"cyclic binding through {space.name(v)}")
            active.add(v)
            target = bindings[v]
            if target.support() & bindings.keys():
                target = compose(target)
            resolved[v] = target
            active.discard(v)
        return resolved[v]

    def power(v: int, e: int) -> Polynomial:
        key = (v, e)
        if key not in cache:
            base = image(v) if v in bindings else space.var(v)
            cache[key] = base if e == 1 else base ** e
        return cache[key]

    def compose(q: Polynomial) -> Polynomial:
        out = space.zero()
        for m, c in q.terms.items():
            term = Polynomial.constant(space, c)
            for v, e in m:
                term = term * power(v, e)
            out = out + term
        return out

    return compose(p)


def power_product(fs: Sequence[Polynomial], alpha: Sequence[int]) -> Polynomial:
    """Return ``prod_l fs[l] ** alpha[l]``."""
    if len(fs) != len(alpha):
        raise ValueError("alpha needs one slot per polynomial")
    if not fs:
        raise ValueError("need at least one polynomial")
    out = Polynomial.constant(fs[0].space, 1.0)
    for f, a in zip(fs, alpha):
        if a:
            out = out * (f ** a)
    return out
