"""Composition chains ``s_i = F_i(s_{i-1}, x_i)`` and tensor trains."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .polycore import (
    Polynomial,
    VariableSpace,
    substitute,
)

log = logging.getLogger(__name__)

INFLATION = 1.01
DENSE_TERM_CAP = 10**6


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class StageMap:
    stage: int
    components: tuple  # tuple[Polynomial, ...], F_{i,1..r_i}

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(f.degree for f in self.components)

    @property
    def rank(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class StageConstraint:
    stage: int
    poly: Polynomial
    sense: str = ">=0"  # or "==0"

    def __post_init__(self):
        if self.sense not in (">=0", "==0"):
            raise ChainError(f"unknown constraint sense {self.sense!r}")


class CompositionChain:
    """A chain ``s_1 = F_1(x_1), s_i = F_i(s_{i-1}, x_i), p(x) = s_n``.

    Parameters
    ----------
    space : VariableSpace
        Built with :meth:`VariableSpace.for_chain` from the rank profile.
    maps : list of list of Polynomial
        ``maps[i-1][l-1]`` is ``F_{i,l}``; it may reference ``s_{i-1}`` and
        ``x_i`` only.
    constraints : list of StageConstraint
        Local constraints over ``(s_{i-1}, x_i)``.
    box_radii : sequence of float
        ``M_i``. Each ``x_i`` lives in the ball ``||x_i|| <= M_i`` (the box
        ``[-M_i, M_i]`` for scalar locals).
    state_radii : sequence of float, optional
        User-supplied ``R_i``; entries may be ``None`` to derive them.
    sense : {"min", "max"}
    """

    def __init__(
        self,
        space: VariableSpace,
        maps: Sequence[Sequence[Polynomial]],
        constraints: Sequence[StageConstraint] = (),
        box_radii: Sequence[float] | float = 1.0,
        state_radii: Sequence[float | None] | None = None,
        sense: str = "min",
        metadata: dict | None = None,
    ):
        self.space = space
        self.n = len(maps)
        self.maps = tuple(StageMap(i + 1, tuple(fs)) for i, fs in enumerate(maps))
        self.ranks = tuple(m.rank for m in self.maps)
        self.widths = tuple(len(space.stage_vars(i, "x")) for i in range(1, self.n + 1))
        self.constraints = tuple(constraints)
        if np.isscalar(box_radii):
            box_radii = [float(box_radii)] * self.n
        self.box_radii = tuple(float(m) for m in box_radii)
        self.user_state_radii = (
            tuple(state_radii) if state_radii is not None else (None,) * self.n
        )
        self.sense = sense
        self.metadata = dict(metadata or {})
        self._state_radii = None
        self._validate()

    # ------------------------------------------------------------ validation
    def _validate(self):
        if self.n < 1:
            raise ChainError("chain needs at least one stage")
        if self.ranks[-1] != 1:
            raise ChainError("last stage must map to a scalar (r_n = 1)")
        if any(r < 1 for r in self.ranks):
            raise ChainError("every stage needs at least one state component")
        if len(self.box_radii) != self.n or any(m <= 0 for m in self.box_radii):
            raise ChainError("need one positive box radius per stage")
        if len(self.user_state_radii) != self.n:
            raise ChainError("need one state radius entry per stage")
        if any(r is not None and r <= 0 for r in self.user_state_radii):
            raise ChainError("state radii must be positive")
        if self.sense not in ("min", "max"):
            raise ChainError("objective sense must be 'min' or 'max'")
        expected = VariableSpace.for_chain(self.ranks, self.widths)
        if [v for v in expected] != [v for v in self.space]:
            raise ChainError("variable space does not match the rank profile")
        for m in self.maps:
            allowed = set(self.local_ids(m.stage)) | set(self.state_ids(m.stage - 1))
            for l, f in enumerate(m.components, 1):
                if f.space is not self.space:
                    raise ChainError(f"F[{m.stage}][{l}] uses a foreign variable space")
                bad = f.support() - allowed
                if bad:
                    names = ", ".join(self.space.name(v) for v in sorted(bad))
                    raise ChainError(f"F[{m.stage}][{l}] references {names}")
        for c in self.constraints:
            if not 1 <= c.stage <= self.n:
                raise ChainError(f"constraint stage {c.stage} out of range")
            allowed = set(self.local_ids(c.stage)) | set(self.state_ids(c.stage - 1))
            bad = c.poly.support() - allowed
            if bad:
                names = ", ".join(self.space.name(v) for v in sorted(bad))
                raise ChainError(f"stage-{c.stage} constraint references {names}")

    # --------------------------------------------------------------- helpers
    def local_ids(self, stage: int) -> list[int]:
        if stage < 1:
            return []
        return self.space.stage_vars(stage, "x")

    def state_ids(self, stage: int) -> list[int]:
        if stage < 1:
            return []
        return self.space.stage_vars(stage, "s")

    @property
    def x_ids(self) -> list[int]:
        return [i for st in range(1, self.n + 1) for i in self.local_ids(st)]

    @property
    def degree(self) -> int:
        return max(max(m.degrees) for m in self.maps)

    def stage_constraints(self, stage: int, sense: str | None = None) -> list[StageConstraint]:
        return [
            c for c in self.constraints
            if c.stage == stage and (sense is None or c.sense == sense)
        ]

    @property
    def sign(self) -> float:
        """Multiplier turning the objective into a minimization."""
        return 1.0 if self.sense == "min" else -1.0

    @property
    def state_radii(self) -> tuple[float, ...]:
        if self._state_radii is None:
            self._state_radii = tuple(derive_state_bounds(self))
        return self._state_radii

    def with_metadata(self, **kw) -> "CompositionChain":
        self.metadata.update(kw)
        return self

    def __repr__(self) -> str:
        return f"CompositionChain(n={self.n}, ranks={self.ranks}, sense={self.sense!r})"


@dataclass
class TTCores:
    """Matrix-polynomial cores ``P_i(x_i)`` of shape ``r_{i-1} x r_i``.

    ``coeffs[i]`` is an array of shape ``(r_{i-1}, r_i, a_i)`` holding the
    monomial coefficients of each entry (``a_i = degree + 1``).
    """

    coeffs: list

    def __post_init__(self):
        self.coeffs = [np.asarray(c, dtype=float) for c in self.coeffs]
        if not self.coeffs:
            raise ChainError("need at least one core")
        for c in self.coeffs:
            if c.ndim != 3:
                raise ChainError("each core needs shape (r_prev, r_next, degree+1)")
        if self.coeffs[0].shape[0] != 1 or self.coeffs[-1].shape[1] != 1:
            raise ChainError("boundary ranks must be 1")
        for a, b in zip(self.coeffs, self.coeffs[1:]):
            if a.shape[1] != b.shape[0]:
                raise ChainError("adjacent core shapes are incompatible")

    @property
    def n(self) -> int:
        return len(self.coeffs)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.coeffs)

    def core_at(self, i: int, x: float) -> np.ndarray:
        c = self.coeffs[i]
        powers = x ** np.arange(c.shape[2])
        return c @ powers

    def evaluate(self, x: Sequence[float]) -> float:
        out = np.ones((1, 1))
        for i, xi in enumerate(x):
            out = out @ self.core_at(i, xi)
        return float(out[0, 0])


# ------------------------------------------------------------------ building

def chain_from_tt(
    tt: TTCores,
    box_radii: Sequence[float] | float = 1.0,
    constraints=None,
    sense: str = "min",
    metadata: dict | None = None,
    state_radii: Sequence[float | None] | None = None,
) -> CompositionChain:
    """Row-vector chain ``s_i = s_{i-1} P_i(x_i)``."""
    space = VariableSpace.for_chain(tt.ranks)
    maps = []
    for i, c in enumerate(tt.coeffs, start=1):
        x = space.x(i)
        xpow = [space.const(1.0)]
        for _ in range(1, c.shape[2]):
            xpow.append(xpow[-1] * x)
        prev = [space.const(1.0)] if i == 1 else [space.s(i - 1, l) for l in range(1, c.shape[0] + 1)]
        comps = []
        for col in range(c.shape[1]):
            f = space.zero()
            for row in range(c.shape[0]):
                entry = space.zero()
                for a in range(c.shape[2]):
                    if c[row, col, a] != 0.0:
                        entry = entry + xpow[a].scale(c[row, col, a])
                if not entry.is_zero():
                    f = f + prev[row] * entry
            comps.append(f)
        maps.append(comps)
    if constraints is None:
        constraints = []
    elif callable(constraints):
        constraints = constraints(space)
    return CompositionChain(space, maps, constraints, box_radii, state_radii, sense, metadata)


def expand_dense(chain: CompositionChain, cap: int = DENSE_TERM_CAP) -> Polynomial:
    """Expand the chain into a polynomial in the local variables only."""
    space = chain.space
    bindings: dict[int, Polynomial] = {}
    for m in chain.maps:
        new = {}
        for l, f in enumerate(m.components, 1):
            g = substitute(f, bindings)
            if len(g.terms) > cap:
                raise ChainError(f"dense expansion exceeds {cap} terms at stage {m.stage}")
            new[space.id_of(m.stage, "s", l)] = g
        bindings = {**bindings, **new}
        # estimate for the next stage: product of term counts of the largest power used
        if m.stage < chain.n:
            nxt = chain.maps[m.stage]
            est = 0
            for f in nxt.components:
                for mono in f.terms:
                    t = 1
                    for v, e in mono:
                        if v in new:
                            t *= math.comb(len(new[v].terms) + e - 1, e)
                    est += t
            if est > cap:
                raise ChainError(f"dense expansion estimate {est} exceeds cap {cap}")
    return bindings[space.id_of(chain.n, "s", 1)]


def eval_chain(chain: CompositionChain, x) -> tuple:
    """Propagate ``x`` through the chain.

    ``x`` is a sequence of per-stage local values (scalars or length-``m_i``
    arrays; trailing batch dimensions are allowed) or a mapping from local
    variable id to value. Returns ``(value, states)`` with ``states[i-1]`` a
    list of the ``r_i`` components of ``s_i``.
    """
    point: dict[int, Any] = {}
    if isinstance(x, dict):
        point.update(x)
    else:
        for i, xi in enumerate(x, start=1):
            ids = chain.local_ids(i)
            if len(ids) == 1:
                point[ids[0]] = xi
            else:
                for j, vid in enumerate(ids):
                    point[vid] = xi[j]
    for i in range(1, chain.n + 1):
        for vid in chain.local_ids(i):
            val = np.asarray(point[vid])
            if np.any(np.abs(val) > chain.box_radii[i - 1] * (1 + 1e-12)):
                log.warning("local variable %s outside its box", chain.space.name(vid))
    states = []
    for m in chain.maps:
        vals = [f(point) for f in m.components]
        for l, v in enumerate(vals, 1):
            point[chain.space.id_of(m.stage, "s", l)] = v
        states.append(vals)
    return states[-1][0], states


def full_point(chain: CompositionChain, x) -> dict:
    """Variable-id -> value map including the propagated states."""
    _, states = eval_chain(chain, x)
    point = {}
    if isinstance(x, dict):
        point.update(x)
    else:
        for i, xi in enumerate(x, start=1):
            ids = chain.local_ids(i)
            vals = [xi] if len(ids) == 1 else [xi[j] for j in range(len(ids))]
            for vid, v in zip(ids, vals):
                point[vid] = v
    for i, comps in enumerate(states, start=1):
        for l, v in enumerate(comps, 1):
            point[chain.space.id_of(i, "s", l)] = v
    return point


# -------------------------------------------------------------------- bounds

def _ipow(lo: float, hi: float, e: int) -> tuple[float, float]:
    if e == 0:
        return 1.0, 1.0
    a, b = lo**e, hi**e
    if e % 2 == 0:
        if lo <= 0.0 <= hi:
            return 0.0, max(a, b)
        return min(a, b), max(a, b)
    return a, b


def _imul(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    p = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return min(p), max(p)


def interval_eval(p: Polynomial, boxes: dict[int, tuple[float, float]]) -> tuple[float, float]:
    lo = hi = 0.0
    for m, c in p.terms.items():
        t = (1.0, 1.0)
        for v, e in m:
            t = _imul(t, _ipow(*boxes[v], e))
        t = _imul((c, c), t)
        lo += t[0]
        hi += t[1]
    return lo, hi


def derive_state_bounds(chain: CompositionChain) -> list[float]:
    """Sound radii ``R_i`` with ``||s_i|| <= R_i`` on the local boxes.

    Component intervals are propagated stage by stage with interval
    arithmetic; ``R_i`` is the norm of the component magnitudes times 1.01.
    A user-supplied ``R_i`` replaces the derived one and clips the component
    intervals used further down the chain.
    """
    boxes: dict[int, tuple[float, float]] = {}
    radii = []
    for m in chain.maps:
        i = m.stage
        M = chain.box_radii[i - 1]
        for vid in chain.local_ids(i):
            boxes[vid] = (-M, M)
        mags = []
        for l, f in enumerate(m.components, 1):
            lo, hi = interval_eval(f, boxes)
            boxes[chain.space.id_of(i, "s", l)] = (lo, hi)
            mags.append(max(abs(lo), abs(hi)))
        user = chain.user_state_radii[i - 1]
        if user is not None:
            radii.append(float(user))
            for l in range(1, m.rank + 1):
                vid = chain.space.id_of(i, "s", l)
                lo, hi = boxes[vid]
                boxes[vid] = (max(lo, -user), min(hi, user))
        else:
            radii.append(INFLATION * math.sqrt(sum(v * v for v in mags)) or INFLATION * 1e-12)
    return radii


# ---------------------------------------------------------------- lifted POP

@dataclass(frozen=True)
class Constraint:
    poly: Polynomial
    stage: int
    kind: str  # "lift", "stage", "ball_x", "ball_s"
    component: int = 0


@dataclass
class LiftedPOP:
    space: VariableSpace
    objective: Polynomial
    equalities: list = field(default_factory=list)
    inequalities: list = field(default_factory=list)
    sign: float = 1.0
    chain: CompositionChain | None = None

    @property
    def constraints(self) -> list:
        return list(self.equalities) + list(self.inequalities)

    def lifting_equalities(self) -> list:
        return [c for c in self.equalities if c.kind == "lift"]


def ball(space: VariableSpace, ids: Sequence[int], radius: float) -> Polynomial:
    p = Polynomial.constant(space, radius * radius)
    for v in ids:
        p = p - space.var(v) * space.var(v)
    return p


def lift(chain: CompositionChain) -> LiftedPOP:
    space = chain.space
    eqs, ineqs = [], []
    R = chain.state_radii
    for m in chain.maps:
        i = m.stage
        for l, f in enumerate(m.components, 1):
            eqs.append(Constraint(space.s(i, l) - f, i, "lift", l))
        for c in chain.stage_constraints(i):
            (ineqs if c.sense == ">=0" else eqs).append(Constraint(c.poly, i, "stage"))
        ineqs.append(Constraint(ball(space, chain.local_ids(i), chain.box_radii[i - 1]), i, "ball_x"))
        ineqs.append(Constraint(ball(space, chain.state_ids(i), R[i - 1]), i, "ball_s"))
    obj = space.s(chain.n, 1).scale(chain.sign)
    return LiftedPOP(space, obj, eqs, ineqs, chain.sign, chain)


# ------------------------------------------------------------- problem files

_VAR_RE = re.compile(r"^([xs])\[(\d+)\]\[(\d+)\]$")


def poly_to_json(p: Polynomial) -> list:
    out = []
    for m, c in p.sorted_terms():
        out.append({"exponents": {p.space.name(v): e for v, e in m}, "coeff": c})
    return out


def poly_from_json(space: VariableSpace, terms: list, where: str = "") -> Polynomial:
    out = {}
    for t_idx, t in enumerate(terms):
        try:
            exps = t.get("exponents", {})
            coeff = float(t["coeff"])
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise ChainError(f"{where}[{t_idx}]: malformed term ({exc})") from None
        mono = {}
        for name, e in exps.items():
            key = name.replace(" ", "")
            if not _VAR_RE.match(key):
                raise ChainError(f"{where}[{t_idx}]: bad variable name {name!r}")
            try:
                vid = space.id_by_name(key)
            except KeyError:
                raise ChainError(f"{where}[{t_idx}]: unknown variable {name!r}") from None
            if int(e) < 0:
                raise ChainError(f"{where}[{t_idx}]: negative exponent")
            if int(e):
                mono[vid] = mono.get(vid, 0) + int(e)
        key = tuple(sorted(mono.items()))
        out[key] = out.get(key, 0.0) + coeff
    return Polynomial(space, out)


def chain_to_dict(chain: CompositionChain) -> dict:
    stages = []
    for m in chain.maps:
        stages.append({
            "F": [poly_to_json(f) for f in m.components],
            "constraints": [
                {"poly": poly_to_json(c.poly), "sense": c.sense}
                for c in chain.stage_constraints(m.stage)
            ],
        })
    doc = {
        "n": chain.n,
        "ranks": list(chain.ranks),
        "local_widths": list(chain.widths),
        "stages": stages,
        "box_radii": list(chain.box_radii),
        "objective_sense": chain.sense,
    }
    if any(r is not None for r in chain.user_state_radii):
        doc["state_radii"] = list(chain.user_state_radii)
    if chain.metadata:
        doc["metadata"] = chain.metadata
    return doc


def chain_from_dict(doc: dict) -> CompositionChain:
    try:
        n = int(doc["n"])
        ranks = [int(r) for r in doc["ranks"]]
        stages = doc["stages"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ChainError(f"problem file: missing or malformed field {exc}") from None
    widths = [int(w) for w in doc.get("local_widths", [1] * n)]
    if len(ranks) != n or len(stages) != n or len(widths) != n:
        raise ChainError("problem file: 'ranks', 'local_widths' and 'stages' need n entries")
    space = VariableSpace.for_chain(ranks, widths)
    maps, cons = [], []
    for i, st in enumerate(stages, start=1):
        try:
            F = st["F"]
        except (KeyError, TypeError):
            raise ChainError(f"problem file: stages[{i - 1}].F missing") from None
        maps.append([poly_from_json(space, f, f"stages[{i - 1}].F[{l}]") for l, f in enumerate(F)])
        for j, c in enumerate(st.get("constraints", [])):
            poly = poly_from_json(space, c.get("poly", []), f"stages[{i - 1}].constraints[{j}]")
            cons.append(StageConstraint(i, poly, c.get("sense", ">=0")))
    return CompositionChain(
        space,
        maps,
        cons,
        doc.get("box_radii", 1.0),
        doc.get("state_radii"),
        doc.get("objective_sense", "min"),
        doc.get("metadata"),
    )


def save_chain(chain: CompositionChain, path) -> None:
    with open(path, "w") as fh:
        json.dump(chain_to_dict(chain), fh, indent=1)


def load_chain(path) -> CompositionChain:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ChainError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return chain_from_dict(doc)
