"""Assemble, solve and report in one call."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

from .chainmodel import CompositionChain
from .conic import SolveOptions, SolveResult, solve
from .moments import Relaxation
from .relax_chord import chord_chain
from .relax_dense import dense_chain
from .relax_push import push_chain

HIERARCHIES = ("dense", "chord", "push")


@dataclass
class RunReport:
    family: str
    n: int
    seed: str
    hierarchy: str
    order: int
    bound: float
    status: str
    wall_time: float
    assembly_time: float
    block_size: int
    constraints: int
    n_blocks: int
    extraction: str = ""

    FIELDS = (
        "family", "n", "seed", "hierarchy", "order", "bound", "status",
        "wall_time", "assembly_time", "block_size", "constraints", "n_blocks", "extraction",
    )

    def row(self) -> dict:
        d = asdict(self)
        d["bound"] = f"{self.bound:.9f}" if math.isfinite(self.bound) else "nan"
        d["wall_time"] = f"{self.wall_time:.3f}"
        d["assembly_time"] = f"{self.assembly_time:.3f}"
        return d


def relax(chain: CompositionChain, hierarchy: str, order: int | None = None, **kw) -> Relaxation:
    if hierarchy == "dense":
        return dense_chain(chain, order, lifted=kw.get("lifted", False))
    if hierarchy == "chord":
        return chord_chain(chain, 3 if order is None else order, kw.get("share_moments", False))
    if hierarchy == "push":
        return push_chain(chain, 3 if order is None else order)
    raise ValueError(f"unknown hierarchy {hierarchy!r}; choose from {', '.join(HIERARCHIES)}")


@dataclass
class Solved:
    relaxation: Relaxation
    result: SolveResult
    report: RunReport
    bound: float = field(init=False)

    def __post_init__(self):
        self.bound = self.report.bound


def solve_chain(
    chain: CompositionChain,
    hierarchy: str,
    order: int | None = None,
    opts: SolveOptions | None = None,
    **kw,
) -> Solved:
    """Relax ``chain`` with ``hierarchy`` at ``order`` and solve.

    The reported bound is in the chain's own sense: a lower bound for
    minimization, an upper bound for maximization.
    """
    t0 = time.perf_counter()
    rel = relax(chain, hierarchy, order, **kw)
    t_asm = time.perf_counter() - t0
    res = solve(rel.program, opts)
    bound = rel.bound(res) if res.ok else math.nan
    meta = chain.metadata
    report = RunReport(
        family=str(meta.get("family", "file")),
        n=chain.n,
        seed=str(meta.get("seed", "")),
        hierarchy=hierarchy,
        order=rel.order,
        bound=bound,
        status=res.status,
        wall_time=res.wall_time,
        assembly_time=t_asm,
        block_size=rel.program.largest_block,
        constraints=rel.program.n_eq,
        n_blocks=len(rel.program.blocks),
    )
    return Solved(rel, res, report)
