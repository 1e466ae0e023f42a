"""Solver-agnostic conic programs in moment (linear-matrix-inequality) form.

A program has free scalar variables ``y``, PSD blocks whose entries are
affine in ``y``, sparse linear equalities ``A y = b`` and a linear objective
``c . y + c0`` to be minimized::

    minimize    c . y + c0
    subject to  F_b(y) = F_b0 + sum_j F_bj y_j  is PSD   for every block b
                A y = b

This is the SDPA "primal" form with ``x = y``, so export to ``.dat-s`` is a
direct transcription (see :func:`export_sdpa`).
"""
from __future__ import annotations

import math
import os
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
DEFAULT_TIME_LIMIT = 300.0

OK_STATUSES = ("optimal", "near-optimal")


# ------------------------------------------------------------------- program

@dataclass
class PSDBlock:
    dim: int
    rows: np.ndarray  # entry row, row <= col
    cols: np.ndarray
    vars: np.ndarray  # scalar id, -1 for the constant part
    coefs: np.ndarray
    label: str = ""
    basis: list | None = None  # monomial labels for moment blocks

    def matrix(self, y: np.ndarray) -> np.ndarray:
        vals = self.coefs * np.where(self.vars >= 0, y[np.maximum(self.vars, 0)], 1.0)
        M = np.zeros((self.dim, self.dim))
        np.add.at(M, (self.rows, self.cols), vals)
        off = self.rows != self.cols
        np.add.at(M, (self.cols[off], self.rows[off]), vals[off])
        return M

    def entry(self, i: int, j: int) -> dict[int, float]:
        """Affine expression ``{scalar_id: coef}`` of entry (i, j); -1 is the constant."""
        if i > j:
            i, j = j, i
        mask = (self.rows == i) & (self.cols == j)
        out: dict[int, float] = {}
        for v, c in zip(self.vars[mask], self.coefs[mask]):
            out[int(v)] = out.get(int(v), 0.0) + float(c)
        return out


@dataclass
class ConicProgram:
    n_vars: int
    blocks: list
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    c0: float = 0.0
    eq_groups: list = field(default_factory=list)
    var_labels: list | None = None
    meta: dict = field(default_factory=dict)
    eq_scopes: list | None = None  # rows sharing a scope only touch one moment layout

    @property
    def block_dims(self) -> list[int]:
        return [blk.dim for blk in self.blocks]

    @property
    def n_eq(self) -> int:
        return self.A.shape[0]

    @property
    def largest_block(self) -> int:
        return max(self.block_dims, default=0)

    def group_count(self, group: str) -> int:
        return sum(1 for g in self.eq_groups if g == group)

    def group_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for g in self.eq_groups:
            out[g] = out.get(g, 0) + 1
        return out

    def independent_rows(self, rtol: float = 1e-10) -> np.ndarray:
        """Indices of equality rows kept after dropping linearly dependent ones.

        Only rows within the same scope are compared (pivoted QR on the
        columns the scope touches); unscoped rows are always kept.
        """
        if not self.n_eq or self.eq_scopes is None:
            return np.arange(self.n_eq)
        by_scope: dict[Any, list[int]] = {}
        for i, sc in enumerate(self.eq_scopes):
            by_scope.setdefault(sc, []).append(i)
        keep = by_scope.pop(None, [])
        for rows in by_scope.values():
            if len(rows) == 1:
                keep += rows
                continue
            sub = self.A[rows]
            cols = np.unique(sub.indices)
            M = sub[:, cols].toarray()
            if np.any(self.b[rows] != 0.0):
                M = np.hstack([M, self.b[rows][:, None]])
            _, R, piv = sla.qr(M.T, mode="economic", pivoting=True)
            d = np.abs(np.diag(R))
            rank = int(np.sum(d > rtol * max(d[0], 1.0))) if d.size else 0
            keep += [rows[j] for j in np.sort(piv[:rank])]
        return np.sort(np.asarray(keep, dtype=np.int64))

    def objective(self, y: np.ndarray) -> float:
        return float(self.c @ y + self.c0)

    def residuals(self, y: np.ndarray) -> tuple[float, float]:
        """(max equality residual, most negative block eigenvalue)."""
        eq = float(np.max(np.abs(self.A @ y - self.b))) if self.n_eq else 0.0
        eig = min((float(np.linalg.eigvalsh(blk.matrix(y))[0]) for blk in self.blocks), default=0.0)
        return eq, eig

    def summary(self) -> str:
        counts = ", ".join(f"{g}={k}" for g, k in sorted(self.group_counts().items()))
        return (
            f"{len(self.blocks)} PSD blocks (largest {self.largest_block}), "
            f"{self.n_vars} scalars, {self.n_eq} equalities [{counts}]"
        )


class ProgramBuilder:
    """Incremental assembly of a :class:`ConicProgram`."""

    def __init__(self, dedupe: bool = True):
        self.n_vars = 0
        self.var_labels: list = []
        self.blocks: list[PSDBlock] = []
        self._eq_rows: list[dict[int, float]] = []
        self._eq_rhs: list[float] = []
        self._eq_groups: list[str] = []
        self._eq_scopes: list = []
        self._seen: set = set()
        self.dedupe = dedupe
        self.c: dict[int, float] = {}
        self.c0 = 0.0
        self.meta: dict[str, Any] = {}

    def new_var(self, label=None) -> int:
        self.var_labels.append(label)
        self.n_vars += 1
        return self.n_vars - 1

    def add_block(self, dim: int, entries: dict, label: str = "", basis=None) -> int:
        """``entries[(i, j)]`` is ``{scalar_id or -1: coef}`` for ``i <= j``."""
        rows, cols, vs, cs = [], [], [], []
        for (i, j), expr in entries.items():
            if i > j:
                i, j = j, i
            for v, cf in expr.items():
                if cf != 0.0:
                    rows.append(i)
                    cols.append(j)
                    vs.append(v)
                    cs.append(cf)
        self.blocks.append(PSDBlock(
            dim,
            np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(vs, dtype=np.int64),
            np.asarray(cs, dtype=float),
            label,
            basis,
        ))
        return len(self.blocks) - 1

    def add_eq(self, row: dict[int, float], rhs: float = 0.0, group: str = "eq", scope=None) -> bool:
        row = {v: c for v, c in row.items() if c != 0.0}
        if not row:
            if abs(rhs) > 1e-12:
                raise ValueError(f"inconsistent constant equality 0 = {rhs} ({group})")
            return False
        if self.dedupe:
            key = (tuple(sorted((v, round(c, 12)) for v, c in row.items())), round(rhs, 12))
            if key in self._seen:
                return False
            self._seen.add(key)
        self._eq_rows.append(row)
        self._eq_rhs.append(float(rhs))
        self._eq_groups.append(group)
        self._eq_scopes.append(scope)
        return True

    def add_objective(self, expr: dict[int, float]) -> None:
        for v, cf in expr.items():
            if v < 0:
                self.c0 += cf
            else:
                self.c[v] = self.c.get(v, 0.0) + cf

    def build(self) -> ConicProgram:
        m = len(self._eq_rows)
        ri, ci, vals = [], [], []
        for r, row in enumerate(self._eq_rows):
            for v, cf in row.items():
                ri.append(r)
                ci.append(v)
                vals.append(cf)
        A = sp.csr_matrix((vals, (ri, ci)), shape=(m, self.n_vars))
        c = np.zeros(self.n_vars)
        for v, cf in self.c.items():
            c[v] = cf
        return ConicProgram(
            self.n_vars, self.blocks, A, np.asarray(self._eq_rhs, dtype=float), c,
            self.c0, list(self._eq_groups), list(self.var_labels), dict(self.meta),
            list(self._eq_scopes),
        )


# -------------------------------------------------------------------- result

@dataclass
class SolveResult:
    status: str
    objective: float
    y: np.ndarray | None
    blocks: list
    eq_duals: np.ndarray | None
    dual_objective: float = math.nan
    iterations: int = 0
    wall_time: float = 0.0
    solver: str = ""
    message: str = ""
    program: ConicProgram | None = None

    @property
    def ok(self) -> bool:
        return self.status in OK_STATUSES


def moment_matrix(res: SolveResult, block: int) -> tuple[np.ndarray, list]:
    """Dense block ``block`` of a solved program with its monomial labels."""
    if res.y is None:
        raise ValueError(f"no solution available (status {res.status})")
    if not 0 <= block < len(res.blocks):
        raise IndexError(f"block {block} out of range (0..{len(res.blocks) - 1})")
    labels = res.program.blocks[block].basis if res.program is not None else None
    return res.blocks[block], labels


# ------------------------------------------------------------------ backends

@dataclass
class SolveOptions:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    time_limit: float = DEFAULT_TIME_LIMIT
    solver: str | None = None
    verbose: bool = False

    @classmethod
    def from_env(cls, **kw) -> "SolveOptions":
        opts = cls(**kw)
        if opts.solver is None:
            opts.solver = os.environ.get("STATELIFT_SOLVER", "auto")
        if "tol" not in kw and os.environ.get("STATELIFT_TOL"):
            opts.tol = float(os.environ["STATELIFT_TOL"])
        return opts


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "near-optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "stall",
    "InsufficientProgress": "stall",
    "NumericalError": "stall",
    "MaxTime": "timeout",
}


def _stacked_data(p: ConicProgram, rows: np.ndarray | None = None):
    """``min c.y  s.t.  A y + s = b`` with the zero cone first, then PSD blocks.

    PSD blocks use Clarabel's scaled svec: column-major upper triangle with
    off-diagonal entries multiplied by sqrt(2). ``rows`` selects the equality
    rows passed on (all by default).
    """
    rows = np.arange(p.n_eq) if rows is None else rows
    blocks_A = [p.A[rows].tocoo()] if len(rows) else []
    b_parts = [p.b[rows]] if len(rows) else []
    r2 = math.sqrt(2.0)
    for blk in p.blocks:
        nsv = blk.dim * (blk.dim + 1) // 2
        i = np.minimum(blk.rows, blk.cols)
        j = np.maximum(blk.rows, blk.cols)
        idx = j * (j + 1) // 2 + i
        scale = np.where(blk.rows == blk.cols, 1.0, r2) * blk.coefs
        const = blk.vars < 0
        bb = np.zeros(nsv)
        np.add.at(bb, idx[const], scale[const])
        Ab = sp.coo_matrix(
            (-scale[~const], (idx[~const], blk.vars[~const])), shape=(nsv, p.n_vars)
        )
        blocks_A.append(Ab)
        b_parts.append(bb)
    if blocks_A:
        A = sp.vstack(blocks_A).tocsc()
        b = np.concatenate(b_parts)
    else:
        A = sp.csc_matrix((0, p.n_vars))
        b = np.zeros(0)
    A.sum_duplicates()
    return A, b, len(rows), [blk.dim for blk in p.blocks]


def _clarabel_data(p: ConicProgram, rows: np.ndarray | None = None):
    """Clarabel form ``min c.y  s.t.  A y + s = b,  s in cones``."""
    import clarabel

    A, b, n_zero, dims = _stacked_data(p, rows)
    cones = ([clarabel.ZeroConeT(n_zero)] if n_zero else []) + [clarabel.PSDTriangleConeT(d) for d in dims]
    return A, b, cones


# Clarabel keeps several dense copies of each PSD cone's scaling Hessian
# (cone workspace, KKT values and index maps, factor); measured peak memory
# is about seven doubles per Hessian entry.
CLARABEL_BYTES_PER_ENTRY = 56
MEMORY_BUDGET = 0.85


def backend_memory_estimate(p: ConicProgram) -> int:
    """Approximate peak bytes Clarabel needs for the PSD blocks of ``p``."""
    return sum(CLARABEL_BYTES_PER_ENTRY * (d * (d + 1) // 2) ** 2 for d in p.block_dims)


def fits_in_memory(p: ConicProgram) -> bool:
    return backend_memory_estimate(p) <= MEMORY_BUDGET * _available_memory()


def _available_memory() -> int:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):  # pragma: no cover
        return 1 << 62


# Moment programs with equality constraints have singular moment matrices at
# every feasible point, which stalls Clarabel's default regularization; a
# slightly larger static term is more robust, and a stalled solve is retried
# once without dynamic regularization.
CLARABEL_ATTEMPTS = (
    {"static_regularization_constant": 1e-7},
    {"static_regularization_constant": 1e-7, "dynamic_regularization_enable": False},
)


def _clarabel_settings(opts: SolveOptions, time_limit: float, extra: dict):
    import clarabel

    s = clarabel.DefaultSettings()
    s.verbose = opts.verbose
    s.tol_gap_abs = opts.tol
    s.tol_gap_rel = opts.tol
    s.tol_feas = opts.tol
    s.max_iter = opts.max_iter
    s.time_limit = time_limit
    s.presolve_enable = False
    try:
        s.direct_solve_method = "faer"
    except Exception:  # pragma: no cover - older builds
        pass
    for key, val in extra.items():
        setattr(s, key, val)
    return s


def solve_clarabel(p: ConicProgram, opts: SolveOptions) -> SolveResult:
    import clarabel

    t0 = time.perf_counter()
    need = backend_memory_estimate(p)
    if need > MEMORY_BUDGET * _available_memory():
        return SolveResult(
            "stall", math.nan, None, [], None, solver="clarabel", program=p,
            message=f"PSD blocks need about {need / 2**30:.1f} GiB of solver memory "
                    f"(largest block {p.largest_block})",
        )
    if p.n_vars == 0:
        return SolveResult("optimal", p.c0, np.zeros(0), [blk.matrix(np.zeros(0)) for blk in p.blocks],
                           np.zeros(p.n_eq), p.c0, solver="clarabel", program=p)
    rows = p.independent_rows()
    A, b, cones = _clarabel_data(p, rows)
    P = sp.csc_matrix((p.n_vars, p.n_vars))
    sol, err = None, ""
    for extra in CLARABEL_ATTEMPTS:
        remaining = opts.time_limit - (time.perf_counter() - t0)
        if remaining <= 0:
            break
        try:
            attempt = clarabel.DefaultSolver(P, p.c, A, b, cones, _clarabel_settings(opts, remaining, extra)).solve()
        except BaseException as exc:  # backend failures never escape as crashes
            if isinstance(exc, KeyboardInterrupt):
                raise
            err = str(exc)
            continue
        sol = attempt
        if _CLARABEL_STATUS.get(str(sol.status), "stall") != "stall":
            break
    if sol is None:
        return SolveResult("stall" if err else "timeout", math.nan, None, [], None, solver="clarabel",
                           message=err, wall_time=time.perf_counter() - t0, program=p)
    status = _CLARABEL_STATUS.get(str(sol.status), "stall")
    y = np.asarray(sol.x, dtype=float)
    z = np.asarray(sol.z, dtype=float)
    duals = np.zeros(p.n_eq)
    duals[rows] = z[: len(rows)]
    usable = status in OK_STATUSES or status in ("stall", "timeout")
    return SolveResult(
        status,
        p.objective(y) if usable else math.nan,
        y if usable else None,
        [blk.matrix(y) for blk in p.blocks] if usable else [],
        duals if usable else None,
        float(sol.obj_val_dual) + p.c0,
        int(sol.iterations),
        time.perf_counter() - t0,
        "clarabel",
        str(sol.status),
        p,
    )


def _cvxopt_data(p: ConicProgram, rows: np.ndarray):
    """cvxopt form ``min c.y  s.t.  G y + s = h,  A y = b`` with full column-major
    blocks, of which cvxopt reads the lower triangle."""
    from cvxopt import matrix, spmatrix

    Gs, hs = [], []
    for blk in p.blocks:
        d = blk.dim
        idx = np.minimum(blk.rows, blk.cols) * d + np.maximum(blk.rows, blk.cols)
        const = blk.vars < 0
        h = np.zeros(d * d)
        np.add.at(h, idx[const], blk.coefs[const])
        Gs.append(sp.coo_matrix((-blk.coefs[~const], (idx[~const], blk.vars[~const])), shape=(d * d, p.n_vars)))
        hs.append(h)

    def spm(M):
        M = M.tocoo()
        M.sum_duplicates()
        return spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), M.shape)

    G = spm(sp.vstack(Gs)) if Gs else spm(sp.coo_matrix((0, p.n_vars)))
    h = matrix(np.concatenate(hs) if hs else np.zeros(0))
    A = spm(p.A[rows]) if len(rows) else spm(sp.coo_matrix((0, p.n_vars)))
    return matrix(p.c), G, h, {"l": 0, "q": [], "s": [blk.dim for blk in p.blocks]}, A, matrix(p.b[rows])


def solve_cvxopt(p: ConicProgram, opts: SolveOptions) -> SolveResult:
    """Primal-dual path following via cvxopt's ``conelp``.

    cvxopt has no wall-clock limit; ``max_iter`` caps the work instead.
    """
    from cvxopt import solvers

    t0 = time.perf_counter()
    if p.n_vars == 0:
        return solve_clarabel(p, opts)
    rows = p.independent_rows()
    c, G, h, dims, A, b = _cvxopt_data(p, rows)
    options = {"show_progress": opts.verbose, "abstol": opts.tol, "reltol": opts.tol,
               "feastol": opts.tol, "maxiters": min(opts.max_iter, 200)}
    try:
        sol = solvers.conelp(c, G, h, dims, A, b, options=options)
    except (ArithmeticError, ValueError) as exc:
        return SolveResult("stall", math.nan, None, [], None, solver="cvxopt", message=str(exc),
                           wall_time=time.perf_counter() - t0, program=p)
    if sol["x"] is None:
        status = "infeasible" if "infeasible" in sol["status"] else "stall"
        return SolveResult(status, math.nan, None, [], None, solver="cvxopt", message=sol["status"],
                           wall_time=time.perf_counter() - t0, program=p)
    y = np.asarray(sol["x"], dtype=float).ravel()
    if sol["status"] == "optimal":
        status = "optimal"
    else:
        worst = max(sol["primal infeasibility"] or math.inf, sol["dual infeasibility"] or math.inf)
        status = "near-optimal" if worst < 1e3 * opts.tol + 1e-6 else "stall"
    duals = np.zeros(p.n_eq)
    duals[rows] = np.asarray(sol["y"], dtype=float).ravel()
    dual_obj = sol["dual objective"]
    return SolveResult(
        status, p.objective(y), y, [blk.matrix(y) for blk in p.blocks], duals,
        math.nan if dual_obj is None else float(dual_obj) + p.c0,
        int(sol["iterations"]), time.perf_counter() - t0, "cvxopt", sol["status"], p,
    )


AUTO_MIN_COST = 1e9


def prefers_cvxopt(p: ConicProgram) -> bool:
    """Whether cvxopt's Schur-complement iteration is clearly cheaper here.

    Clarabel factors a KKT system holding a dense svec-by-svec block per PSD
    cone, cvxopt forms an ``n_vars`` square Schur complement. Few scalars
    with wide blocks (dense relaxations) favour cvxopt. Small programs stay
    on Clarabel, where the difference is negligible.
    """
    svec = [d * (d + 1) // 2 for d in p.block_dims]
    clarabel_cost = sum(float(s) ** 3 for s in svec)
    m = float(p.n_vars)
    cvxopt_cost = m ** 3 + m * m * sum(float(d) ** 2 for d in p.block_dims) + m * sum(float(d) ** 3 for d in p.block_dims)
    return clarabel_cost > AUTO_MIN_COST and cvxopt_cost < 0.25 * clarabel_cost


def solve_external(p: ConicProgram, opts: SolveOptions) -> SolveResult:
    """Shell out to an SDPA-format solver.

    ``opts.solver`` is ``"sdpa:<exe>"`` (SDPA command line, ``xVec`` output)
    or ``"csdp:<exe>"`` (CSDP command line, ``y`` on the first solution line).
    """
    kind, _, exe = opts.solver.partition(":")
    exe = exe or kind
    if shutil.which(exe) is None and not os.path.exists(exe):
        return SolveResult("stall", math.nan, None, [], None, solver=opts.solver,
                           message=f"solver executable {exe!r} not found", program=p)
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        inp = os.path.join(tmp, "problem.dat-s")
        out = os.path.join(tmp, "problem.out")
        with open(inp, "w") as fh:
            fh.write(export_sdpa(p))
        cmd = [exe, "-ds", inp, "-o", out] if kind == "sdpa" else [exe, inp, out]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=opts.time_limit)
        except subprocess.TimeoutExpired:
            return SolveResult("timeout", math.nan, None, [], None, solver=opts.solver,
                               wall_time=time.perf_counter() - t0, program=p)
        except OSError as exc:
            return SolveResult("stall", math.nan, None, [], None, solver=opts.solver,
                               message=str(exc), program=p)
        try:
            with open(out) as fh:
                text = fh.read()
            y = _parse_sdpa_output(text) if kind == "sdpa" else _parse_csdp_output(text)
        except (OSError, ValueError) as exc:
            return SolveResult("stall", math.nan, None, [], None, solver=opts.solver,
                               message=f"{exc}; {proc.stderr.strip()}",
                               wall_time=time.perf_counter() - t0, program=p)
    y = y[: p.n_vars]
    eq_res, min_eig = p.residuals(y)
    status = "optimal" if proc.returncode == 0 and eq_res < 1e3 * opts.tol + 1e-6 and min_eig > -1e-6 else "near-optimal"
    if proc.returncode not in (0,) and min_eig < -1e-3:
        status = "stall"
    return SolveResult(status, p.objective(y), y, [blk.matrix(y) for blk in p.blocks], None,
                       solver=opts.solver, wall_time=time.perf_counter() - t0, program=p)


def _parse_sdpa_output(text: str) -> np.ndarray:
    key = text.find("xVec")
    if key < 0:
        raise ValueError("no xVec in SDPA output")
    start = text.index("{", key)
    end = text.index("}", start)
    return np.array([float(t) for t in text[start + 1:end].replace(",", " ").split()])


def _parse_csdp_output(text: str) -> np.ndarray:
    first = text.strip().splitlines()[0]
    return np.array([float(t) for t in first.split()])


BACKENDS = ("auto", "clarabel", "cvxopt")


def solve(p: ConicProgram, opts: SolveOptions | None = None, **kw) -> SolveResult:
    """Solve ``p`` with the configured backend (``STATELIFT_SOLVER``).

    ``clarabel`` and ``cvxopt`` are in-process interior-point backends and
    ``auto`` picks between them by estimated per-iteration cost (see
    :func:`prefers_cvxopt`); ``sdpa:<exe>`` and ``csdp:<exe>`` shell out to an
    external solver through SDPA files.
    """
    opts = opts or SolveOptions.from_env(**kw)
    name = opts.solver or "auto"
    if name == "auto":
        name = "cvxopt" if prefers_cvxopt(p) else "clarabel"
    if name == "clarabel":
        return solve_clarabel(p, opts)
    if name == "cvxopt":
        return solve_cvxopt(p, opts)
    return solve_external(p, opts)


# ---------------------------------------------------------------------- SDPA

SDPA_MAGIC = "* statelift sparse SDPA"


def export_sdpa(p: ConicProgram, destination=None) -> str:
    """Write ``p`` as a sparse SDPA (``.dat-s``) document.

    Encoding: SDPA variable ``x_i`` is scalar ``y_i``; each PSD block maps to
    one SDPA block with ``F_0 = -F_b0`` and ``F_i = F_bi``. Equalities
    ``a_t . y = b_t`` go to one trailing diagonal block (negative dimension)
    as the pair of entries ``2t+1: a_t . y - b_t >= 0`` and
    ``2t+2: b_t - a_t . y >= 0``. The objective constant is recorded in an
    ``* offset`` comment. Indices are 1-based and upper-triangular.
    """
    lines = [SDPA_MAGIC, f"* offset {p.c0!r}"]
    dims = list(p.block_dims)
    eq_block = None
    if p.n_eq:
        dims.append(-2 * p.n_eq)
        eq_block = len(dims)
        lines.append(f"* equality-block {eq_block}")
    lines.append(str(p.n_vars))
    lines.append(str(len(dims)))
    lines.append(" ".join(str(d) for d in dims))
    lines.append(" ".join(repr(float(v)) for v in p.c))
    entries: list[tuple[int, int, int, int, float]] = []
    for bno, blk in enumerate(p.blocks, start=1):
        acc: dict[tuple[int, int, int], float] = {}
        for r, c, v, cf in zip(blk.rows, blk.cols, blk.vars, blk.coefs):
            matno = 0 if v < 0 else int(v) + 1
            val = -cf if v < 0 else cf
            key = (matno, int(r) + 1, int(c) + 1)
            acc[key] = acc.get(key, 0.0) + float(val)
        entries.extend((m, bno, i, j, val) for (m, i, j), val in acc.items() if val != 0.0)
    if eq_block is not None:
        A = p.A.tocsr()
        for t in range(p.n_eq):
            lo, hi = A.indptr[t], A.indptr[t + 1]
            for v, cf in zip(A.indices[lo:hi], A.data[lo:hi]):
                entries.append((int(v) + 1, eq_block, 2 * t + 1, 2 * t + 1, float(cf)))
                entries.append((int(v) + 1, eq_block, 2 * t + 2, 2 * t + 2, -float(cf)))
            if p.b[t] != 0.0:
                entries.append((0, eq_block, 2 * t + 1, 2 * t + 1, float(p.b[t])))
                entries.append((0, eq_block, 2 * t + 2, 2 * t + 2, -float(p.b[t])))
    entries.sort()
    lines.extend(f"{m} {bno} {i} {j} {val!r}" for m, bno, i, j, val in entries)
    text = "\n".join(lines) + "\n"
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w") as fh:
                fh.write(text)
    return text


def read_sdpa(source) -> ConicProgram:
    """Parse a sparse SDPA document back into a :class:`ConicProgram`.

    Diagonal-block entry pairs ``(2t+1, 2t+2)`` whose rows are exact negations
    are folded back into equalities; other diagonal entries become 1x1 blocks.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source) as fh:
            text = fh.read()
    offset = 0.0
    body = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            if len(body) == 2:  # empty block-structure line
                body.append("")
            elif len(body) == 3:  # empty objective line
                body.append("")
            continue
        if line[0] in '"*':
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "offset":
                offset = float(parts[1])
            continue
        body.append(line)
    clean = lambda s: s.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " ")
    m = int(clean(body[0]).split()[0])
    nblocks = int(clean(body[1]).split()[0])
    dims = [int(float(t)) for t in clean(body[2]).split()] if nblocks else []
    c = np.array([float(t) for t in clean(body[3]).split()]) if m else np.zeros(0)
    if len(dims) != nblocks or len(c) != m:
        raise ValueError("malformed SDPA header")
    raw: dict[int, dict[tuple[int, int], dict[int, float]]] = {b: {} for b in range(1, nblocks + 1)}
    for line in body[4:]:
        t = clean(line).split()
        matno, bno, i, j, val = int(t[0]), int(t[1]), int(t[2]), int(t[3]), float(t[4])
        if i > j:
            i, j = j, i
        expr = raw[bno].setdefault((i - 1, j - 1), {})
        var = -1 if matno == 0 else matno - 1
        coef = -val if matno == 0 else val
        expr[var] = expr.get(var, 0.0) + coef

    builder = ProgramBuilder(dedupe=False)
    builder.n_vars = m
    builder.var_labels = [None] * m
    for bno, dim in enumerate(dims, start=1):
        if dim > 0:
            builder.add_block(dim, raw[bno], label=f"sdpa-{bno}")
            continue
        diag = {i: raw[bno].get((i, i), {}) for i in range(-dim)}
        i = 0
        while i < -dim:
            e1 = diag[i]
            e2 = diag.get(i + 1) if i % 2 == 0 else None
            if e2 is not None and e1 and set(e1) == set(e2) and all(
                abs(e1[k] + e2[k]) <= 1e-15 * max(1.0, abs(e1[k])) for k in e1
            ):
                row = {v: cf for v, cf in e1.items() if v >= 0}
                rhs = -e1.get(-1, 0.0)
                builder.add_eq(row, rhs, "sdpa")
                i += 2
                continue
            builder.add_block(1, {(0, 0): e1}, label=f"sdpa-{bno}-diag")
            i += 1
    builder.add_objective({v: cf for v, cf in enumerate(c)})
    builder.c0 = offset
    return builder.build()
