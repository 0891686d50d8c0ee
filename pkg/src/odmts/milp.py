"""Branch-and-bound for small mixed-binary programs, plus MPS interchange.

The tree search is deliberately plain: best-bound node selection,
most-fractional branching with lowest-index tie-breaks, and an optional set
of variables that are only branched once every other integer variable has
settled.  Node relaxations go through scipy's HiGHS linear-programming
interface, which is far faster than the dense teaching simplex in
:mod:`odmts.lp` on the row counts the cut loop accumulates; correctness of
the tree itself is checked against exhaustive enumeration in the tests.

A warm start (a known feasible point with its objective) can seed the
incumbent, which both prunes the tree and makes "no improvement possible"
terminations exact.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog
from scipy.optimize import milp as highs_milp

from .lp import LinearProgram

INT_TOL = 1e-6
PRUNE_TOL = 1e-9


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    integer_indices: tuple[int, ...]
    defer_indices: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        for j in self.integer_indices:
            if not (np.isfinite(self.lp.lb[j]) and np.isfinite(self.lp.ub[j])):
                raise ValueError(f"integer variable {j} needs finite bounds")
        if not self.defer_indices <= set(self.integer_indices):
            raise ValueError("defer_indices must be integer variables")


@dataclass
class MilpConfig:
    gap_tol: float = 0.0            # absolute; honored by the in-tree engine
    node_limit: int = 1_000_000
    time_limit: float | None = None
    engine: str = "auto"            # "auto" | "bnb" | "highs"


@dataclass
class MilpSolution:
    status: str                 # "optimal" | "limit" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float | None
    bound: float
    nodes: int


class _NodeLpSolver:
    """Solves the LP relaxation under per-node variable bounds (HiGHS backend)."""

    def __init__(self, lp: LinearProgram):
        self.sign = -1.0 if lp.sense == "max" else 1.0
        self.c = self.sign * lp.c
        a_ub, b_ub, a_eq, b_eq = [], [], [], []
        for i, rel in enumerate(lp.relations):
            if rel == "<=":
                a_ub.append(lp.a[i]); b_ub.append(lp.b[i])
            elif rel == ">=":
                a_ub.append(-lp.a[i]); b_ub.append(-lp.b[i])
            else:
                a_eq.append(lp.a[i]); b_eq.append(lp.b[i])
        self.a_ub = sparse.csr_matrix(np.array(a_ub)) if a_ub else None
        self.b_ub = np.array(b_ub) if b_ub else None
        self.a_eq = sparse.csr_matrix(np.array(a_eq)) if a_eq else None
        self.b_eq = np.array(b_eq) if b_eq else None

    def solve(self, lo: np.ndarray, hi: np.ndarray) -> tuple[str, np.ndarray | None, float | None]:
        res = linprog(self.c, A_ub=self.a_ub, b_ub=self.b_ub, A_eq=self.a_eq, b_eq=self.b_eq,
                      bounds=np.column_stack([lo, hi]), method="highs")
        if res.status == 0:
            return "optimal", res.x, float(res.fun)
        if res.status == 2:
            return "infeasible", None, None
        if res.status == 3:
            return "unbounded", None, None
        raise RuntimeError(f"node relaxation failed: {res.message}")


def _check_warm_start(mip: MixedIntegerProgram, x0: np.ndarray, obj0: float) -> None:
    lp = mip.lp
    tol = 1e-6
    if (x0 < lp.lb - tol).any() or (x0 > lp.ub + tol).any():
        raise ValueError("warm start violates variable bounds")
    if len(lp.b):
        lhs = lp.a @ x0
        for i, rel in enumerate(lp.relations):
            scale = 1.0 + abs(lp.b[i])
            err = lhs[i] - lp.b[i]
            if (rel == "<=" and err > tol * scale) or (rel == ">=" and err < -tol * scale) \
                    or (rel == "=" and abs(err) > tol * scale):
                raise ValueError(f"warm start violates row {i} ({rel}) by {err}")
    for j in mip.integer_indices:
        if abs(x0[j] - round(x0[j])) > INT_TOL:
            raise ValueError(f"warm start has fractional integer variable {j} = {x0[j]}")
    if abs(float(lp.c @ x0) - obj0) > tol * (1.0 + abs(obj0)):
        raise ValueError(f"warm start objective mismatch: {lp.c @ x0} vs {obj0}")


def solve_milp(mip: MixedIntegerProgram, config: MilpConfig | None = None,
               warm_start: tuple[np.ndarray, float] | None = None) -> MilpSolution:
    """Solve to proven optimality; on node/time limits returns the incumbent and bound.

    Two interchangeable engines: the in-tree branch-and-bound below ("bnb"),
    and HiGHS branch-and-cut ("highs", the default behind "auto"), which is
    much faster on the cut-heavy master programs.  A warm start is a known
    feasible point with its objective; when the optimum ties it, the warm
    point itself is returned so repeated solves stay bitwise stable.
    """
    config = config or MilpConfig()
    engine = config.engine
    if engine == "auto":
        engine = "highs"
    if engine == "highs":
        return _solve_highs(mip, config, warm_start)
    if engine != "bnb":
        raise ValueError(f"unknown engine {config.engine!r}")
    return _solve_bnb(mip, config, warm_start)


def _solve_highs(mip: MixedIntegerProgram, config: MilpConfig,
                 warm_start: tuple[np.ndarray, float] | None) -> MilpSolution:
    lp = mip.lp
    sign = -1.0 if lp.sense == "max" else 1.0
    warm = None
    if warm_start is not None:
        x0, obj0 = warm_start
        x0 = np.asarray(x0, dtype=float)
        _check_warm_start(mip, x0, obj0)
        warm = (x0, sign * obj0)
    integrality = np.zeros(len(lp.c))
    integrality[list(mip.integer_indices)] = 1
    constraints = []
    if len(lp.b):
        lo = np.where([r in ("=", ">=") for r in lp.relations], lp.b, -np.inf)
        hi = np.where([r in ("=", "<=") for r in lp.relations], lp.b, np.inf)
        constraints = LinearConstraint(sparse.csr_matrix(lp.a), lo, hi)
    options = {"mip_rel_gap": 0.0, "node_limit": config.node_limit, "presolve": True}
    if config.time_limit is not None:
        options["time_limit"] = config.time_limit
    res = highs_milp(c=sign * lp.c, constraints=constraints, bounds=Bounds(lp.lb, lp.ub),
                     integrality=integrality, options=options)
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.status == 2:
        if warm is not None:
            raise RuntimeError("engine reported infeasible despite a feasible warm start")
        return MilpSolution(status="infeasible", x=None, objective=None, bound=np.inf * sign, nodes=nodes)
    if res.status == 3:
        return MilpSolution(status="unbounded", x=None, objective=None, bound=-np.inf * sign, nodes=nodes)
    if res.status == 4:
        raise RuntimeError(f"MILP engine failure: {res.message}")
    status = "optimal" if res.status == 0 else "limit"
    x = res.x
    obj = float(res.fun) if res.fun is not None else None
    bound = res.mip_dual_bound if getattr(res, "mip_dual_bound", None) is not None else -np.inf
    if x is None and warm is not None:
        x, obj, status = warm[0], warm[1], status if status == "limit" else "optimal"
    if warm is not None and obj is not None and obj >= warm[1] - PRUNE_TOL * (1.0 + abs(warm[1])):
        # optimum ties the warm point: return it verbatim for stable repeats
        x, obj = warm
        if status == "optimal":
            bound = obj
    if x is None:
        return MilpSolution(status=status, x=None, objective=None, bound=sign * bound, nodes=nodes)
    x = np.asarray(x, dtype=float).copy()
    for j in mip.integer_indices:
        x[j] = round(x[j])
    if status == "optimal":
        bound = min(bound, obj)
    return MilpSolution(status=status, x=x, objective=sign * obj, bound=sign * bound, nodes=nodes)


def _solve_bnb(mip: MixedIntegerProgram, config: MilpConfig,
               warm_start: tuple[np.ndarray, float] | None) -> MilpSolution:
    lp = mip.lp
    sign = -1.0 if lp.sense == "max" else 1.0
    solver = _NodeLpSolver(lp)
    int_idx = list(mip.integer_indices)

    incumbent: np.ndarray | None = None
    incumbent_obj = np.inf  # internal min sense
    if warm_start is not None:
        x0, obj0 = warm_start
        x0 = np.asarray(x0, dtype=float)
        _check_warm_start(mip, x0, obj0)
        incumbent, incumbent_obj = x0.copy(), sign * obj0

    start = time.monotonic()
    prune_slack = max(config.gap_tol, PRUNE_TOL)
    seq = 0
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = [(-np.inf, seq, lp.lb.copy(), lp.ub.copy())]
    nodes = 0
    bound = -np.inf
    status = "optimal"

    while heap:
        parent_bound, _, lo, hi = heapq.heappop(heap)
        bound = max(bound, parent_bound)
        if parent_bound >= incumbent_obj - prune_slack:
            bound = incumbent_obj  # best-bound order: nothing left can improve
            break
        if nodes >= config.node_limit or (config.time_limit is not None
                                          and time.monotonic() - start > config.time_limit):
            status = "limit"
            break
        nodes += 1
        node_status, x, obj = solver.solve(lo, hi)
        if node_status == "infeasible":
            continue
        if node_status == "unbounded":
            return MilpSolution(status="unbounded", x=None, objective=None, bound=sign * -np.inf, nodes=nodes)
        if obj >= incumbent_obj - prune_slack:
            continue
        frac = [j for j in int_idx if abs(x[j] - round(x[j])) > INT_TOL]
        if not frac:
            if obj < incumbent_obj - PRUNE_TOL:
                incumbent, incumbent_obj = x.copy(), obj
            continue
        primary = [j for j in frac if j not in mip.defer_indices]
        pool = primary if primary else frac
        j = max(pool, key=lambda k: (min(x[k] - np.floor(x[k]), np.ceil(x[k]) - x[k]), -k))
        floor_val = np.floor(x[j])
        for child_lo_j, child_hi_j in ((lo[j], floor_val), (floor_val + 1.0, hi[j])):
            clo, chi = lo.copy(), hi.copy()
            clo[j], chi[j] = child_lo_j, child_hi_j
            if clo[j] > chi[j]:
                continue
            seq += 1
            heapq.heappush(heap, (obj, seq, clo, chi))
    else:
        bound = incumbent_obj if incumbent is not None else np.inf

    if heap and status == "limit":
        bound = max(bound, min(entry[0] for entry in heap)) if heap else bound
    if incumbent is None:
        if status == "limit":
            return MilpSolution(status="limit", x=None, objective=None, bound=sign * bound, nodes=nodes)
        return MilpSolution(status="infeasible", x=None, objective=None, bound=sign * bound, nodes=nodes)
    if status == "optimal":
        bound = max(bound, incumbent_obj) if bound == -np.inf else bound
        bound = min(bound, incumbent_obj)
    x_out = incumbent.copy()
    for j in int_idx:
        x_out[j] = round(x_out[j])
    return MilpSolution(status=status, x=x_out, objective=sign * incumbent_obj, bound=sign * bound, nodes=nodes)


# ---------------------------------------------------------------------------
# MPS interchange (fixed field layout, one coefficient per line)
# ---------------------------------------------------------------------------

def _row_name(i: int) -> str:
    return f"R{i:05d}"


def _col_name(j: int) -> str:
    return f"C{j:05d}"


def _fmt(v: float) -> str:
    return repr(float(v))


def export_mps(mip: MixedIntegerProgram, path: str | Path, name: str = "ODMTS") -> None:
    """Write the program in fixed-layout MPS (minimization only).

    Fields start at the standard columns (2, 5, 15, 25); every variable gets
    an explicit bound line so readers need no implicit-bound conventions.
    Values are written with full float precision, so a round trip through
    :func:`read_mps` reproduces coefficients exactly.
    """
    lp = mip.lp
    if lp.sense != "min":
        raise ValueError("MPS export supports minimization problems only")
    rel_code = {"<=": "L", ">=": "G", "=": "E"}
    int_set = set(mip.integer_indices)
    lines = [f"NAME          {name}", "ROWS", " N  OBJ"]
    for i, rel in enumerate(lp.relations):
        lines.append(f" {rel_code[rel]}  {_row_name(i)}")
    lines.append("COLUMNS")
    n = len(lp.c)
    in_int = False
    marker = 0
    for j in range(n):
        if (j in int_set) != in_int:
            tag = "'INTORG'" if not in_int else "'INTEND'"
            lines.append(f"    M{marker:07d}  {'MARKER':<8}                 {tag}")
            in_int = not in_int
            marker += 1
        wrote = False
        if lp.c[j] != 0.0:
            lines.append(f"    {_col_name(j):<8}  {'OBJ':<8}  {_fmt(lp.c[j])}")
            wrote = True
        for i in range(len(lp.b)):
            if lp.a[i, j] != 0.0:
                lines.append(f"    {_col_name(j):<8}  {_row_name(i):<8}  {_fmt(lp.a[i, j])}")
                wrote = True
        if not wrote:  # keep the column declared even if empty
            lines.append(f"    {_col_name(j):<8}  {'OBJ':<8}  0.0")
        if j == n - 1 and in_int:
            lines.append(f"    M{marker:07d}  {'MARKER':<8}                 'INTEND'")
    lines.append("RHS")
    for i in range(len(lp.b)):
        if lp.b[i] != 0.0:
            lines.append(f"    {'RHS':<8}  {_row_name(i):<8}  {_fmt(lp.b[i])}")
    lines.append("BOUNDS")
    for j in range(n):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            lines.append(f" FX {'BND':<8}  {_col_name(j):<8}  {_fmt(lo)}")
            continue
        if np.isfinite(lo):
            lines.append(f" LO {'BND':<8}  {_col_name(j):<8}  {_fmt(lo)}")
        else:
            lines.append(f" MI {'BND':<8}  {_col_name(j):<8}")
        if np.isfinite(hi):
            lines.append(f" UP {'BND':<8}  {_col_name(j):<8}  {_fmt(hi)}")
    lines.append("ENDATA")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mps(path: str | Path) -> MixedIntegerProgram:
    """Parse the MPS subset produced by :func:`export_mps`."""
    section = None
    row_rel: dict[str, str] = {}
    row_order: list[str] = []
    col_order: list[str] = []
    col_idx: dict[str, int] = {}
    entries: list[tuple[int, str, float]] = []
    rhs: dict[str, float] = {}
    bounds: list[tuple[str, str, float | None]] = []
    integers: set[int] = set()
    in_int = False
    code_rel = {"L": "<=", "G": ">=", "E": "="}

    for rawline in Path(path).read_text().splitlines():
        if not rawline.strip() or rawline.startswith("*"):
            continue
        if not rawline.startswith(" "):
            section = rawline.split()[0]
            continue
        fields = rawline.split()
        if section == "ROWS":
            code, rname = fields
            if code == "N":
                continue
            row_rel[rname] = code_rel[code]
            row_order.append(rname)
        elif section == "COLUMNS":
            if len(fields) >= 3 and fields[1] == "MARKER":
                in_int = fields[-1] == "'INTORG'"
                continue
            cname, rname, value = fields[0], fields[1], float(fields[2])
            if cname not in col_idx:
                col_idx[cname] = len(col_order)
                col_order.append(cname)
                if in_int:
                    integers.add(col_idx[cname])
            entries.append((col_idx[cname], rname, value))
        elif section == "RHS":
            rhs[fields[1]] = float(fields[2])
        elif section == "BOUNDS":
            kind, _, cname = fields[0], fields[1], fields[2]
            bounds.append((kind, cname, float(fields[3]) if len(fields) > 3 else None))
        elif section == "RANGES":
            raise ValueError("RANGES sections are not supported")

    n, m = len(col_order), len(row_order)
    c = np.zeros(n)
    a = np.zeros((m, n))
    b = np.zeros(m)
    row_pos = {name: i for i, name in enumerate(row_order)}
    for j, rname, value in entries:
        if rname == "OBJ":
            c[j] = value
        else:
            a[row_pos[rname], j] = value
    for rname, value in rhs.items():
        b[row_pos[rname]] = value
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for kind, cname, value in bounds:
        j = col_idx[cname]
        if kind == "LO":
            lb[j] = value
        elif kind == "UP":
            ub[j] = value
        elif kind == "FX":
            lb[j] = ub[j] = value
        elif kind == "MI":
            lb[j] = -np.inf
        elif kind == "PL":
            ub[j] = np.inf
        elif kind == "FR":
            lb[j], ub[j] = -np.inf, np.inf
        elif kind == "BV":
            lb[j], ub[j] = 0.0, 1.0
            integers.add(j)
        else:
            raise ValueError(f"unsupported bound type {kind}")
    lp = LinearProgram(sense="min", c=c, a=a, relations=tuple(row_rel[r] for r in row_order),
                       b=b, lb=lb, ub=ub)
    return MixedIntegerProgram(lp=lp, integer_indices=tuple(sorted(integers)))
