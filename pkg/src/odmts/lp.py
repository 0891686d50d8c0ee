"""Dense linear-programming kernel (bounded-variable two-phase simplex).

Problem sizes in this project stay tiny (at most a few hundred variables),
so the solver favours transparency over sparse machinery: it keeps an
explicit basis inverse, refactorizes periodically, and falls back to
Bland's rule when degeneracy stalls progress.  Row constraints are turned
into equalities with bounded slack variables, which keeps row duals and
reduced costs directly readable from the final basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instance import Instance, Trip, bus_weight, candidate_arcs, shuttle_weight
from .router import DualSolution, FractionalDesign, NetworkDesign, dual_infeasibility

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64


class LpNumericalError(RuntimeError):
    """Numerical failure inside the simplex; never silently swallowed."""


@dataclass
class LinearProgram:
    """min/max c.x subject to row constraints and variable bounds.

    relations[i] is one of "<=", ">=", "=".  Bounds may be +-inf.
    """

    sense: str
    c: np.ndarray
    a: np.ndarray
    relations: tuple[str, ...]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.a = np.asarray(self.a, dtype=float).reshape(len(self.b), len(self.c)) if len(self.b) else np.zeros((0, len(self.c)))
        self.b = np.asarray(self.b, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be min or max, got {self.sense}")
        m, n = self.a.shape
        if not (len(self.c) == n and len(self.relations) == m and len(self.lb) == n and len(self.ub) == n):
            raise ValueError("inconsistent LP dimensions")
        if any(r not in ("<=", ">=", "=") for r in self.relations):
            raise ValueError(f"bad relation in {self.relations}")
        if (self.lb > self.ub).any():
            raise ValueError("lb > ub")


@dataclass
class LpSolution:
    status: str                      # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    duals: np.ndarray | None = None  # one multiplier per row, original sense
    reduced_costs: np.ndarray | None = None
    objective: float | None = None


class _Tableau:
    """Equality-form working problem: min c.x, A x = b, l <= x <= u.

    Columns: n structural, then m slacks, then m artificials.  The basis
    inverse is kept explicitly and rebuilt from scratch every few dozen
    pivots to bound drift.
    """

    def __init__(self, lp: LinearProgram):
        m, n = lp.a.shape
        self.m, self.n = m, n
        sign = -1.0 if lp.sense == "max" else 1.0
        slack_cols = np.eye(m)
        self.cols = np.hstack([lp.a, slack_cols, np.zeros((m, m))]) if m else np.zeros((0, n + 2 * m))
        self.lb = np.concatenate([lp.lb, np.zeros(m), np.zeros(m)])
        self.ub = np.concatenate([lp.ub, np.zeros(m), np.full(m, np.inf)])
        for i, rel in enumerate(lp.relations):
            if rel == "<=":
                self.ub[n + i] = np.inf
            elif rel == ">=":
                self.lb[n + i] = -np.inf
        self.cost = np.concatenate([sign * lp.c, np.zeros(2 * m)])
        # start nonbasics at a finite bound (lower preferred), free vars at 0
        x = np.where(np.isfinite(self.lb), self.lb, np.where(np.isfinite(self.ub), self.ub, 0.0))
        self.x = x
        resid = lp.b - self.cols[:, : n + m] @ x[: n + m]
        self.art_sign = np.where(resid >= 0, 1.0, -1.0)
        for i in range(m):
            self.cols[i, n + m + i] = self.art_sign[i]
            self.x[n + m + i] = abs(resid[i])
        self.basis = list(range(n + m, n + 2 * m))
        self.binv = np.diag(self.art_sign).copy()
        self.in_basis = np.zeros(n + 2 * m, dtype=bool)
        self.in_basis[self.basis] = True
        self.pivots = 0

    def refactorize(self):
        if self.m == 0:
            return
        basis_mat = self.cols[:, self.basis]
        try:
            self.binv = np.linalg.inv(basis_mat)
        except np.linalg.LinAlgError as exc:
            raise LpNumericalError("singular basis during refactorization") from exc

    def _solve_phase(self, cost: np.ndarray, max_iter: int) -> str:
        """Run simplex iterations for one phase; returns 'optimal' or 'unbounded'."""
        bland = False
        stall = 0
        for _ in range(max_iter):
            y = cost[self.basis] @ self.binv
            rc = cost - y @ self.cols
            at_lb = ~self.in_basis & np.isfinite(self.lb) & (np.abs(self.x - self.lb) <= FEAS_TOL)
            at_ub = ~self.in_basis & np.isfinite(self.ub) & (np.abs(self.x - self.ub) <= FEAS_TOL)
            free = ~self.in_basis & ~at_lb & ~at_ub
            fixed = self.lb == self.ub
            can_inc = (at_lb | free) & ~fixed & (rc < -OPT_TOL)
            can_dec = (at_ub | free) & ~fixed & (rc > OPT_TOL)
            eligible = np.flatnonzero(can_inc | can_dec)
            if eligible.size == 0:
                return "optimal"
            if bland:
                j = int(eligible[0])
            else:
                j = int(eligible[np.argmax(np.abs(rc[eligible]))])
            direction = 1.0 if can_inc[j] else -1.0
            d = self.binv @ self.cols[:, j]
            # ratio test against basic-variable bounds, plus the entering bound flip
            theta = self.ub[j] - self.lb[j] if np.isfinite(self.ub[j]) and np.isfinite(self.lb[j]) else np.inf
            leave = -1
            for i in range(self.m):
                delta = direction * d[i]
                bi = self.basis[i]
                if delta > PIVOT_TOL:
                    limit = (self.x[bi] - self.lb[bi]) / delta if np.isfinite(self.lb[bi]) else np.inf
                elif delta < -PIVOT_TOL:
                    limit = (self.ub[bi] - self.x[bi]) / (-delta) if np.isfinite(self.ub[bi]) else np.inf
                else:
                    continue
                if limit < theta - PIVOT_TOL:
                    theta = max(limit, 0.0)
                    leave = i
                elif limit < theta + PIVOT_TOL and (leave == -1 or (bland and bi < self.basis[leave])):
                    # tie: prefer a basis change over a bound flip; Bland wants the lowest index out
                    theta = min(theta, max(limit, 0.0))
                    leave = i
            if theta == np.inf:
                return "unbounded"
            if theta <= PIVOT_TOL:
                stall += 1
                if stall > 200:
                    bland = True
            else:
                stall = 0
            self.x[j] += direction * theta
            self.x[self.basis] -= direction * theta * d
            if leave == -1:
                continue  # bound flip: entering variable moved to its other bound
            out = self.basis[leave]
            self.x[out] = np.clip(self.x[out], self.lb[out] if np.isfinite(self.lb[out]) else -np.inf,
                                  self.ub[out] if np.isfinite(self.ub[out]) else np.inf)
            self.basis[leave] = j
            self.in_basis[out] = False
            self.in_basis[j] = True
            pivot = d[leave]
            if abs(pivot) < PIVOT_TOL:
                raise LpNumericalError(f"pivot element {pivot} too small")
            eta = -d / pivot
            eta[leave] = 1.0 / pivot
            row = self.binv[leave].copy()
            self.binv += np.outer(eta, row)
            self.binv[leave] = row / pivot
            self.pivots += 1
            if self.pivots % REFACTOR_EVERY == 0:
                self.refactorize()
                self._restore_basic_values()
        raise LpNumericalError(f"simplex exceeded {max_iter} iterations")

    def _restore_basic_values(self):
        rhs = self._rhs
        nb = ~self.in_basis
        contrib = self.cols[:, nb] @ self.x[nb]
        self.x[self.basis] = self.binv @ (rhs - contrib)

    def solve(self, b: np.ndarray) -> str:
        self._rhs = b
        cap = 200 * (self.n + 2 * self.m + 10)
        phase1_cost = np.zeros_like(self.cost)
        phase1_cost[self.n + self.m:] = 1.0
        if self._solve_phase(phase1_cost, cap) != "optimal":
            raise LpNumericalError("phase 1 reported unbounded")
        if float(self.x[self.n + self.m:].sum()) > FEAS_TOL * max(1.0, float(np.abs(b).sum())):
            return "infeasible"
        self._pin_artificials()
        return self._solve_phase(self.cost, cap)

    def _pin_artificials(self):
        """Fix all artificials to zero; pivot basic ones out where a real column exists."""
        first_art = self.n + self.m
        for i in range(self.m):
            bi = self.basis[i]
            if bi < first_art:
                continue
            row = self.binv[i] @ self.cols[:, :first_art]
            candidates = np.flatnonzero((np.abs(row) > FEAS_TOL) & ~self.in_basis[:first_art])
            if candidates.size:
                # degenerate pivot at zero step: only the basis changes
                j = int(candidates[0])
                self.basis[i] = j
                self.in_basis[bi] = False
                self.in_basis[j] = True
                self.refactorize()
                self._restore_basic_values()
        self.lb[first_art:] = 0.0
        self.ub[first_art:] = 0.0
        self.x[first_art:] = np.clip(self.x[first_art:], 0.0, 0.0)


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve a dense LP; statuses are "optimal", "infeasible" or "unbounded"."""
    m, n = lp.a.shape
    if n == 0:
        return LpSolution(status="optimal", x=np.zeros(0), duals=np.zeros(m), reduced_costs=np.zeros(0), objective=0.0)
    tab = _Tableau(lp)
    status = tab.solve(lp.b)
    if status != "optimal":
        return LpSolution(status=status)
    sign = -1.0 if lp.sense == "max" else 1.0
    x = tab.x[:n].copy()
    y = tab.cost[tab.basis] @ tab.binv if m else np.zeros(0)
    rc = lp.c - sign * (y @ lp.a) if m else lp.c.copy()
    objective = float(lp.c @ x)
    return LpSolution(status="optimal", x=x, duals=sign * y, reduced_costs=rc, objective=objective)


def solve_pareto_subproblem(instance: Instance, trip: Trip, design: NetworkDesign,
                            sigma: float, core: FractionalDesign) -> DualSolution:
    """Strongest optimality cut at the core point among the alternative dual optima.

    The dual of the routing LP usually has many optimal vertices; all of them
    certify the same route weight sigma at the given design but induce cuts of
    different strength elsewhere.  Restricting the dual to its optimal face
    (an equality pinning the value at the design to sigma) and re-maximizing
    against an interior core design picks a cut that dominates at that point.
    """
    nh = instance.n_hubs
    nodes = sorted({trip.origin, trip.destination, *instance.hubs})
    u_index = {stop: k for k, stop in enumerate(nodes)}
    pair_list = [(h, l) for h in range(nh) for l in range(nh) if h != l]
    v_index = {pair: len(nodes) + k for k, pair in enumerate(pair_list)}
    nvar = len(nodes) + len(pair_list)
    p, mats = instance.params, instance.matrices

    c = np.zeros(nvar)
    c[u_index[trip.origin]] += 1.0
    c[u_index[trip.destination]] -= 1.0
    for h, l in pair_list:
        c[v_index[(h, l)]] -= float(core.value[h, l])

    rows, rels, rhs = [], [], []
    for h, l in pair_list:
        row = np.zeros(nvar)
        row[u_index[instance.hubs[h]]] += 1.0
        row[u_index[instance.hubs[l]]] -= 1.0
        row[v_index[(h, l)]] -= 1.0
        rows.append(row)
        rels.append("<=")
        rhs.append(bus_weight(instance.hubs[h], instance.hubs[l], p, mats))
    for i, j in candidate_arcs(trip, instance):
        row = np.zeros(nvar)
        row[u_index[i]] += 1.0
        row[u_index[j]] -= 1.0
        rows.append(row)
        rels.append("<=")
        rhs.append(shuttle_weight(i, j, p, mats))
    anchor = np.zeros(nvar)
    anchor[u_index[trip.origin]] += 1.0
    anchor[u_index[trip.destination]] -= 1.0
    for h, l in pair_list:
        if design.open[h, l]:
            anchor[v_index[(h, l)]] -= 1.0
    rows.append(anchor)
    rels.append("=")
    rhs.append(sigma)

    lp = LinearProgram(sense="max", c=c, a=np.array(rows), relations=tuple(rels),
                       b=np.array(rhs), lb=np.zeros(nvar), ub=np.full(nvar, np.inf))
    sol = solve_lp(lp)
    if sol.status == "infeasible":
        raise ValueError(f"core-point subproblem infeasible for trip {trip.id}: sigma {sigma} does not match the design")
    if sol.status != "optimal":
        raise LpNumericalError(f"core-point subproblem for trip {trip.id} ended with status {sol.status}")

    u = np.zeros(instance.n_stops)
    for stop, k in u_index.items():
        u[stop] = sol.x[k]
    v = np.zeros((nh, nh))
    for (h, l), k in v_index.items():
        v[h, l] = sol.x[k]
    duals = DualSolution(potential=u, leg_dual=v)
    err = dual_infeasibility(instance, design, trip, duals)
    if err > 10 * FEAS_TOL:
        raise LpNumericalError(f"core-point duals infeasible by {err} for trip {trip.id}")
    return duals
