"""Cut-based decomposition of the network-design problem with rider choice.

The master program picks bus legs (z), tentative adoption flags (delta) and
route-cost estimates (d); routing subproblems price every trip under the
proposed legs and push back two kinds of rows: classic optimality cuts from
the routing duals, and combinatorial consistency cuts whenever the master's
adoption guess disagrees with what the choice model actually does at the
proposed design.  Anti-monotone choice models admit one-sided (stronger)
consistency cuts; everything else falls back to the two-sided form.

Iterations keep a certified sandwich: the master optimum is a lower bound,
and any proposed design evaluated with consistent choices is an upper
bound.  The best evaluated design seeds the next master solve as a warm
incumbent, which also makes the stopping test exact when a design repeats.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .choice import ChoiceModel, ThresholdChoice, decide
from .instance import Instance, Trip, investment_cost, shuttle_weight
from .lp import LinearProgram, solve_pareto_subproblem
from .milp import MilpConfig, MixedIntegerProgram, export_mps, solve_milp
from .router import (DualSolution, FractionalDesign, NetworkDesign, SubproblemResult,
                     route_stats, solve_follower, tighten_duals)

CONSISTENT = "consistent"
CASE_1A = "case1a"  # master says adopt, choice model says no
CASE_1B = "case1b"  # master says stay, choice model says adopt


@dataclass(frozen=True)
class Cut:
    """A >= row over (z, delta_r, d_r); z coefficients keyed by hub-pair position."""

    kind: str  # "optimality" | "consistencyA" | "consistencyB"
    trip_id: int
    z_coeffs: tuple[tuple[int, int, float], ...]
    delta_coeff: float
    d_coeff: float
    rhs: float


@dataclass
class IterationLog:
    iteration: int
    lb: float
    ub: float               # value of this iteration's design
    incumbent_ub: float
    cuts_added: dict[str, int]
    consistency: dict[int, str]
    master_nodes: int = 0
    master_status: str = "optimal"

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "lb": self.lb,
            "ub": self.ub,
            "incumbent_ub": self.incumbent_ub,
            "cuts_added": self.cuts_added,
            "consistency": {str(k): v for k, v in self.consistency.items()},
            "master_nodes": self.master_nodes,
            "master_status": self.master_status,
        }


@dataclass
class ClassMetrics:
    income_class: str
    trips: int = 0
    adopted_trips: int = 0
    riders: int = 0
    adopted_riders: int = 0
    route_time_total: float = 0.0
    route_price_total: float = 0.0
    transfer_counts: dict[int, int] = field(default_factory=dict)

    @property
    def trip_adoption(self) -> float:
        return self.adopted_trips / self.trips if self.trips else 1.0

    @property
    def rider_adoption(self) -> float:
        return self.adopted_riders / self.riders if self.riders else 1.0

    @property
    def avg_route_time_s(self) -> float:
        return self.route_time_total / self.trips if self.trips else 0.0

    @property
    def avg_route_price(self) -> float:
        return self.route_price_total / self.trips if self.trips else 0.0

    @property
    def share_3plus_transfers(self) -> float:
        if not self.adopted_trips:
            return 0.0
        heavy = sum(cnt for k, cnt in self.transfer_counts.items() if k >= 3)
        return heavy / self.adopted_trips


@dataclass
class Evaluation:
    per_class: dict[str, ClassMetrics]
    investment: float
    trips_cost: float        # dollars charged over trips that use the system
    convenience_s: float     # rider seconds over trips that use the system
    combined_weighted: float
    per_trip: dict[int, SubproblemResult]
    adoption: dict[int, int]

    @property
    def trip_adoption(self) -> float:
        total = sum(m.trips for m in self.per_class.values())
        adopted = sum(m.adopted_trips for m in self.per_class.values())
        return adopted / total if total else 1.0

    @property
    def rider_adoption(self) -> float:
        total = sum(m.riders for m in self.per_class.values())
        adopted = sum(m.adopted_riders for m in self.per_class.values())
        return adopted / total if total else 1.0


@dataclass
class SolveResult:
    design: NetworkDesign
    objective: float
    lower_bound: float
    proven_optimal: bool
    iterations: int
    trace: list[IterationLog]
    per_trip: dict[int, SubproblemResult]
    adoption: dict[int, int]
    evaluation: Evaluation
    max_linearization_gap: float
    total_cuts: dict[str, int]


@dataclass
class RunConfig:
    epsilon: float | None = None          # None: use the instance's tolerance
    max_iters: int = 60
    pareto: bool = False
    strengthened: bool = True
    lazy_cuts: bool = False
    root_cuts: bool = True                # seed constant route-weight floors from the all-open design
    threads: int = 1
    eta: float = 0.5
    log_sink: Callable[[IterationLog], None] | None = None
    export_mps_dir: str | Path | None = None
    milp: MilpConfig = field(default_factory=MilpConfig)


class MasterModel:
    """Incrementally grown relaxation of the design problem.

    Variables are laid out as [z per ordered hub pair | delta per latent
    trip | d per trip | nu per latent trip], with nu linearizing the
    delta*d product through the usual three box rows.  Cuts append rows.
    """

    def __init__(self, instance: Instance):
        self.instance = instance
        nh = instance.n_hubs
        self.pairs = [(h, l) for h in range(nh) for l in range(nh) if h != l]
        self.pair_pos = {pair: k for k, pair in enumerate(self.pairs)}
        self.latent_ids = [t.id for t in instance.trips if t.is_latent]
        self.trip_ids = [t.id for t in instance.trips]
        nz = len(self.pairs)
        self.z_at = {pair: k for k, pair in enumerate(self.pairs)}
        self.delta_at = {r: nz + k for k, r in enumerate(self.latent_ids)}
        self.d_at = {r: nz + len(self.latent_ids) + k for k, r in enumerate(self.trip_ids)}
        self.nu_at = {r: nz + len(self.latent_ids) + len(self.trip_ids) + k
                      for k, r in enumerate(self.latent_ids)}
        self.n_vars = nz + 2 * len(self.latent_ids) + len(self.trip_ids)

        p, m = instance.params, instance.matrices
        trips_by_id = {t.id: t for t in instance.trips}
        self.m_bar = {t.id: shuttle_weight(t.origin, t.destination, p, m) for t in instance.trips}

        self.c = np.zeros(self.n_vars)
        for (h, l), k in self.z_at.items():
            self.c[k] = investment_cost(instance.hubs[h], instance.hubs[l], p, m)
        for r in self.trip_ids:
            if trips_by_id[r].is_latent:
                self.c[self.nu_at[r]] = trips_by_id[r].passengers
            else:
                self.c[self.d_at[r]] = trips_by_id[r].passengers

        self.lb = np.zeros(self.n_vars)
        self.ub = np.ones(self.n_vars)
        for r in self.trip_ids:
            self.ub[self.d_at[r]] = self.m_bar[r]
        for r in self.latent_ids:
            self.ub[self.nu_at[r]] = self.m_bar[r]

        rows, rels, rhs = [], [], []
        for h in range(nh):  # opened in-legs balance opened out-legs
            row = np.zeros(self.n_vars)
            for l in range(nh):
                if l == h:
                    continue
                row[self.z_at[(h, l)]] += 1.0
                row[self.z_at[(l, h)]] -= 1.0
            rows.append(row)
            rels.append("=")
            rhs.append(0.0)
        for r in self.latent_ids:
            mb = self.m_bar[r]
            row = np.zeros(self.n_vars)
            row[self.nu_at[r]], row[self.delta_at[r]] = 1.0, -mb
            rows.append(row); rels.append("<="); rhs.append(0.0)
            row = np.zeros(self.n_vars)
            row[self.nu_at[r]], row[self.d_at[r]] = 1.0, -1.0
            rows.append(row); rels.append("<="); rhs.append(0.0)
            row = np.zeros(self.n_vars)
            row[self.nu_at[r]], row[self.d_at[r]], row[self.delta_at[r]] = 1.0, -1.0, -mb
            rows.append(row); rels.append(">="); rhs.append(-mb)
        self.base_rows = rows
        self.base_rels = rels
        self.base_rhs = rhs
        self.cuts: list[Cut] = []

    def add_cut(self, cut: Cut) -> None:
        self.cuts.append(cut)

    def _cut_row(self, cut: Cut) -> np.ndarray:
        row = np.zeros(self.n_vars)
        for h, l, coeff in cut.z_coeffs:
            row[self.z_at[(h, l)]] += coeff
        if cut.delta_coeff:
            row[self.delta_at[cut.trip_id]] += cut.delta_coeff
        if cut.d_coeff:
            row[self.d_at[cut.trip_id]] += cut.d_coeff
        return row

    def to_milp(self) -> MixedIntegerProgram:
        rows = self.base_rows + [self._cut_row(c) for c in self.cuts]
        rels = tuple(self.base_rels + [">="] * len(self.cuts))
        rhs = np.array(self.base_rhs + [c.rhs for c in self.cuts])
        a = np.array(rows) if rows else np.zeros((0, self.n_vars))
        lp = LinearProgram(sense="min", c=self.c.copy(), a=a, relations=rels, b=rhs,
                           lb=self.lb.copy(), ub=self.ub.copy())
        binaries = tuple(self.z_at.values()) + tuple(self.delta_at.values())
        return MixedIntegerProgram(lp=lp, integer_indices=binaries,
                                   defer_indices=frozenset(self.delta_at.values()))

    def design_from(self, x: np.ndarray) -> NetworkDesign:
        z = np.zeros((self.instance.n_hubs, self.instance.n_hubs), dtype=bool)
        for (h, l), k in self.z_at.items():
            z[h, l] = x[k] > 0.5
        return NetworkDesign(open=z)

    def point_from(self, design: NetworkDesign, sp: Mapping[int, SubproblemResult],
                   adopt: Mapping[int, int]) -> np.ndarray:
        """Assemble the master-variable vector for an evaluated design."""
        x = np.zeros(self.n_vars)
        for (h, l), k in self.z_at.items():
            x[k] = 1.0 if design.open[h, l] else 0.0
        for r in self.trip_ids:
            x[self.d_at[r]] = sp[r].objective
        for r in self.latent_ids:
            x[self.delta_at[r]] = float(adopt[r])
            x[self.nu_at[r]] = adopt[r] * sp[r].objective
        return x


def build_master(instance: Instance) -> MasterModel:
    return MasterModel(instance)


def check_consistency(delta_bar: int, adopt: int) -> str:
    if delta_bar == 1 and adopt == 0:
        return CASE_1A
    if delta_bar == 0 and adopt == 1:
        return CASE_1B
    return CONSISTENT


def make_optimality_cut(trip: Trip, duals: DualSolution) -> Cut:
    """d_r >= (potential gap) - sum leg_dual * z, rearranged to a >= row."""
    nh = duals.leg_dual.shape[0]
    coeffs = tuple((h, l, float(duals.leg_dual[h, l]))
                   for h in range(nh) for l in range(nh)
                   if h != l and duals.leg_dual[h, l] != 0.0)
    rhs = float(duals.potential[trip.origin] - duals.potential[trip.destination])
    return Cut(kind="optimality", trip_id=trip.id, z_coeffs=coeffs, delta_coeff=0.0, d_coeff=1.0, rhs=rhs)


def make_consistency_cut(case: str, design: NetworkDesign, strengthened: bool, trip_id: int) -> Cut:
    """Forbid the observed disagreement between master adoption and the choice model.

    Strengthened forms drop the side of the design-change sum that provably
    cannot cure the disagreement under an anti-monotone choice model: closing
    legs only worsens routes (case A), opening legs only improves them (case B).
    """
    nh = design.n_hubs
    closed = [(h, l) for h in range(nh) for l in range(nh) if h != l and not design.open[h, l]]
    opened = [(h, l) for h in range(nh) for l in range(nh) if h != l and design.open[h, l]]
    if case == CASE_1A:
        coeffs = [(h, l, 1.0) for h, l in closed]
        rhs = 0.0
        if not strengthened:
            coeffs += [(h, l, -1.0) for h, l in opened]
            rhs = -float(len(opened))
        return Cut(kind="consistencyA", trip_id=trip_id, z_coeffs=tuple(coeffs),
                   delta_coeff=-1.0, d_coeff=0.0, rhs=rhs)
    if case == CASE_1B:
        coeffs = [(h, l, -1.0) for h, l in opened]
        if not strengthened:
            coeffs += [(h, l, 1.0) for h, l in closed]
        rhs = 1.0 - float(len(opened))
        return Cut(kind="consistencyB", trip_id=trip_id, z_coeffs=tuple(coeffs),
                   delta_coeff=1.0, d_coeff=0.0, rhs=rhs)
    raise ValueError(f"no consistency cut for case {case!r}")


def cut_violation(cut: Cut, design: NetworkDesign, delta_bar: Mapping[int, int],
                  d_bar: Mapping[int, float]) -> float:
    """Positive when the proposed master point violates the cut."""
    lhs = sum(coeff * (1.0 if design.open[h, l] else 0.0) for h, l, coeff in cut.z_coeffs)
    if cut.delta_coeff:
        lhs += cut.delta_coeff * delta_bar[cut.trip_id]
    if cut.d_coeff:
        lhs += cut.d_coeff * d_bar[cut.trip_id]
    return cut.rhs - lhs


def core_point(instance: Instance, eta: float) -> FractionalDesign:
    """Uniform interior design; trivially balanced at every hub."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie strictly inside (0, 1), got {eta}")
    nh = instance.n_hubs
    value = np.full((nh, nh), eta)
    np.fill_diagonal(value, 0.0)
    return FractionalDesign(value=value)


def upper_bound(instance: Instance, design: NetworkDesign, sp: Mapping[int, SubproblemResult],
                adopt: Mapping[int, int]) -> float:
    """Objective value of a design evaluated with consistent rider choices."""
    p, m = instance.params, instance.matrices
    total = 0.0
    for h, l in design.open_pairs():
        total += investment_cost(instance.hubs[h], instance.hubs[l], p, m)
    for trip in instance.trips:
        if trip.is_latent:
            total += trip.passengers * adopt[trip.id] * sp[trip.id].objective
        else:
            total += trip.passengers * sp[trip.id].objective
    return total


def default_choice_models(instance: Instance) -> dict[int, ChoiceModel]:
    return {t.id: ThresholdChoice(alpha=t.alpha, d_car=t.d_car) for t in instance.latent_trips()}


def _solve_all_followers(instance: Instance, design: NetworkDesign, threads: int) -> dict[int, SubproblemResult]:
    trips = instance.trips
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: solve_follower(instance, design, t), trips))
    else:
        results = [solve_follower(instance, design, t) for t in trips]
    return {res.trip_id: res for res in results}


def run(instance: Instance, config: RunConfig | None = None,
        choice_models: Mapping[int, ChoiceModel] | None = None) -> SolveResult:
    """Iterate master and routing subproblems until the bound gap closes.

    Stops when UB - LB <= epsilon or after max_iters (the result is then
    flagged as not proven optimal).  The returned incumbent is always a
    genuine design evaluated with choice-consistent adoption.
    """
    config = config or RunConfig()
    eps = config.epsilon if config.epsilon is not None else instance.params.epsilon
    models = dict(choice_models) if choice_models is not None else default_choice_models(instance)
    master = MasterModel(instance)
    trips_by_id = {t.id: t for t in instance.trips}
    core = core_point(instance, config.eta) if config.pareto else None

    lb = -np.inf
    ub = np.inf
    best: tuple[NetworkDesign, dict[int, SubproblemResult], dict[int, int]] | None = None
    warm: tuple[np.ndarray, float] | None = None
    trace: list[IterationLog] = []
    max_lin_gap = 0.0
    total_cuts = {"optimality": 0, "consistencyA": 0, "consistencyB": 0}
    proven = False

    if config.root_cuts and instance.trips:
        # Route weights are monotone in the design, so weights under the
        # all-open design are valid floors for d everywhere; these cuts have
        # no z terms and leave the first master's design proposal unchanged.
        full = NetworkDesign.full(instance.n_hubs)
        sp_full = _solve_all_followers(instance, full, config.threads)
        for trip in instance.trips:
            master.add_cut(make_optimality_cut(trip, tighten_duals(instance, full, trip, sp_full[trip.id].duals)))
            total_cuts["optimality"] += 1

    for it in range(1, config.max_iters + 1):
        mip = master.to_milp()
        if config.export_mps_dir is not None:
            out = Path(config.export_mps_dir)
            out.mkdir(parents=True, exist_ok=True)
            export_mps(mip, out / f"master_iter{it:03d}.mps", name=f"MASTER{it:03d}")
        msol = solve_milp(mip, config.milp, warm_start=warm)
        if msol.status not in ("optimal", "limit") or msol.x is None:
            raise RuntimeError(f"master solve failed with status {msol.status} at iteration {it}")
        lb = max(lb, msol.bound)
        design = master.design_from(msol.x)
        delta_bar = {r: int(round(msol.x[master.delta_at[r]])) for r in master.latent_ids}
        d_bar = {r: float(msol.x[master.d_at[r]]) for r in master.trip_ids}
        for r in master.latent_ids:
            gap = abs(msol.x[master.nu_at[r]] - delta_bar[r] * d_bar[r])
            max_lin_gap = max(max_lin_gap, gap)

        sp = _solve_all_followers(instance, design, config.threads)

        cuts_added = {"optimality": 0, "consistencyA": 0, "consistencyB": 0}
        for trip in instance.trips:
            if config.pareto:
                duals = solve_pareto_subproblem(instance, trip, design, sp[trip.id].objective, core)
            else:
                duals = tighten_duals(instance, design, trip, sp[trip.id].duals)
            cut = make_optimality_cut(trip, duals)
            if not config.lazy_cuts or cut_violation(cut, design, delta_bar, d_bar) > 1e-9:
                master.add_cut(cut)
                cuts_added["optimality"] += 1

        adopt: dict[int, int] = {}
        consistency: dict[int, str] = {}
        for r in master.latent_ids:
            adopt[r] = decide(models[r], sp[r].objective)
            case = check_consistency(delta_bar[r], adopt[r])
            consistency[r] = case
            if case != CONSISTENT:
                strengthened = config.strengthened and models[r].anti_monotone
                cut = make_consistency_cut(case, design, strengthened, r)
                master.add_cut(cut)
                cuts_added["consistencyA" if case == CASE_1A else "consistencyB"] += 1
        for kind, count in cuts_added.items():
            total_cuts[kind] += count

        ub_hat = upper_bound(instance, design, sp, adopt)
        if ub_hat < ub:
            ub = ub_hat
            best = (design, sp, adopt)
        warm = (master.point_from(*best), ub)

        log = IterationLog(iteration=it, lb=lb, ub=ub_hat, incumbent_ub=ub,
                           cuts_added=cuts_added, consistency=consistency,
                           master_nodes=msol.nodes, master_status=msol.status)
        trace.append(log)
        if config.log_sink is not None:
            config.log_sink(log)
        if ub - lb <= eps:
            proven = True
            break

    assert best is not None
    design, sp, adopt = best
    evaluation = evaluate_design(instance, design, choice_models=models)
    return SolveResult(design=design, objective=ub, lower_bound=lb, proven_optimal=proven,
                       iterations=len(trace), trace=trace, per_trip=sp, adoption=adopt,
                       evaluation=evaluation, max_linearization_gap=max_lin_gap,
                       total_cuts=total_cuts)


def solve_baseline(instance: Instance, config: RunConfig | None = None) -> SolveResult:
    """Design while ignoring latent trips, then evaluate on the full demand.

    The returned objective, bounds and trace describe the reduced design
    problem; per-trip routes, adoption and the evaluation cover every trip
    of the original instance under the resulting design.
    """
    reduced = Instance(stops=instance.stops, hubs=instance.hubs, matrices=instance.matrices,
                       trips=tuple(t for t in instance.trips if not t.is_latent),
                       params=instance.params)
    result = run(reduced, config)
    evaluation = evaluate_design(instance, result.design)
    return SolveResult(design=result.design, objective=result.objective,
                       lower_bound=result.lower_bound, proven_optimal=result.proven_optimal,
                       iterations=result.iterations, trace=result.trace,
                       per_trip=evaluation.per_trip, adoption=evaluation.adoption,
                       evaluation=evaluation, max_linearization_gap=result.max_linearization_gap,
                       total_cuts=result.total_cuts)


def evaluate_design(instance: Instance, design: NetworkDesign,
                    choice_models: Mapping[int, ChoiceModel] | None = None,
                    threads: int = 1) -> Evaluation:
    """Route every trip under a design and roll up adoption and cost metrics.

    Adoption counts pre-committed riders as users; latent riders follow
    their choice models.  Route time and price averages cover all obtained
    routes, adopted or not; dollar and seconds totals (and the combined
    weighted objective) cover only the trips that actually ride.
    """
    models = dict(choice_models) if choice_models is not None else default_choice_models(instance)
    sp = _solve_all_followers(instance, design, threads)
    per_class = {name: ClassMetrics(income_class=name) for name in ("low", "middle", "high")}
    adoption: dict[int, int] = {}
    trips_cost = 0.0
    convenience = 0.0
    for trip in instance.trips:
        metrics = per_class[trip.income_class]
        stats = route_stats(sp[trip.id].route, instance)
        metrics.trips += 1
        metrics.riders += trip.passengers
        metrics.route_time_total += stats["time_s"]
        metrics.route_price_total += stats["rider_price_dollars"]
        if trip.is_latent:
            adopted = decide(models[trip.id], sp[trip.id].objective)
            adoption[trip.id] = adopted
        else:
            adopted = 1
        if adopted:
            metrics.adopted_trips += 1
            metrics.adopted_riders += trip.passengers
            transfers = int(stats["transfers"])
            metrics.transfer_counts[transfers] = metrics.transfer_counts.get(transfers, 0) + 1
            trips_cost += trip.passengers * stats["rider_price_dollars"]
            convenience += trip.passengers * stats["time_s"]
    p, m = instance.params, instance.matrices
    investment = sum(investment_cost(instance.hubs[h], instance.hubs[l], p, m)
                     for h, l in design.open_pairs())
    combined = upper_bound(instance, design, sp, adoption)
    return Evaluation(per_class=per_class, investment=investment, trips_cost=trips_cost,
                      convenience_s=convenience, combined_weighted=combined,
                      per_trip=sp, adoption=adoption)
