"""Per-trip routing under a fixed network design, with dual certificates.

Once the bus legs are fixed, the best route for a trip is a shortest path on
a small graph: the trip's candidate shuttle arcs plus every open bus leg.
Only the origin, the destination and the hubs ever appear as nodes, so each
solve touches at most |H| + 2 nodes no matter how many stops the instance
has.  A label-setting search from the destination yields, in one pass, the
optimal route weight, the route itself, and node potentials that certify
optimality as a feasible dual solution.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance, Trip, bus_weight, candidate_arcs, shuttle_price, shuttle_weight

DUALITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class NetworkDesign:
    """Open/closed state per ordered hub pair, indexed by hub position.

    The diagonal is meaningless (self-legs are excluded from the model) and
    always kept False.  Feasible designs balance opened in- and out-legs at
    every hub; the routing code accepts any design, balanced or not.
    """

    open: np.ndarray  # (n_hubs, n_hubs) bool

    @classmethod
    def empty(cls, n_hubs: int) -> NetworkDesign:
        return cls(open=np.zeros((n_hubs, n_hubs), dtype=bool))

    @classmethod
    def full(cls, n_hubs: int) -> NetworkDesign:
        return cls(open=~np.eye(n_hubs, dtype=bool))

    @classmethod
    def from_pairs(cls, n_hubs: int, pairs) -> NetworkDesign:
        z = np.zeros((n_hubs, n_hubs), dtype=bool)
        for h, l in pairs:
            if h == l:
                raise ValueError(f"self-leg ({h},{h}) not allowed")
            z[h, l] = True
        return cls(open=z)

    @property
    def n_hubs(self) -> int:
        return self.open.shape[0]

    def open_pairs(self) -> list[tuple[int, int]]:
        return [(int(h), int(l)) for h, l in np.argwhere(self.open)]

    def count_open(self) -> int:
        return int(self.open.sum())

    def is_weakly_connected(self) -> bool:
        """Per-hub balance of opened incoming and outgoing legs."""
        return bool((self.open.sum(axis=1) == self.open.sum(axis=0)).all())

    def key(self) -> bytes:
        return np.packbits(self.open).tobytes()

    def __eq__(self, other) -> bool:
        return isinstance(other, NetworkDesign) and np.array_equal(self.open, other.open)

    def __le__(self, other: NetworkDesign) -> bool:
        return bool((~self.open | other.open).all())


@dataclass(frozen=True, eq=False)
class FractionalDesign:
    """Relaxed design with leg values in [0, 1]; used as a cut anchor point."""

    value: np.ndarray  # (n_hubs, n_hubs) float, zero diagonal

    @property
    def n_hubs(self) -> int:
        return self.value.shape[0]


@dataclass(frozen=True)
class Leg:
    from_stop: int
    to_stop: int
    mode: str  # "shuttle" | "bus"


@dataclass(frozen=True)
class RoutePlan:
    legs: tuple[Leg, ...]


@dataclass(frozen=True)
class DualSolution:
    """Feasible dual of the routing LP: a potential per stop, a penalty per leg.

    potential[i] is the remaining weight from stop i to the destination;
    leg_dual[h, l] compensates closed bus legs whose potentials would
    otherwise violate the bus-arc dual constraint.
    """

    potential: np.ndarray  # (n_stops,) float, zero outside the trip's graph
    leg_dual: np.ndarray   # (n_hubs, n_hubs) float, zero diagonal

    def objective(self, trip: Trip, design_open: np.ndarray) -> float:
        return float(self.potential[trip.origin] - self.potential[trip.destination]
                     - (self.leg_dual * design_open).sum())

    def cut_value(self, trip: Trip, z: np.ndarray) -> float:
        """Evaluate the induced optimality-cut right-hand side at design values z."""
        return float(self.potential[trip.origin] - self.potential[trip.destination]
                     - (self.leg_dual * z).sum())


@dataclass(frozen=True)
class SubproblemResult:
    trip_id: int
    objective: float
    route: RoutePlan
    duals: DualSolution


@dataclass(frozen=True)
class _TripGraph:
    nodes: list[int]
    # per (i, j): (weight, mode); parallel bus/shuttle arcs merged keeping the cheaper
    arcs: dict[tuple[int, int], tuple[float, str]]
    out_arcs: dict[int, list[tuple[int, float, str]]] = field(repr=False, default_factory=dict)
    in_arcs: dict[int, list[tuple[int, float]]] = field(repr=False, default_factory=dict)


def build_trip_graph(instance: Instance, design: NetworkDesign, trip: Trip) -> _TripGraph:
    p, m = instance.params, instance.matrices
    arcs: dict[tuple[int, int], tuple[float, str]] = {}
    for i, j in candidate_arcs(trip, instance):
        arcs[(i, j)] = (shuttle_weight(i, j, p, m), "shuttle")
    for h, l in design.open_pairs():
        hs, ls = instance.hubs[h], instance.hubs[l]
        w = bus_weight(hs, ls, p, m)
        prior = arcs.get((hs, ls))
        if prior is None or w <= prior[0]:  # equal-weight tie goes to the bus
            arcs[(hs, ls)] = (w, "bus")
    nodes = sorted({trip.origin, trip.destination, *instance.hubs})
    out_arcs: dict[int, list[tuple[int, float, str]]] = {n: [] for n in nodes}
    in_arcs: dict[int, list[tuple[int, float]]] = {n: [] for n in nodes}
    for (i, j), (w, mode) in arcs.items():
        out_arcs[i].append((j, w, mode))
        in_arcs[j].append((i, w))
    return _TripGraph(nodes=nodes, arcs=arcs, out_arcs=out_arcs, in_arcs=in_arcs)


def distances_to_destination(graph: _TripGraph, destination: int) -> dict[int, float]:
    """Label-setting search on the reversed graph; weights are nonnegative."""
    dist: dict[int, float] = {}
    heap: list[tuple[float, int]] = [(0.0, destination)]
    while heap:
        d, j = heapq.heappop(heap)
        if j in dist:
            continue
        dist[j] = d
        for i, w in graph.in_arcs[j]:
            if i not in dist:
                heapq.heappush(heap, (w + d, i))
    return dist


def _reconstruct_route(graph: _TripGraph, dist: dict[int, float], origin: int, destination: int) -> RoutePlan:
    """Cheapest route; ties broken toward fewer legs, then lexicographically.

    An arc is tight when it lies on some shortest path (exact float equality
    holds for at least one arc per node because labels were set through such
    sums).  A breadth-first pass over tight arcs counts minimum legs, then a
    greedy descent picks the smallest next stop at each step.
    """
    legs_needed: dict[int, int] = {destination: 0}
    frontier = deque([destination])
    while frontier:
        j = frontier.popleft()
        for i, w in graph.in_arcs[j]:
            if i not in legs_needed and i in dist and dist[i] == w + dist[j]:
                legs_needed[i] = legs_needed[j] + 1
                frontier.append(i)
    legs: list[Leg] = []
    node = origin
    while node != destination:
        best = None
        for j, w, mode in graph.out_arcs[node]:
            if j in legs_needed and dist[node] == w + dist[j] and legs_needed[j] == legs_needed[node] - 1:
                if best is None or j < best[0]:
                    best = (j, mode)
        if best is None:  # cannot happen: every node has a tight outgoing arc
            raise RuntimeError(f"route reconstruction failed at stop {node}")
        legs.append(Leg(from_stop=node, to_stop=best[0], mode=best[1]))
        node = best[0]
    return RoutePlan(legs=tuple(legs))


def extract_duals(instance: Instance, design: NetworkDesign, trip: Trip,
                  dist_to_destination: dict[int, float]) -> DualSolution:
    """Turn destination distances into a feasible, optimal dual solution.

    Potentials are the distances themselves; closed legs absorb any slack
    violation of the bus-arc constraint into their penalty variable, open
    legs need none by shortest-path optimality.  Infeasibility here means
    the distances were not true shortest-path values.
    """
    p, m = instance.params, instance.matrices
    u = np.zeros(instance.n_stops)
    for i, d in dist_to_destination.items():
        u[i] = d
    nh = instance.n_hubs
    v = np.zeros((nh, nh))
    for h in range(nh):
        for l in range(nh):
            if h == l or design.open[h, l]:
                continue
            slack = u[instance.hubs[h]] - u[instance.hubs[l]] - bus_weight(instance.hubs[h], instance.hubs[l], p, m)
            if slack > 0:
                v[h, l] = slack
    duals = DualSolution(potential=u, leg_dual=v)
    err = dual_infeasibility(instance, design, trip, duals)
    if err > DUALITY_TOL:
        raise RuntimeError(f"dual extraction produced infeasible duals (violation {err}); shortest path is buggy")
    return duals


def tighten_duals(instance: Instance, design: NetworkDesign, trip: Trip, duals: DualSolution) -> DualSolution:
    """Alternative optimal dual with potentials clamped at the origin's value.

    Clamping keeps feasibility (potential differences never grow) and leaves
    the dual objective at the generating design unchanged, but it shrinks the
    closed-leg penalties, so the induced optimality cut never overstates what
    opening a leg could save.  Cuts built from these duals dominate the raw
    ones at every other design.
    """
    p, m = instance.params, instance.matrices
    cap = float(duals.potential[trip.origin])
    u = np.minimum(duals.potential, cap)
    nh = instance.n_hubs
    v = np.zeros((nh, nh))
    for h in range(nh):
        for l in range(nh):
            if h == l or design.open[h, l]:
                continue
            slack = u[instance.hubs[h]] - u[instance.hubs[l]] - bus_weight(instance.hubs[h], instance.hubs[l], p, m)
            if slack > 0:
                v[h, l] = slack
    return DualSolution(potential=u, leg_dual=v)


def dual_infeasibility(instance: Instance, design: NetworkDesign, trip: Trip, duals: DualSolution) -> float:
    """Largest constraint violation of the dual system; 0 for feasible points."""
    p, m = instance.params, instance.matrices
    u, v = duals.potential, duals.leg_dual
    worst = max(0.0, float(-u.min()), float(-v.min()))
    for h in range(instance.n_hubs):
        for l in range(instance.n_hubs):
            if h == l:
                continue
            hs, ls = instance.hubs[h], instance.hubs[l]
            worst = max(worst, u[hs] - u[ls] - v[h, l] - bus_weight(hs, ls, p, m))
    for i, j in candidate_arcs(trip, instance):
        worst = max(worst, u[i] - u[j] - shuttle_weight(i, j, p, m))
    return worst


def solve_follower(instance: Instance, design: NetworkDesign, trip: Trip) -> SubproblemResult:
    """Best route, its weight, and a dual certificate for one trip.

    Always feasible: the direct origin-destination shuttle arc exists for
    every trip (possibly at the penalty weight).
    """
    graph = build_trip_graph(instance, design, trip)
    dist = distances_to_destination(graph, trip.destination)
    objective = dist[trip.origin]
    route = _reconstruct_route(graph, dist, trip.origin, trip.destination)
    duals = extract_duals(instance, design, trip, dist)
    gap = abs(objective - duals.objective(trip, design.open))
    if gap > DUALITY_TOL:
        raise RuntimeError(f"strong duality violated for trip {trip.id}: gap {gap}")
    return SubproblemResult(trip_id=trip.id, objective=objective, route=route, duals=duals)


def route_stats(route: RoutePlan, instance: Instance) -> dict[str, float]:
    """Rider-facing numbers for a route: clock time, fare, shuttle miles, transfers."""
    p, m = instance.params, instance.matrices
    time_s = 0.0
    price = 0.0
    shuttle_miles = 0.0
    bus_legs = 0
    for leg in route.legs:
        time_s += float(m.time[leg.from_stop, leg.to_stop])
        if leg.mode == "bus":
            time_s += p.bus_wait
            bus_legs += 1
        else:
            shuttle_miles += float(m.dist[leg.from_stop, leg.to_stop])
            price += shuttle_price(leg.from_stop, leg.to_stop, p, m)
    return {
        "time_s": time_s,
        "rider_price_dollars": price,
        "shuttle_miles": shuttle_miles,
        "bus_legs": float(bus_legs),
        "transfers": float(max(0, len(route.legs) - 1)),
    }
