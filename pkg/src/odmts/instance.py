"""Problem instance: stops, hubs, trips, cost matrices and derived weights.

An instance couples a stop network (dense distance/time matrices, a hub
subset) with a trip table and the weighting parameters that turn raw miles
and seconds into the weighted cost-and-convenience units used everywhere
else.  Everything is immutable after load; loaders validate all structural
invariants up front so the solver can assume clean data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

INCOME_CLASSES = ("low", "middle", "high")

_TRI_TOL = 1e-9  # slack for triangle-inequality checks on float matrices


class InstanceError(ValueError):
    """Raised when an instance file fails structural or semantic validation."""


@dataclass(frozen=True)
class Stop:
    id: int
    is_hub: bool
    label: str | None = None
    position: tuple[float, float] | None = None  # (lon, lat), export only


@dataclass(frozen=True)
class CostMatrices:
    dist: np.ndarray  # miles, |N| x |N|, possibly asymmetric
    time: np.ndarray  # seconds, |N| x |N|


@dataclass(frozen=True)
class Trip:
    id: int
    origin: int
    destination: int
    passengers: int
    income_class: str
    is_latent: bool
    alpha: float | None = None       # choice threshold multiplier, latent only
    d_car: float | None = None       # weighted car cost, latent only
    car_time: float | None = None    # seconds, reporting only
    car_cost: float | None = None    # dollars, reporting only


@dataclass(frozen=True)
class WeightParams:
    theta: float                   # convenience weight in [0, 1]
    bus_cost_per_mile: float       # dollars
    num_buses: int                 # buses over the planning horizon
    shuttle_cost_per_mile: float   # dollars
    bus_wait: float                # average bus wait, seconds
    delta: float                   # shuttle reach threshold, miles
    big_m: float                   # penalty weight for over-threshold shuttle legs
    epsilon: float = 1e-6          # solver convergence tolerance


@dataclass(frozen=True)
class Instance:
    stops: tuple[Stop, ...]
    hubs: tuple[int, ...]          # stop ids, order fixes hub indexing
    matrices: CostMatrices
    trips: tuple[Trip, ...]
    params: WeightParams

    @property
    def n_stops(self) -> int:
        return len(self.stops)

    @property
    def n_hubs(self) -> int:
        return len(self.hubs)

    def latent_trips(self) -> list[Trip]:
        return [t for t in self.trips if t.is_latent]

    def committed_trips(self) -> list[Trip]:
        return [t for t in self.trips if not t.is_latent]


def investment_cost(h: int, l: int, params: WeightParams, matrices: CostMatrices) -> float:
    """Dollar cost of opening the bus leg from hub stop h to hub stop l."""
    if h == l:
        raise ValueError(f"self-leg not allowed: hub {h}")
    return (1.0 - params.theta) * params.bus_cost_per_mile * params.num_buses * float(matrices.dist[h, l])


def bus_weight(h: int, l: int, params: WeightParams, matrices: CostMatrices) -> float:
    """Weighted cost-and-convenience of riding the bus leg h -> l (trip independent)."""
    if h == l:
        raise ValueError(f"self-leg not allowed: hub {h}")
    return params.theta * (float(matrices.time[h, l]) + params.bus_wait)


def shuttle_weight(i: int, j: int, params: WeightParams, matrices: CostMatrices) -> float:
    """Weighted cost-and-convenience of an on-demand shuttle ride i -> j.

    Shuttles only serve rides up to the distance threshold; longer rides get
    the prohibitive penalty weight so they never appear in an optimal route
    unless nothing else connects the trip.
    """
    if i == j:
        raise ValueError(f"self-arc not allowed: stop {i}")
    d = float(matrices.dist[i, j])
    if d <= params.delta:
        return (1.0 - params.theta) * 0.5 * params.shuttle_cost_per_mile * d + params.theta * float(matrices.time[i, j])
    return params.big_m


def shuttle_price(i: int, j: int, params: WeightParams, matrices: CostMatrices) -> float:
    """Dollar price charged to the rider for shuttle ride i -> j (half the operating cost)."""
    return 0.5 * params.shuttle_cost_per_mile * float(matrices.dist[i, j])


def car_weight(theta: float, car_time: float, car_cost: float) -> float:
    """Weighted cost-and-convenience of a car trip from observed time and cost."""
    return theta * car_time + (1.0 - theta) * car_cost


def candidate_arcs(trip: Trip, instance: Instance) -> list[tuple[int, int]]:
    """Shuttle arcs worth considering for a trip: origin->hub, hub->destination, origin->destination.

    Self arcs (when the origin or destination is itself a hub) are dropped.
    """
    arcs: list[tuple[int, int]] = []
    for h in instance.hubs:
        if h != trip.origin:
            arcs.append((trip.origin, h))
    for h in instance.hubs:
        if h != trip.destination:
            arcs.append((h, trip.destination))
    arcs.append((trip.origin, trip.destination))
    return arcs


def metric_closure(matrices: CostMatrices) -> CostMatrices:
    """All-pairs shortest-path closure of both matrices (Floyd-Warshall).

    Entries never increase; the result satisfies the triangle inequality
    exactly.  Distance and time are closed independently.
    """
    return CostMatrices(dist=_floyd_warshall(matrices.dist), time=_floyd_warshall(matrices.time))


def _floyd_warshall(m: np.ndarray) -> np.ndarray:
    out = np.array(m, dtype=float, copy=True)
    n = out.shape[0]
    for k in range(n):
        np.minimum(out, out[:, k, None] + out[None, k, :], out=out)
    return out


def _triangle_violation(m: np.ndarray) -> tuple[int, int, int] | None:
    """First (i, k, j) with m[i,j] > m[i,k] + m[k,j] + tol, or None if metric."""
    n = m.shape[0]
    for k in range(n):
        via = m[:, k, None] + m[None, k, :]
        bad = np.argwhere(m > via + _TRI_TOL)
        if bad.size:
            i, j = map(int, bad[0])
            return i, k, j
    return None


def default_big_m(hubs: tuple[int, ...], params: WeightParams, matrices: CostMatrices) -> float:
    """Penalty weight large enough that no over-threshold shuttle leg is ever attractive.

    Ten times the worst finite-branch shuttle weight (threshold ignored) plus
    ten times the worst bus weight per hub bounds any simple route.
    """
    n = matrices.dist.shape[0]
    off = ~np.eye(n, dtype=bool)
    gamma_free = (1.0 - params.theta) * 0.5 * params.shuttle_cost_per_mile * matrices.dist + params.theta * matrices.time
    worst_shuttle = float(gamma_free[off].max()) if n > 1 else 0.0
    worst_bus = 0.0
    if len(hubs) > 1:
        hub_idx = np.array(hubs)
        tau = params.theta * (matrices.time[np.ix_(hub_idx, hub_idx)] + params.bus_wait)
        worst_bus = float(tau[~np.eye(len(hubs), dtype=bool)].max())
    return 10.0 * worst_shuttle + 10.0 * worst_bus * max(len(hubs), 1)


def max_finite_route_weight(hubs: tuple[int, ...], params: WeightParams, matrices: CostMatrices) -> float:
    """Upper bound on the weight of any simple route that avoids penalty arcs."""
    n = matrices.dist.shape[0]
    off = ~np.eye(n, dtype=bool)
    gamma = (1.0 - params.theta) * 0.5 * params.shuttle_cost_per_mile * matrices.dist + params.theta * matrices.time
    finite = gamma[off & (matrices.dist <= params.delta)]
    worst_shuttle = float(finite.max()) if finite.size else 0.0
    worst_bus = 0.0
    if len(hubs) > 1:
        hub_idx = np.array(hubs)
        tau = params.theta * (matrices.time[np.ix_(hub_idx, hub_idx)] + params.bus_wait)
        worst_bus = float(tau[~np.eye(len(hubs), dtype=bool)].max())
    return 2.0 * worst_shuttle + max(len(hubs) - 1, 0) * worst_bus


_SCHEMA_CACHE: dict | None = None


def instance_schema() -> dict:
    """The JSON schema instance files are validated against."""
    global _SCHEMA_CACHE
    if _SCHEMA_CACHE is None:
        text = resources.files("odmts.data").joinpath("instance.schema.json").read_text()
        _SCHEMA_CACHE = json.loads(text)
    return _SCHEMA_CACHE


def load_instance(path: str | Path) -> Instance:
    """Load and validate an instance from a JSON file.

    Raises InstanceError on malformed files, invariant violations (reported
    with the offending indices) or an explicit big_m that is too small.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: not valid JSON: {exc}") from exc
    return parse_instance(raw, source=str(path))


def parse_instance(raw: dict, source: str = "<dict>") -> Instance:
    try:
        jsonschema.validate(raw, instance_schema())
    except jsonschema.ValidationError as exc:
        raise InstanceError(f"{source}: schema violation at {list(exc.absolute_path)}: {exc.message}") from exc

    stops = tuple(
        Stop(
            id=int(s["id"]),
            is_hub=bool(s["is_hub"]),
            label=s.get("label"),
            position=tuple(s["position"]) if s.get("position") is not None else None,
        )
        for s in raw["stops"]
    )
    n = len(stops)
    ids = [s.id for s in stops]
    if ids != list(range(n)):
        raise InstanceError(f"{source}: stop ids must be dense 0..{n - 1}, got {ids[:10]}...")

    hubs = tuple(int(h) for h in raw["hubs"])
    hub_flags = {s.id for s in stops if s.is_hub}
    if set(hubs) != hub_flags:
        raise InstanceError(f"{source}: hubs list {sorted(hubs)} disagrees with is_hub flags {sorted(hub_flags)}")
    if len(set(hubs)) != len(hubs):
        raise InstanceError(f"{source}: duplicate hub ids in {hubs}")

    dist = np.array(raw["dist"], dtype=float)
    time = np.array(raw["time"], dtype=float)
    for name, m in (("dist", dist), ("time", time)):
        if m.shape != (n, n):
            raise InstanceError(f"{source}: {name} must be {n}x{n}, got {m.shape}")
        if (m < 0).any():
            i, j = map(int, np.argwhere(m < 0)[0])
            raise InstanceError(f"{source}: {name}[{i}][{j}] = {m[i, j]} is negative")
        if np.diag(m).any():
            i = int(np.flatnonzero(np.diag(m))[0])
            raise InstanceError(f"{source}: {name}[{i}][{i}] must be zero")

    matrices = CostMatrices(dist=dist, time=time)
    if raw.get("auto_close", False):
        matrices = metric_closure(matrices)
    else:
        for name, m in (("dist", matrices.dist), ("time", matrices.time)):
            bad = _triangle_violation(m)
            if bad is not None:
                i, k, j = bad
                raise InstanceError(
                    f"{source}: {name} violates the triangle inequality at ({i},{k},{j}): "
                    f"{m[i, j]} > {m[i, k]} + {m[k, j]}; set auto_close to repair"
                )

    p = raw["params"]
    params = WeightParams(
        theta=float(p["theta"]),
        bus_cost_per_mile=float(p["bus_cost_per_mile"]),
        num_buses=int(p["num_buses"]),
        shuttle_cost_per_mile=float(p["shuttle_cost_per_mile"]),
        bus_wait=float(p["bus_wait"]),
        delta=float(p["delta"]),
        big_m=float(p["big_m"]) if p.get("big_m") is not None else 0.0,
        epsilon=float(p.get("epsilon", 1e-6)),
    )
    if not 0.0 <= params.theta <= 1.0:
        raise InstanceError(f"{source}: theta must be in [0, 1], got {params.theta}")
    if p.get("big_m") is None:
        params = replace(params, big_m=default_big_m(hubs, params, matrices))
    else:
        bound = max_finite_route_weight(hubs, params, matrices)
        if params.big_m <= bound:
            raise InstanceError(
                f"{source}: big_m = {params.big_m} too small; must exceed the worst finite route weight {bound}"
            )

    trips = []
    for t in raw["trips"]:
        trip = Trip(
            id=int(t["id"]),
            origin=int(t["origin"]),
            destination=int(t["destination"]),
            passengers=int(t["passengers"]),
            income_class=t["income_class"],
            is_latent=bool(t["is_latent"]),
            alpha=float(t["alpha"]) if t.get("alpha") is not None else None,
            d_car=float(t["d_car"]) if t.get("d_car") is not None else None,
            car_time=float(t["car_time"]) if t.get("car_time") is not None else None,
            car_cost=float(t["car_cost"]) if t.get("car_cost") is not None else None,
        )
        if not (0 <= trip.origin < n and 0 <= trip.destination < n):
            raise InstanceError(f"{source}: trip {trip.id} endpoint out of range ({trip.origin}, {trip.destination})")
        if trip.origin == trip.destination:
            raise InstanceError(f"{source}: degenerate trip {trip.id}: origin == destination == {trip.origin}")
        if trip.passengers < 1:
            raise InstanceError(f"{source}: trip {trip.id} needs a positive passenger count")
        if trip.is_latent:
            if trip.d_car is None and trip.car_time is not None and trip.car_cost is not None:
                trip = replace(trip, d_car=car_weight(params.theta, trip.car_time, trip.car_cost))
            if trip.alpha is None or trip.d_car is None:
                raise InstanceError(f"{source}: latent trip {trip.id} must carry alpha and d_car (or car_time+car_cost)")
            if trip.alpha <= 0 or trip.d_car < 0:
                raise InstanceError(f"{source}: latent trip {trip.id} has alpha={trip.alpha}, d_car={trip.d_car}")
        elif trip.alpha is not None or trip.d_car is not None:
            raise InstanceError(f"{source}: pre-committed trip {trip.id} must not carry alpha/d_car")
        trips.append(trip)
    ids = [t.id for t in trips]
    if len(set(ids)) != len(ids):
        raise InstanceError(f"{source}: duplicate trip ids")

    return Instance(stops=stops, hubs=hubs, matrices=matrices, trips=tuple(trips), params=params)


def instance_to_dict(instance: Instance) -> dict:
    """Inverse of parse_instance; suitable for json.dump."""
    return {
        "stops": [
            {
                "id": s.id,
                "is_hub": s.is_hub,
                **({"label": s.label} if s.label is not None else {}),
                **({"position": list(s.position)} if s.position is not None else {}),
            }
            for s in instance.stops
        ],
        "hubs": list(instance.hubs),
        "dist": instance.matrices.dist.tolist(),
        "time": instance.matrices.time.tolist(),
        "trips": [
            {
                "id": t.id,
                "origin": t.origin,
                "destination": t.destination,
                "passengers": t.passengers,
                "income_class": t.income_class,
                "is_latent": t.is_latent,
                **({"alpha": t.alpha} if t.alpha is not None else {}),
                **({"d_car": t.d_car} if t.d_car is not None else {}),
                **({"car_time": t.car_time} if t.car_time is not None else {}),
                **({"car_cost": t.car_cost} if t.car_cost is not None else {}),
            }
            for t in instance.trips
        ],
        "params": {
            "theta": instance.params.theta,
            "bus_cost_per_mile": instance.params.bus_cost_per_mile,
            "num_buses": instance.params.num_buses,
            "shuttle_cost_per_mile": instance.params.shuttle_cost_per_mile,
            "bus_wait": instance.params.bus_wait,
            "delta": instance.params.delta,
            "big_m": instance.params.big_m,
            "epsilon": instance.params.epsilon,
        },
    }


def save_instance(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=1, sort_keys=True))
