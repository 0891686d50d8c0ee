"""Synthetic instance generation.

Produces square-grid cities with hubs on a central ring, Euclidean (hence
metric) distances, and income classes assigned radially so that low-income
destinations sit farthest from the hub corridor and get the longest
commutes.  Everything is driven by one seeded RNG: the same config always
yields a byte-identical instance file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .instance import (CostMatrices, Instance, Stop, Trip, WeightParams, car_weight,
                       default_big_m)

DEFAULT_PRECOMMIT = {"low": 1.00, "middle": 0.75, "high": 0.50}
DEFAULT_ALPHA = {"low": 1.5, "middle": 1.25, "high": 1.0}


@dataclass(frozen=True)
class GeneratorConfig:
    n_stops: int = 40
    n_hubs: int = 6
    n_trips: int = 80
    extent_miles: float = 10.0
    income_pattern: str = "radial"                # "radial" | "uniform"
    precommit_shares: dict = field(default_factory=lambda: dict(DEFAULT_PRECOMMIT))
    alphas: dict = field(default_factory=lambda: dict(DEFAULT_ALPHA))
    shuttle_speed_mph: float = 20.0
    car_speed_mph: float = 25.0
    car_cost_per_mile: float = 2.0
    max_passengers: int = 4
    theta: float = 0.01
    delta_miles: float = 2.0
    bus_cost_per_mile: float = 7.24
    shuttle_cost_per_mile: float = 2.86
    num_buses: int = 16
    bus_wait_s: float = 450.0
    epsilon: float = 1e-6
    seed: int = 0

    def validate(self) -> None:
        if self.n_hubs < 0 or self.n_stops < max(self.n_hubs, 2):
            raise ValueError(f"need at least max(n_hubs, 2) stops, got {self.n_stops} stops / {self.n_hubs} hubs")
        if self.income_pattern not in ("radial", "uniform"):
            raise ValueError(f"unknown income pattern {self.income_pattern!r}")
        for name, share in self.precommit_shares.items():
            if not 0.0 <= share <= 1.0:
                raise ValueError(f"pre-commit share for {name} must be in [0, 1], got {share}")
        for name, alpha in self.alphas.items():
            if alpha <= 0:
                raise ValueError(f"alpha for {name} must be positive, got {alpha}")


def generate_instance(config: GeneratorConfig) -> Instance:
    config.validate()
    rng = np.random.default_rng(config.seed)
    ext = config.extent_miles
    center = np.array([ext / 2.0, ext / 2.0])

    # hubs on a ring around the center, remaining stops uniform over the square
    n, nh = config.n_stops, config.n_hubs
    angles = 2.0 * np.pi * (np.arange(nh) + 0.5) / max(nh, 1)
    ring = center + (ext / 4.0) * np.column_stack([np.cos(angles), np.sin(angles)])
    ring += rng.normal(scale=ext / 40.0, size=ring.shape)
    others = rng.random((n - nh, 2)) * ext
    points = np.vstack([ring, others]) if nh else others
    points = np.clip(points, 0.0, ext)

    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    np.fill_diagonal(dist, 0.0)
    time = dist / config.shuttle_speed_mph * 3600.0

    if config.income_pattern == "radial":
        radial = np.linalg.norm(points - center, axis=1)
        lo, hi = np.quantile(radial, [1.0 / 3.0, 2.0 / 3.0])
        zone = np.where(radial <= lo, "high", np.where(radial <= hi, "middle", "low"))
    else:
        zone = rng.choice(["low", "middle", "high"], size=n)

    stops = tuple(
        Stop(id=i, is_hub=i < nh, label=f"stop{i}", position=(float(points[i, 0]), float(points[i, 1])))
        for i in range(n)
    )
    params = WeightParams(
        theta=config.theta,
        bus_cost_per_mile=config.bus_cost_per_mile,
        num_buses=config.num_buses,
        shuttle_cost_per_mile=config.shuttle_cost_per_mile,
        bus_wait=config.bus_wait_s,
        delta=config.delta_miles,
        big_m=0.0,
        epsilon=config.epsilon,
    )
    matrices = CostMatrices(dist=dist, time=time)
    hubs = tuple(range(nh))
    params = replace(params, big_m=default_big_m(hubs, params, matrices))

    trips = []
    for t in range(config.n_trips):
        o, d = (int(v) for v in rng.choice(n, size=2, replace=False))
        income = str(zone[d])
        share = config.precommit_shares.get(income, 1.0)
        latent = bool(rng.random() >= share)
        car_time = float(dist[o, d] / config.car_speed_mph * 3600.0)
        car_cost = float(config.car_cost_per_mile * dist[o, d])
        trips.append(Trip(
            id=t,
            origin=o,
            destination=d,
            passengers=int(rng.integers(1, config.max_passengers + 1)),
            income_class=income,
            is_latent=latent,
            alpha=config.alphas[income] if latent else None,
            d_car=car_weight(config.theta, car_time, car_cost) if latent else None,
            car_time=car_time,
            car_cost=car_cost,
        ))
    return Instance(stops=stops, hubs=hubs, matrices=matrices, trips=tuple(trips), params=params)


def with_precommit_share(instance: Instance, share: float,
                         alphas: dict | None = None) -> Instance:
    """Relabel latent/pre-committed status so each income class pre-commits a given share.

    Deterministic: within each class (ordered by trip id) the first
    round(share * class size) trips stay on transit, the rest become latent.
    Trips turning latent keep their own alpha when present, otherwise the
    class default; their car weight comes from recorded car time and cost.
    """
    if not 0.0 <= share <= 1.0:
        raise ValueError(f"share must be in [0, 1], got {share}")
    alphas = {**DEFAULT_ALPHA, **(alphas or {})}
    by_class: dict[str, list[Trip]] = {}
    for trip in instance.trips:
        by_class.setdefault(trip.income_class, []).append(trip)
    keep_committed: set[int] = set()
    for name, members in by_class.items():
        members.sort(key=lambda t: t.id)
        k = int(round(share * len(members)))
        keep_committed.update(t.id for t in members[:k])
    relabeled = []
    for trip in instance.trips:
        if trip.id in keep_committed:
            relabeled.append(replace(trip, is_latent=False, alpha=None, d_car=None))
            continue
        alpha = trip.alpha if trip.alpha is not None else alphas[trip.income_class]
        d_car = trip.d_car
        if d_car is None:
            if trip.car_time is None or trip.car_cost is None:
                raise ValueError(f"trip {trip.id} lacks car_time/car_cost; cannot relabel it latent")
            d_car = car_weight(instance.params.theta, trip.car_time, trip.car_cost)
        relabeled.append(replace(trip, is_latent=True, alpha=alpha, d_car=d_car))
    return replace(instance, trips=tuple(relabeled))
