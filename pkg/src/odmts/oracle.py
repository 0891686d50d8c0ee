"""Exhaustive verification oracle for small hub counts.

Enumerates every balanced binary design, routes all trips under each one,
applies the choice models, and returns the exact optimum.  Exponential in
the number of hub pairs, hence the hard cap; used to certify the
decomposition on small instances and exposed through the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .benders import default_choice_models, upper_bound
from .choice import ChoiceModel, decide
from .instance import Instance
from .router import NetworkDesign, SubproblemResult, solve_follower


@dataclass
class OracleResult:
    objective: float
    design: NetworkDesign
    designs_enumerated: int
    per_trip: dict[int, SubproblemResult]
    adoption: dict[int, int]


def feasible_designs(n_hubs: int) -> Iterator[NetworkDesign]:
    """All binary designs whose opened in- and out-legs balance at every hub."""
    pairs = [(h, l) for h in range(n_hubs) for l in range(n_hubs) if h != l]
    for mask in range(1 << len(pairs)):
        z = np.zeros((n_hubs, n_hubs), dtype=bool)
        for bit, (h, l) in enumerate(pairs):
            if mask >> bit & 1:
                z[h, l] = True
        design = NetworkDesign(open=z)
        if design.is_weakly_connected():
            yield design


def oracle_optimum(instance: Instance, cap: int = 3,
                   choice_models: Mapping[int, ChoiceModel] | None = None) -> OracleResult:
    """Exact optimum by enumeration; raises when the hub count exceeds the cap."""
    if instance.n_hubs > cap:
        raise ValueError(f"{instance.n_hubs} hubs exceeds the enumeration cap {cap}")
    models = dict(choice_models) if choice_models is not None else default_choice_models(instance)
    best: OracleResult | None = None
    count = 0
    for design in feasible_designs(instance.n_hubs):
        count += 1
        sp = {t.id: solve_follower(instance, design, t) for t in instance.trips}
        adoption = {t.id: decide(models[t.id], sp[t.id].objective) for t in instance.latent_trips()}
        value = upper_bound(instance, design, sp, adoption)
        if best is None or value < best.objective:
            best = OracleResult(objective=value, design=design, designs_enumerated=0,
                                per_trip=sp, adoption=adoption)
    assert best is not None  # the empty design is always balanced
    best.designs_enumerated = count
    return best
