"""Mode-choice models: does a latent rider adopt the transit system?

A model maps the weighted cost-and-convenience of the rider's best transit
route to a binary adoption decision.  Models that never become more eager
as the route gets worse (anti-monotone) unlock the stronger consistency
cuts in the decomposition; the flag on each model routes cut generation
accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence


class ChoiceModel(Protocol):
    anti_monotone: bool

    def decide(self, d: float) -> int:
        """1 if the rider adopts at weighted cost d, else 0."""


@dataclass(frozen=True)
class ThresholdChoice:
    """Adopt when the transit route is at most alpha times the car's weighted cost.

    The boundary adopts: d == alpha * d_car counts as a switch.  A step
    function of this shape is anti-monotone by construction.
    """

    alpha: float
    d_car: float
    anti_monotone: bool = True

    def decide(self, d: float) -> int:
        return 1 if d <= self.alpha * self.d_car else 0


@dataclass(frozen=True)
class CallableChoice:
    """Adapter for ad-hoc decision rules (used mostly by tests)."""

    fn: Callable[[float], int]
    anti_monotone: bool = False

    def decide(self, d: float) -> int:
        return int(self.fn(d))


def decide(model: ChoiceModel, d: float) -> int:
    if d < 0:
        raise ValueError(f"weighted cost must be nonnegative, got {d}")
    return model.decide(d)


def check_antimonotone(model: ChoiceModel, samples: Sequence[float]) -> tuple[bool, tuple[float, float] | None]:
    """Probe a model on sample costs; returns (ok, witness pair) on failure.

    A witness (d1, d2) has d1 <= d2 but decide(d1) < decide(d2), i.e. the
    model got more eager as the route got worse.
    """
    ranked = sorted(samples)
    decisions = [model.decide(d) for d in ranked]
    for (d1, y1), (d2, y2) in zip(zip(ranked, decisions), zip(ranked[1:], decisions[1:])):
        if y1 < y2:
            return False, (d1, d2)
    return True, None
