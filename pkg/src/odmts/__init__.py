"""Design of on-demand multimodal transit networks under latent rider demand.

The library couples a hub-leg network design problem with per-trip routing
and personalized mode-choice models, solved by a cut-based decomposition.
See the README for the file formats and the command-line interface.
"""

from .benders import (Evaluation, IterationLog, RunConfig, SolveResult, evaluate_design, run,
                      solve_baseline)
from .choice import ThresholdChoice, check_antimonotone
from .instance import Instance, InstanceError, Trip, WeightParams, load_instance, metric_closure
from .oracle import oracle_optimum
from .router import NetworkDesign, RoutePlan, SubproblemResult, route_stats, solve_follower

__version__ = "0.1.0"

__all__ = [
    "Evaluation", "Instance", "InstanceError", "IterationLog", "NetworkDesign", "RoutePlan",
    "RunConfig", "SolveResult", "SubproblemResult", "ThresholdChoice", "Trip", "WeightParams",
    "check_antimonotone", "evaluate_design", "load_instance", "metric_closure", "oracle_optimum",
    "route_stats", "run", "solve_baseline", "solve_follower", "__version__",
]
