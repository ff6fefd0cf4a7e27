"""evcorridor: macroscopic traffic simulation plus return-conditioned
sequence models for emergency-vehicle corridor control."""

from .gridnet import (
    DerivedParams,
    GridSpec,
    Network,
    P_PHASES,
    build_grid,
    cell_flow,
    derive_params,
    load_grid_config,
)
from .env import CorridorEnv, RewardWeights, Scenario, StepResult
from .ev import EvRoute, EvState, build_route, ev_features, ev_speed, sample_route

__version__ = "0.1.0"

__all__ = [
    "DerivedParams", "GridSpec", "Network", "P_PHASES",
    "build_grid", "cell_flow", "derive_params", "load_grid_config",
    "CorridorEnv", "RewardWeights", "Scenario", "StepResult",
    "EvRoute", "EvState", "build_route", "ev_features", "ev_speed",
    "sample_route",
]
