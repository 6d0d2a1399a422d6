"""Conditional signal priority for schedule- and headway-based bus operation."""

from .config import (BASELINE_COMPONENTS, ConfigError, ControlPolicy, CorridorConfig,
                     TravelTimeComponents, build_config, derive_travel_components)
from .engine import replicate, run_closed_loop, run_open_corridor

__all__ = [
    "BASELINE_COMPONENTS", "ConfigError", "ControlPolicy", "CorridorConfig",
    "TravelTimeComponents", "build_config", "derive_travel_components",
    "replicate", "run_closed_loop", "run_open_corridor",
]
__version__ = "0.1.0"
