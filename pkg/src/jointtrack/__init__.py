"""Joint self-localization and target tracking for a robot team under safety constraints."""

from .core import ConfigError, JointBelief, ScenarioConfig, TargetScript, load_config, tracking_demo_config, validate_config

__all__ = [
    "ConfigError",
    "JointBelief",
    "ScenarioConfig",
    "TargetScript",
    "load_config",
    "tracking_demo_config",
    "validate_config",
]
__version__ = "0.1.0"
