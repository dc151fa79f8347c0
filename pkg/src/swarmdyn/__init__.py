"""swarmdyn: layout and linear-transformation dynamics of dynamic swarms."""

__version__ = "0.1.0"

from . import analysis, core, dynamics, features, layout, neighborhood, synthgen
from .core import (
    ElementMatte,
    FeatureVector,
    GridFrame,
    ModelParams,
    SwarmLayout,
    SwarmModel,
    Transform,
    validate_sequence,
)
from .dynamics import IcmConfig, LearnConfig, icm_learn, learn
from .errors import ConfigError, FaultError, SwarmdynError

__all__ = [
    "__version__",
    "analysis",
    "core",
    "dynamics",
    "features",
    "layout",
    "neighborhood",
    "synthgen",
    "ElementMatte",
    "FeatureVector",
    "GridFrame",
    "ModelParams",
    "SwarmLayout",
    "SwarmModel",
    "Transform",
    "validate_sequence",
    "IcmConfig",
    "LearnConfig",
    "icm_learn",
    "learn",
    "ConfigError",
    "FaultError",
    "SwarmdynError",
]
