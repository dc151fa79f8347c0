from .types import (
    CONSTRAINT_TAGS,
    ElementMatte,
    FeatureVector,
    GridFrame,
    IcmDiagnostics,
    ModelParams,
    SwarmLayout,
    SwarmModel,
    Transform,
    check_constraint,
    layout_from_masks,
)
from .validate import validate_sequence
from . import bundle, pnm, rle

__all__ = [
    "CONSTRAINT_TAGS",
    "ElementMatte",
    "FeatureVector",
    "GridFrame",
    "IcmDiagnostics",
    "ModelParams",
    "SwarmLayout",
    "SwarmModel",
    "Transform",
    "check_constraint",
    "layout_from_masks",
    "validate_sequence",
    "bundle",
    "pnm",
    "rle",
]
