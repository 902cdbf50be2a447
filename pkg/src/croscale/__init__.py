"""Cross-scale visual representation learning and belief-map localization."""

from .core_types import (
    BeliefMap,
    PixelCoord,
    Raster,
    SimplexVec,
    WorldPose,
    belief_at,
    bilinear_sample,
    patch_to_world,
    world_to_patch,
)
from .errors import ArgumentError, CroscaleError, FormatError, NumericalError

__all__ = [
    "ArgumentError",
    "BeliefMap",
    "CroscaleError",
    "FormatError",
    "NumericalError",
    "PixelCoord",
    "Raster",
    "SimplexVec",
    "WorldPose",
    "belief_at",
    "bilinear_sample",
    "patch_to_world",
    "world_to_patch",
]

__version__ = "0.1.0"
