"""Numerical laboratory for conformally weighted planes and spike surfaces."""
from .spaces import (Box, Disk, ExampleId, SpaceError, SpaceHandle, SpikeSurface, WeightField,
                     ambient_distance, make_example, weight_at)

__all__ = ["Box", "Disk", "ExampleId", "SpaceError", "SpaceHandle", "SpikeSurface",
           "WeightField", "ambient_distance", "make_example", "weight_at"]
__version__ = "0.1.0"
