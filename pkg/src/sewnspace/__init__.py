"""
sewnspace

Positive-scalar-curvature tunnels, sewing of sampled 3-spheres along a
closed geodesic, and the pulled-string limit space, with the measurements
that compare them.
"""

__version__ = "0.1.0"

from .__main__ import main
from .errors import AcceptanceError, ConstructionError, ParameterError, SewnSpaceError

__all__ = ["main", "SewnSpaceError", "ParameterError", "ConstructionError", "AcceptanceError"]
