"""Multi-level operator preconditioning for negative-order operators.

Builds a preconditioner for operators of order -2s, s in [0, 1] (the single
layer operator being the s = 1/2 flagship case), discretized by piecewise
constants on conforming newest-vertex-bisection meshes.  The opposite-order
ingredient is a multi-level operator on continuous piecewise linears whose
application costs O(#triangles).
"""

from . import domains
from .hierarchy import LevelHierarchy, LevelMesh, extract_hierarchy
from .mesh_forest import MeshForest, build_initial, check_matching

__all__ = [
    "domains",
    "MeshForest",
    "build_initial",
    "check_matching",
    "LevelMesh",
    "LevelHierarchy",
    "extract_hierarchy",
]
