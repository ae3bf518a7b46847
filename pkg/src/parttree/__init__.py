"""Hierarchical convex part decomposition of 3D shapes.

A point cloud is encoded into a voxel feature grid, decoded through
per-level learnable codebooks that cross-attend into the previous level's
part features, and each part is grounded as a rigid-transformed smooth
convex occupancy field nested inside its parent.
"""

__version__ = "0.1.0"
