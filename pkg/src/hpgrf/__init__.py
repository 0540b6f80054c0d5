"""Hierarchical Poisson/gamma random field models for meta-analysis of point patterns."""

from ._accel import BACKEND
from .geometry import BoxWindow, Ellipsoid, Grid, IntensityGrid, MaskWindow, SubBox, VoxelSet, make_grid
from .procgen import Dataset, PointPattern

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BoxWindow",
    "MaskWindow",
    "SubBox",
    "Ellipsoid",
    "VoxelSet",
    "Grid",
    "IntensityGrid",
    "make_grid",
    "Dataset",
    "PointPattern",
]
