"""Statistical 2D projections of 3D volumes."""

from .eigen import eigen_slices
from .moments import STATISTICS, MomentAccumulator, project_mean_std, project_moments
from .projection_set import (
    PAPER_CHANNELS,
    PLANES,
    Channel,
    ProjectionSet,
    build_projection_set,
    canonical_order,
    load_projection_set,
    parse_channels,
    save_projection_set,
)

__all__ = [
    "PAPER_CHANNELS",
    "PLANES",
    "STATISTICS",
    "Channel",
    "MomentAccumulator",
    "ProjectionSet",
    "build_projection_set",
    "canonical_order",
    "eigen_slices",
    "load_projection_set",
    "parse_channels",
    "project_mean_std",
    "project_moments",
    "save_projection_set",
]
