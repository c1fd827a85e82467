"""Brain-age style regression from statistical 2D projections of 3D volumes."""

from .errors import ProjscanError
from .model import Model, ModelConfig, build_model, paper_configs
from .projection import build_projection_set, load_projection_set, save_projection_set
from .volume_io import GridSpec, Volume3D, load_volume, pad_symmetric, save_volume

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "Model",
    "ModelConfig",
    "ProjscanError",
    "Volume3D",
    "build_model",
    "build_projection_set",
    "load_projection_set",
    "load_volume",
    "pad_symmetric",
    "paper_configs",
    "save_projection_set",
    "save_volume",
]
