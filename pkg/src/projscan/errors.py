"""Exception hierarchy shared by every projscan module."""


class ProjscanError(Exception):
    """Base class for all errors raised by projscan."""


class VolumeFormatError(ProjscanError):
    """File is not in a supported volume format (e.g. wrong NIfTI datatype)."""


class VolumeCorruptionError(ProjscanError):
    """Header dimensions disagree with the payload size."""


class VolumeValidationError(ProjscanError):
    """Voxel values violate a Volume3D invariant (non-finite, out of range)."""


class DimensionError(ProjscanError):
    """A target grid is smaller than the volume it should contain."""


class ParameterError(ProjscanError, ValueError):
    """An argument is outside its allowed range."""


class EmptyAxisError(ProjscanError):
    """Projection requested along an axis with zero slices."""


class ShapeError(ProjscanError, ValueError):
    """Tensor shapes do not agree."""


class StateError(ProjscanError):
    """An operation was called without the state it depends on."""


class BatchSizeError(ProjscanError):
    """Batch normalization in train mode with a single value per channel."""


class TrainingDivergedError(ProjscanError):
    """Loss or gradient became non-finite during training."""


class ConfigError(ProjscanError):
    """Model or training configuration is inconsistent."""


class InputLayoutError(ProjscanError):
    """Batch channel layout does not match the model configuration."""


class IsoIncompatibleError(ConfigError):
    """Weight sharing requested for stacks with different input channels."""


class IncompleteSweepError(ProjscanError):
    """Ablation results are missing records needed for a marginal report."""

    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(f"(subset={s:#x}, lr={lr:g})" for s, lr in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" ... and {len(self.missing) - 10} more"
        super().__init__(f"{len(self.missing)} ablation records missing: {shown}{more}")


class CheckpointError(ProjscanError):
    """Checkpoint file is malformed or incompatible."""
