"""Random affine + elastic perturbations of projection images.

A transform maps output pixel ``p`` (row, col) to the source location

    A^-1 (p - c) + c + d(p)

where ``c`` is the image centre, ``A = rotation @ shear @ scale`` and ``d`` an
elastic displacement field interpolated from a coarse grid of random control
displacements.  Sampling is bilinear with zero fill.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from ..errors import ConfigError
from ..rng import stream
from .dataset import ProjectionDataset


@dataclass
class AugmentParams:
    scale_range: tuple = (0.95, 1.05)
    rotation_deg: tuple = (-5.0, 5.0)
    shear_deg: tuple = (-3.0, 3.0)
    elastic_grid: int = 8
    elastic_sigma: float = 2.0

    def __post_init__(self):
        self.scale_range = tuple(float(v) for v in self.scale_range)
        self.rotation_deg = tuple(float(v) for v in self.rotation_deg)
        self.shear_deg = tuple(float(v) for v in self.shear_deg)
        for name in ("scale_range", "rotation_deg", "shear_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"augment {name}: low {lo} > high {hi}")
        if self.scale_range[0] <= 0:
            raise ConfigError("augment scale_range must be positive")
        if not -45.0 < self.shear_deg[0] <= self.shear_deg[1] < 45.0:
            raise ConfigError("augment shear_deg must lie inside (-45, 45)")
        if self.elastic_grid < 2:
            raise ConfigError("augment elastic_grid needs at least 2 control points")
        if self.elastic_sigma < 0:
            raise ConfigError("augment elastic_sigma must be >= 0")


@dataclass
class Transform:
    """One sampled perturbation.  ``control`` is ``(2, g, g)`` pixel offsets."""

    scale: float = 1.0
    rotation_deg: float = 0.0
    shear_deg: float = 0.0
    control: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        th = np.deg2rad(self.rotation_deg)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        shear = np.array([[1.0, np.tan(np.deg2rad(self.shear_deg))], [0.0, 1.0]])
        return rot @ shear @ (self.scale * np.eye(2))


def sample_transform(params: AugmentParams, rng) -> Transform:
    control = rng.normal(0.0, params.elastic_sigma, size=(2, params.elastic_grid, params.elastic_grid))
    return Transform(
        scale=float(rng.uniform(*params.scale_range)),
        rotation_deg=float(rng.uniform(*params.rotation_deg)),
        shear_deg=float(rng.uniform(*params.shear_deg)),
        control=control,
    )


def _displacement(control, shape):
    g = control.shape[-1]
    rr = np.linspace(0.0, g - 1.0, shape[0])
    cc = np.linspace(0.0, g - 1.0, shape[1])
    grid = np.meshgrid(rr, cc, indexing="ij")
    return np.stack([map_coordinates(c, grid, order=3, mode="nearest") for c in control])


def source_coordinates(t: Transform, shape) -> np.ndarray:
    h, w = shape
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                             indexing="ij")
    p = np.stack([rows - centre[0], cols - centre[1]])
    inv = np.linalg.inv(t.matrix())
    src = np.einsum("ij,jhw->ihw", inv, p) + centre[:, None, None]
    if t.control is not None and np.any(t.control):
        src = src + _displacement(t.control, shape)
    return src


def augment_image(img, t: Transform) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 3:
        return augment_stack(img, t)
    src = source_coordinates(t, img.shape)
    out = map_coordinates(img, src, order=1, mode="constant", cval=0.0, prefilter=False)
    return out.astype(img.dtype, copy=False)


def augment_stack(stack, t: Transform) -> np.ndarray:
    """Apply one transform to every channel of a ``(C, h, w)`` stack."""
    stack = np.asarray(stack)
    src = source_coordinates(t, stack.shape[1:])
    out = np.empty_like(stack)
    for i, img in enumerate(stack):
        out[i] = map_coordinates(img, src, order=1, mode="constant", cval=0.0, prefilter=False)
    return out


def augmented_copy(ds: ProjectionDataset, params: AugmentParams, rng) -> ProjectionDataset:
    """One perturbed copy of ``ds``; each subject/plane gets its own transform."""
    planes = {p: np.empty_like(a) for p, a in ds.planes.items()}
    for i in range(len(ds)):
        for plane, arr in ds.planes.items():
            if arr.shape[1] == 0:
                continue
            planes[plane][i] = augment_stack(arr[i], sample_transform(params, rng))
    return ProjectionDataset(list(ds.ids), ds.ages.copy(), list(ds.channels), planes)


def build_augmented_dataset(ds: ProjectionDataset, copies: int, params: AugmentParams,
                            rng) -> ProjectionDataset:
    """Originals followed by ``copies`` perturbed copies: ``(1 + copies) * N`` rows."""
    if copies < 0:
        raise ConfigError("augment_copies must be >= 0")
    if copies == 0:
        return ds
    parts = [ds] + [augmented_copy(ds, params, rng) for _ in range(copies)]
    return ProjectionDataset.concat(parts)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle order for one epoch; a pure function of (seed, epoch)."""
    return stream(seed, "shuffle", epoch).permutation(n)
