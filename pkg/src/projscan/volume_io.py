"""Loading, saving and symmetric zero-padding of 3D scalar volumes.

Voxel arrays are held as ``(nx, ny, nz)`` float32 arrays in Fortran order, so
the flat memory layout is row-major with x varying fastest, the same order
used on disk by both supported formats.

Axis convention (fixed, documented rather than inferred):

* x: stacking axis of sagittal slices
* y: stacking axis of coronal slices
* z: stacking axis of axial slices
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    VolumeCorruptionError,
    VolumeFormatError,
    VolumeValidationError,
)

log = logging.getLogger(__name__)

AXIS_PLANES = {0: "sagittal", 1: "coronal", 2: "axial"}
PLANE_AXES = {plane: axis for axis, plane in AXIS_PLANES.items()}

PAPER_GRID = (256, 256, 208)

NIFTI_HEADER_SIZE = 348
NIFTI_FLOAT32 = 16
_NIFTI_DTYPE_NAMES = {
    2: "uint8", 4: "int16", 8: "int32", 16: "float32", 64: "float64",
    256: "int8", 512: "uint16", 768: "uint32",
}


@dataclass
class Volume3D:
    """Scalar 3D grid. ``data[x, y, z]``; see the module docstring for axes."""

    data: np.ndarray
    axis_labels: dict = field(default_factory=lambda: dict(AXIS_PLANES))

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise VolumeValidationError(f"volume must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise VolumeValidationError(f"volume dims must be positive, got {arr.shape}")
        self.data = np.asfortranarray(arr, dtype=np.float32)
        check_finite(self.data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def flat(self) -> np.ndarray:
        """Voxels in file order (x fastest)."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, values, dims) -> "Volume3D":
        values = np.asarray(values, dtype=np.float32)
        expected = int(np.prod(dims))
        if values.size != expected:
            raise VolumeCorruptionError(
                f"payload has {values.size} voxels, dims {tuple(dims)} need {expected}"
            )
        return cls(values.reshape(tuple(dims), order="F"))


@dataclass(frozen=True)
class GridSpec:
    target_dims: tuple[int, int, int] = PAPER_GRID

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        dims = tuple(int(t) for t in text.replace("x", ",").split(","))
        if len(dims) != 3 or min(dims) < 1:
            raise DimensionError(f"grid must be three positive ints, got {text!r}")
        return cls(dims)

    @classmethod
    def enclosing(cls, volumes) -> "GridSpec":
        """Smallest grid that holds every volume (the 'largest grid' rule).

        Accepts volumes or plain ``(nx, ny, nz)`` tuples.
        """
        dims = np.array([getattr(v, "dims", v) for v in volumes])
        if dims.size == 0:
            raise DimensionError("no volumes to enclose")
        return cls(tuple(int(n) for n in dims.max(axis=0)))


def check_finite(data: np.ndarray) -> None:
    bad = ~np.isfinite(data)
    count = int(bad.sum())
    if count:
        first = int(np.flatnonzero(bad.ravel(order="F"))[0])
        raise VolumeValidationError(
            f"{count} non-finite voxels; first at flat index {first} (x-fastest)"
        )


def check_likelihood(vol: Volume3D, strict: bool = False) -> None:
    """Warn (or raise under ``strict``) when values leave the [0, 1] range."""
    lo, hi = float(vol.data.min()), float(vol.data.max())
    if lo >= 0.0 and hi <= 1.0:
        return
    msg = f"likelihood values outside [0, 1]: min {lo:g}, max {hi:g}"
    if strict:
        raise VolumeValidationError(msg)
    log.warning(msg)


def _detect_format(path: Path) -> str:
    name = path.name.lower()
    if name.endswith(".nii"):
        return "nifti1"
    if name.endswith(".nii.gz"):
        raise VolumeFormatError(f"{path}: compressed NIfTI is not supported")
    if name.endswith(".raw"):
        return "raw"
    raise VolumeFormatError(f"{path}: cannot infer format from extension")


def load_volume(path, format: str | None = None, *, likelihood: bool = False,
                strict: bool = False) -> Volume3D:
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "nifti1":
        vol = _read_nifti(path)
    elif fmt == "raw":
        vol = _read_raw(path)
    else:
        raise VolumeFormatError(f"unknown volume format {fmt!r}")
    if likelihood:
        check_likelihood(vol, strict=strict)
    return vol


def save_volume(vol: Volume3D, path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "nifti1":
        _write_nifti(vol, path)
    elif fmt == "raw":
        _write_raw(vol, path)
    else:
        raise VolumeFormatError(f"unknown volume format {fmt!r}")
    return path


def read_dims(path, format: str | None = None) -> tuple[int, int, int]:
    """Volume dimensions from the header or sidecar, without reading voxels."""
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "raw":
        side = sidecar_path(path)
        if not side.exists():
            raise VolumeFormatError(f"{path}: missing sidecar {side.name}")
        return tuple(int(d) for d in json.loads(side.read_text())["dims"])
    if fmt == "nifti1":
        with open(path, "rb") as fh:
            head = fh.read(NIFTI_HEADER_SIZE)
        if len(head) < NIFTI_HEADER_SIZE:
            raise VolumeFormatError(f"{path}: file shorter than a NIfTI-1 header")
        return tuple(int(d) for d in struct.unpack_from("<8h", head, 40)[1:4])
    raise VolumeFormatError(f"unknown volume format {fmt!r}")


def list_volumes(directory) -> list[Path]:
    """Volume files (``*.raw``, ``*.nii``) in a directory, sorted by name."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.name.lower().endswith((".raw", ".nii")))


def sidecar_path(raw_path: Path) -> Path:
    return raw_path.with_suffix(".json")


def _read_raw(path: Path) -> Volume3D:
    side = sidecar_path(path)
    if not side.exists():
        raise VolumeFormatError(f"{path}: missing sidecar {side.name}")
    meta = json.loads(side.read_text())
    if meta.get("dtype", "f32") != "f32":
        raise VolumeFormatError(f"{path}: unsupported raw dtype {meta.get('dtype')!r}")
    if meta.get("order", "x-fastest") != "x-fastest":
        raise VolumeFormatError(f"{path}: unsupported voxel order {meta.get('order')!r}")
    if meta.get("endianness", "little") != "little":
        raise VolumeFormatError(f"{path}: only little-endian raw payloads are supported")
    dims = tuple(int(d) for d in meta["dims"])
    payload = np.fromfile(path, dtype="<f4")
    return Volume3D.from_flat(payload, dims)


def _write_raw(vol: Volume3D, path: Path) -> None:
    vol.flat().astype("<f4").tofile(path)
    meta = {"dims": list(vol.dims), "dtype": "f32", "order": "x-fastest"}
    sidecar_path(path).write_text(json.dumps(meta))


def _read_nifti(path: Path) -> Volume3D:
    blob = path.read_bytes()
    if len(blob) < NIFTI_HEADER_SIZE:
        raise VolumeFormatError(f"{path}: file shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if struct.unpack_from(">i", blob, 0)[0] == NIFTI_HEADER_SIZE:
            raise VolumeFormatError(f"{path}: big-endian NIfTI is not supported")
        raise VolumeFormatError(f"{path}: sizeof_hdr {sizeof_hdr} != 348")
    magic = blob[344:348]
    if magic != b"n+1\x00":
        raise VolumeFormatError(f"{path}: magic {magic!r} is not single-file NIfTI-1")
    dim = struct.unpack_from("<8h", blob, 40)
    datatype, _bitpix = struct.unpack_from("<2h", blob, 70)
    (vox_offset,) = struct.unpack_from("<f", blob, 108)
    scl_slope, scl_inter = struct.unpack_from("<2f", blob, 112)

    if datatype != NIFTI_FLOAT32:
        name = _NIFTI_DTYPE_NAMES.get(datatype, f"code {datatype}")
        raise VolumeFormatError(f"{path}: unsupported NIfTI datatype {name} (need float32)")
    ndim = dim[0]
    if not 3 <= ndim <= 7 or any(d != 1 for d in dim[4:ndim + 1]):
        raise VolumeFormatError(f"{path}: expected a single 3D volume, dim={dim}")
    dims = tuple(int(d) for d in dim[1:4])
    offset = int(vox_offset)
    payload = np.frombuffer(blob, dtype="<f4", offset=offset) if offset < len(blob) else np.empty(0, "<f4")
    expected = int(np.prod(dims))
    if payload.size != expected:
        raise VolumeCorruptionError(
            f"{path}: payload has {payload.size} voxels, header dims {dims} need {expected}"
        )
    values = payload.astype(np.float32)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        values = values * np.float32(scl_slope) + np.float32(scl_inter)
    return Volume3D.from_flat(values, dims)


def _write_nifti(vol: Volume3D, path: Path) -> None:
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *vol.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, NIFTI_FLOAT32, 32)
    struct.pack_into("<8f", hdr, 76, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = b"n+1\x00"
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * 4)  # empty extension block
        fh.write(vol.flat().astype("<f4").tobytes())


def pad_amounts(n: int, target: int) -> tuple[int, int]:
    """Low/high pad for one axis; odd remainders go to the high side."""
    if target < n:
        raise DimensionError(f"target {target} smaller than input {n}")
    extra = target - n
    return extra // 2, extra - extra // 2


def pad_symmetric(vol: Volume3D, grid: GridSpec) -> Volume3D:
    pads = [pad_amounts(n, t) for n, t in zip(vol.dims, grid.target_dims)]
    if all(lo == 0 and hi == 0 for lo, hi in pads):
        return Volume3D(vol.data.copy(order="F"))
    out = np.zeros(grid.target_dims, dtype=np.float32, order="F")
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pads, vol.dims))
    out[sl] = vol.data
    return Volume3D(out)
