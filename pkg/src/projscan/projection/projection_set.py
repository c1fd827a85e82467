"""Channel selection, ProjectionSet container and the PJSN file format.

PJSN layout (little-endian)::

    b"PJSN" | u8 version | u16 n_channels | u32 h | u32 w
    n_channels x (u8 plane | u8 statistic | u16 eigen index | u32 ch_h | u32 ch_w)
    n_channels x float32 payload, row-major, ch_h * ch_w values each

``h``/``w`` are the largest channel dims (planes have different shapes, so
each descriptor also carries its own).  A JSON sidecar next to the file
stores the subject id and each channel's min/max.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParameterError, ProjscanError
from ..volume_io import Volume3D
from .eigen import eigen_slices
from .moments import STATISTICS, project_mean_std, project_moments

PLANES = ("coronal", "axial", "sagittal")

PJSN_MAGIC = b"PJSN"
PJSN_VERSION = 1
_HEAD = struct.Struct("<4sBHII")
_DESC = struct.Struct("<BBHII")


def stat_rank(statistic: str) -> int:
    if statistic in STATISTICS:
        return STATISTICS.index(statistic)
    if statistic.startswith("eigen_"):
        j = int(statistic[len("eigen_"):])
        if j < 1:
            raise ParameterError(f"eigen index must be >= 1: {statistic!r}")
        return len(STATISTICS) - 1 + j
    raise ParameterError(f"unknown statistic {statistic!r}")


def channel_key(pair) -> tuple[int, int]:
    plane, statistic = pair
    if plane not in PLANES:
        raise ParameterError(f"unknown plane {plane!r}")
    return PLANES.index(plane), stat_rank(statistic)


def canonical_order(pairs) -> list[tuple[str, str]]:
    return sorted(set(pairs), key=channel_key)


def parse_channels(spec) -> list[tuple[str, str]]:
    """Normalise a channel selection to canonical ``(plane, statistic)`` pairs.

    Accepts an iterable of pairs or ``"plane-statistic"`` strings, or a
    comma-separated string.  A bare statistic token applies to every plane
    (``"mean,std"``); a ``plane-statistic`` token selects one channel
    (``"axial-std"``).
    """
    if isinstance(spec, str):
        pairs = []
        for token in (t.strip() for t in spec.split(",")):
            if not token:
                continue
            if "-" in token:
                plane, statistic = token.split("-", 1)
                pairs.append((plane, statistic))
            else:
                pairs.extend((plane, token) for plane in PLANES)
    else:
        pairs = [tuple(p.split("-", 1)) if isinstance(p, str) else tuple(p) for p in spec]
    if not pairs:
        raise ParameterError("channel selection is empty")
    for p in pairs:
        channel_key(p)
    return canonical_order(pairs)


PAPER_CHANNELS = parse_channels("mean,std")


@dataclass
class Channel:
    plane: str
    statistic: str
    image: np.ndarray

    @property
    def key(self) -> tuple[str, str]:
        return self.plane, self.statistic

    @property
    def value_range(self) -> tuple[float, float]:
        return float(self.image.min()), float(self.image.max())


@dataclass
class ProjectionSet:
    subject_id: str
    channels: list[Channel] = field(default_factory=list)

    def __post_init__(self):
        keys = [c.key for c in self.channels]
        if keys != canonical_order(keys):
            raise ProjscanError(f"channels not in canonical order: {keys}")
        for plane in PLANES:
            shapes = {c.image.shape for c in self.channels if c.plane == plane}
            if len(shapes) > 1:
                raise ProjscanError(f"{plane} channels have mixed dims {shapes}")

    @property
    def keys(self) -> list[tuple[str, str]]:
        return [c.key for c in self.channels]

    def ranges(self) -> dict:
        return {c.key: c.value_range for c in self.channels}

    def select(self, spec) -> "ProjectionSet":
        wanted = parse_channels(spec)
        have = {c.key: c for c in self.channels}
        missing = [k for k in wanted if k not in have]
        if missing:
            raise ParameterError(f"{self.subject_id}: channels not available: {missing}")
        return ProjectionSet(self.subject_id, [have[k] for k in wanted])

    def plane_stack(self, plane: str) -> np.ndarray:
        """``(C, h, w)`` array of this plane's channels (C may be 0)."""
        imgs = [c.image for c in self.channels if c.plane == plane]
        if not imgs:
            return np.zeros((0, 0, 0), dtype=np.float32)
        return np.stack(imgs).astype(np.float32, copy=False)


def build_projection_set(vol: Volume3D, spec, subject_id: str = "") -> ProjectionSet:
    pairs = parse_channels(spec)
    by_plane: dict[str, list[str]] = {}
    for plane, statistic in pairs:
        by_plane.setdefault(plane, []).append(statistic)

    needs_higher = {p for p, stats in by_plane.items() if {"skew", "kurt"} & set(stats)}
    needs_fast = {p for p, stats in by_plane.items()
                  if p not in needs_higher and {"mean", "std"} & set(stats)}
    fast = project_mean_std(vol) if needs_fast else {}

    images = {}
    for plane, stats in by_plane.items():
        if plane in needs_higher:
            images.update({(plane, s): img for s, img in project_moments(vol, plane).items()})
        elif plane in fast:
            images.update({(plane, s): img for s, img in fast[plane].items()})
        eig = [s for s in stats if s.startswith("eigen_")]
        if eig:
            k = max(stat_rank(s) for s in eig) - len(STATISTICS) + 1
            res = eigen_slices(vol, plane, k)
            for j, img in enumerate(res["images"], start=1):
                images[(plane, f"eigen_{j}")] = img

    channels = [Channel(p, s, np.ascontiguousarray(images[(p, s)], dtype=np.float32))
                for p, s in pairs]
    return ProjectionSet(subject_id, channels)


def _stat_code(statistic: str) -> tuple[int, int]:
    if statistic.startswith("eigen_"):
        return len(STATISTICS), int(statistic[len("eigen_"):])
    return STATISTICS.index(statistic), 0


def _stat_name(code: int, index: int) -> str:
    if code == len(STATISTICS):
        return f"eigen_{index}"
    if 0 <= code < len(STATISTICS):
        return STATISTICS[code]
    raise ProjscanError(f"bad statistic code {code}")


def pjsn_sidecar(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def save_projection_set(ps: ProjectionSet, path) -> Path:
    path = Path(path)
    h = max((c.image.shape[0] for c in ps.channels), default=0)
    w = max((c.image.shape[1] for c in ps.channels), default=0)
    parts = [_HEAD.pack(PJSN_MAGIC, PJSN_VERSION, len(ps.channels), h, w)]
    for c in ps.channels:
        code, idx = _stat_code(c.statistic)
        parts.append(_DESC.pack(PLANES.index(c.plane), code, idx, *c.image.shape))
    for c in ps.channels:
        parts.append(np.ascontiguousarray(c.image, dtype="<f4").tobytes())
    path.write_bytes(b"".join(parts))
    meta = {
        "subject_id": ps.subject_id,
        "channels": [
            {"plane": c.plane, "statistic": c.statistic,
             "min": c.value_range[0], "max": c.value_range[1]}
            for c in ps.channels
        ],
    }
    pjsn_sidecar(path).write_text(json.dumps(meta, indent=1))
    return path


def load_projection_set(path) -> ProjectionSet:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEAD.size:
        raise ProjscanError(f"{path}: truncated PJSN header")
    magic, version, count, _h, _w = _HEAD.unpack_from(blob, 0)
    if magic != PJSN_MAGIC:
        raise ProjscanError(f"{path}: bad magic {magic!r}")
    if version != PJSN_VERSION:
        raise ProjscanError(f"{path}: unsupported PJSN version {version}")
    descs = [_DESC.unpack_from(blob, _HEAD.size + i * _DESC.size) for i in range(count)]
    offset = _HEAD.size + count * _DESC.size
    channels = []
    for plane_code, code, idx, ch_h, ch_w in descs:
        n = ch_h * ch_w
        if offset + 4 * n > len(blob):
            raise ProjscanError(f"{path}: payload truncated")
        img = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(ch_h, ch_w)
        offset += 4 * n
        channels.append(Channel(PLANES[plane_code], _stat_name(code, idx), img.astype(np.float32)))
    side = pjsn_sidecar(path)
    subject_id = json.loads(side.read_text())["subject_id"] if side.exists() else path.stem
    return ProjectionSet(subject_id, channels)
