"""In-memory projection datasets, deterministic splits and input scaling."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParameterError, ProjscanError
from ..projection.projection_set import (
    PLANES,
    ProjectionSet,
    canonical_order,
    load_projection_set,
    parse_channels,
)

SPLITS = ("train", "val", "test")
DEFAULT_SPLIT = (0.70, 0.15, 0.15)


@dataclass
class ProjectionDataset:
    """Subjects with their per-plane image stacks ``(N, C, h, w)``."""

    ids: list
    ages: np.ndarray
    channels: list
    planes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ages = np.asarray(self.ages, dtype=np.float64)
        self.channels = canonical_order(tuple(c) for c in self.channels)
        if len(self.ids) != len(self.ages):
            raise ParameterError("ids and ages differ in length")
        for plane, arr in self.planes.items():
            if arr.shape[0] != len(self.ids):
                raise ParameterError(f"{plane} stack has {arr.shape[0]} rows for {len(self.ids)} subjects")

    def __len__(self):
        return len(self.ids)

    @property
    def plane_dims(self) -> dict:
        return {p: tuple(a.shape[2:]) for p, a in self.planes.items() if a.shape[1] > 0}

    @classmethod
    def from_projection_sets(cls, sets, ages) -> "ProjectionDataset":
        sets = list(sets)
        if not sets:
            raise ParameterError("no projection sets given")
        keys = sets[0].keys
        for ps in sets[1:]:
            if ps.keys != keys:
                raise ParameterError(f"{ps.subject_id}: channel layout differs from {sets[0].subject_id}")
        planes = {}
        for plane in PLANES:
            if any(p == plane for p, _ in keys):
                planes[plane] = np.stack([ps.plane_stack(plane) for ps in sets])
        return cls([ps.subject_id for ps in sets], np.asarray(ages, dtype=np.float64), keys, planes)

    def subset(self, index) -> "ProjectionDataset":
        index = np.asarray(index, dtype=np.int64)
        return ProjectionDataset(
            [self.ids[i] for i in index], self.ages[index], list(self.channels),
            {p: a[index] for p, a in self.planes.items()},
        )

    def select_channels(self, spec) -> "ProjectionDataset":
        """Keep only the requested channels; an empty selection is allowed."""
        wanted = parse_channels(spec) if spec else []
        missing = [k for k in wanted if k not in self.channels]
        if missing:
            raise ParameterError(f"dataset lacks channels {missing}")
        planes = {}
        for plane in PLANES:
            plane_keys = [k for k in self.channels if k[0] == plane]
            keep = [plane_keys.index(k) for k in wanted if k[0] == plane]
            if keep:
                planes[plane] = self.planes[plane][:, keep]
        return ProjectionDataset(list(self.ids), self.ages.copy(), wanted, planes)

    def batch(self, index) -> dict:
        """Model input for rows ``index``: ``{plane: (B, C, h, w), "batch_size": B}``."""
        index = np.asarray(index, dtype=np.int64)
        out = {p: a[index] for p, a in self.planes.items()}
        out["batch_size"] = len(index)
        return out

    @classmethod
    def concat(cls, parts) -> "ProjectionDataset":
        parts = list(parts)
        first = parts[0]
        return cls(
            [i for p in parts for i in p.ids],
            np.concatenate([p.ages for p in parts]),
            list(first.channels),
            {pl: np.concatenate([p.planes[pl] for p in parts]) for pl in first.planes},
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for plane in sorted(self.planes):
            h.update(plane.encode())
            h.update(np.ascontiguousarray(self.planes[plane]).tobytes())
        h.update(self.ages.tobytes())
        return h.hexdigest()


def read_labels(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"subject_id", "age"} <= set(rows[0]):
        raise ProjscanError(f"{path}: labels CSV needs columns subject_id,age")
    return {r["subject_id"]: float(r["age"]) for r in rows}


def write_labels(path, labels: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "age"])
        for sid, age in labels.items():
            w.writerow([sid, f"{age:g}"])


def load_projection_dir(path, channels=None, labels_file="labels.csv") -> ProjectionDataset:
    """Read every ``*.pjsn`` in ``path`` plus the ``subject_id,age`` labels CSV."""
    path = Path(path)
    labels = read_labels(path / labels_file)
    files = sorted(path.glob("*.pjsn"))
    if not files:
        raise ProjscanError(f"{path}: no .pjsn files")
    sets: list[ProjectionSet] = []
    for f in files:
        ps = load_projection_set(f)
        if channels:
            ps = ps.select(channels)
        sets.append(ps)
    missing = [ps.subject_id for ps in sets if ps.subject_id not in labels]
    if missing:
        raise ProjscanError(f"no age label for {missing[:5]}")
    return ProjectionDataset.from_projection_sets(sets, [labels[ps.subject_id] for ps in sets])


def split_of(subject_id: str, ratios=DEFAULT_SPLIT) -> str:
    """Split assignment from a hash of the subject id (stable across runs)."""
    digest = hashlib.sha256(subject_id.encode()).digest()
    u = int.from_bytes(digest[:8], "big") / 2.0**64
    edge = 0.0
    for name, r in zip(SPLITS, ratios):
        edge += r
        if u < edge:
            return name
    return SPLITS[-1]


def split_dataset(ds: ProjectionDataset, ratios=DEFAULT_SPLIT) -> dict:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must sum to 1, got {ratios}")
    groups = {name: [] for name in SPLITS}
    for i, sid in enumerate(ds.ids):
        groups[split_of(sid, ratios)].append(i)
    return {name: ds.subset(idx) for name, idx in groups.items()}


@dataclass
class Normalizer:
    """Per-channel min-max input scaling and target standardisation.

    Fitted on the training split only; stored with every checkpoint.
    """

    channel_min: dict = field(default_factory=dict)
    channel_max: dict = field(default_factory=dict)
    target_mean: float = 0.0
    target_std: float = 1.0

    @classmethod
    def fit(cls, ds: ProjectionDataset) -> "Normalizer":
        lo, hi = {}, {}
        for plane, arr in ds.planes.items():
            keys = [k for k in ds.channels if k[0] == plane]
            for i, (p, s) in enumerate(keys):
                lo[f"{p}-{s}"] = float(arr[:, i].min())
                hi[f"{p}-{s}"] = float(arr[:, i].max())
        std = float(ds.ages.std())
        return cls(lo, hi, float(ds.ages.mean()), std if std > 0 else 1.0)

    def apply(self, ds: ProjectionDataset) -> ProjectionDataset:
        planes = {}
        for plane, arr in ds.planes.items():
            keys = [k for k in ds.channels if k[0] == plane]
            out = np.empty_like(arr, dtype=np.float32)
            for i, (p, s) in enumerate(keys):
                name = f"{p}-{s}"
                lo, hi = self.channel_min[name], self.channel_max[name]
                span = hi - lo
                if span > 0:
                    out[:, i] = (arr[:, i] - lo) / span
                else:
                    out[:, i] = 0.0
            planes[plane] = out
        return ProjectionDataset(list(ds.ids), ds.ages.copy(), list(ds.channels), planes)

    def encode_targets(self, ages) -> np.ndarray:
        return (np.asarray(ages, dtype=np.float64) - self.target_mean) / self.target_std

    def decode_targets(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {"channel_min": self.channel_min, "channel_max": self.channel_max,
                "target_mean": self.target_mean, "target_std": self.target_std}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(dict(d["channel_min"]), dict(d["channel_max"]),
                   float(d["target_mean"]), float(d["target_std"]))
