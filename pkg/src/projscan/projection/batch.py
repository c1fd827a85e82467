"""Projecting many subjects, optionally on a thread pool.

The fused mean/std kernel releases the GIL, so threads give real
parallelism for the common mean/std channel set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ..volume_io import GridSpec, Volume3D, list_volumes, load_volume, pad_symmetric, read_dims
from .projection_set import ProjectionSet, build_projection_set, save_projection_set


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def project_volumes(volumes, spec, workers: int = 1, subject_ids=None) -> list[ProjectionSet]:
    volumes = list(volumes)
    ids = list(subject_ids) if subject_ids is not None else [""] * len(volumes)
    return _map(lambda job: build_projection_set(job[0], spec, job[1]), list(zip(volumes, ids)),
                workers)


def subject_id_of(path: Path) -> str:
    name = path.name
    for ext in (".raw", ".nii"):
        if name.lower().endswith(ext):
            return name[: -len(ext)]
    return path.stem


def project_files(paths, out_dir, spec, grid: GridSpec | None = None, workers: int = 1, *,
                  likelihood: bool = False, strict: bool = False) -> list[Path]:
    """Load, pad to ``grid`` (default: enclosing grid), project and save as PJSN."""
    paths = [Path(p) for p in paths]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if grid is None:
        grid = GridSpec.enclosing([read_dims(p) for p in paths])

    def one(path: Path) -> Path:
        vol: Volume3D = load_volume(path, likelihood=likelihood, strict=strict)
        sid = subject_id_of(path)
        ps = build_projection_set(pad_symmetric(vol, grid), spec, sid)
        return save_projection_set(ps, out_dir / f"{sid}.pjsn")

    return _map(one, paths, workers)


def project_directory(in_dir, out_dir, spec, grid: GridSpec | None = None, workers: int = 1,
                      **kw) -> list[Path]:
    return project_files(list_volumes(in_dir), out_dir, spec, grid, workers, **kw)
