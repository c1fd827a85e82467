"""Input-channel ablation sweep and marginal channel contributions.

Every subset of the candidate channels (including the empty set, which
trains a bias-only constant predictor) is trained once per learning rate.
Results are appended to a CSV as they complete; a JSON manifest next to the
CSV pins the sweep configuration so that an interrupted sweep resumes by
skipping the cells already on disk.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import IncompleteSweepError, ProjscanError
from ..model import ModelConfig, build_model
from ..projection.projection_set import PAPER_CHANNELS
from ..training.config import TrainingConfig
from ..training.trainer import train

log = logging.getLogger(__name__)

CSV_FIELDS = ("subset_bitmask", "lr", "val_loss", "seed", "epochs")
DEFAULT_LRS = (0.003, 0.001)


@dataclass(frozen=True)
class AblationResult:
    subset_bitmask: int
    lr: float
    val_loss: float
    seed: int
    epochs: int


@dataclass
class MarginalReport:
    channels: list
    marginal: list
    pair_counts: list

    def to_dict(self) -> dict:
        return {"channels": [f"{p}-{s}" for p, s in self.channels],
                "marginal": self.marginal, "pair_counts": self.pair_counts}


def subset_channels(mask: int, channels=PAPER_CHANNELS) -> list:
    return [c for i, c in enumerate(channels) if mask >> i & 1]


def cell_seed(global_seed: int, mask: int, lr: float) -> int:
    """Per-cell seed, independent of run order and worker count."""
    digest = hashlib.sha256(f"{global_seed}:{mask}:{lr!r}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def sweep_cells(n_channels: int, lrs) -> list[tuple[int, float]]:
    return [(mask, float(lr)) for mask in range(2 ** n_channels) for lr in lrs]


def read_results(path) -> list[AblationResult]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [AblationResult(int(r["subset_bitmask"]), float(r["lr"]), float(r["val_loss"]),
                           int(r["seed"]), int(r["epochs"])) for r in rows]


def _append(path: Path, res: AblationResult) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_FIELDS)
        w.writerow([res.subset_bitmask, repr(res.lr), repr(res.val_loss), res.seed, res.epochs])
        fh.flush()


def manifest_path(results_csv) -> Path:
    p = Path(results_csv)
    return p.with_name(p.stem + ".manifest.json")


def train_cell(train_ds, val_ds, channels, mask, lr, epochs, seed, model_template,
               train_template) -> float:
    """Train one (subset, lr) cell and return its best validation MSE."""
    subset = subset_channels(mask, channels)
    mcfg = replace(model_template, channels=[f"{p}-{s}" for p, s in subset], seed=seed,
                   input_dims={})
    tcfg = replace(train_template, lr=lr, epochs=epochs, seed=seed)
    model = build_model(mcfg, train_ds.select_channels(subset).plane_dims)
    report, _ = train(model, train_ds, val_ds, tcfg)
    return report.best_val_loss


def _cell_job(args):
    train_ds, val_ds, channels, mask, lr, epochs, seed, mt, tt = args
    return mask, lr, seed, train_cell(train_ds, val_ds, channels, mask, lr, epochs, seed, mt, tt)


def ablation_sweep(train_ds, val_ds, lrs=DEFAULT_LRS, epochs: int = 30, *,
                   channels=PAPER_CHANNELS, results_csv=None, seed: int = 0,
                   model_template: ModelConfig | None = None,
                   train_template: TrainingConfig | None = None,
                   workers: int = 1, cell_fn=None) -> list[AblationResult]:
    """Run (or resume) the full subset x learning-rate sweep.

    ``cell_fn(mask, lr, seed) -> val_loss`` replaces the real training, which
    tests use to exercise bookkeeping without training networks.
    """
    channels = list(channels)
    lrs = [float(lr) for lr in lrs]
    model_template = model_template or ModelConfig()
    train_template = train_template or TrainingConfig(epochs=epochs)
    cells = sweep_cells(len(channels), lrs)

    done: dict[tuple[int, float], AblationResult] = {}
    path = Path(results_csv) if results_csv is not None else None
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        config = {
            "channels": [f"{p}-{s}" for p, s in channels], "lrs": lrs, "epochs": epochs,
            "seed": seed, "model": model_template.to_dict(), "train": train_template.to_dict(),
            "data": {"train": train_ds.fingerprint() if train_ds is not None else None,
                     "val": val_ds.fingerprint() if val_ds is not None else None},
        }
        digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
        mpath = manifest_path(path)
        if mpath.exists():
            prior = json.loads(mpath.read_text())
            if prior.get("config_hash") != digest:
                raise ProjscanError(
                    f"{path}: existing results were produced by a different sweep configuration")
        elif path.exists() and path.stat().st_size:
            raise ProjscanError(f"{path}: results exist without a manifest; refusing to mix")
        mpath.write_text(json.dumps({"config_hash": digest, "config": config}, indent=1))
        for res in read_results(path):
            done.setdefault((res.subset_bitmask, res.lr), res)

    todo = [(m, lr) for m, lr in cells if (m, lr) not in done]
    log.info("ablation: %d cells, %d already done, %d to run", len(cells), len(done), len(todo))

    def record(mask, lr, s, loss):
        res = AblationResult(mask, lr, float(loss), s, epochs)
        done[(mask, lr)] = res
        if path is not None:
            _append(path, res)
        log.info("cell subset=%#04x lr=%g val_loss=%.4f", mask, lr, loss)

    if cell_fn is not None or workers <= 1:
        for mask, lr in todo:
            s = cell_seed(seed, mask, lr)
            if cell_fn is not None:
                loss = cell_fn(mask, lr, s)
            else:
                loss = train_cell(train_ds, val_ds, channels, mask, lr, epochs, s,
                                  model_template, train_template)
            record(mask, lr, s, loss)
    else:
        jobs = [(train_ds, val_ds, channels, m, lr, epochs, cell_seed(seed, m, lr),
                 model_template, train_template) for m, lr in todo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_cell_job, job) for job in jobs]
            for fut in as_completed(futures):
                record(*fut.result())

    return [done[c] for c in cells]


def marginal_contribution(results, channels=PAPER_CHANNELS) -> MarginalReport:
    """Mean loss decrease from adding each channel to subsets that lack it."""
    channels = list(channels)
    n = len(channels)
    table = {(r.subset_bitmask, float(r.lr)): r.val_loss for r in results}
    lrs = sorted({lr for _, lr in table})
    missing = [c for c in sweep_cells(n, lrs) if c not in table]
    if missing or not lrs:
        raise IncompleteSweepError(missing or [(0, float("nan"))])
    marginal, counts = [], []
    for c in range(n):
        bit = 1 << c
        diffs = [table[(m, lr)] - table[(m | bit, lr)]
                 for m in range(2 ** n) if not m & bit for lr in lrs]
        marginal.append(float(np.mean(diffs)))
        counts.append(len(diffs))
    return MarginalReport(channels, marginal, counts)


def results_to_dicts(results) -> list[dict]:
    return [asdict(r) for r in results]
