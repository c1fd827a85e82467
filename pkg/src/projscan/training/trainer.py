"""Epoch loop with checkpoint-on-improvement, plus evaluation metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParameterError, TrainingDivergedError
from ..model import Model, build_model, model_from_checkpoint
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.loss import mse_loss
from ..nn.optim import Adam
from ..rng import stream
from .augment import AugmentParams, build_augmented_dataset, epoch_permutation
from .config import TrainingConfig
from .dataset import Normalizer, ProjectionDataset

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.psck"


def improvement_epochs(val_losses) -> list[int]:
    """1-based epochs whose loss is strictly below every earlier loss."""
    best = np.inf
    out = []
    for epoch, loss in enumerate(val_losses, start=1):
        if loss < best:
            best = loss
            out.append(epoch)
    return out


def regression_metrics(pred, target) -> dict:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.size == 0:
        raise ParameterError("cannot evaluate an empty dataset")
    if pred.shape != target.shape:
        raise ParameterError(f"{pred.size} predictions for {target.size} targets")
    err = pred - target
    return {"mae": float(np.mean(np.abs(err))), "rmse": float(np.sqrt(np.mean(err * err)))}


class Regressor:
    """A model together with the input/target scaling it was trained with."""

    def __init__(self, model: Model, normalizer: Normalizer):
        self.model = model
        self.normalizer = normalizer

    def predict(self, ds: ProjectionDataset, batch_size: int = 128, *,
                normalized: bool = False) -> np.ndarray:
        """Ages in years for every subject of ``ds`` (eval mode)."""
        if not normalized:
            ds = self.normalizer.apply(ds.select_channels(self.model.cfg.channel_pairs))
        out = np.empty(len(ds))
        for start in range(0, len(ds), batch_size):
            idx = np.arange(start, min(start + batch_size, len(ds)))
            z = self.model.forward(ds.batch(idx), train=False)
            out[idx] = z[:, 0]
        return self.normalizer.decode_targets(out)

    def save(self, path, extra: dict | None = None) -> Path:
        header = self.model.header()
        header["normalizer"] = self.normalizer.to_dict()
        if extra:
            header["meta"] = extra
        return save_checkpoint(path, self.model.state_tensors(), header)

    @classmethod
    def load(cls, path) -> "Regressor":
        header, tensors = load_checkpoint(path)
        return cls(model_from_checkpoint(header, tensors), Normalizer.from_dict(header["normalizer"]))


def evaluate(reg: Regressor, ds: ProjectionDataset) -> dict:
    """MAE and RMSE in years."""
    if len(ds) == 0:
        raise ParameterError("cannot evaluate an empty dataset")
    return regression_metrics(reg.predict(ds), ds.ages)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    checkpoint: bool
    seconds: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    param_count: int = 0

    @property
    def checkpoint_epochs(self) -> list[int]:
        return [r.epoch for r in self.epochs if r.checkpoint]

    @property
    def best_epoch(self) -> int | None:
        ck = self.checkpoint_epochs
        return ck[-1] if ck else None

    @property
    def best_val_loss(self) -> float:
        best = self.best_epoch
        return self.epochs[best - 1].val_loss if best else float("nan")

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.epochs]

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.epochs]

    def summary(self) -> dict:
        return {
            "epochs_run": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "checkpoint_epochs": self.checkpoint_epochs,
            "param_count": self.param_count,
            "seconds_total": float(sum(r.seconds for r in self.epochs)),
            "seconds_to_best": float(sum(r.seconds for r in self.epochs[: self.best_epoch or 0])),
        }


def _batches(order: np.ndarray, batch_size: int):
    """Consecutive batches; a trailing single sample joins the previous batch."""
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train(model: Model, train_ds: ProjectionDataset, val_ds: ProjectionDataset,
          cfg: TrainingConfig, *, out_dir=None, augment: AugmentParams | None = None,
          validate=None, restore_best: bool = True) -> tuple[TrainReport, Regressor]:
    """Train ``model`` for ``cfg.epochs`` epochs.

    Validation MSE (years^2, eval mode, whole validation set) is computed after
    every epoch.  Whenever it sets a new strict minimum the weights are
    written to ``out_dir/best.psck`` (when ``out_dir`` is given) and kept in
    memory.  ``validate(epoch, regressor)`` may replace the built-in
    validation.  Returns the report and a :class:`Regressor` holding the best
    weights (or the final weights if ``restore_best`` is false).
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ParameterError("training and validation sets must be non-empty")
    overlap = set(train_ds.ids) & set(val_ds.ids)
    if overlap and validate is None and train_ds is not val_ds:
        log.warning("train and validation sets share %d subject ids", len(overlap))

    channels = model.cfg.channel_pairs
    train_ds = train_ds.select_channels(channels)
    val_ds = val_ds.select_channels(channels)
    norm = Normalizer.fit(train_ds)
    base_train = norm.apply(train_ds)
    val_n = norm.apply(val_ds)
    reg = Regressor(model, norm)

    augment = augment or AugmentParams()
    if cfg.augment and cfg.augment_mode == "precomputed":
        epoch_train = build_augmented_dataset(base_train, cfg.augment_copies, augment,
                                              stream(cfg.seed, "augment"))
    else:
        epoch_train = base_train

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / "report.jsonl", "w")
    else:
        log_fh = None

    opt = Adam(lr=cfg.lr)
    params = model.parameters()
    drop_rng = stream(cfg.seed, "dropout")
    scale2 = norm.target_std ** 2
    report = TrainReport(param_count=model.param_count())
    best_loss, best_state, since_best = np.inf, None, 0

    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            if cfg.augment and cfg.augment_mode == "on_the_fly":
                epoch_train = build_augmented_dataset(base_train, cfg.augment_copies, augment,
                                                      stream(cfg.seed, "augment", epoch))
            targets = norm.encode_targets(epoch_train.ages)
            order = epoch_permutation(len(epoch_train), cfg.seed, epoch)
            loss_sum, count = 0.0, 0
            for b, idx in enumerate(_batches(order, cfg.batch_size), start=1):
                model.zero_grad()
                pred, cache = model.forward(epoch_train.batch(idx), train=True, rng=drop_rng,
                                            return_cache=True)
                y = targets[idx].reshape(-1, 1).astype(pred.dtype)
                loss, grad = mse_loss(pred, y)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch {b}, lr {cfg.lr:g}")
                model.backward(grad, cache)
                try:
                    opt.step(params, model.gradients())
                except TrainingDivergedError as exc:
                    raise TrainingDivergedError(
                        f"{exc} at epoch {epoch}, batch {b}, lr {cfg.lr:g}") from None
                loss_sum += loss * len(idx)
                count += len(idx)
            train_loss = loss_sum / count * scale2

            if validate is not None:
                val_loss = float(validate(epoch, reg))
            else:
                pred = reg.predict(val_n, cfg.eval_batch_size, normalized=True)
                val_loss = float(np.mean((pred - val_n.ages) ** 2))
            if not np.isfinite(val_loss):
                raise TrainingDivergedError(
                    f"non-finite validation loss at epoch {epoch}, lr {cfg.lr:g}")

            improved = val_loss < best_loss
            if improved:
                best_loss, since_best = val_loss, 0
                best_state = {k: v.copy() for k, v in model.state_tensors().items()}
                if out_path is not None:
                    reg.save(out_path / CHECKPOINT_NAME, {"epoch": epoch, "val_loss": val_loss})
            else:
                since_best += 1
            rec = EpochRecord(epoch, train_loss, val_loss, improved, time.perf_counter() - t0)
            report.epochs.append(rec)
            if log_fh is not None:
                log_fh.write(json.dumps(asdict(rec)) + "\n")
                log_fh.flush()
            log.info("epoch %d train %.4f val %.4f%s", epoch, train_loss, val_loss,
                     " *" if improved else "")
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_path is not None:
        (out_path / "summary.json").write_text(json.dumps(report.summary(), indent=2))
    if restore_best and best_state is not None:
        model.load_state(best_state)
    return report, reg


def build_and_train(cfg_model, train_ds, val_ds, cfg: TrainingConfig, **kw):
    """Convenience: size the model from the data, then :func:`train` it."""
    model = build_model(cfg_model, train_ds.select_channels(cfg_model.channel_pairs).plane_dims)
    return train(model, train_ds, val_ds, cfg, **kw)
