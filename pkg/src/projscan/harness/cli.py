"""``projscan`` command line: phantom, project, train, eval, ablate, report."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

from ..errors import ProjscanError
from ..projection.batch import project_directory
from ..projection.projection_set import PAPER_CHANNELS
from ..training.config import RunConfig, load_config
from ..training.dataset import load_projection_dir, split_dataset, write_labels
from ..training.trainer import Regressor, build_and_train, evaluate
from ..volume_io import GridSpec, list_volumes, save_volume
from .ablation import DEFAULT_LRS, ablation_sweep, marginal_contribution, read_results
from .phantom import DESK_DIMS, SIGNALS, generate_cohort
from .report import format_table, write_report

log = logging.getLogger("projscan")


def _dims(text: str) -> tuple[int, int, int]:
    try:
        return GridSpec.parse(text).target_dims
    except (ProjscanError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


# subcommands ---------------------------------------------------------------

def cmd_phantom(args) -> int:
    out = Path(args.out or "phantoms")
    out.mkdir(parents=True, exist_ok=True)
    ext = ".nii" if args.format == "nifti1" else ".raw"
    seed = args.seed if args.seed is not None else 0
    cohort = generate_cohort(args.count, seed, args.dims, args.noise, args.signal,
                             args.distribution)
    for ph in cohort:
        save_volume(ph.volume, out / f"{ph.subject_id}{ext}", args.format)
    write_labels(out / "labels.csv", {ph.subject_id: ph.age for ph in cohort})
    _emit(args, {"count": len(cohort), "out": str(out), "dims": list(args.dims)},
          f"wrote {len(cohort)} phantoms to {out}")
    return 0


def cmd_project(args) -> int:
    src = Path(args.input)
    out = Path(args.out or "projections")
    if not list_volumes(src):
        raise ProjscanError(f"{src}: no volume files (*.raw, *.nii)")
    grid = GridSpec(args.grid) if args.grid else None
    t0 = time.perf_counter()
    written = project_directory(src, out, args.channels, grid, args.workers,
                                likelihood=args.likelihood, strict=args.strict)
    labels = src / "labels.csv"
    if labels.exists() and labels.resolve() != (out / "labels.csv").resolve():
        shutil.copyfile(labels, out / "labels.csv")
    secs = time.perf_counter() - t0
    _emit(args, {"count": len(written), "out": str(out), "seconds": secs},
          f"projected {len(written)} volumes to {out} in {secs:.1f}s")
    return 0


def _run_config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def cmd_train(args) -> int:
    cfg = _run_config(args)
    data_dir = args.data or cfg.data.dir
    if not data_dir:
        raise ProjscanError("no data directory: set [data] dir in the config or pass --data")
    tcfg = cfg.train
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
        cfg.model = replace(cfg.model, seed=args.seed)
    out = Path(args.out or "run")
    ds = load_projection_dir(data_dir, cfg.model.channels)
    parts = split_dataset(ds, tuple(cfg.data.split))
    report, reg = build_and_train(cfg.model, parts["train"], parts["val"], tcfg, out_dir=out,
                                  augment=cfg.augment)
    result = {"summary": report.summary(), "val": evaluate(reg, parts["val"]),
              "sizes": {k: len(v) for k, v in parts.items()}}
    if len(parts["test"]):
        result["test"] = evaluate(reg, parts["test"])
    (out / "metrics.json").write_text(json.dumps(result, indent=2))
    s = result["summary"]
    _emit(args, result, f"trained {s['epochs_run']} epochs; best epoch {s['best_epoch']} "
          f"(val MSE {s['best_val_loss']:.3f}); checkpoint {out / 'best.psck'}")
    return 0


def cmd_eval(args) -> int:
    reg = Regressor.load(args.checkpoint)
    ds = load_projection_dir(args.data, reg.model.cfg.channels)
    if args.split != "all":
        ds = split_dataset(ds)[args.split]
    metrics = evaluate(reg, ds)
    metrics["n"] = len(ds)
    _emit(args, metrics, f"{args.split}: n={len(ds)} MAE {metrics['mae']:.3f} "
          f"RMSE {metrics['rmse']:.3f} years")
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    data_dir = args.data or cfg.data.dir
    if not data_dir:
        raise ProjscanError("no data directory: pass --data")
    out = Path(args.out or "ablation")
    results = Path(args.results) if args.results else out / "results.csv"
    ds = load_projection_dir(data_dir, PAPER_CHANNELS)
    parts = split_dataset(ds, tuple(cfg.data.split))
    seed = args.seed if args.seed is not None else 0
    rows = ablation_sweep(parts["train"], parts["val"], args.lrs, args.epochs,
                          results_csv=results, seed=seed, model_template=cfg.model,
                          train_template=replace(cfg.train, epochs=args.epochs),
                          workers=args.workers)
    report = marginal_contribution(rows)
    paths = write_report(report, out)
    payload = {"records": len(rows), "results": str(results), **paths, **report.to_dict()}
    _emit(args, payload, f"{len(rows)} records in {results}\n\n{format_table(report)}")
    return 0


def cmd_report(args) -> int:
    results = Path(args.results)
    if not results.exists():
        raise ProjscanError(f"{results}: no such results file")
    report = marginal_contribution(read_results(results))
    paths = write_report(report, args.out or results.parent)
    _emit(args, {**report.to_dict(), **paths},
          f"{format_table(report)}\n\nwrote {paths['json']} and {paths['svg']}")
    return 0


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed")
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="projscan",
                                description="Age regression from statistical 2D projections of 3D volumes.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", parents=[common], help="generate synthetic volumes + labels")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--dims", type=_dims, default=DESK_DIMS)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--signal", choices=SIGNALS, default="mixed")
    s.add_argument("--distribution", choices=("uniform", "skewed"), default="uniform")
    s.add_argument("--format", choices=("raw", "nifti1"), default="raw")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("project", parents=[common], help="volumes -> PJSN projection files")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--grid", type=_dims, default=None,
                   help="target grid nx,ny,nz (default: enclosing grid of the inputs)")
    s.add_argument("--channels", default="mean,std")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--likelihood", action="store_true", help="check values lie in [0, 1]")
    s.add_argument("--strict", action="store_true", help="fail instead of warn on range checks")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("train", parents=[common], help="train a model from a config")
    s.add_argument("--data", help="projection directory (overrides [data] dir)")
    s.add_argument("--epochs", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="channel-subset ablation sweep")
    s.add_argument("--data", help="projection directory with all six mean/std channels")
    s.add_argument("--lrs", type=_floats, default=list(DEFAULT_LRS))
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--results", help="results CSV (default: OUT/results.csv)")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", parents=[common], help="marginal-contribution table and chart")
    s.add_argument("--results", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProjscanError, OSError, ValueError, KeyError) as exc:
        print(f"projscan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
