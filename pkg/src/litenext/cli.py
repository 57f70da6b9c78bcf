"""Command-line interface: ``litenext {synth,train,eval,weightmask}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import DatasetError, export_weight_mask_image, load_dataset, read_gray, resize_image, split_records, synth_generate, write_png
from .losses import MwlConfig, build_weight_mask, erode_dilate
from .metrics import MetricReport, evaluate_folder
from .model import init_params, model_forward_infer
from .tensor import Tensor
from .trainer import HISTORY_HEADER, format_history, train_loop

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
TRAIN_OUTPUTS = ("resolved.cfg", "history.csv", "best.ckpt", "final.ckpt")


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"litenext: error: {msg}", file=sys.stderr)


# synth ------------------------------------------------------------------------------------
def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.size <= 0 or args.size % 16:
        raise UsageError(f"--size must be a positive multiple of 16, got {args.size}")
    if not 0.0 <= args.overlap <= 1.0:
        raise UsageError(f"--overlap must lie in [0, 1], got {args.overlap}")
    synth_generate(args.out, args.n, args.size, args.overlap, args.seed)
    print(f"generated {args.n} pairs at {args.size}x{args.size}")
    return EXIT_OK


# train ------------------------------------------------------------------------------------
def build_run_config(args) -> RunConfig:
    """Defaults, then the --config file, then explicit flags."""
    cfg = RunConfig()
    if args.config:
        try:
            cfg = cfg.with_overrides(RunConfig.load(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    flags = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        flags[key.strip()] = RunConfig.parse_value(key.strip(), value)
    named = {
        "data": args.data,
        "seed": args.seed,
        "loss": args.loss,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "image_size": args.image_size,
        "lr": args.lr,
    }
    flags.update({k: v for k, v in named.items() if v is not None})
    if args.no_serp:
        flags["serp"] = False
    cfg = cfg.with_overrides(flags)
    if not cfg.data:
        raise UsageError("no dataset given: pass --data or set data= in the config file")
    return cfg.with_overrides({"data": str(Path(cfg.data).resolve())})


def _native_size(records) -> int | None:
    shapes = {r.mask.shape for r in records}
    if len(shapes) == 1:
        h, w = shapes.pop()
        if h == w:
            return h
    return None


def cmd_train(args) -> int:
    cfg = build_run_config(args)
    out = Path(args.out)
    records = load_dataset(cfg.data, cfg.image_size or None)
    cfg = cfg.resolve(_native_size(records))
    if cfg.image_size != _native_size(records):
        records = load_dataset(cfg.data, cfg.image_size)

    created_dir = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    clash = [n for n in TRAIN_OUTPUTS if (out / n).exists()]
    if clash:
        raise UsageError(f"output directory {out} already holds {', '.join(clash)}")
    try:
        (out / "resolved.cfg").write_text(cfg.to_text())
        _run_training(cfg, records, out)
    except BaseException:
        for name in TRAIN_OUTPUTS + ("best.ckpt.tmp", "final.ckpt.tmp"):
            (out / name).unlink(missing_ok=True)
        if created_dir:
            shutil.rmtree(out, ignore_errors=True)
        raise
    return EXIT_OK


def _run_training(cfg: RunConfig, records, out: Path) -> None:
    train, val = split_records(records, cfg.val_fraction, cfg.seed)
    params = init_params(cfg.model_config(), cfg.seed)
    history_path = out / "history.csv"
    history_path.write_text(",".join(HISTORY_HEADER) + "\n")
    print(f"training on {len(train)} samples, validating on {len(val)} ({cfg.image_size}x{cfg.image_size}, serp={cfg.serp})")
    t0 = time.perf_counter()

    def on_epoch(row: dict) -> None:
        with history_path.open("a") as fh:
            fh.write(format_history([row]).split("\n", 1)[1])
        print(
            f"epoch {row['epoch']:4d}  lr {row['lr']:.3g}  loss {row['loss_total']:.4f}  "
            f"val_dsc {row['val_dsc']:.4f}  val_iou {row['val_iou']:.4f}  [{time.perf_counter() - t0:.0f}s]",
            flush=True,
        )

    result = train_loop(
        train, val, params, cfg.trainer_config(), cfg.loss_config(), cfg.mwl_config(), on_epoch=on_epoch
    )
    save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.params, out / "final.ckpt")
    print(f"best val_dsc {result.best_dsc:.4f} at epoch {result.best_epoch}")


# eval -------------------------------------------------------------------------------------
def predict_folder(params, records, pred_dir: Path, batch_size: int = 8) -> None:
    """Write ``round(255 * p)`` probability PNGs at each mask's native size."""
    size = params.cfg.image_size
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        x = np.stack([resize_image(r.image, size, size).transpose(2, 0, 1) for r in chunk]).astype(np.float32)
        probs = model_forward_infer(Tensor(x), params).data[:, 0].astype(np.float64)
        for r, p in zip(chunk, probs):
            h, w = r.mask.shape
            if (h, w) != (size, size):
                p = np.clip(resize_image(p, h, w), 0.0, 1.0)
            write_png(pred_dir / f"{r.id}.png", np.round(p * 255.0).astype(np.uint8))


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    records = load_dataset(args.data)
    report_path = Path(args.report)
    pred_dir = Path(args.predictions) if args.predictions else report_path.with_name(report_path.stem + "_predictions")
    predict_folder(params, records, pred_dir)
    report = evaluate_folder(pred_dir, Path(args.data) / "masks")
    if args.baseline_report:
        report.compare(MetricReport.read(args.baseline_report))
    json_path, csv_path = report.write(report_path)
    m = report.means
    print(
        f"{len(report.samples)} samples  dsc {m['dsc']:.4f}  iou {m['iou']:.4f}  "
        f"precision {m['precision']:.4f}  recall {m['recall']:.4f}  f {report.f_score:.4f}"
    )
    for k, p in report.p_values.items():
        print(f"p-value {k}: {p:.4g}")
    print(f"wrote {json_path} and {csv_path}")
    return EXIT_OK


# weightmask -------------------------------------------------------------------------------
def cmd_weightmask(args) -> int:
    mwl = MwlConfig(w_b=args.wb, w_o=args.wo, w_m=args.wm, k=args.k)
    try:
        mwl.validate(1e-6)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    gray = read_gray(args.mask)
    mask = (gray > 127).astype(np.uint8)
    wm = build_weight_mask(mask, mwl)
    s_e, s_d = erode_dilate(mask, mwl.k)
    export_weight_mask_image(wm, args.out)
    margin = int(np.count_nonzero(s_d - s_e))
    obj = int(np.count_nonzero(s_e))
    background = int(mask.size - margin - obj)
    print(f"background {background}  object {obj}  margin {margin}")
    return EXIT_OK


# entry point ------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="litenext", description="Lightweight segmentation with dual-branch training.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic blob dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--overlap", type=float, default=0.3, help="fraction of images with touching blobs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data")
    p.add_argument("--config", help="key=value file; flags override its values")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-serp", action="store_true", help="single-branch training without the embedding loss")
    p.add_argument("--loss", choices=("mwl", "bce", "wbce", "bbce", "focal"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="report JSON path; a CSV summary is written beside it")
    p.add_argument("--baseline-report", help="report JSON to compare against with paired t-tests")
    p.add_argument("--predictions", help="directory for prediction PNGs (default: <report>_predictions)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("weightmask", help="export the loss weight mask of a binary mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--wm", type=float, default=0.6)
    p.add_argument("--wo", type=float, default=0.3)
    p.add_argument("--wb", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weightmask)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (OSError, DatasetError, CheckpointError, ValueError, ArithmeticError, RuntimeError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL
    except KeyboardInterrupt:
        _err("interrupted")
        return EXIT_FAIL
    except Exception as exc:  # anything unexpected is still a runtime failure
        _err(f"unexpected {type(exc).__name__}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
