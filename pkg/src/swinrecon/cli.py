"""Command-line entry point: ``swinrecon <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Diagnostics go to stderr; stdout carries only the paths or JSON summaries
a script would want to capture. ``SWINRECON_OUT`` sets the default output
root (``./swinrecon-out`` otherwise).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, plotting
from .config import ConfigError, build_config
from .dataio import DatasetManifest, SliceRecord, load_slice_dir, save_slice
from .kspace import UndersamplingMask, gaussian1d_mask
from .losses import read_curves
from .metrics import evaluate_set, save_reports
from .trainer import fit, load_generator, mask_tag, reconstruct, zero_filled

log = logging.getLogger("swinrecon")

ENV_OUT = "SWINRECON_OUT"
VARIANT_CHOICES = ("swinmr", "st", "ees", "tes")


class UsageError(Exception):
    """Bad combination of arguments detected after parsing."""


def out_root() -> Path:
    return Path(os.environ.get(ENV_OUT, "swinrecon-out"))


def _config_from_args(args):
    overrides = list(args.set or [])
    if getattr(args, "variant", None):
        overrides.append(f"train.variant={args.variant}")
    if getattr(args, "mask_rate", None) is not None:
        overrides.append(f"train.mask_rate={args.mask_rate}")
    if args.seed is not None:
        overrides.append(f"{args.seed_target}.seed={args.seed}")
    return build_config(args.preset, args.config, overrides)


def _load_split(path: Path, split: str | None) -> list[SliceRecord]:
    """Slices from a dataset root (manifest + split) or a plain slice directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    if (path / "manifest.json").exists():
        manifest = DatasetManifest.load_from(path)
        return manifest.load(split) if split else [
            r for s in dataio.SPLITS for r in manifest.load(s)
        ]
    for d in (path, path / "slices"):
        recs = load_slice_dir(d)
        if recs:
            return recs
    raise FileNotFoundError(f"no .slice files under {path}")


def _load_mask(args, width: int) -> UndersamplingMask | None:
    if getattr(args, "mask", None):
        mask = UndersamplingMask.load(args.mask)
        if mask.width != width:
            raise UsageError(f"mask width {mask.width} does not match image width {width}")
        return mask
    if getattr(args, "mask_rate", None) is not None:
        seed = args.seed if args.seed is not None else 0
        return gaussian1d_mask(width, args.mask_rate, args.center_fraction, seed)
    return None


# -- subcommands ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args).data
    out = Path(args.out_dir or out_root() / "data")
    manifest = dataio.build_dataset(out, cfg.n_cases, cfg.slices_per_case, cfg.size, cfg.seed, cfg.ratio)
    counts = {k: len(v) for k, v in manifest.splits.items()}
    log.info("wrote %d slices to %s (cases per split %s)", len(manifest.records), out, counts)
    print(out / "manifest.json")
    return 0


def cmd_make_mask(args) -> int:
    seed = args.seed if args.seed is not None else 0
    mask = gaussian1d_mask(args.width, args.rate, args.center_fraction, seed)
    path = Path(args.output) if args.output else Path(args.out_dir or out_root()) / "mask.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    mask.save(path)
    log.info("%s: %d of %d columns sampled", mask_tag(args.rate), mask.num_sampled, mask.width)
    print(path)
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    tc = cfg.train
    run_dir = Path(args.out_dir or out_root() / "runs" / f"{tc.variant}-seed{tc.seed}")
    data = Path(args.data)
    if not (data / "manifest.json").exists():
        raise FileNotFoundError(f"{data} has no manifest.json; run gen-data first")
    manifest = DatasetManifest.load_from(data)
    train, test = manifest.load("train"), manifest.load("test")
    log.info("training %s for %d steps on %d slices -> %s", tc.variant, tc.steps, len(train), run_dir)
    result = fit(cfg, train, test if not args.no_eval else None, run_dir, resume=args.resume)
    records = read_curves(result.curves)
    if records:
        plotting.plot_curves(records, run_dir / "curves.png", title=f"{tc.variant} learning curves")
    summary = {"run_dir": str(run_dir), "checkpoint": str(result.checkpoint)}
    summary.update({k: r.to_dict() for k, r in result.reports.items()})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_reconstruct(args) -> int:
    records = _load_split(Path(args.data), args.split)
    generator = load_generator(args.checkpoint)
    width = records[0].image.shape[-1]
    mask = _load_mask(args, width)
    if mask is None:
        raise UsageError("reconstruct needs --mask or --mask-rate")
    out = Path(args.out_dir or out_root() / "recon")
    (out / "slices").mkdir(parents=True, exist_ok=True)
    recon = reconstruct(generator, [r.image for r in records], mask, batch_size=args.batch_size)
    for rec, img in zip(records, recon):
        # the slice format stores normalized intensities
        clipped = np.clip(img, 0.0, 1.0).astype(np.float32)
        save_slice(out / "slices" / f"{rec.id}.slice", SliceRecord(rec.id, clipped, rec.seed, rec.case_id))
    mask.save(out / "mask.json")
    log.info("reconstructed %d slices with %s", len(records), mask_tag(mask.rate))
    print(out)
    return 0


REPORT_FIELDS = ("name", "psnr_db", "ssim", "fid", "n_images", "mask_tag")


def cmd_evaluate(args) -> int:
    truth = _load_split(Path(args.truth), args.split)
    recon = {r.id: r for r in _load_split(Path(args.recon), None)}
    missing = [t.id for t in truth if t.id not in recon]
    if missing:
        raise FileNotFoundError(f"{len(missing)} ground-truth slices lack reconstructions, e.g. {missing[0]}")
    if args.max_images:
        truth = truth[: args.max_images]
    gt = [t.image.astype(np.float64) for t in truth]
    rc = [recon[t.id].image.astype(np.float64) for t in truth]

    mask_path = Path(args.mask) if args.mask else Path(args.recon) / "mask.json"
    mask = UndersamplingMask.load(mask_path) if mask_path.exists() else None
    tag = mask_tag(mask.rate) if mask else "none"
    reports = {}
    if mask is not None:
        reports["zf"] = evaluate_set(gt, list(zero_filled(gt, mask)), tag)
    reports["recon"] = evaluate_set(gt, rc, tag)

    out = Path(args.out_dir or out_root() / "eval")
    out.mkdir(parents=True, exist_ok=True)
    save_reports(out / "metrics.json", reports, {"truth": str(args.truth), "recon": str(args.recon)})
    with (out / "metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_FIELDS)
        for name, rep in reports.items():
            d = rep.to_dict()
            writer.writerow([name] + [d[k] for k in REPORT_FIELDS[1:]])
    plotting.plot_metrics(reports, out / "metrics.png", title=tag)
    rows = {"truth": gt}
    if mask is not None:
        rows["ZF"] = list(zero_filled(gt, mask))
    rows["recon"] = rc
    plotting.plot_examples(rows, out / "examples.png")
    print(json.dumps({k: r.to_dict() for k, r in reports.items()}, sort_keys=True))
    return 0


def cmd_plot_curves(args) -> int:
    out = Path(args.out_dir or out_root() / "plots")
    out.mkdir(parents=True, exist_ok=True)
    for src in args.curves:
        src = Path(src)
        csv_path = src / "curves.csv" if src.is_dir() else src
        records = read_curves(csv_path)
        if not records:
            raise ValueError(f"{csv_path} has no curve rows")
        name = csv_path.parent.name if src.is_dir() else csv_path.stem
        path = plotting.plot_curves(records, out / f"{name}.png", title=name, window=args.window)
        print(path)
    return 0


# -- parser -----------------------------------------------------------------------------


def _add_config_flags(p, seed_target: str):
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--config", help="YAML file merged over the preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted override, e.g. train.steps=50 (repeatable)")
    p.set_defaults(seed_target=seed_target)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swinrecon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", help=f"output location (default under ${ENV_OUT})")

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic phantom dataset")
    _add_config_flags(p, "data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("make-mask", parents=[common], help="write a Gaussian 1D column mask")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--center-fraction", type=float, default=0.04)
    p.add_argument("-o", "--output", help="mask JSON path (default OUT_DIR/mask.json)")
    p.set_defaults(func=cmd_make_mask)

    p = sub.add_parser("train", parents=[common], help="train a generator (and discriminators)")
    p.add_argument("--data", required=True, help="dataset root written by gen-data")
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--mask-rate", type=float)
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--no-eval", action="store_true", help="skip the final test-split evaluation")
    _add_config_flags(p, "train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct slices with a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root or slice directory")
    p.add_argument("--split", default="test", help="split to use when --data has a manifest")
    p.add_argument("--mask", help="mask JSON from make-mask")
    p.add_argument("--mask-rate", type=float)
    p.add_argument("--center-fraction", type=float, default=0.04)
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM/FID of ZF and reconstructions")
    p.add_argument("--truth", required=True, help="dataset root or slice directory")
    p.add_argument("--recon", required=True, help="reconstruction directory")
    p.add_argument("--split", default=None, help="split to use when --truth has a manifest")
    p.add_argument("--mask", help="mask JSON (default RECON/mask.json if present)")
    p.add_argument("--max-images", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot-curves", parents=[common], help="render learning curves to PNG")
    p.add_argument("curves", nargs="+", help="curves.csv files or run directories")
    p.add_argument("--window", type=int, default=25, help="moving-average window")
    p.set_defaults(func=cmd_plot_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"swinrecon {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        log.debug("failure", exc_info=True)
        print(f"swinrecon {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
