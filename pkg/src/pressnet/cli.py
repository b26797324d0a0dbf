"""Command-line entry point tying the pipeline together.

Verbs: ``synth`` (write a synthetic dataset), ``fit-density`` (persist the
pixel-value density of a train split), ``train``, ``eval`` (metric tables),
``predict`` (single image + physique -> pressure-map CSV), ``curves``
(tolerance-sweep CSV and plot) and ``ablate`` (run a set of loss
configurations sequentially and emit one comparison table).

Exit codes: 0 success, 1 runtime or precondition failure (one-line
diagnostic on stderr), 2 usage error. Every ``train``/``ablate`` flag maps
to exactly one config-file key of the same name.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from .core import (
    DegenerateInputError,
    InvalidConfigError,
    InvalidInputError,
    Modality,
    PhysicalVector,
)
from .data.homography import RankDeficiencyError
from .data.io import load_dataset, load_image_png, save_dataset, save_map_csv
from .data.synthetic import InvalidSpecError, build_synthetic_dataset
from .density import fit_density, load_density, save_density
from .metrics import CURVE_EPSILONS, PcsCurve, write_curve_csv, write_metrics_csv
from .train import (
    CONFIG_NAMES,
    FIELD_DOCS,
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    load_model,
    load_train_config,
    train,
)

_FAILURE_ERRORS = (
    InvalidInputError,
    InvalidConfigError,
    DegenerateInputError,
    InvalidSpecError,
    RankDeficiencyError,
    TrainingDivergedError,
    FileNotFoundError,
    NotADirectoryError,
    PermissionError,
)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config keys (override the config file)")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        help_text = FIELD_DOCS[f.name] + f" (default {f.default})"
        if isinstance(f.default, bool):
            group.add_argument(flag, dest=f.name, default=None, help=help_text,
                               action=argparse.BooleanOptionalAction)
        else:
            group.add_argument(flag, dest=f.name, type=type(f.default), default=None, help=help_text)


def _train_overrides(args) -> dict:
    return {
        f.name: getattr(args, f.name)
        for f in fields(TrainConfig)
        if getattr(args, f.name) is not None
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pressnet",
        description="Contact-pressure map estimation from bedside vision and physique data.",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")

    p = sub.add_parser("synth", help="write a synthetic paired dataset")
    p.add_argument("--out-dir", required=True, help="dataset directory to create")
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--poses", type=int, default=3, help="poses per subject")
    p.add_argument("--test-subjects", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pm-rows", type=int, default=64)
    p.add_argument("--pm-cols", type=int, default=32)
    p.add_argument("--image-size", type=int, default=128, help="square vision image side")
    p.add_argument("--modality", choices=[m.value for m in Modality], default="RGB")
    p.add_argument("--pixel-area", type=float, default=None,
                   help="kg per normalized-pressure-unit per pixel (default: calibrated)")

    p = sub.add_parser("fit-density", help="fit and persist the pixel-value density")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="density file to write")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--split", choices=["train", "test"], default="train")

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out-dir", required=True, help="run directory")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--density", default=None, help="fitted density file (resampling configs)")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="metric tables for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("predict", help="predict one pressure map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input PNG (modality per checkpoint)")
    p.add_argument("--beta", required=True,
                   help="comma-separated raw physique entries, e.g. 72.5,171,1,...")
    p.add_argument("--out", required=True, help="pressure-map CSV to write")

    p = sub.add_parser("curves", help="tolerance-sweep CSVs and plot")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--no-plot", action="store_true", help="write CSV only (headless runs)")

    p = sub.add_parser("ablate", help="run a configuration matrix and compare")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--configs", default=",".join(CONFIG_NAMES),
                   help="comma-separated subset of: " + ", ".join(CONFIG_NAMES))
    p.add_argument("--config", default=None, help="shared flat key=value config file")
    p.add_argument("--split", choices=["train", "test"], default="test",
                   help="split for the comparison table")
    _add_train_flags(p)

    return parser


def _write_eval(ev, out_dir: Path, split: str) -> Path:
    rows = [{"sample_id": sid, **row} for sid, row in zip(ev.ids, ev.rows)]
    path = out_dir / f"metrics_{split}.csv"
    write_metrics_csv(path, rows, aggregate=ev.aggregate)
    return path


def _mean_curves(ev) -> dict:
    return {
        fraction: PcsCurve(epsilons=tuple(CURVE_EPSILONS), pcs=tuple(values))
        for fraction, values in ev.curves.items()
    }


def _cmd_synth(args) -> int:
    manifest = build_synthetic_dataset(
        subjects=args.subjects,
        poses_per_subject=args.poses,
        test_subjects=args.test_subjects,
        seed=args.seed,
        pm_shape=(args.pm_rows, args.pm_cols),
        image_shape=(args.image_size, args.image_size),
        modality=Modality(args.modality),
        pixel_area_c=args.pixel_area,
    )
    path = save_dataset(manifest, args.out_dir)
    train_n = len(manifest.samples_for("train"))
    test_n = len(manifest.samples_for("test"))
    print(f"wrote {len(manifest.samples)} samples ({train_n} train / {test_n} test) to {path}")
    return 0


def _cmd_fit_density(args) -> int:
    manifest = load_dataset(args.data)
    samples = manifest.samples_for(args.split)
    if not samples:
        raise InvalidInputError(f"split {args.split!r} is empty")
    density = fit_density([s.pressure for s in samples], bins=args.bins)
    save_density(density, args.out)
    print(f"fitted {args.bins}-bin density on {len(samples)} {args.split} maps -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    manifest = load_dataset(args.data)
    cfg = load_train_config(args.config, _train_overrides(args))
    density = load_density(args.density) if args.density else None
    result = train(manifest, cfg, args.out_dir, density=density)
    print(f"checkpoint: {result.checkpoint_path}")
    if manifest.samples_for("test"):
        from .data.io import NormalizationRanges

        ranges = NormalizationRanges.from_dict(result.extras["beta_ranges"])
        ev = evaluate(result.model, manifest, ranges, split="test", batch_size=cfg.batch_size)
        path = _write_eval(ev, result.run_dir, "test")
        print(f"test metrics: {path}")
        headline = {k: ev.aggregate[k] for k in ("mse_efs10", "pcs_efs0.1_m10") if ev.aggregate.get(k) is not None}
        print("  " + "  ".join(f"{k}={v:.4f}" for k, v in headline.items()))
    return 0


def _cmd_eval(args) -> int:
    model, ranges, _ = load_model(args.checkpoint)
    manifest = load_dataset(args.data)
    ev = evaluate(model, manifest, ranges, split=args.split, batch_size=args.batch_size)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = _write_eval(ev, out_dir, args.split)
    print(f"metrics: {path}")
    for key in ("mse_efs5", "mse_efs10", "pcs_efs0.1_m5", "pcs_efs0.1_m10", "psnr", "ssim"):
        value = ev.aggregate.get(key)
        if value is not None:
            print(f"  {key} = {value:.4f}")
    return 0


def _cmd_predict(args) -> int:
    model, ranges, _ = load_model(args.checkpoint)
    modality = Modality.RGB if model.config.in_channels == 3 else Modality.LWIR
    image = load_image_png(args.image, modality)
    try:
        entries = tuple(float(tok) for tok in args.beta.split(","))
    except ValueError as exc:
        raise InvalidInputError(f"cannot parse --beta {args.beta!r}: {exc}") from exc
    beta = PhysicalVector(entries)
    if len(beta) != model.config.beta_length:
        raise InvalidInputError(
            f"checkpoint expects {model.config.beta_length} physique entries, got {len(beta)}"
        )
    normalized = ranges.normalize_beta(beta)

    import torch.nn.functional as F

    tensor = torch.from_numpy(image.values.copy()).permute(2, 0, 1).float()[None]
    tensor = F.interpolate(tensor, size=model.config.stage.input_size, mode="bilinear", align_corners=False)
    with torch.no_grad():
        pred = model(tensor, torch.tensor([normalized.entries], dtype=torch.float32))[-1][0]
    pm = pred.double().numpy()
    save_map_csv(args.out, pm)
    print(f"wrote {pm.shape[0]}x{pm.shape[1]} map to {args.out} (peak {pm.max():.4f}, sum {pm.sum():.2f})")
    return 0


def _cmd_curves(args) -> int:
    model, ranges, _ = load_model(args.checkpoint)
    manifest = load_dataset(args.data)
    ev = evaluate(model, manifest, ranges, split=args.split, batch_size=args.batch_size)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = _mean_curves(ev)
    for fraction, curve in curves.items():
        path = out_dir / f"pcs_curve_m{round(fraction * 100)}.csv"
        write_curve_csv(path, curve)
        print(f"curve ({fraction:.0%} mask): {path}")
    if not args.no_plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        for fraction, curve in sorted(curves.items()):
            ax.plot(curve.epsilons, [v if v is not None else float("nan") for v in curve.pcs],
                    marker=".", label=f"{fraction:.0%} mask")
        ax.set_xlabel("tolerance")
        ax.set_ylabel("correct-sensing fraction")
        ax.set_ylim(0, 1.02)
        ax.legend()
        fig.tight_layout()
        plot_path = out_dir / "pcs_curves.png"
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)
        print(f"plot: {plot_path}")
    return 0


def _cmd_ablate(args) -> int:
    manifest = load_dataset(args.data)
    names = [tok.strip() for tok in args.configs.split(",") if tok.strip()]
    for name in names:
        if name not in CONFIG_NAMES:
            raise InvalidConfigError(
                f"unknown config {name!r}; valid names: {', '.join(CONFIG_NAMES)}"
            )
    overrides = _train_overrides(args)
    overrides.pop("config_name", None)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    density = fit_density(
        [s.pressure for s in manifest.samples_for("train")],
        bins=load_train_config(args.config, overrides).density_bins,
    )

    from .data.io import NormalizationRanges

    table = []
    for name in names:
        cfg = load_train_config(args.config, {**overrides, "config_name": name})
        print(f"[{name}] training ...")
        result = train(manifest, cfg, out_dir / name, density=density)
        ranges = NormalizationRanges.from_dict(result.extras["beta_ranges"])
        ev = evaluate(result.model, manifest, ranges, split=args.split, batch_size=cfg.batch_size)
        _write_eval(ev, result.run_dir, args.split)
        table.append({"config": name, **ev.aggregate})
        headline = {k: ev.aggregate[k] for k in ("mse_efs10", "pcs_efs0.1_m10") if ev.aggregate.get(k) is not None}
        print(f"[{name}] " + "  ".join(f"{k}={v:.4f}" for k, v in headline.items()))

    combined = out_dir / "ablation.csv"
    write_metrics_csv(combined, table, id_key="config")
    print(f"comparison table: {combined}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "fit-density": _cmd_fit_density,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "curves": _cmd_curves,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.verb](args)
    except _FAILURE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
