"""Training engine: optimization schedule, ablation configs, checkpointing
and evaluation orchestration.

A run writes into its run directory: a copy of the effective config
(``config.txt``), periodic and final checkpoints, a per-term loss log
(``runlog.csv``) with one row per term per step plus per-epoch learning
rate and validation score rows.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .core import (
    DatasetManifest,
    InvalidConfigError,
    InvalidInputError,
    Modality,
)
from .data.io import NormalizationRanges
from .density import PixelValueDensity, WeightMapConfig, weight_map
from .losses import (
    LossWeights,
    adversarial_losses,
    generator_adversarial_loss,
    l2_loss,
    physical_loss,
    pwrs_loss,
    ssim_loss,
    total_loss,
)
from .metrics import CURVE_EPSILONS, aggregate_rows, evaluate_pair, pcs_curve, pcs_efs
from .model import (
    NetworkConfig,
    PatchDiscriminator,
    PressureNet,
    StageConfig,
    load_checkpoint,
    save_checkpoint,
)

#: The ablation configuration matrix. Single-component names keep the plain
#: L2 reconstruction term and add the named component on top of it; the
#: resampling variants replace plain L2 with the density-weighted form.
CONFIG_NAMES = (
    "base",
    "pwrs",
    "phy",
    "ssim",
    "D",
    "pwrs-phy",
    "pwrs-phy-ssim",
    "pwrs-phy-D",
    "pwrs-phy-ssim-D",
)

LAMBDA_PWRS = 100.0
LAMBDA_PHY = 1e-6
LAMBDA_SSIM = 10.0
LAMBDA_D = 1.0
LAMBDA_BASE_L2 = 100.0

CHECKPOINT_EVERY = 5


class TrainingDivergedError(RuntimeError):
    """Raised when a loss becomes non-finite; carries the offending batch."""

    def __init__(self, message: str, batch_ids=()):
        super().__init__(message)
        self.batch_ids = tuple(batch_ids)


def resolve_loss_weights(config_name: str) -> LossWeights:
    """Loss weights for one ablation configuration.

    Components are added on top of the base reconstruction objective; the
    resampling term is itself a reconstruction loss, so it replaces the
    plain L2 whenever present (with a uniform pixel-value density the two
    coincide).
    """
    if config_name not in CONFIG_NAMES:
        raise InvalidConfigError(
            f"unknown config {config_name!r}; valid names: {', '.join(CONFIG_NAMES)}"
        )
    tokens = set(config_name.split("-"))
    has_pwrs = "pwrs" in tokens
    return LossWeights(
        lambda_pwrs=LAMBDA_PWRS if has_pwrs else 0.0,
        lambda_phy=LAMBDA_PHY if "phy" in tokens else 0.0,
        lambda_ssim=LAMBDA_SSIM if "ssim" in tokens else 0.0,
        lambda_d=LAMBDA_D if "D" in tokens else 0.0,
        lambda_base_l2=0.0 if has_pwrs else LAMBDA_BASE_L2,
    )


@dataclass(frozen=True)
class TrainConfig:
    """One training run. Field names double as config-file keys and CLI
    flags; keep them flat and scalar."""

    config_name: str = "pwrs-phy"
    epochs: int = 30
    lr: float = 0.0002
    decay_epochs: int = 5
    batch_size: int = 8
    stages: int = 1
    beta_length: int = 10
    seed: int = 0
    input_height: int = 256
    input_width: int = 256
    base_channels: int = 64
    depth: int = 4
    code_channels: int = 64
    out_rows: int = 64
    out_cols: int = 32
    density_bins: int = 100
    xi: float = 0.01
    max_steps: int = 0
    val_every: int = 1
    val_subjects: int = 0
    best_checkpoint: bool = False

    def __post_init__(self):
        if self.config_name not in CONFIG_NAMES:
            raise InvalidConfigError(
                f"unknown config {self.config_name!r}; valid names: {', '.join(CONFIG_NAMES)}"
            )
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.decay_epochs <= self.epochs:
            raise InvalidConfigError(
                f"decay_epochs must lie in [0, epochs={self.epochs}], got {self.decay_epochs}"
            )
        if not self.lr > 0:
            raise InvalidConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.density_bins < 1:
            raise InvalidConfigError(f"density_bins must be >= 1, got {self.density_bins}")
        if self.xi < 0:
            raise InvalidConfigError(f"xi must be >= 0, got {self.xi}")
        if self.max_steps < 0 or self.val_every < 0 or self.val_subjects < 0:
            raise InvalidConfigError("max_steps, val_every and val_subjects must be >= 0")

    @property
    def loss_weights(self) -> LossWeights:
        return resolve_loss_weights(self.config_name)

    def network_config(self, in_channels: int) -> NetworkConfig:
        return NetworkConfig(
            stage=StageConfig(
                input_size=(self.input_height, self.input_width),
                base_channels=self.base_channels,
                depth=self.depth,
                code_channels=self.code_channels,
            ),
            stages=self.stages,
            beta_length=self.beta_length,
            in_channels=in_channels,
            output_size=(self.out_rows, self.out_cols),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


#: Help strings for config keys; the CLI exposes each key as one flag.
FIELD_DOCS = {
    "config_name": "ablation configuration: " + ", ".join(CONFIG_NAMES),
    "epochs": "training epochs (reference protocol: 30)",
    "lr": "Adam learning rate (reference protocol: 0.0002)",
    "decay_epochs": "final epochs with per-epoch linear lr decay to 0",
    "batch_size": "samples per optimization step (desk default 8; 70 at full scale)",
    "stages": "stacked refinement stages with independent weights",
    "beta_length": "physique entries used: 1, 2, 3 or 10",
    "seed": "seed for shuffling and weight init",
    "input_height": "vision input height after resize",
    "input_width": "vision input width after resize",
    "base_channels": "encoder width at the first level",
    "depth": "down/upsampling levels per stage",
    "code_channels": "physique code channels at the bottleneck",
    "out_rows": "pressure-map rows (must match the dataset)",
    "out_cols": "pressure-map columns (must match the dataset)",
    "density_bins": "histogram bins for the pixel-value density",
    "xi": "density smoothing offset in the resampling weights",
    "max_steps": "hard cap on optimization steps (0 = no cap)",
    "val_every": "epochs between validation passes (0 = never)",
    "val_subjects": "subjects carved from the train split for validation (0 = use test split)",
    "best_checkpoint": "also track the best-validation checkpoint",
}


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise InvalidConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def load_train_config(path=None, overrides: dict = None) -> TrainConfig:
    """Build a config from an optional flat key=value file plus overrides."""
    values = {}
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in defaults:
                raise InvalidConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(raw, defaults[key])
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise InvalidConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = _parse_value(str(value), defaults[key]) if isinstance(value, str) else value
    return TrainConfig(**values)


def save_train_config(cfg: TrainConfig, path) -> None:
    lines = [f"{key} = {value}" for key, value in cfg.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")


def lr_factor(epoch: int, epochs: int, decay_epochs: int) -> float:
    """Per-epoch linear decay multiplier; ``epoch`` is 1-based."""
    if decay_epochs == 0:
        return 1.0
    return max(0.0, min(1.0, (epochs - epoch) / decay_epochs))


@dataclass
class _Tensors:
    images: torch.Tensor
    gt: torch.Tensor
    beta: torch.Tensor
    weight_kg: torch.Tensor
    condition: torch.Tensor
    ids: list


def _modality_channels(samples) -> int:
    modalities = {s.vision.modality for s in samples}
    if len(modalities) != 1:
        raise InvalidInputError(f"mixed vision modalities in split: {sorted(m.value for m in modalities)}")
    return 3 if modalities.pop() is Modality.RGB else 1


def _assemble(samples, input_size, output_size, beta_length, ranges: NormalizationRanges) -> _Tensors:
    images, gts, betas, weights, ids = [], [], [], [], []
    for s in samples:
        if s.pressure.values.shape != output_size:
            raise InvalidInputError(
                f"sample {s.subject_id}/{s.pose_id}: pressure grid {s.pressure.values.shape} "
                f"does not match configured output size {output_size}"
            )
        img = torch.from_numpy(s.vision.values.copy()).permute(2, 0, 1).float()
        images.append(img)
        gts.append(torch.from_numpy(s.pressure.values.copy()).float())
        betas.append(ranges.normalize_beta(s.physique.truncated(beta_length)).entries)
        weights.append(s.physique.weight_kg)
        ids.append(f"{s.subject_id}/{s.pose_id}")
    images = torch.stack(images)
    if tuple(images.shape[-2:]) != input_size:
        images = F.interpolate(images, size=input_size, mode="bilinear", align_corners=False)
    gt = torch.stack(gts)
    condition = F.interpolate(images, size=output_size, mode="bilinear", align_corners=False)
    return _Tensors(
        images=images,
        gt=gt,
        beta=torch.tensor(betas, dtype=torch.float32),
        weight_kg=torch.tensor(weights, dtype=torch.float32),
        condition=condition,
        ids=ids,
    )


def _pwrs_weights(samples, density: PixelValueDensity, xi: float) -> torch.Tensor:
    cfg = WeightMapConfig(lambda_l2=1.0, xi=xi, normalize_mean_to_one=True)
    maps = [weight_map(s.pressure, density, cfg) for s in samples]
    return torch.tensor(np.stack(maps), dtype=torch.float32)


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint_path: Path
    runlog_path: Path
    history: list
    model: PressureNet
    extras: dict


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    run_dir,
    density: PixelValueDensity = None,
) -> TrainResult:
    """Run one training configuration and write its artifacts to run_dir."""
    weights_cfg = cfg.loss_weights
    if weights_cfg.lambda_pwrs > 0 and density is None:
        raise InvalidConfigError(
            f"config {cfg.config_name!r} uses the resampling loss: fit a pixel-value "
            "density on the train split first and pass it in"
        )

    train_samples = manifest.samples_for("train")
    if not train_samples:
        raise InvalidInputError("train split is empty")
    if cfg.val_subjects > 0:
        train_subjects = sorted({s.subject_id for s in train_samples})
        if cfg.val_subjects >= len(train_subjects):
            raise InvalidConfigError(
                f"val_subjects must leave at least one training subject, got {cfg.val_subjects}"
            )
        val_ids = set(train_subjects[len(train_subjects) - cfg.val_subjects :])
        val_samples = [s for s in train_samples if s.subject_id in val_ids]
        train_samples = [s for s in train_samples if s.subject_id not in val_ids]
    else:
        val_samples = manifest.samples_for("test")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    in_channels = _modality_channels(train_samples)
    net_cfg = cfg.network_config(in_channels)
    model = PressureNet(net_cfg)
    model.train()

    ranges = NormalizationRanges.from_samples(
        [dataclasses.replace(s, physique=s.physique.truncated(cfg.beta_length)) for s in train_samples]
    )
    input_size = net_cfg.stage.input_size
    output_size = net_cfg.output_size
    data = _assemble(train_samples, input_size, output_size, cfg.beta_length, ranges)
    val_data = (
        _assemble(val_samples, input_size, output_size, cfg.beta_length, ranges)
        if val_samples
        else None
    )
    pwrs_w = (
        _pwrs_weights(train_samples, density, cfg.xi) if weights_cfg.lambda_pwrs > 0 else None
    )

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_train_config(cfg, run_dir / "config.txt")
    runlog_path = run_dir / "runlog.csv"
    log_rows = [("epoch", "step", "term", "value")]

    opt_g = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    discriminator = None
    opt_d = None
    if weights_cfg.lambda_d > 0:
        discriminator = PatchDiscriminator(condition_channels=in_channels, conditional=True)
        discriminator.train()
        opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr, betas=(0.5, 0.999))

    extras = {
        "train_config": cfg.to_dict(),
        "beta_ranges": ranges.to_dict(),
        "pixel_area_c": manifest.pixel_area_c,
    }

    def flush_log():
        with runlog_path.open("w", newline="") as fh:
            csv.writer(fh).writerows(log_rows)

    def save(path, epoch):
        save_checkpoint(path, model, {**extras, "epoch": epoch})

    n = data.images.shape[0]
    step = 0
    history = []
    best_val = -1.0
    stop = False
    for epoch in range(1, cfg.epochs + 1):
        factor = lr_factor(epoch, cfg.epochs, cfg.decay_epochs)
        for group in opt_g.param_groups:
            group["lr"] = cfg.lr * factor
        if opt_d is not None:
            for group in opt_d.param_groups:
                group["lr"] = cfg.lr * factor
        log_rows.append((epoch, step, "lr", f"{cfg.lr * factor:.10g}"))

        order = rng.permutation(n)
        epoch_totals = []
        for start in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            bsz = idx.shape[0]
            images = data.images[idx]
            gt = data.gt[idx]
            beta = data.beta[idx]
            cond = data.condition[idx]

            preds = model(images, beta)

            breakdown_sum = {}
            if discriminator is not None:
                d_total = images.new_zeros(())
                real_scores = discriminator(gt[:, None], cond)
                for pred in preds:
                    fake_scores = discriminator(pred.detach()[:, None], cond)
                    d_total = d_total + adversarial_losses(real_scores, fake_scores)[0]
                d_total = d_total / len(preds)
                opt_d.zero_grad(set_to_none=True)
                d_total.backward()
                opt_d.step()
                breakdown_sum["d_loss"] = float(d_total.detach())

            total = images.new_zeros(())
            for pred in preds:
                terms = {}
                if weights_cfg.lambda_pwrs > 0:
                    terms["pwrs"] = pwrs_loss(pred, gt, pwrs_w[idx]) / bsz
                if weights_cfg.lambda_base_l2 > 0:
                    terms["base_l2"] = l2_loss(pred, gt) / bsz
                if weights_cfg.lambda_phy > 0:
                    terms["phy"] = physical_loss(pred, data.weight_kg[idx], manifest.pixel_area_c)
                if weights_cfg.lambda_ssim > 0:
                    terms["ssim"] = ssim_loss(pred, gt)
                if weights_cfg.lambda_d > 0:
                    terms["adv"] = generator_adversarial_loss(discriminator(pred[:, None], cond))
                stage_total, breakdown = total_loss(weights_cfg, **terms)
                total = total + stage_total
                for key, value in breakdown.items():
                    breakdown_sum[key] = breakdown_sum.get(key, 0.0) + float(value)

            if not torch.isfinite(total):
                ids = [data.ids[i] for i in idx.tolist()]
                dump = run_dir / "diverged.txt"
                dump.write_text(
                    f"non-finite loss at epoch {epoch} step {step}\nbatch: {', '.join(ids)}\n"
                )
                flush_log()
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step}; offending batch written to {dump}",
                    batch_ids=ids,
                )

            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()

            step += 1
            for key, value in breakdown_sum.items():
                log_rows.append((epoch, step, key, f"{value:.10g}"))
            epoch_totals.append(breakdown_sum["total"])
            if cfg.max_steps and step >= cfg.max_steps:
                stop = True
                break

        record = {"epoch": epoch, "lr": cfg.lr * factor, "total": float(np.mean(epoch_totals))}
        if val_data is not None and cfg.val_every and (epoch % cfg.val_every == 0 or stop or epoch == cfg.epochs):
            val_score = _validation_pcs(model, val_data, cfg.batch_size)
            record["val_pcs_efs0.1"] = val_score
            log_rows.append((epoch, step, "val_pcs_efs0.1", f"{val_score:.10g}"))
            if cfg.best_checkpoint and val_score > best_val:
                best_val = val_score
                save(run_dir / "checkpoint_best.pt", epoch)
        history.append(record)

        if epoch % CHECKPOINT_EVERY == 0 and epoch != cfg.epochs and not stop:
            save(run_dir / f"checkpoint_epoch{epoch:03d}.pt", epoch)
        if stop:
            break

    final_path = run_dir / "checkpoint_final.pt"
    save(final_path, epoch)
    flush_log()
    model.eval()
    return TrainResult(
        run_dir=run_dir,
        checkpoint_path=final_path,
        runlog_path=runlog_path,
        history=history,
        model=model,
        extras=extras,
    )


def _predict_all(model: PressureNet, data: _Tensors, batch_size: int) -> torch.Tensor:
    """Final-stage predictions for every sample, batched."""
    was_training = model.training
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, data.images.shape[0], batch_size):
            sl = slice(start, start + batch_size)
            outs.append(model(data.images[sl], data.beta[sl])[-1])
    if was_training:
        model.train()
    return torch.cat(outs)


def _validation_pcs(model: PressureNet, data: _Tensors, batch_size: int) -> float:
    preds = _predict_all(model, data, batch_size)
    scores = []
    for i in range(preds.shape[0]):
        value = pcs_efs(
            preds[i].double().numpy(),
            data.gt[i].double().numpy(),
            mask_threshold_fraction=0.10,
            epsilon=0.1,
        )
        if value is not None:
            scores.append(value)
    return float(np.mean(scores)) if scores else 0.0


@dataclass
class EvalResult:
    rows: list
    aggregate: dict
    curves: dict
    ids: list


def evaluate(
    model: PressureNet,
    manifest: DatasetManifest,
    ranges: NormalizationRanges,
    split: str = "test",
    batch_size: int = 8,
) -> EvalResult:
    """Per-sample and aggregate metrics of the final-stage predictions."""
    samples = manifest.samples_for(split)
    if not samples:
        raise InvalidInputError(f"split {split!r} is empty")
    cfg = model.config
    in_channels = _modality_channels(samples)
    if in_channels != cfg.in_channels:
        raise InvalidInputError(
            f"dataset modality provides {in_channels} channel(s) but the checkpoint expects {cfg.in_channels}"
        )
    data = _assemble(samples, cfg.stage.input_size, cfg.output_size, cfg.beta_length, ranges)
    preds = _predict_all(model, data, batch_size)

    rows = []
    curve_values = {fraction: [] for fraction in (0.05, 0.10)}
    for i in range(preds.shape[0]):
        pred = preds[i].double().numpy()
        gt = data.gt[i].double().numpy()
        rows.append(evaluate_pair(pred, gt))
        for fraction in curve_values:
            curve = pcs_curve(pred, gt, mask_threshold_fraction=fraction, epsilons=CURVE_EPSILONS)
            curve_values[fraction].append(curve.pcs)
    curves = {}
    for fraction, per_sample in curve_values.items():
        stacked = [
            [v for v in column if v is not None] for column in zip(*per_sample)
        ]
        curves[fraction] = [float(np.mean(col)) if col else None for col in stacked]
    return EvalResult(
        rows=rows,
        aggregate=aggregate_rows(rows),
        curves=curves,
        ids=data.ids,
    )


def load_model(checkpoint_path):
    """Checkpoint -> (model, NormalizationRanges, extras)."""
    model, extras = load_checkpoint(checkpoint_path)
    if "beta_ranges" not in extras:
        raise InvalidInputError(f"checkpoint {checkpoint_path} lacks physique normalization ranges")
    return model, NormalizationRanges.from_dict(extras["beta_ranges"]), extras
