"""Acceptance gate: ten desk-scale criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
are produced. The overfit runs share module-scoped fixtures, so the whole
gate costs a handful of minutes on one CPU core.
"""

import dataclasses
import math
import time

import numpy as np
import pytest
import torch

from pressnet.core import Modality, VisionImage
from pressnet.data.homography import estimate_homography, warp_to_pm_frame
from pressnet.data.io import NormalizationRanges
from pressnet.data.synthetic import build_synthetic_dataset
from pressnet.density import PixelValueDensity, WeightMapConfig, fit_density, weight_map
from pressnet.losses import l2_loss, physical_loss, pwrs_loss, ssim_value
from pressnet.metrics import CURVE_EPSILONS, mse_efs, pcs_curve, pcs_efs
from pressnet.train import TrainConfig, _assemble, _pwrs_weights, evaluate, train


def _report(criterion, passed, detail):
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


def _central_fd(fn, x, eps=1e-6):
    grad = torch.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = fn().item()
        flat[i] = orig - eps
        lo = fn().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def _rel_err(analytic, numeric):
    denom = max(numeric.norm().item(), 1e-30)
    return (analytic - numeric).norm().item() / denom


# --- shared overfit task (criteria 6, 8, 10) --------------------------------

OVERFIT_RECIPE = dict(
    config_name="pwrs-phy",
    epochs=500,
    lr=1e-3,
    decay_epochs=100,
    batch_size=8,
    beta_length=10,
    seed=0,
    input_height=128,
    input_width=128,
    base_channels=16,
    depth=4,
    code_channels=16,
    out_rows=64,
    out_cols=32,
    max_steps=500,
)


@pytest.fixture(scope="module")
def overfit_data():
    manifest = build_synthetic_dataset(
        subjects=2, poses_per_subject=4, test_subjects=0, seed=11,
        pm_shape=(64, 32), image_shape=(128, 128),
    )
    density = fit_density([s.pressure for s in manifest.samples_for("train")], bins=100)
    return manifest, density


def _overfit_run(overfit_data, tmp_path_factory, stages, tag):
    manifest, density = overfit_data
    cfg = TrainConfig(stages=stages, **OVERFIT_RECIPE)
    start = time.monotonic()
    result = train(manifest, cfg, tmp_path_factory.mktemp(tag), density=density)
    return result, time.monotonic() - start


@pytest.fixture(scope="module")
def run_s1(overfit_data, tmp_path_factory):
    return _overfit_run(overfit_data, tmp_path_factory, 1, "overfit_s1")


@pytest.fixture(scope="module")
def run_s2(overfit_data, tmp_path_factory):
    return _overfit_run(overfit_data, tmp_path_factory, 2, "overfit_s2")


@pytest.fixture(scope="module")
def run_s2_again(overfit_data, tmp_path_factory):
    return _overfit_run(overfit_data, tmp_path_factory, 2, "overfit_s2_again")


@pytest.fixture(scope="module")
def run_s3(overfit_data, tmp_path_factory):
    return _overfit_run(overfit_data, tmp_path_factory, 3, "overfit_s3")


def _train_split_aggregate(result, manifest):
    ranges = NormalizationRanges.from_dict(result.extras["beta_ranges"])
    return evaluate(result.model, manifest, ranges, split="train").aggregate


def test_criterion_1_loss_gradients_match_finite_differences(rng):
    start = time.monotonic()
    worst = 0.0
    for k in range(20):
        pred = torch.tensor(rng.uniform(0, 1, (1, 8, 8)), requires_grad=True)
        gt = torch.tensor(rng.uniform(0, 1, (1, 8, 8)))
        w = torch.tensor(rng.uniform(0.5, 20.0, (1, 8, 8)))

        loss = pwrs_loss(pred, gt, w)
        (analytic,) = torch.autograd.grad(loss, pred)
        numeric = _central_fd(lambda: pwrs_loss(pred.detach(), gt, w), pred.detach())
        worst = max(worst, _rel_err(analytic, numeric))

        weight = torch.tensor([rng.uniform(40, 110)])
        pred2 = torch.tensor(rng.uniform(0, 1, (1, 8, 8)), requires_grad=True)
        loss2 = physical_loss(pred2, weight, 2.6)
        (analytic2,) = torch.autograd.grad(loss2, pred2)
        numeric2 = _central_fd(lambda: physical_loss(pred2.detach(), weight, 2.6), pred2.detach())
        worst = max(worst, _rel_err(analytic2, numeric2))
    elapsed = time.monotonic() - start
    _report(1, worst < 1e-4 and elapsed < 60.0,
            f"max gradient rel err {worst:.3e} over 20 grids x 2 losses in {elapsed:.1f}s")


def test_criterion_2_resampling_reduces_to_l2_under_uniform_density(rng):
    bins = 100
    density = PixelValueDensity(
        bin_edges=tuple(np.linspace(0.0, 1.0, bins + 1)),
        probabilities=(1.0 / bins,) * bins,
    )
    cfg = WeightMapConfig(lambda_l2=1.0, xi=0.0, normalize_mean_to_one=False)
    worst = 0.0
    for _ in range(50):
        gt_np = rng.uniform(0, 1, (12, 9))
        pred = torch.tensor(rng.uniform(0, 1, (12, 9)))
        gt = torch.tensor(gt_np)
        w = torch.tensor(weight_map(gt_np, density, cfg))
        resampled = pwrs_loss(pred, gt, w).item()
        plain = l2_loss(pred, gt).item()
        worst = max(worst, abs(resampled - bins * plain) / (bins * plain))
    _report(2, worst < 1e-9, f"max |pwrs - {bins}*l2|/({bins}*l2) = {worst:.3e} over 50 pairs")


def test_criterion_3_metric_oracles_and_curve_monotonicity(rng):
    gt = np.array([[1.0, 0.0], [0.5, 0.2]])
    pred = np.array([[0.9, 0.0], [0.5, 0.9]])
    pcs = pcs_efs(pred, gt, mask_threshold_fraction=0.1, epsilon=0.2)
    mse = mse_efs(pred, gt, mask_threshold_fraction=0.1)
    hand_ok = pcs == 2.0 / 3.0 and mse == pytest.approx(0.5 / 3.0, rel=1e-12)

    monotone = True
    for _ in range(100):
        g = rng.uniform(0, 1, (10, 8))
        p = rng.uniform(0, 1, (10, 8))
        curve = pcs_curve(p, g, 0.10, CURVE_EPSILONS)
        defined = [v for v in curve.pcs if v is not None]
        monotone &= all(b >= a for a, b in zip(defined, defined[1:]))
    _report(3, hand_ok and monotone,
            f"hand example pcs={pcs:.6f} mse={mse:.6f}; curves monotone on 100 random pairs: {monotone}")


def test_criterion_4_ssim_sanity(rng):
    a = torch.tensor(rng.uniform(0, 1, (16, 16)))
    self_sim = ssim_value(a, a).item()
    const = ssim_value(
        torch.full((16, 16), 0.5, dtype=torch.float64),
        torch.full((16, 16), 0.25, dtype=torch.float64),
    ).item()
    ok = abs(self_sim - 1.0) < 1e-9 and abs(const - 0.8001) < 1e-3
    _report(4, ok, f"ssim(a,a)={self_sim:.12f}; constant-map ssim={const:.6f} (want 0.8001 +/- 1e-3)")


def test_criterion_5_synthetic_data_satisfies_weight_integral(overfit_data, tiny_manifest):
    lwir = build_synthetic_dataset(
        subjects=3, poses_per_subject=2, test_subjects=1, seed=31,
        pm_shape=(32, 16), image_shape=(64, 64), modality=Modality.LWIR,
    )
    worst = 0.0
    checked = 0
    for manifest in (overfit_data[0], tiny_manifest, lwir):
        for sample in manifest.samples:
            gt = torch.tensor(sample.pressure.values)[None]
            weight = torch.tensor([sample.physique.entries[0]])
            residual = physical_loss(gt, weight, manifest.pixel_area_c).item()
            worst = max(worst, residual)
            checked += 1
    _report(5, worst < 1e-10, f"max physical-loss residual {worst:.3e} over {checked} samples")


def test_criterion_6_overfit_reaches_target_accuracy(run_s2, overfit_data):
    result, elapsed = run_s2
    steps = sum(1 for h in result.history)  # one optimizer step per epoch at batch 8 / 8 samples
    agg = _train_split_aggregate(result, overfit_data[0])
    pcs, mse = agg["pcs_efs0.1_m10"], agg["mse_efs10"]
    ok = pcs >= 0.90 and mse <= 0.01 and steps <= 500 and elapsed <= 7200
    _report(6, ok, f"PCS_efs0.1={pcs:.4f} (>=0.90), MSE_efs={mse:.6f} (<=0.01), "
                   f"{steps} steps in {elapsed:.0f}s")


@pytest.fixture(scope="module")
def ordering_runs(tmp_path_factory):
    manifest = build_synthetic_dataset(
        subjects=60, poses_per_subject=4, test_subjects=10, seed=21,
        pm_shape=(32, 16), image_shape=(64, 64),
    )
    density = fit_density([s.pressure for s in manifest.samples_for("train")], bins=100)
    shared = dict(
        epochs=40, lr=1e-3, decay_epochs=10, batch_size=10, stages=1,
        beta_length=10, seed=0, input_height=64, input_width=64,
        base_channels=16, depth=3, code_channels=16, out_rows=32, out_cols=16,
    )
    out = {}
    for name in ("base", "pwrs-phy"):
        cfg = TrainConfig(config_name=name, **shared)
        result = train(manifest, cfg, tmp_path_factory.mktemp(f"ordering_{name}"),
                       density=density)
        ranges = NormalizationRanges.from_dict(result.extras["beta_ranges"])
        out[name] = evaluate(result.model, manifest, ranges, split="test").aggregate
    return out


def test_criterion_7_resampling_not_inferior_to_base(ordering_runs):
    base = ordering_runs["base"]["mse_efs10"]
    pwrs = ordering_runs["pwrs-phy"]["mse_efs10"]
    ok = pwrs <= base * 1.05
    _report(7, ok, f"test MSE_efs: pwrs-phy {pwrs:.6f} vs base {base:.6f} "
                   f"(non-inferiority margin 5%: need <= {base * 1.05:.6f})")


def test_criterion_8_multi_stage_consistency(run_s1, run_s2, run_s3, overfit_data):
    manifest, density = overfit_data
    runs = {1: run_s1[0], 2: run_s2[0], 3: run_s3[0]}

    shapes_ok = all(r.model.config.output_size == (64, 32) for r in runs.values())

    samples = manifest.samples_for("train")
    ranges = NormalizationRanges.from_dict(runs[3].extras["beta_ranges"])
    data = _assemble(samples, (128, 128), (64, 32), 10, ranges)
    w = _pwrs_weights(samples, density, 0.01)
    finite_ok = True
    with torch.no_grad():
        for stages, result in runs.items():
            preds = result.model(data.images, data.beta)
            shapes_ok &= len(preds) == stages
            shapes_ok &= all(tuple(p.shape[1:]) == (64, 32) for p in preds)
            for p in preds:
                stage_pwrs = pwrs_loss(p.double(), data.gt.double(), w).item()
                stage_phy = physical_loss(p.double(), data.weight_kg.double(),
                                          manifest.pixel_area_c).item()
                finite_ok &= math.isfinite(stage_pwrs) and math.isfinite(stage_phy)

    pcs1 = _train_split_aggregate(runs[1], manifest)["pcs_efs0.1_m10"]
    pcs2 = _train_split_aggregate(runs[2], manifest)["pcs_efs0.1_m10"]
    ordering_ok = pcs2 >= pcs1 - 0.02
    _report(8, shapes_ok and finite_ok and ordering_ok,
            f"geometry identical across S=1/2/3: {shapes_ok}; per-stage losses finite: {finite_ok}; "
            f"PCS S=2 {pcs2:.4f} >= S=1 {pcs1:.4f} - 0.02: {ordering_ok}")


def test_criterion_9_homography_accuracy(rng):
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    worst_reproj = 0.0
    for _ in range(20):
        src = corners * rng.uniform(40, 120) + rng.normal(0, 4, (4, 2))
        dst = corners * rng.uniform(40, 120) + rng.normal(0, 4, (4, 2))
        h = estimate_homography(src, dst)
        worst_reproj = max(worst_reproj, np.abs(h.apply(src) - dst).max())

    ii, jj = np.meshgrid(np.linspace(0, np.pi, 96), np.linspace(0, np.pi, 96), indexing="ij")
    vals = np.stack([0.5 + 0.4 * np.sin(ii * a) * np.cos(jj * b)
                     for a, b in ((1.0, 0.7), (0.6, 1.2), (1.3, 0.5))], axis=-1)
    image = VisionImage(np.clip(vals, 0.0, 1.0), Modality.RGB)
    src = corners * 95.0
    dst = src + rng.normal(0, 1.5, (4, 2))
    h = estimate_homography(src, dst)
    fwd = warp_to_pm_frame(image, h, (96, 96))
    back = warp_to_pm_frame(fwd, h.inverse(), (96, 96))
    # skip the border band, where resampling reads zero-filled out-of-range pixels
    mae = float(np.abs(back.values[8:-8, 8:-8] - image.values[8:-8, 8:-8]).mean())

    ok = worst_reproj < 1e-8 and mae < 1e-2
    _report(9, ok, f"4-point reprojection max err {worst_reproj:.3e}; "
                   f"warp round-trip MAE {mae:.5f}")


def test_criterion_10_determinism(run_s2, run_s2_again):
    a = run_s2[0].history[-1]["total"]
    b = run_s2_again[0].history[-1]["total"]
    diff = abs(a - b)
    _report(10, diff < 1e-6, f"final overfit loss {a:.9f} vs rerun {b:.9f}, |diff| = {diff:.3e}")
