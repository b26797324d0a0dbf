"""Evaluation metrics for dense pressure estimation.

A sensing array is judged on its active area: the effective-area mask comes
from the ground truth (pixels above a fraction of the map maximum), and both
the restricted MSE and the percentage-of-correct-sensing (PCS) statistic are
computed over that mask only. PCS counts the effective pixels whose absolute
error falls strictly below a tolerance, which keeps a few strong outliers
from dominating the score the way they dominate MSE.

Degenerate frames (empty effective area) yield ``None`` rather than 0 or 1
so aggregates can skip them explicitly. PSNR of identical maps is ``inf``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import torch

from .core import InvalidInputError, PressureMap, effective_mask
from .losses import ssim_value

#: Error tolerances reported in per-sample metric tables.
REPORT_EPSILONS = (0.05, 0.1, 0.2)

#: Effective-area thresholds reported side by side (5% and 10% of map max).
REPORT_MASK_FRACTIONS = (0.05, 0.10)

#: Tolerance sweep for PCS curves.
CURVE_EPSILONS = tuple(np.round(np.arange(0.01, 0.301, 0.01), 10))


def _grid(x) -> np.ndarray:
    v = x.values if isinstance(x, PressureMap) else np.asarray(x, dtype=np.float64)
    if v.ndim != 2 or v.size == 0:
        raise InvalidInputError(f"expected a nonempty 2-D grid, got shape {v.shape}")
    return np.asarray(v, dtype=np.float64)


def error_map(pred, gt) -> np.ndarray:
    """Signed per-pixel error, pred - gt."""
    p, g = _grid(pred), _grid(gt)
    if p.shape != g.shape:
        raise InvalidInputError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p - g


def pcs_efs(pred, gt, mask_threshold_fraction: float, epsilon: float):
    """Fraction of effective-area pixels with |error| strictly below epsilon.

    Returns ``None`` when the effective area is empty.
    """
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be > 0, got {epsilon}")
    err = error_map(pred, gt)
    mask = effective_mask(gt, mask_threshold_fraction).mask
    n = int(mask.sum())
    if n == 0:
        return None
    return float((np.abs(err[mask]) < epsilon).sum() / n)


def mse_efs(pred, gt, mask_threshold_fraction: float):
    """Mean squared error over the effective area only; ``None`` if empty."""
    err = error_map(pred, gt)
    mask = effective_mask(gt, mask_threshold_fraction).mask
    if not mask.any():
        return None
    return float((err[mask] ** 2).mean())


def psnr(pred, gt, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over the full map; ``inf`` when equal."""
    if not peak > 0:
        raise InvalidInputError(f"peak must be > 0, got {peak}")
    err = error_map(pred, gt)
    mse = float((err**2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


@dataclass(frozen=True)
class PcsCurve:
    """PCS values over an ascending tolerance sweep."""

    epsilons: tuple
    pcs: tuple

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        vals = tuple(self.pcs)
        if len(eps) != len(vals) or not eps:
            raise InvalidInputError("epsilons and pcs must be nonempty and the same length")
        if any(e <= 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
            raise InvalidInputError("epsilons must be strictly ascending and positive")
        defined = [v for v in vals if v is not None]
        if any(not (0.0 <= v <= 1.0) for v in defined):
            raise InvalidInputError("pcs values must lie in [0, 1]")
        if any(b < a for a, b in zip(defined, defined[1:])):
            raise InvalidInputError("pcs must be non-decreasing in epsilon")
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "pcs", vals)


def pcs_curve(pred, gt, mask_threshold_fraction: float, epsilons) -> PcsCurve:
    """Element-wise :func:`pcs_efs` over an ascending tolerance list."""
    eps = [float(e) for e in epsilons]
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise InvalidInputError("epsilons must be strictly ascending")
    return PcsCurve(epsilons=tuple(eps), pcs=tuple(pcs_efs(pred, gt, mask_threshold_fraction, e) for e in eps))


def ssim(pred, gt, **kwargs) -> float:
    """SSIM score between two maps (same computation as the SSIM loss term)."""
    a = torch.as_tensor(_grid(pred), dtype=torch.float64)
    b = torch.as_tensor(_grid(gt), dtype=torch.float64)
    return float(ssim_value(a, b, **kwargs))


def evaluate_pair(pred, gt, epsilons=REPORT_EPSILONS, mask_fractions=REPORT_MASK_FRACTIONS, peak: float = 1.0) -> dict:
    """All reported metrics for one prediction/ground-truth pair.

    Keys: ``mse_efs{pct}`` and ``pcs_efs{eps}_m{pct}`` for each mask
    percentage, plus ``psnr`` and ``ssim``.
    """
    row = {}
    for frac in mask_fractions:
        pct = round(frac * 100)
        row[f"mse_efs{pct}"] = mse_efs(pred, gt, frac)
        for eps in epsilons:
            row[f"pcs_efs{eps:g}_m{pct}"] = pcs_efs(pred, gt, frac, eps)
    row["psnr"] = psnr(pred, gt, peak)
    row["ssim"] = ssim(pred, gt, peak=peak)
    return row


def aggregate_rows(rows) -> dict:
    """Column means over per-sample metric rows, skipping ``None`` entries."""
    if not rows:
        raise InvalidInputError("nothing to aggregate")
    agg = {}
    for key in rows[0]:
        vals = [r[key] for r in rows if r.get(key) is not None]
        agg[key] = float(np.mean(vals)) if vals else None
    return agg


def write_metrics_csv(path, rows, aggregate=None, id_key: str = "sample_id") -> None:
    """Per-sample metric table with an optional trailing aggregate row.

    ``None`` (undefined) entries become empty cells.
    """
    if not rows:
        raise InvalidInputError("no rows to write")
    columns = [id_key] + [k for k in rows[0] if k != id_key]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
        if aggregate is not None:
            w.writerow(["mean"] + [_cell(aggregate.get(c)) for c in columns[1:]])


def write_curve_csv(path, curve: PcsCurve) -> None:
    """(epsilon, pcs) pairs, one per line."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epsilon", "pcs"])
        for e, v in zip(curve.epsilons, curve.pcs):
            w.writerow([f"{e:g}", _cell(v)])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return v
