"""Supervision terms: resampling-weighted L2, physical weight-integral
constraint, SSIM, least-squares adversarial objectives, and their weighted
combination.

All functions operate on torch tensors and are differentiable with respect
to the prediction. Map arguments may be 2-D grids or batches with leading
dimensions; losses defined as sums run over every element given.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .core import InvalidConfigError, InvalidInputError


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total training objective. All must be >= 0."""

    lambda_pwrs: float = 0.0
    lambda_phy: float = 0.0
    lambda_ssim: float = 0.0
    lambda_d: float = 0.0
    lambda_base_l2: float = 0.0

    def __post_init__(self):
        for name in ("lambda_pwrs", "lambda_phy", "lambda_ssim", "lambda_d", "lambda_base_l2"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def has_reconstruction_term(self) -> bool:
        return self.lambda_pwrs > 0 or self.lambda_base_l2 > 0

    def active_terms(self) -> list:
        pairs = [
            ("pwrs", self.lambda_pwrs),
            ("phy", self.lambda_phy),
            ("ssim", self.lambda_ssim),
            ("adv", self.lambda_d),
            ("base_l2", self.lambda_base_l2),
        ]
        return [name for name, w in pairs if w > 0]


def pwrs_loss(pred: torch.Tensor, gt: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Pixel-wise resampled L2: sum of weights * (pred - gt)^2.

    ``weights`` come from :func:`pressnet.density.weight_map` and must be
    strictly positive; they carry no gradient.
    """
    if pred.shape != gt.shape or pred.shape != weights.shape:
        raise InvalidInputError(
            f"shape mismatch: pred {tuple(pred.shape)}, gt {tuple(gt.shape)}, weights {tuple(weights.shape)}"
        )
    return (weights * (pred - gt) ** 2).sum()


def l2_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Plain sum-of-squares reconstruction loss (the 'base' objective)."""
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: pred {tuple(pred.shape)}, gt {tuple(gt.shape)}")
    return ((pred - gt) ** 2).sum()


def physical_loss(pred: torch.Tensor, weight_kg, pixel_area: float) -> torch.Tensor:
    """Squared deviation of the integrated pressure from body weight.

    ``pixel_area`` converts one normalized pressure unit on one pixel to kg,
    so pixel_area * sum(pred) is the supported weight. Depends on pred only
    through its sum, hence the gradient is uniform across pixels. Batched
    input (..., M, N) pairs with a matching weight vector and returns the
    batch mean.
    """
    if pred.ndim < 2:
        raise InvalidInputError(f"pred must be at least 2-D, got shape {tuple(pred.shape)}")
    if not pixel_area > 0:
        raise InvalidConfigError(f"pixel_area must be > 0, got {pixel_area}")
    weight_kg = torch.as_tensor(weight_kg, dtype=pred.dtype, device=pred.device)
    total = pred.sum(dim=(-2, -1))
    return ((pixel_area * total - weight_kg) ** 2).mean()


def _gaussian_window(window: int, sigma: float, dtype, device) -> torch.Tensor:
    half = (window - 1) / 2.0
    coords = torch.arange(window, dtype=dtype, device=device) - half
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return (g[:, None] * g[None, :]).reshape(1, 1, window, window)


def _as_nchw(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[:, None]
    if x.ndim == 4:
        return x
    raise InvalidInputError(f"expected a 2-D map or batch of maps, got shape {tuple(x.shape)}")


def ssim_value(
    a: torch.Tensor,
    b: torch.Tensor,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    peak: float = 1.0,
    sigma: float = 1.5,
) -> torch.Tensor:
    """Mean structural similarity over Gaussian-weighted local windows.

    Standard definition with C1 = (k1*peak)^2 and C2 = (k2*peak)^2; windows
    are taken fully inside the maps (no padding). Symmetric in (a, b) and
    equal to 1 when the maps are identical.
    """
    a = _as_nchw(torch.as_tensor(a))
    b = _as_nchw(torch.as_tensor(b))
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if window % 2 == 0 or window < 1:
        raise InvalidInputError(f"window must be a positive odd integer, got {window}")
    if window > min(a.shape[-2], a.shape[-1]):
        raise InvalidInputError(
            f"window {window} exceeds map size {tuple(a.shape[-2:])}"
        )
    if a.dtype != b.dtype:
        b = b.to(a.dtype)
    w = _gaussian_window(window, sigma, a.dtype, a.device)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    mu_a = F.conv2d(a, w)
    mu_b = F.conv2d(b, w)
    var_a = F.conv2d(a * a, w) - mu_a**2
    var_b = F.conv2d(b * b, w) - mu_b**2
    cov = F.conv2d(a * b, w) - mu_a * mu_b

    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return ssim_map.mean()


def ssim_loss(pred: torch.Tensor, gt: torch.Tensor, **kwargs) -> torch.Tensor:
    """1 - SSIM; zero iff the maps are identical, bounded by [0, 2]."""
    return 1.0 - ssim_value(pred, gt, **kwargs)


def generator_adversarial_loss(disc_fake_patches: torch.Tensor) -> torch.Tensor:
    """Least-squares generator objective: push fake patch scores to 1."""
    if disc_fake_patches.numel() == 0:
        raise InvalidInputError("patch-score grid must be nonempty")
    return ((disc_fake_patches - 1.0) ** 2).mean()


def adversarial_losses(disc_real_patches: torch.Tensor, disc_fake_patches: torch.Tensor):
    """Least-squares GAN objectives over patch-score grids.

    Returns ``(d_loss, g_loss)`` where the discriminator pushes real patches
    to 1 and fake to 0, and the generator pushes fake patches to 1. Fake
    scores should be detached by the caller for the discriminator update.
    """
    if disc_real_patches.numel() == 0 or disc_fake_patches.numel() == 0:
        raise InvalidInputError("patch-score grids must be nonempty")
    d_loss = 0.5 * ((disc_real_patches - 1.0) ** 2).mean() + 0.5 * (disc_fake_patches**2).mean()
    return d_loss, generator_adversarial_loss(disc_fake_patches)


def total_loss(
    weights: LossWeights,
    pwrs=None,
    phy=None,
    ssim=None,
    adv=None,
    base_l2=None,
):
    """Weighted combination of the supplied loss terms.

    Returns ``(total, breakdown)`` where the breakdown maps term name to its
    weighted float contribution for logging. Every term with a positive
    weight must be supplied; terms with zero weight are ignored.
    """
    terms = {"pwrs": pwrs, "phy": phy, "ssim": ssim, "adv": adv, "base_l2": base_l2}
    lambdas = {
        "pwrs": weights.lambda_pwrs,
        "phy": weights.lambda_phy,
        "ssim": weights.lambda_ssim,
        "adv": weights.lambda_d,
        "base_l2": weights.lambda_base_l2,
    }
    if all(lam == 0 for lam in lambdas.values()):
        raise InvalidConfigError("all loss weights are zero; nothing to optimize")

    total = None
    breakdown = {}
    for name, lam in lambdas.items():
        if lam == 0:
            continue
        if terms[name] is None:
            raise InvalidInputError(f"loss term '{name}' has weight {lam} but was not supplied")
        contrib = lam * terms[name]
        total = contrib if total is None else total + contrib
        breakdown[name] = float(contrib.detach()) if torch.is_tensor(contrib) else float(contrib)
    breakdown["total"] = float(total.detach()) if torch.is_tensor(total) else float(total)
    return total, breakdown
