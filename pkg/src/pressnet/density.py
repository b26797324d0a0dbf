"""Pixel-value density estimation and resampling-weight construction.

Pressure maps are heavily skewed toward low values, so a plain L2 loss is
dominated by the easy background. The remedy used here treats each pixel as
an independent draw (Naive Bayes view), estimates the density p(y) of
ground-truth pixel values with a fixed-bin histogram pooled over the
training split, and weights each pixel's squared error by
lambda / (p(y) + xi) - rare values get large weights, and the hallucinated
mass ``xi`` keeps empty bins finite (Laplace-style smoothing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidConfigError, InvalidInputError, PressureMap

DEFAULT_BINS = 100


@dataclass(frozen=True)
class PixelValueDensity:
    """Histogram estimate of the pixel-value density over [0, 1]."""

    bin_edges: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=np.float64, copy=True)
        probs = np.array(self.probabilities, dtype=np.float64, copy=True)
        if edges.ndim != 1 or probs.ndim != 1 or edges.size != probs.size + 1 or probs.size < 1:
            raise InvalidInputError("need B+1 bin edges for B probabilities")
        if not (np.all(np.diff(edges) > 0) and edges[0] == 0.0 and edges[-1] == 1.0):
            raise InvalidInputError("bin edges must increase strictly from 0 to 1")
        if probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidInputError("probabilities must be nonnegative and sum to 1")
        edges.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probabilities", probs)

    @property
    def bin_count(self) -> int:
        return self.probabilities.size

    def bin_index(self, values) -> np.ndarray:
        """Bin index per value; values equal to 1.0 fall in the last bin."""
        v = np.asarray(values, dtype=np.float64)
        idx = np.searchsorted(self.bin_edges, v, side="right") - 1
        return np.clip(idx, 0, self.bin_count - 1)

    def prob_at(self, values) -> np.ndarray:
        """Bin probability for each value."""
        return self.probabilities[self.bin_index(values)]


@dataclass(frozen=True)
class WeightMapConfig:
    """Knobs of the resampling-weight map.

    ``lambda_l2`` scales the whole map; ``xi`` is the hallucinated smoothing
    mass added to every bin probability; ``normalize_mean_to_one`` rescales
    the map to unit mean so the loss weight stays comparable across density
    refits (``lambda_l2`` is then the map mean).
    """

    lambda_l2: float = 1.0
    xi: float = 0.01
    normalize_mean_to_one: bool = True

    def __post_init__(self):
        if not (self.lambda_l2 > 0):
            raise InvalidConfigError(f"lambda_l2 must be > 0, got {self.lambda_l2}")
        if self.xi < 0:
            raise InvalidConfigError(f"xi must be >= 0, got {self.xi}")


def fit_density(maps, bins: int = DEFAULT_BINS) -> PixelValueDensity:
    """Pooled fixed-bin histogram over all pixels of all given maps.

    Accepts PressureMap instances or bare grids; requires at least one map
    and ``bins >= 2``.
    """
    maps = list(maps)
    if not maps:
        raise InvalidInputError("need at least one map to fit a density")
    if bins < 2:
        raise InvalidInputError(f"bins must be >= 2, got {bins}")
    pixels = np.concatenate(
        [(m.values if isinstance(m, PressureMap) else np.asarray(m, dtype=np.float64)).ravel() for m in maps]
    )
    counts, edges = np.histogram(pixels, bins=bins, range=(0.0, 1.0))
    return PixelValueDensity(bin_edges=edges, probabilities=counts / counts.sum())


def weight_map(gt, density: PixelValueDensity, cfg: WeightMapConfig) -> np.ndarray:
    """Per-pixel resampling weights lambda / (p(y) + xi) from ground truth.

    Weights depend on the ground-truth value only, never on predictions.
    With ``normalize_mean_to_one`` the raw weights are rescaled to unit mean
    before the ``lambda_l2`` scale is applied.
    """
    values = gt.values if isinstance(gt, PressureMap) else np.asarray(gt, dtype=np.float64)
    p = density.prob_at(values)
    if cfg.xi == 0.0 and np.any(p == 0.0):
        raise InvalidConfigError(
            "some ground-truth pixels fall in zero-probability bins; "
            "set xi > 0 to smooth the density before weighting"
        )
    w = 1.0 / (p + cfg.xi)
    if cfg.normalize_mean_to_one:
        w = w / w.mean()
    return cfg.lambda_l2 * w


def save_density(density: PixelValueDensity, path) -> None:
    """Persist a density as a small text file (edges line + probabilities line)."""
    with open(path, "w") as f:
        f.write(f"bins: {density.bin_count}\n")
        f.write("edges: " + " ".join(f"{e:.17g}" for e in density.bin_edges) + "\n")
        f.write("probs: " + " ".join(f"{p:.17g}" for p in density.probabilities) + "\n")


def load_density(path) -> PixelValueDensity:
    """Load a density previously written by :func:`save_density`."""
    fields = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(":")
            fields[key.strip()] = rest.split()
    try:
        edges = np.array(fields["edges"], dtype=np.float64)
        probs = np.array(fields["probs"], dtype=np.float64)
    except KeyError as e:
        raise InvalidInputError(f"density file {path} is missing field {e}") from None
    return PixelValueDensity(bin_edges=edges, probabilities=probs)
