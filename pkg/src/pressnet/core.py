"""Core domain types shared by every other module.

All types are immutable value objects: arrays are copied on construction and
marked read-only, so instances are safe to share across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives structurally invalid data."""


class InvalidConfigError(ValueError):
    """Raised when a configuration value or combination is unusable."""


class DegenerateInputError(ValueError):
    """Raised when data has no usable dynamic range."""


class Modality(str, enum.Enum):
    RGB = "RGB"
    LWIR = "LWIR"


class Posture(str, enum.Enum):
    SUPINE = "supine"
    LEFT_SIDE = "left_side"
    RIGHT_SIDE = "right_side"


#: Fixed order of the seven tailor-measurement slots (entries 4..10 of the
#: physique vector). The order is a schema convention of this package.
TAILOR_SLOTS = ("bust", "waist", "hip", "head", "arm", "thigh", "calf")

#: Names of all ten physique-vector slots, in order.
BETA_SLOTS = ("weight_kg", "height_cm", "gender") + TAILOR_SLOTS

#: Allowed physique-vector lengths: weight only, +height, +gender, or full.
VALID_BETA_LENGTHS = (1, 2, 3, 10)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PressureMap:
    """Normalized M x N contact-pressure grid.

    ``values`` lie in [0, 1]; ``raw_peak`` is the raw sensor reading that was
    mapped to 1.0, so raw-unit values remain recoverable.
    """

    values: np.ndarray
    raw_peak: float = 1.0

    def __post_init__(self):
        v = _freeze(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidInputError(f"pressure map must be a nonempty 2-D grid, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("pressure map contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise InvalidInputError("pressure map values must lie in [0, 1]")
        if not (self.raw_peak > 0):
            raise InvalidInputError(f"raw_peak must be > 0, got {self.raw_peak}")
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class VisionImage:
    """Normalized H x W x C vision input, RGB (C=3) or LWIR (C=1)."""

    values: np.ndarray
    modality: Modality

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidInputError(f"vision image must be H x W x C, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("vision image contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise InvalidInputError("vision image values must lie in [0, 1]")
        modality = Modality(self.modality)
        expected = 3 if modality is Modality.RGB else 1
        if v.shape[2] != expected:
            raise InvalidInputError(
                f"{modality.value} image must have {expected} channel(s), got {v.shape[2]}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "modality", modality)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class PhysicalVector:
    """Ordered physique parameters: weight (kg), height (cm), gender (0/1),
    then the seven tailor measurements of :data:`TAILOR_SLOTS` (cm).

    By default entries hold raw physical units. A vector produced by min-max
    scaling against training-split ranges carries ``normalized=True``; its
    entries lie in [0, 1] and the positivity invariants of raw units no
    longer apply (the training-range minimum maps to exactly 0).
    """

    entries: tuple
    normalized: bool = False

    def __post_init__(self):
        entries = tuple(float(e) for e in self.entries)
        if len(entries) not in VALID_BETA_LENGTHS:
            raise InvalidInputError(
                f"physique vector length must be one of {VALID_BETA_LENGTHS}, got {len(entries)}"
            )
        if not all(np.isfinite(entries)):
            raise InvalidInputError("physique vector contains non-finite entries")
        if len(entries) >= 3 and entries[2] not in (0.0, 1.0):
            raise InvalidInputError(f"gender slot must be exactly 0 or 1, got {entries[2]}")
        if self.normalized:
            for i, e in enumerate(entries):
                if not 0.0 <= e <= 1.0:
                    raise InvalidInputError(
                        f"normalized slot {i + 1} ({BETA_SLOTS[i]}) must lie in [0, 1], got {e}"
                    )
        else:
            if not entries[0] > 0:
                raise InvalidInputError(f"weight must be > 0, got {entries[0]}")
            for i, e in enumerate(entries):
                if i != 2 and not e > 0:
                    raise InvalidInputError(
                        f"measurement slot {i + 1} ({BETA_SLOTS[i]}) must be > 0, got {e}"
                    )
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def weight_kg(self) -> float:
        return self.entries[0]

    def truncated(self, length: int) -> "PhysicalVector":
        """First ``length`` entries as a new vector (for the beta-length study)."""
        if length not in VALID_BETA_LENGTHS or length > len(self.entries):
            raise InvalidInputError(f"cannot truncate length-{len(self.entries)} vector to {length}")
        return PhysicalVector(self.entries[:length], normalized=self.normalized)

    def as_array(self) -> np.ndarray:
        return np.array(self.entries, dtype=np.float64)


@dataclass(frozen=True)
class SampleRecord:
    """One paired multimodal sample with subject and pose metadata."""

    subject_id: str
    pose_id: str
    posture: Posture
    vision: VisionImage
    pressure: PressureMap
    physique: PhysicalVector

    def __post_init__(self):
        object.__setattr__(self, "posture", Posture(self.posture))
        if not isinstance(self.vision, VisionImage):
            raise InvalidInputError("vision must be a VisionImage")
        if not isinstance(self.pressure, PressureMap):
            raise InvalidInputError("pressure must be a PressureMap")
        if not isinstance(self.physique, PhysicalVector):
            raise InvalidInputError("physique must be a PhysicalVector")


@dataclass(frozen=True)
class DatasetManifest:
    """A dataset: samples, a subject-level train/test split, and the
    calibration constant ``pixel_area_c`` (kg per normalized-pressure-unit
    per pixel) that makes pressure sums comparable to body weight."""

    samples: tuple
    split: dict = field(default_factory=dict)
    pixel_area_c: float = 1.0

    def __post_init__(self):
        samples = tuple(self.samples)
        for s in samples:
            if not isinstance(s, SampleRecord):
                raise InvalidInputError("manifest samples must be SampleRecord instances")
        if not (self.pixel_area_c > 0):
            raise InvalidInputError(f"pixel_area_c must be > 0, got {self.pixel_area_c}")
        split = dict(self.split)
        for subject, part in split.items():
            if part not in ("train", "test"):
                raise InvalidInputError(f"split for subject {subject!r} must be 'train' or 'test', got {part!r}")
        for s in samples:
            if s.subject_id not in split:
                raise InvalidInputError(f"subject {s.subject_id!r} has no split assignment")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "split", split)

    def subjects(self) -> list:
        return sorted({s.subject_id for s in self.samples})

    def samples_for(self, part: str) -> list:
        if part not in ("train", "test"):
            raise InvalidInputError(f"unknown split part {part!r}")
        return [s for s in self.samples if self.split[s.subject_id] == part]


@dataclass(frozen=True)
class EffectiveMask:
    """Boolean grid marking the effective sensing area of a ground-truth map:
    pixels whose value exceeds ``threshold_fraction`` of the map maximum."""

    mask: np.ndarray
    threshold_fraction: float

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool, copy=True)
        if m.ndim != 2:
            raise InvalidInputError(f"mask must be 2-D, got shape {m.shape}")
        if not (0.0 < self.threshold_fraction < 1.0):
            raise InvalidInputError(f"threshold_fraction must be in (0, 1), got {self.threshold_fraction}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def effective_mask(gt, threshold_fraction: float) -> EffectiveMask:
    """Effective sensing area of a ground-truth map.

    A pixel is effective iff its value exceeds ``threshold_fraction`` times
    the map maximum. An all-zero map has an empty mask. ``gt`` may be a
    :class:`PressureMap` or a bare 2-D grid.
    """
    values = gt.values if isinstance(gt, PressureMap) else np.asarray(gt, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise InvalidInputError(f"ground truth must be a nonempty 2-D grid, got shape {values.shape}")
    if not (0.0 < threshold_fraction < 1.0):
        raise InvalidInputError(f"threshold_fraction must be in (0, 1), got {threshold_fraction}")
    peak = float(values.max())
    if peak <= 0.0:
        mask = np.zeros(values.shape, dtype=bool)
    else:
        mask = values > threshold_fraction * peak
    return EffectiveMask(mask=mask, threshold_fraction=threshold_fraction)
