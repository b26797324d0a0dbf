"""Dataset persistence, normalization and subject-level splitting.

A dataset directory holds ``manifest.json`` plus one image file and one
pressure-map CSV per sample:

    root/
      manifest.json
      images/<subject>_<pose>.png
      maps/<subject>_<pose>.csv

Pressure maps round-trip exactly through the CSV format at 9 significant
digits. Images are stored as lossless PNG (8-bit RGB, 16-bit grayscale for
LWIR); bit-exactness is not required for them. Real sensor exports are
outside this package's scope: adapt external data by converting it into
this manifest schema, then load it here.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..core import (
    DatasetManifest,
    DegenerateInputError,
    InvalidConfigError,
    InvalidInputError,
    Modality,
    PhysicalVector,
    Posture,
    PressureMap,
    SampleRecord,
    VisionImage,
)

MANIFEST_FORMAT = "pressure-dataset/1"
MANIFEST_NAME = "manifest.json"

_ID_PATTERN = re.compile(r"^[A-Za-z0-9_.-]+$")

#: Index of the gender slot, which is categorical and never rescaled.
_GENDER_SLOT = 2


@dataclass(frozen=True)
class NormalizationRanges:
    """Per-entry min/max of the physique vector over a training split.

    ``normalize_beta`` maps each entry to [0, 1] by these ranges: the
    training minimum maps to 0 and the maximum to 1, out-of-range values
    clip to the boundary, the gender slot passes through untouched, and a
    zero-range entry (constant across the split) maps to 0.5.
    """

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise InvalidConfigError("lo and hi must be nonempty and equally long")
        if any(h < l for l, h in zip(lo, hi)):
            raise InvalidConfigError("every hi must be >= the matching lo")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_samples(cls, samples) -> "NormalizationRanges":
        betas = [s.physique.as_array() for s in samples]
        if not betas:
            raise InvalidInputError("cannot compute normalization ranges from an empty split")
        lengths = {b.size for b in betas}
        if len(lengths) != 1:
            raise InvalidInputError(f"mixed physique lengths in split: {sorted(lengths)}")
        stacked = np.stack(betas)
        return cls(lo=tuple(stacked.min(axis=0)), hi=tuple(stacked.max(axis=0)))

    def normalize_beta(self, beta: PhysicalVector) -> PhysicalVector:
        if beta.normalized:
            raise InvalidInputError("physique vector is already normalized")
        if len(beta) != len(self.lo):
            raise InvalidInputError(
                f"physique length {len(beta)} does not match ranges of length {len(self.lo)}"
            )
        out = []
        for i, (v, lo, hi) in enumerate(zip(beta.entries, self.lo, self.hi)):
            if i == _GENDER_SLOT:
                out.append(v)
            elif hi == lo:
                out.append(0.5)
            else:
                out.append(min(1.0, max(0.0, (v - lo) / (hi - lo))))
        return PhysicalVector(tuple(out), normalized=True)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationRanges":
        return cls(lo=tuple(d["lo"]), hi=tuple(d["hi"]))


def normalize_sample(
    raw_vision: np.ndarray,
    raw_pm: np.ndarray,
    beta: PhysicalVector,
    ranges: NormalizationRanges,
    *,
    modality: Modality,
    posture: Posture,
    subject_id: str = "unknown",
    pose_id: str = "p00",
) -> SampleRecord:
    """Build a normalized record from raw-unit arrays.

    The vision image is min-max scaled per channel by its own dynamic range;
    the pressure map is scaled by its peak (zero pressure stays zero) with
    the peak recorded as ``raw_peak``; the physique vector is min-max scaled
    by the training-split ``ranges``.
    """
    vision = np.array(raw_vision, dtype=np.float64, copy=True)
    if vision.ndim == 2:
        vision = vision[:, :, None]
    if vision.ndim != 3:
        raise InvalidInputError(f"raw vision must be H x W x C, got shape {vision.shape}")
    for ch in range(vision.shape[2]):
        lo, hi = vision[:, :, ch].min(), vision[:, :, ch].max()
        if hi <= lo:
            raise DegenerateInputError(f"vision channel {ch} has zero dynamic range")
        vision[:, :, ch] = (vision[:, :, ch] - lo) / (hi - lo)

    pm = np.asarray(raw_pm, dtype=np.float64)
    if pm.ndim != 2:
        raise InvalidInputError(f"raw pressure map must be 2-D, got shape {pm.shape}")
    if pm.size == 0 or not np.all(np.isfinite(pm)):
        raise InvalidInputError("raw pressure map must be nonempty and finite")
    if pm.min() < 0:
        raise InvalidInputError("raw pressure readings must be >= 0")
    peak = float(pm.max())
    if peak <= 0.0:
        raise DegenerateInputError("pressure map has zero dynamic range")

    return SampleRecord(
        subject_id=subject_id,
        pose_id=pose_id,
        posture=Posture(posture),
        vision=VisionImage(values=vision, modality=Modality(modality)),
        pressure=PressureMap(values=pm / peak, raw_peak=peak),
        physique=ranges.normalize_beta(beta),
    )


def save_map_csv(path, values: np.ndarray) -> None:
    """Write a pressure grid as CSV at 9 significant digits."""
    np.savetxt(path, np.asarray(values, dtype=np.float64), fmt="%.9g", delimiter=",")


def load_map_csv(path) -> np.ndarray:
    values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return values


def save_image_png(path, image: VisionImage) -> None:
    """Lossless PNG: 8-bit for RGB, 16-bit grayscale for LWIR."""
    if image.modality is Modality.RGB:
        data = np.round(image.values * 255.0).astype(np.uint8)
        Image.fromarray(data, mode="RGB").save(path)
    else:
        data = np.round(image.values[:, :, 0] * 65535.0).astype(np.uint16)
        Image.fromarray(data).save(path)


def load_image_png(path, modality: Modality) -> VisionImage:
    modality = Modality(modality)
    with Image.open(path) as img:
        data = np.asarray(img)
    if modality is Modality.RGB:
        values = data.astype(np.float64) / 255.0
    else:
        values = data.astype(np.float64)[:, :, None] / 65535.0
    return VisionImage(values=values, modality=modality)


def _check_id(name: str, value: str) -> str:
    if not _ID_PATTERN.match(value):
        raise InvalidInputError(
            f"{name} {value!r} is not a path-safe token (allowed: letters, digits, _ . -)"
        )
    return value


def save_dataset(manifest: DatasetManifest, root) -> Path:
    """Write a dataset directory; returns the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "maps").mkdir(parents=True, exist_ok=True)

    records = []
    for sample in manifest.samples:
        stem = f"{_check_id('subject_id', sample.subject_id)}_{_check_id('pose_id', sample.pose_id)}"
        image_rel = f"images/{stem}.png"
        map_rel = f"maps/{stem}.csv"
        save_image_png(root / image_rel, sample.vision)
        save_map_csv(root / map_rel, sample.pressure.values)
        records.append(
            {
                "subject_id": sample.subject_id,
                "pose_id": sample.pose_id,
                "posture": sample.posture.value,
                "modality": sample.vision.modality.value,
                "image": image_rel,
                "pressure": map_rel,
                "raw_peak": sample.pressure.raw_peak,
                "beta": list(sample.physique.entries),
                "beta_normalized": sample.physique.normalized,
            }
        )

    doc = {
        "format": MANIFEST_FORMAT,
        "pixel_area_c": manifest.pixel_area_c,
        "split": dict(sorted(manifest.split.items())),
        "samples": records,
    }
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_dataset(root) -> DatasetManifest:
    """Read a dataset directory written by :func:`save_dataset`."""
    root = Path(root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    root = path.parent
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise InvalidInputError(
            f"unsupported manifest format {doc.get('format')!r}, expected {MANIFEST_FORMAT!r}"
        )

    samples = []
    for rec in doc["samples"]:
        modality = Modality(rec["modality"])
        samples.append(
            SampleRecord(
                subject_id=rec["subject_id"],
                pose_id=rec["pose_id"],
                posture=Posture(rec["posture"]),
                vision=load_image_png(root / rec["image"], modality),
                pressure=PressureMap(values=load_map_csv(root / rec["pressure"]), raw_peak=rec["raw_peak"]),
                physique=PhysicalVector(tuple(rec["beta"]), normalized=rec.get("beta_normalized", False)),
            )
        )
    return DatasetManifest(
        samples=tuple(samples),
        split=dict(doc["split"]),
        pixel_area_c=float(doc["pixel_area_c"]),
    )


def split_by_subject(manifest: DatasetManifest, test_subject_count: int):
    """Assign a fresh subject-level split: the last ``test_subject_count``
    subjects (sorted by id) become the test set. Returns (train, test)
    manifests with disjoint subjects."""
    subjects = manifest.subjects()
    if not 0 <= test_subject_count < len(subjects):
        raise InvalidConfigError(
            f"test_subject_count must lie in [0, {len(subjects)}), got {test_subject_count}"
        )
    test_ids = set(subjects[len(subjects) - test_subject_count :])
    train_samples = tuple(s for s in manifest.samples if s.subject_id not in test_ids)
    test_samples = tuple(s for s in manifest.samples if s.subject_id in test_ids)
    train = DatasetManifest(
        samples=train_samples,
        split={sid: "train" for sid in subjects if sid not in test_ids},
        pixel_area_c=manifest.pixel_area_c,
    )
    test = DatasetManifest(
        samples=test_samples,
        split={sid: "test" for sid in test_ids},
        pixel_area_c=manifest.pixel_area_c,
    )
    return train, test
