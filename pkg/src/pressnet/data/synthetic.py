"""Synthetic paired-data generator for desk-scale verification.

Each sample is rendered from a parameterized body layout (ellipses for
torso, head and four limbs) lying on a bed frame in normalized [0,1] x [0,1]
coordinates. The pressure map gets a low contact-pressure base over the body
silhouette plus sharp peaks at the supportive sites (hips, shoulders, heels,
elbows), then is scaled so that pixel_area_c * sum(map) equals the body
weight exactly. The vision image renders the same layout as either a
textured pseudo-RGB frame or a body-hot/background-cold pseudo-LWIR frame,
so both input modalities are exercised without real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..core import (
    DatasetManifest,
    Modality,
    PhysicalVector,
    Posture,
    PressureMap,
    SampleRecord,
    VisionImage,
)

#: Bed frame dimensions used to convert normalized layout lengths to cm.
BED_LENGTH_CM = 190.0
BED_WIDTH_CM = 90.0

#: Calibrated kg per normalized-pressure-unit per pixel on a 64 x 32 grid:
#: large enough that the heaviest side-lying body in the sampled range stays
#: below peak 1.0 after weight scaling. See default_pixel_area for other
#: grid sizes.
PIXEL_AREA_C_64X32 = 2.6


class InvalidSpecError(ValueError):
    """Raised when a body layout cannot be rendered."""


@dataclass(frozen=True)
class BodyPart:
    """One elliptic body part in bed coordinates (u along length, v across)."""

    name: str
    center: tuple
    radii: tuple
    angle: float = 0.0


@dataclass(frozen=True)
class PeakSite:
    """A high-pressure site: isotropic Gaussian bump of given width/strength."""

    name: str
    center: tuple
    sigma: float
    strength: float


@dataclass(frozen=True)
class SyntheticBodySpec:
    """Full description of one synthetic body on the bed."""

    posture: Posture
    weight_kg: float
    parts: tuple
    peak_sites: tuple
    gender: int = 0
    length_scale: float = 1.0
    modality: Modality = Modality.RGB
    pm_shape: tuple = (64, 32)
    image_shape: tuple = (128, 128)

    def __post_init__(self):
        object.__setattr__(self, "posture", Posture(self.posture))
        object.__setattr__(self, "modality", Modality(self.modality))
        if not self.weight_kg > 0:
            raise InvalidSpecError(f"weight_kg must be > 0, got {self.weight_kg}")
        if self.gender not in (0, 1):
            raise InvalidSpecError(f"gender must be 0 or 1, got {self.gender}")
        for part in self.parts:
            (cu, cv), (ru, rv) = part.center, part.radii
            if ru <= 0 or rv <= 0:
                raise InvalidSpecError(f"part {part.name!r} has nonpositive radii")
            if cu - ru < -0.005 or cu + ru > 1.005 or cv - rv < -0.005 or cv + rv > 1.005:
                raise InvalidSpecError(f"part {part.name!r} extends outside the bed frame")


def default_pixel_area(pm_shape) -> float:
    """Calibration constant scaled so total supported weight is resolution-free."""
    rows, cols = pm_shape
    return PIXEL_AREA_C_64X32 * (64 * 32) / (rows * cols)


def _grid_uv(shape):
    rows, cols = shape
    u = (np.arange(rows) + 0.5) / rows
    v = (np.arange(cols) + 0.5) / cols
    return np.meshgrid(u, v, indexing="ij")


def _silhouette(parts, shape) -> np.ndarray:
    """Smooth body silhouette in [0, 1]: max over part domes."""
    uu, vv = _grid_uv(shape)
    sil = np.zeros(shape)
    for part in parts:
        du = uu - part.center[0]
        dv = vv - part.center[1]
        if part.angle:
            c, s = math.cos(part.angle), math.sin(part.angle)
            du, dv = c * du + s * dv, -s * du + c * dv
        r2 = (du / part.radii[0]) ** 2 + (dv / part.radii[1]) ** 2
        dome = np.clip(1.0 - r2, 0.0, None) ** 0.7
        sil = np.maximum(sil, dome)
    return sil


def _mirror(center, side):
    # side +1 keeps v offsets, -1 mirrors them across the bed midline
    u, v = center
    return (u, 0.5 + side * (v - 0.5))


def _layout(posture: Posture, length_scale: float, width_scale: float, rng) -> tuple:
    """Default six-part layout plus posture-dependent peak sites."""
    s = length_scale
    w = width_scale
    j = lambda a=0.008: rng.uniform(-a, a)

    if posture is Posture.SUPINE:
        parts = [
            BodyPart("head", (0.115 * s + 0.02 + j(), 0.5 + j()), (0.052 * s, 0.055 * w)),
            BodyPart("torso", (0.33 * s + 0.02 + j(), 0.5 + j()), (0.155 * s, 0.125 * w)),
            BodyPart("arm_l", (0.34 * s + 0.02 + j(), 0.5 - 0.175 * w + j()), (0.145 * s, 0.034 * w), 0.06),
            BodyPart("arm_r", (0.34 * s + 0.02 + j(), 0.5 + 0.175 * w + j()), (0.145 * s, 0.034 * w), -0.06),
            BodyPart("leg_l", (0.665 * s + 0.02 + j(), 0.5 - 0.062 * w + j()), (0.205 * s, 0.045 * w)),
            BodyPart("leg_r", (0.665 * s + 0.02 + j(), 0.5 + 0.062 * w + j()), (0.205 * s, 0.045 * w)),
        ]
        peaks = [
            PeakSite("head", (0.115 * s + 0.02, 0.5), 0.022, 0.75),
            PeakSite("shoulder_l", (0.235 * s + 0.02, 0.5 - 0.082 * w), 0.020, 1.0),
            PeakSite("shoulder_r", (0.235 * s + 0.02, 0.5 + 0.082 * w), 0.020, 1.0),
            PeakSite("elbow_l", (0.38 * s + 0.02, 0.5 - 0.172 * w), 0.015, 0.55),
            PeakSite("elbow_r", (0.38 * s + 0.02, 0.5 + 0.172 * w), 0.015, 0.55),
            PeakSite("hip_l", (0.45 * s + 0.02, 0.5 - 0.058 * w), 0.024, 0.95),
            PeakSite("hip_r", (0.45 * s + 0.02, 0.5 + 0.058 * w), 0.024, 0.95),
            PeakSite("heel_l", (0.845 * s + 0.02, 0.5 - 0.058 * w), 0.013, 0.65),
            PeakSite("heel_r", (0.845 * s + 0.02, 0.5 + 0.058 * w), 0.013, 0.65),
        ]
        return tuple(parts), tuple(peaks)

    # Side postures: narrower profile, legs stacked and slightly bent,
    # weight carried on one shoulder/hip.
    side = -1.0 if posture is Posture.LEFT_SIDE else 1.0
    shift = 0.03 * w
    parts = [
        BodyPart("head", _mirror((0.115 * s + 0.02 + j(), 0.5 - shift + j()), side), (0.052 * s, 0.048 * w)),
        BodyPart("torso", _mirror((0.33 * s + 0.02 + j(), 0.5 - shift + j()), side), (0.155 * s, 0.085 * w)),
        BodyPart("arm_u", _mirror((0.345 * s + 0.02 + j(), 0.5 - shift - 0.015 * w + j()), side), (0.125 * s, 0.030 * w), 0.10 * side),
        BodyPart("arm_d", _mirror((0.36 * s + 0.02 + j(), 0.5 - shift + 0.055 * w + j()), side), (0.115 * s, 0.030 * w), -0.18 * side),
        BodyPart("leg_u", _mirror((0.64 * s + 0.02 + j(), 0.5 - shift + 0.015 * w + j()), side), (0.195 * s, 0.042 * w), 0.22 * side),
        BodyPart("leg_d", _mirror((0.655 * s + 0.02 + j(), 0.5 - shift + 0.075 * w + j()), side), (0.185 * s, 0.040 * w), 0.30 * side),
    ]
    peaks = [
        PeakSite("head", _mirror((0.115 * s + 0.02, 0.5 - shift), side), 0.020, 0.8),
        PeakSite("shoulder", _mirror((0.23 * s + 0.02, 0.5 - shift), side), 0.018, 1.05),
        PeakSite("hip", _mirror((0.455 * s + 0.02, 0.5 - shift), side), 0.020, 1.0),
        PeakSite("knee", _mirror((0.60 * s + 0.02, 0.5 - shift + 0.05 * w), side), 0.015, 0.6),
        PeakSite("ankle", _mirror((0.80 * s + 0.02, 0.5 - shift + 0.07 * w), side), 0.013, 0.5),
    ]
    return tuple(parts), tuple(peaks)


def random_body_spec(
    posture: Posture,
    rng: np.random.Generator,
    pm_shape=(64, 32),
    image_shape=(128, 128),
    modality: Modality = Modality.RGB,
) -> SyntheticBodySpec:
    """Sample a plausible body spec; size and weight are loosely coupled."""
    weight = float(rng.uniform(48.0, 108.0))
    length_scale = float(rng.uniform(0.92, 1.08))
    width_scale = float(0.88 + 0.3 * (weight - 48.0) / 60.0 + rng.uniform(-0.04, 0.04))
    gender = int(rng.integers(0, 2))
    parts, peaks = _layout(Posture(posture), length_scale, width_scale, rng)
    return SyntheticBodySpec(
        posture=Posture(posture),
        weight_kg=weight,
        parts=parts,
        peak_sites=peaks,
        gender=gender,
        length_scale=length_scale,
        modality=modality,
        pm_shape=tuple(pm_shape),
        image_shape=tuple(image_shape),
    )


def _render_pressure(spec: SyntheticBodySpec, rng, pixel_area_c: float) -> np.ndarray:
    sil = _silhouette(spec.parts, spec.pm_shape)
    uu, vv = _grid_uv(spec.pm_shape)
    raw = 0.26 * sil
    for site in spec.peak_sites:
        d2 = (uu - site.center[0]) ** 2 + (vv - site.center[1]) ** 2
        strength = site.strength * (1.0 + rng.uniform(-0.08, 0.08))
        raw = raw + strength * np.exp(-d2 / (2.0 * site.sigma**2))
    raw = raw * (sil > 0.02)

    total = raw.sum()
    if total <= 0:
        raise InvalidSpecError("layout produced an empty pressure map")
    target_sum = spec.weight_kg / pixel_area_c
    pm = raw * (target_sum / total)
    if pm.max() > 1.0:
        raise InvalidSpecError(
            f"peak pressure {pm.max():.3f} exceeds 1.0; increase pixel_area_c "
            f"(got {pixel_area_c}) or lower the weight"
        )
    return pm


def _bilinear_upsample(a: np.ndarray, shape) -> np.ndarray:
    rows, cols = shape
    ui = np.linspace(0.0, a.shape[0] - 1.0, rows)
    vi = np.linspace(0.0, a.shape[1] - 1.0, cols)
    u0 = np.floor(ui).astype(int)
    v0 = np.floor(vi).astype(int)
    u1 = np.minimum(u0 + 1, a.shape[0] - 1)
    v1 = np.minimum(v0 + 1, a.shape[1] - 1)
    fu = (ui - u0)[:, None]
    fv = (vi - v0)[None, :]
    return (
        a[np.ix_(u0, v0)] * (1 - fu) * (1 - fv)
        + a[np.ix_(u1, v0)] * fu * (1 - fv)
        + a[np.ix_(u0, v1)] * (1 - fu) * fv
        + a[np.ix_(u1, v1)] * fu * fv
    )


def _smooth_noise(rng, shape, cells=8) -> np.ndarray:
    coarse = rng.standard_normal((cells, max(2, cells * shape[1] // shape[0])))
    return _bilinear_upsample(coarse, shape)


def _render_vision(spec: SyntheticBodySpec, rng) -> np.ndarray:
    sil = _silhouette(spec.parts, spec.image_shape)
    alpha = np.clip(sil / 0.25, 0.0, 1.0)
    uu, _ = _grid_uv(spec.image_shape)

    if spec.modality is Modality.LWIR:
        bg = 0.22 + 0.04 * _smooth_noise(rng, spec.image_shape) + 0.03 * uu
        body = 0.58 + 0.38 * sil
        img = bg * (1.0 - alpha) + body * alpha
        img = img + 0.012 * rng.standard_normal(spec.image_shape)
        return np.clip(img, 0.0, 1.0)

    sheet = np.array([0.82, 0.80, 0.77])
    cloth = rng.uniform(0.25, 0.8, size=3)
    skin = np.array([0.78, 0.62, 0.52])
    img = np.empty(spec.image_shape + (3,))
    texture = _smooth_noise(rng, spec.image_shape)
    shading = 0.5 + 0.5 * sil
    # head area keeps skin tone, rest wears the sampled clothing color
    head = next(p for p in spec.parts if p.name == "head")
    vv = _grid_uv(spec.image_shape)[1]
    head_zone = ((uu - head.center[0]) ** 2 / (1.6 * head.radii[0]) ** 2 + (vv - head.center[1]) ** 2 / (1.6 * head.radii[1]) ** 2) < 1.0
    for ch in range(3):
        bg = sheet[ch] + 0.05 * texture + 0.03 * uu
        color = np.where(head_zone, skin[ch], cloth[ch])
        img[:, :, ch] = bg * (1.0 - alpha) + color * shading * alpha
    img = img + 0.015 * rng.standard_normal(spec.image_shape + (3,))
    return np.clip(img, 0.0, 1.0)


def _derived_beta(spec: SyntheticBodySpec) -> PhysicalVector:
    """Ten-entry physique vector derived from the layout geometry."""
    girth = lambda half_width_norm: max(2.0, 2.0 * math.pi * 0.78 * half_width_norm * BED_WIDTH_CM)
    by_name = {p.name: p for p in spec.parts}
    torso = by_name["torso"]
    head = by_name["head"]
    arm = by_name.get("arm_l") or by_name["arm_u"]
    leg = by_name.get("leg_l") or by_name["leg_u"]
    height_cm = 178.0 * spec.length_scale + (4.0 if spec.gender else -2.0)
    bust = girth(torso.radii[1]) * (1.35 if spec.posture is not Posture.SUPINE else 1.0)
    entries = (
        spec.weight_kg,
        height_cm,
        float(spec.gender),
        bust,
        0.88 * bust,
        1.02 * bust,
        girth(head.radii[1]) * 1.15,
        girth(arm.radii[1]) * 1.2,
        girth(leg.radii[1]) * 1.45,
        girth(leg.radii[1]) * 1.05,
    )
    return PhysicalVector(entries)


def generate_synthetic(spec: SyntheticBodySpec, noise_seed: int, pixel_area_c: float = None) -> SampleRecord:
    """Render one paired sample; deterministic for a fixed seed.

    By construction pixel_area_c * sum(pressure) equals weight_kg exactly
    (up to float64 summation), so the physical weight-integral loss of a
    generated sample is zero.
    """
    if pixel_area_c is None:
        pixel_area_c = default_pixel_area(spec.pm_shape)
    rng = np.random.default_rng(noise_seed)
    pm = _render_pressure(spec, rng, pixel_area_c)
    img = _render_vision(spec, rng)
    return SampleRecord(
        subject_id="synthetic",
        pose_id="p00",
        posture=spec.posture,
        vision=VisionImage(values=img, modality=spec.modality),
        pressure=PressureMap(values=pm, raw_peak=1.0),
        physique=_derived_beta(spec),
    )


_POSTURE_CYCLE = (Posture.SUPINE, Posture.LEFT_SIDE, Posture.RIGHT_SIDE)


def build_synthetic_dataset(
    subjects: int,
    poses_per_subject: int,
    test_subjects: int,
    seed: int = 0,
    pm_shape=(64, 32),
    image_shape=(128, 128),
    modality: Modality = Modality.RGB,
    pixel_area_c: float = None,
) -> DatasetManifest:
    """A full synthetic dataset with a subject-level train/test split.

    Each subject keeps one body across poses; postures cycle through
    supine / left side / right side.
    """
    if subjects < 1 or poses_per_subject < 1:
        raise InvalidSpecError("need at least one subject and one pose")
    if not 0 <= test_subjects < subjects:
        raise InvalidSpecError(f"test_subjects must lie in [0, {subjects}), got {test_subjects}")
    if pixel_area_c is None:
        pixel_area_c = default_pixel_area(pm_shape)

    samples = []
    split = {}
    for si in range(subjects):
        subject_id = f"s{si:03d}"
        split[subject_id] = "test" if si >= subjects - test_subjects else "train"
        subject_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, si)))
        base_spec = random_body_spec(
            Posture.SUPINE, subject_rng, pm_shape=pm_shape, image_shape=image_shape, modality=modality
        )
        for pi in range(poses_per_subject):
            posture = _POSTURE_CYCLE[pi % 3]
            pose_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, si, pi)))
            parts, peaks = _layout(posture, base_spec.length_scale, _width_scale_of(base_spec), pose_rng)
            spec = replace(base_spec, posture=posture, parts=parts, peak_sites=peaks)
            noise_seed = int(pose_rng.integers(0, 2**31))
            record = generate_synthetic(spec, noise_seed, pixel_area_c)
            samples.append(
                SampleRecord(
                    subject_id=subject_id,
                    pose_id=f"p{pi:02d}",
                    posture=posture,
                    vision=record.vision,
                    pressure=record.pressure,
                    physique=record.physique,
                )
            )
    return DatasetManifest(samples=tuple(samples), split=split, pixel_area_c=pixel_area_c)


def _width_scale_of(spec: SyntheticBodySpec) -> float:
    # recover the width factor from the supine torso that defined the subject
    torso = next(p for p in spec.parts if p.name == "torso")
    return torso.radii[1] / 0.125 if spec.posture is Posture.SUPINE else torso.radii[1] / 0.085
