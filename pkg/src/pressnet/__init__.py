"""Dense contact-pressure map estimation from bedside vision and physique data.

The package turns an RGB or long-wave infrared image of a person lying in
bed, together with a short physique vector (weight, height, gender, tailor
measurements), into a dense pressure map over the mattress. Training uses an
imbalance-aware resampling loss, a physical weight-integral constraint and
optional structural/adversarial terms; evaluation reports the fraction of
effective-area pixels predicted within a tolerance alongside standard
reconstruction metrics.
"""

from .core import (
    BETA_SLOTS,
    TAILOR_SLOTS,
    VALID_BETA_LENGTHS,
    DatasetManifest,
    DegenerateInputError,
    EffectiveMask,
    InvalidConfigError,
    InvalidInputError,
    Modality,
    PhysicalVector,
    Posture,
    PressureMap,
    SampleRecord,
    VisionImage,
    effective_mask,
)

__version__ = "0.1.0"

__all__ = [
    "BETA_SLOTS",
    "TAILOR_SLOTS",
    "VALID_BETA_LENGTHS",
    "DatasetManifest",
    "DegenerateInputError",
    "EffectiveMask",
    "InvalidConfigError",
    "InvalidInputError",
    "Modality",
    "PhysicalVector",
    "Posture",
    "PressureMap",
    "SampleRecord",
    "VisionImage",
    "effective_mask",
    "__version__",
]
