"""Dataset ingestion, alignment, normalization, splitting and synthesis."""

from .homography import (
    Homography,
    RankDeficiencyError,
    estimate_homography,
    warp_to_pm_frame,
)
from .io import (
    MANIFEST_FORMAT,
    NormalizationRanges,
    load_dataset,
    load_image_png,
    load_map_csv,
    normalize_sample,
    save_dataset,
    save_image_png,
    save_map_csv,
    split_by_subject,
)
from .synthetic import (
    BodyPart,
    InvalidSpecError,
    PeakSite,
    SyntheticBodySpec,
    build_synthetic_dataset,
    default_pixel_area,
    generate_synthetic,
    random_body_spec,
)

__all__ = [
    "Homography",
    "RankDeficiencyError",
    "estimate_homography",
    "warp_to_pm_frame",
    "MANIFEST_FORMAT",
    "NormalizationRanges",
    "load_dataset",
    "load_image_png",
    "load_map_csv",
    "normalize_sample",
    "save_dataset",
    "save_image_png",
    "save_map_csv",
    "split_by_subject",
    "BodyPart",
    "InvalidSpecError",
    "PeakSite",
    "SyntheticBodySpec",
    "build_synthetic_dataset",
    "default_pixel_area",
    "generate_synthetic",
    "random_body_spec",
]
