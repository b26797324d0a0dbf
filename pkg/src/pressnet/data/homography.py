"""Planar homography estimation and image warping for cross-modality
alignment (camera frame -> pressure-mat frame).

Estimation is the normalized direct linear transform: both point sets are
translated to zero centroid and scaled to mean distance sqrt(2), the 2n x 9
system is solved by SVD (least squares when overdetermined), and the result
is denormalized. Points are (x, y) = (column, row) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import InvalidInputError, Modality, VisionImage


class RankDeficiencyError(ValueError):
    """Raised when the correspondences do not determine a homography."""


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 projective map with the bottom-right entry fixed at 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, copy=True)
        if m.shape != (3, 3):
            raise InvalidInputError(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2]) < 1e-12:
            raise InvalidInputError("homography h33 must be nonzero")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < 1e-12:
            raise InvalidInputError("homography matrix is not invertible")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, points) -> np.ndarray:
        """Map (n, 2) points through the homography."""
        pts = np.asarray(points, dtype=np.float64)
        homog = np.column_stack([pts, np.ones(len(pts))])
        mapped = homog @ self.matrix.T
        return mapped[:, :2] / mapped[:, 2:3]


def _normalize_points(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    dists = np.linalg.norm(pts - centroid, axis=1)
    mean_dist = dists.mean()
    if mean_dist < 1e-12:
        raise RankDeficiencyError("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    T = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    normalized = (pts - centroid) * s
    return normalized, T


def estimate_homography(src_points, dst_points) -> Homography:
    """Homography mapping src points onto dst points via the normalized DLT.

    Needs at least 4 correspondences with no 3 source points collinear;
    with more than 4 the algebraic least-squares solution is returned.
    Degenerate configurations raise :class:`RankDeficiencyError`.
    """
    src = np.asarray(src_points, dtype=np.float64)
    dst = np.asarray(dst_points, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise InvalidInputError(f"point sets must both be (n, 2), got {src.shape} and {dst.shape}")
    if src.shape[0] < 4:
        raise InvalidInputError(f"need at least 4 correspondences, got {src.shape[0]}")

    src_n, T_src = _normalize_points(src)
    dst_n, T_dst = _normalize_points(dst)

    rows = []
    for (x, y), (u, v) in zip(src_n, dst_n):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    A = np.asarray(rows)

    _, s, Vt = np.linalg.svd(A)
    # A well-posed system has rank 8 over the 9 columns: only the solution
    # direction is (near) null. With exactly 4 points A is 8 x 9 and that
    # direction is implicit, so pad the spectrum to the 9 column-space values
    # before testing that at most one of them vanishes.
    s9 = s if s.size == 9 else np.append(s, 0.0)
    if s9[7] <= 1e-9 * s9[0]:
        raise RankDeficiencyError(
            "degenerate correspondences (collinear or coincident points) do not fix a homography"
        )
    H = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(T_dst) @ H @ T_src
    if abs(H[2, 2]) < 1e-12 or abs(np.linalg.det(H)) < 1e-12:
        raise RankDeficiencyError("estimated homography is singular")
    return Homography(H)


def warp_to_pm_frame(img: VisionImage, h: Homography, out_size) -> VisionImage:
    """Resample an image into the pressure-map coordinate frame.

    ``h`` maps image (x, y) coordinates to output-frame coordinates; each
    output pixel is sampled bilinearly at the inverse-mapped location, with
    zero fill outside the source image.
    """
    rows, cols = int(out_size[0]), int(out_size[1])
    if rows < 1 or cols < 1:
        raise InvalidInputError(f"out_size must be positive, got {out_size}")
    hinv = h.inverse().matrix
    src = img.values

    jj, ii = np.meshgrid(np.arange(cols, dtype=np.float64), np.arange(rows, dtype=np.float64))
    pts = np.stack([jj.ravel(), ii.ravel(), np.ones(rows * cols)])
    mapped = hinv @ pts
    w = mapped[2]
    valid = np.abs(w) > 1e-12
    x = np.where(valid, mapped[0] / np.where(valid, w, 1.0), -1.0)
    y = np.where(valid, mapped[1] / np.where(valid, w, 1.0), -1.0)

    hgt, wid = src.shape[0], src.shape[1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    out = np.zeros((rows * cols, src.shape[2]))
    for dy in (0, 1):
        for dx in (0, 1):
            xs = x0 + dx
            ys = y0 + dy
            inside = (xs >= 0) & (xs < wid) & (ys >= 0) & (ys < hgt) & valid
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            contrib = np.zeros(rows * cols)
            contrib[inside] = wgt[inside]
            out += contrib[:, None] * src[np.clip(ys, 0, hgt - 1), np.clip(xs, 0, wid - 1)]

    out = np.clip(out.reshape(rows, cols, src.shape[2]), 0.0, 1.0)
    if img.modality is Modality.LWIR:
        out = out[:, :, 0]
    return VisionImage(values=out, modality=img.modality)
