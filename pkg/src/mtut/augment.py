"""Training-time augmentation: crop/noise/rotation for images, rigid
roll/pitch/yaw rotation for point clouds.

All functions are pure in (input, params, rng state). Applied to the train
split only; val/test stay clean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .domain import ImageSample, PointCloudSample


@dataclass(frozen=True)
class AugmentParams2D:
    """Crop fraction range per side, Gaussian noise sigma (pixel units),
    rotation range in degrees (symmetric)."""

    crop_fraction: tuple[float, float] = (0.8, 1.0)
    noise_sigma: float = 0.02
    rotation_deg: float = 15.0

    def __post_init__(self):
        lo, hi = self.crop_fraction
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop fractions must lie in (0, 1], got {self.crop_fraction}")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")

    def to_dict(self) -> dict:
        return {
            "crop_fraction": list(self.crop_fraction),
            "noise_sigma": self.noise_sigma,
            "rotation_deg": self.rotation_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams2D":
        d = dict(d)
        if "crop_fraction" in d:
            d["crop_fraction"] = tuple(d["crop_fraction"])
        return cls(**d)


@dataclass(frozen=True)
class AugmentParams3D:
    """Symmetric rotation ranges in degrees around x (roll), y (pitch),
    z (yaw)."""

    roll_deg: float = 30.0
    pitch_deg: float = 30.0
    yaw_deg: float = 30.0

    def __post_init__(self):
        for v in (self.roll_deg, self.pitch_deg, self.yaw_deg):
            if not np.isfinite(v):
                raise ValueError("rotation ranges must be finite")

    def to_dict(self) -> dict:
        return {
            "roll_deg": self.roll_deg,
            "pitch_deg": self.pitch_deg,
            "yaw_deg": self.yaw_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams3D":
        return cls(**d)


def rotation_matrix(roll_deg: float, pitch_deg: float, yaw_deg: float) -> np.ndarray:
    """Proper rotation R = R_yaw(z) @ R_pitch(y) @ R_roll(x), angles in degrees.

    Axis convention: roll about x, pitch about y, yaw about z, each
    counterclockwise when looking down the positive axis.
    """
    r, p, y = np.deg2rad([roll_deg, pitch_deg, yaw_deg])
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    r_x = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    r_y = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    r_z = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return r_z @ r_y @ r_x


def _warp_image(pixels: np.ndarray, angle_deg: float, top: int, left: int,
                crop_h: int, crop_w: int) -> np.ndarray:
    """Rotate about the image center, crop, and resize back to the original
    shape, in one bilinear resampling pass (edge replication at borders).

    With the identity parameters (angle 0, full-frame crop) the sampling grid
    hits integer coordinates exactly, so the output equals the input.
    """
    h, w, _ = pixels.shape
    rows = top + (np.arange(h) + 0.5) * crop_h / h - 0.5
    cols = left + (np.arange(w) + 0.5) * crop_w / w - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    theta = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    src_r = np.cos(theta) * (rr - cy) - np.sin(theta) * (cc - cx) + cy
    src_c = np.sin(theta) * (rr - cy) + np.cos(theta) * (cc - cx) + cx
    coords = np.stack([src_r, src_c])
    out = np.empty_like(pixels)
    for ch in range(pixels.shape[2]):
        out[:, :, ch] = ndimage.map_coordinates(
            pixels[:, :, ch], coords, order=1, mode="nearest"
        )
    return out


def augment_image(
    img: ImageSample, params: AugmentParams2D, aug_rng: np.random.Generator
) -> ImageSample:
    """Random rotation, crop-then-resize (shape preserved), Gaussian noise.

    Output values are clamped to [0, 1]. The identity configuration
    (sigma 0, crop 1.0, rotation 0) returns the input pixels unchanged.
    """
    h, w = img.height, img.width
    angle = aug_rng.uniform(-params.rotation_deg, params.rotation_deg)
    lo, hi = params.crop_fraction
    crop_h = int(np.clip(round(aug_rng.uniform(lo, hi) * h), 1, h))
    crop_w = int(np.clip(round(aug_rng.uniform(lo, hi) * w), 1, w))
    top = int(aug_rng.integers(0, h - crop_h + 1))
    left = int(aug_rng.integers(0, w - crop_w + 1))
    out = _warp_image(img.pixels, angle, top, left, crop_h, crop_w)
    if params.noise_sigma > 0:
        out = out + aug_rng.normal(0.0, params.noise_sigma, out.shape)
    return ImageSample(np.clip(out, 0.0, 1.0))


def augment_cloud(
    pc: PointCloudSample, params: AugmentParams3D, aug_rng: np.random.Generator
) -> PointCloudSample:
    """Rigid rotation about the origin with independently drawn roll, pitch,
    yaw angles. Point count and order are preserved."""
    roll = aug_rng.uniform(-params.roll_deg, params.roll_deg)
    pitch = aug_rng.uniform(-params.pitch_deg, params.pitch_deg)
    yaw = aug_rng.uniform(-params.yaw_deg, params.yaw_deg)
    r = rotation_matrix(roll, pitch, yaw)
    return PointCloudSample(pc.points @ r.T)
