"""Shared domain types: samples, embeddings, loss records, validation.

All types are immutable value objects (frozen dataclasses holding read-only
float64 arrays), so they can be shared freely between workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ModalityId(Enum):
    IMAGE = "image"
    POINTS = "points"

    @property
    def other(self) -> "ModalityId":
        return ModalityId.POINTS if self is ModalityId.IMAGE else ModalityId.IMAGE


def _freeze(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageSample:
    """H x W x C image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _freeze(self.pixels))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class PointCloudSample:
    """n x F point set; F = 3 means (x, y, z) coordinates."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _freeze(self.points))

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def num_features(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class AttributeVector:
    """Per-face attribute probabilities, each entry in [0, 1]."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _freeze(self.probs))

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class PairedSample:
    """One identity observation: image + cloud + attributes + label."""

    image: ImageSample
    cloud: PointCloudSample
    attrs: AttributeVector
    label: int


@dataclass(frozen=True)
class Embedding:
    """Fixed-width latent vector produced by an encoder."""

    vec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vec", _freeze(self.vec))

    def __len__(self) -> int:
        return self.vec.shape[0]


@dataclass(frozen=True)
class Dims:
    """Data dimensions a corpus and model must agree on."""

    height: int = 32
    width: int = 32
    channels: int = 3
    points: int = 256
    point_features: int = 3
    attr_dim: int = 40
    num_classes: int = 10

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "points": self.points,
            "point_features": self.point_features,
            "attr_dim": self.attr_dim,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dims":
        return cls(**d)


@dataclass(frozen=True)
class LossBundle:
    """Per-batch loss record.

    ``total`` is the weighted combination of the members actually optimized;
    ``rho`` is the divergence gate value and ``delta`` the classification-loss
    gap that produced it.
    """

    cls_image: float
    cls_points: float
    aed: float
    recon: float
    rho: float
    delta: float
    total: float

    def cls_for(self, modality: ModalityId) -> float:
        return self.cls_image if modality is ModalityId.IMAGE else self.cls_points

    def recombine(self, lambda1: float, lambda2: float, missing: ModalityId) -> float:
        """Recompute ``total`` from the stored members (identity check)."""
        cls_avail = self.cls_for(missing.other)
        return cls_avail + lambda1 * self.recon + lambda2 * self.aed

    def as_dict(self) -> dict:
        return {
            "cls_image": self.cls_image,
            "cls_points": self.cls_points,
            "aed": self.aed,
            "recon": self.recon,
            "rho": self.rho,
            "delta": self.delta,
            "total": self.total,
        }


def validate_paired_sample(sample: PairedSample, dims: Dims) -> list[str]:
    """Check every type invariant and dimension against ``dims``.

    Returns an empty list when the sample is valid, otherwise one message per
    violation naming the offending field or index.
    """
    errors: list[str] = []
    px = sample.image.pixels
    if px.ndim != 3:
        errors.append(f"image: expected 3-d pixel array, got shape {px.shape}")
        return errors
    h, w, c = px.shape
    if (h, w, c) != (dims.height, dims.width, dims.channels):
        errors.append(
            f"image: shape {h}x{w}x{c} does not match configured "
            f"{dims.height}x{dims.width}x{dims.channels}"
        )
    if h < 8 or w < 8:
        errors.append(f"image: height/width must be >= 8, got {h}x{w}")
    if c not in (1, 3):
        errors.append(f"image: channel count must be 1 or 3, got {c}")
    if not np.all(np.isfinite(px)):
        idx = np.argwhere(~np.isfinite(px))[0]
        errors.append(f"image: non-finite pixel at index {tuple(idx)}")
    else:
        bad = np.argwhere((px < 0.0) | (px > 1.0))
        if bad.size:
            idx = tuple(bad[0])
            errors.append(
                f"image: pixel {idx} = {px[idx]} outside [0, 1]"
            )

    pts = sample.cloud.points
    if pts.ndim != 2:
        errors.append(f"cloud: expected n x F array, got shape {pts.shape}")
    else:
        n, f = pts.shape
        if n < 1:
            errors.append("cloud: must contain at least one point")
        if (n, f) != (dims.points, dims.point_features):
            errors.append(
                f"cloud: shape {n}x{f} does not match configured "
                f"{dims.points}x{dims.point_features}"
            )
        if not np.all(np.isfinite(pts)):
            idx = np.argwhere(~np.isfinite(pts))[0]
            errors.append(f"cloud: non-finite coordinate at index {tuple(idx)}")

    attrs = sample.attrs.probs
    if attrs.ndim != 1 or attrs.shape[0] != dims.attr_dim:
        errors.append(
            f"attrs: length {attrs.shape[0] if attrs.ndim == 1 else attrs.shape} "
            f"does not match configured {dims.attr_dim}"
        )
    if attrs.ndim == 1:
        bad = np.argwhere(~((attrs >= 0.0) & (attrs <= 1.0)))
        if bad.size:
            i = int(bad[0][0])
            errors.append(f"attrs: entry {i} = {attrs[i]} outside [0, 1]")

    if not 0 <= sample.label < dims.num_classes:
        errors.append(
            f"label: {sample.label} outside [0, {dims.num_classes}) identity range"
        )
    return errors
