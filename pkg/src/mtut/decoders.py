"""Decoders that reconstruct the test-time-missing modality.

The image decoder is a transposed-conv chain growing a 1x1 spatial map to the
target resolution, batch-norm + ReLU between layers and a sigmoid at the end
so outputs live in [0, 1]. The point decoder inverts the encoder's max pool
by Gaussian-sampling n per-point feature rows clamped from above by the
embedding, then applies pointwise (kernel-1) layers down to F coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .domain import Embedding, ImageSample, PointCloudSample


@dataclass(frozen=True)
class DeconvLayer:
    out_channels: int
    kernel: int
    stride: int
    padding: int


@dataclass(frozen=True)
class ImageDecoderSpec:
    in_dim: int
    layers: tuple[DeconvLayer, ...]

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "layers": [
                [l.out_channels, l.kernel, l.stride, l.padding] for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageDecoderSpec":
        return cls(
            in_dim=d["in_dim"],
            layers=tuple(DeconvLayer(*row) for row in d["layers"]),
        )

    def spatial_chain(self) -> list[int]:
        """Per-layer output sizes starting from the 1x1 input map."""
        size = 1
        sizes = []
        for layer in self.layers:
            size = (size - 1) * layer.stride + layer.kernel - 2 * layer.padding
            sizes.append(size)
        return sizes

    def output_shape(self) -> tuple[int, int, int]:
        side = self.spatial_chain()[-1]
        return (side, side, self.layers[-1].out_channels)


def reference_image_decoder_spec(in_dim: int = 1024) -> ImageDecoderSpec:
    """Six-layer chain 1 -> 7 -> 14 -> 28 -> 56 -> 112 -> 224 with channels
    (256, 128, 128, 64, 32, 3)."""
    return ImageDecoderSpec(
        in_dim=in_dim,
        layers=(
            DeconvLayer(256, 7, 2, 0),
            DeconvLayer(128, 4, 2, 1),
            DeconvLayer(128, 4, 2, 1),
            DeconvLayer(64, 4, 2, 1),
            DeconvLayer(32, 4, 2, 1),
            DeconvLayer(3, 4, 2, 1),
        ),
    )


def desk_image_decoder_spec(in_dim: int = 32, out_channels: int = 3) -> ImageDecoderSpec:
    """Four-layer chain 1 -> 4 -> 8 -> 16 -> 32 for 32x32 desk images."""
    return ImageDecoderSpec(
        in_dim=in_dim,
        layers=(
            DeconvLayer(64, 4, 2, 0),
            DeconvLayer(32, 4, 2, 1),
            DeconvLayer(16, 4, 2, 1),
            DeconvLayer(out_channels, 4, 2, 1),
        ),
    )


class ImageDecoder(nn.Module):
    """Transposed-conv chain from a 1x1 x q' map to an image in [0, 1]."""

    def __init__(self, spec: ImageDecoderSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        prev = spec.in_dim
        for i, layer in enumerate(spec.layers):
            layers.append(
                nn.ConvTranspose2d(prev, layer.out_channels, layer.kernel,
                                   stride=layer.stride, padding=layer.padding)
            )
            if i < len(spec.layers) - 1:
                layers.append(nn.BatchNorm2d(layer.out_channels))
                layers.append(nn.ReLU())
            prev = layer.out_channels
        self.deconv = nn.Sequential(*layers)
        self.to(dtype)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        """(B, q') -> (B, C, H, W) with every value in [0, 1]."""
        if fused.shape[-1] != self.spec.in_dim:
            raise ValueError(
                f"embedding width {fused.shape[-1]} does not match decoder "
                f"input {self.spec.in_dim}"
            )
        x = fused.unsqueeze(-1).unsqueeze(-1)
        return torch.sigmoid(self.deconv(x))


@dataclass(frozen=True)
class PointDecoderSpec:
    in_dim: int = 32
    hidden: tuple[int, ...] = (16, 8)
    point_features: int = 3
    freeze_seed: bool = False

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "hidden": list(self.hidden),
            "point_features": self.point_features,
            "freeze_seed": self.freeze_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointDecoderSpec":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def reference_point_decoder_spec(in_dim: int = 1024) -> PointDecoderSpec:
    """Three pointwise layers tapering 1024 -> 256 -> 64 -> F."""
    return PointDecoderSpec(in_dim=in_dim, hidden=(256, 64))


def gaussian_seed(
    embedding: torch.Tensor, n: int, generator: torch.Generator
) -> torch.Tensor:
    """Sample n per-point feature rows: entry (i, k) = min(g_ik, x_k) with
    g_ik standard normal, so every column is bounded above by x_k.

    Accepts (q',) or (B, q') embeddings; returns (n, q') or (B, n, q').
    """
    if n <= 0:
        raise ValueError("cannot seed zero points")
    shape = embedding.shape[:-1] + (n, embedding.shape[-1])
    g = torch.randn(shape, generator=generator, dtype=embedding.dtype)
    return torch.minimum(g, embedding.unsqueeze(-2))


class PointDecoder(nn.Module):
    """Gaussian-seeded pointwise chain emitting an n x F cloud.

    Kernel-1 stride-1 layers act on each seeded row independently, so
    permuting seed rows permutes output rows identically.
    """

    def __init__(self, spec: PointDecoderSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        prev = spec.in_dim
        for width in spec.hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, spec.point_features))
        self.pointwise = nn.Sequential(*layers)
        self._frozen_noise: torch.Tensor | None = None
        self.to(dtype)

    def _seed(self, fused: torch.Tensor, n: int, generator: torch.Generator) -> torch.Tensor:
        if not self.spec.freeze_seed:
            return gaussian_seed(fused, n, generator)
        if self._frozen_noise is None or self._frozen_noise.shape[0] != n:
            self._frozen_noise = torch.randn(
                (n, self.spec.in_dim), generator=generator, dtype=fused.dtype
            )
        return torch.minimum(self._frozen_noise, fused.unsqueeze(-2))

    def forward(self, fused: torch.Tensor, n: int, generator: torch.Generator) -> torch.Tensor:
        """(B, q') -> (B, n, F)."""
        if n <= 0:
            raise ValueError("cannot decode zero points")
        if fused.shape[-1] != self.spec.in_dim:
            raise ValueError(
                f"embedding width {fused.shape[-1]} does not match decoder "
                f"input {self.spec.in_dim}"
            )
        return self.pointwise(self._seed(fused, n, generator))


# ---------------------------------------------------------------------------
# Single-sample functional surface
# ---------------------------------------------------------------------------


def decode_to_image(fused: Embedding, model: ImageDecoder) -> ImageSample:
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()  # single-sample decode must not touch batch-norm stats
    try:
        with torch.no_grad():
            out = model(torch.from_numpy(fused.vec).to(dtype).unsqueeze(0))[0]
    finally:
        model.train(was_training)
    return ImageSample(out.permute(1, 2, 0).numpy())


def decode_to_points(
    fused: Embedding, n: int, model: PointDecoder, generator: torch.Generator
) -> PointCloudSample:
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.from_numpy(fused.vec).to(dtype).unsqueeze(0), n, generator)[0]
    return PointCloudSample(out.numpy())
