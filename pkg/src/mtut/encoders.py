"""Modality encoders and classification heads.

Both encoders end in a learned affine projection to a shared embedding width
so the two modalities' embeddings can be compared with an L2 distance. The
point-cloud path contains no cross-point operation other than the final max
pool, which makes its output exactly permutation invariant (bit for bit, not
just up to rounding).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .domain import Embedding, ImageSample, PointCloudSample


@dataclass(frozen=True)
class ImageEncoderSpec:
    backbone: str = "small-cnn"  # or "resnet18-like"
    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64)
    embed_dim: int = 32

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "in_channels": self.in_channels,
            "widths": list(self.widths),
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageEncoderSpec":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


@dataclass(frozen=True)
class PointEncoderSpec:
    point_features: int = 3
    mlp_widths: tuple[int, ...] = (32, 64, 128)
    embed_dim: int = 32
    use_spatial_transform: bool = True
    tnet_mlp: tuple[int, ...] = (16, 32)
    tnet_fc: tuple[int, ...] = (32,)

    def to_dict(self) -> dict:
        return {
            "point_features": self.point_features,
            "mlp_widths": list(self.mlp_widths),
            "embed_dim": self.embed_dim,
            "use_spatial_transform": self.use_spatial_transform,
            "tnet_mlp": list(self.tnet_mlp),
            "tnet_fc": list(self.tnet_fc),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointEncoderSpec":
        d = dict(d)
        for key in ("mlp_widths", "tnet_mlp", "tnet_fc"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def reference_image_encoder_spec(embed_dim: int = 1024) -> ImageEncoderSpec:
    return ImageEncoderSpec(backbone="resnet18-like", widths=(64, 128, 256, 512),
                            embed_dim=embed_dim)


def reference_point_encoder_spec(embed_dim: int = 1024) -> PointEncoderSpec:
    return PointEncoderSpec(mlp_widths=(64, 128, 1024), embed_dim=embed_dim,
                            tnet_mlp=(64, 128), tnet_fc=(64,))


class _ResidualBlock(nn.Module):
    """3x3 conv pair with GroupNorm and an identity / 1x1 shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        groups = 8 if out_ch % 8 == 0 else 1
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=stride)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ImageEncoder(nn.Module):
    """CNN backbone + global mean pool + affine projection to the embedding.

    "small-cnn" stacks stride-2 conv/ReLU blocks; "resnet18-like" uses four
    stages of two residual blocks each. Both end in spatial mean pooling, so
    the embedding width is input-size independent.
    """

    def __init__(self, spec: ImageEncoderSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.spec = spec
        if spec.backbone == "small-cnn":
            layers = []
            prev = spec.in_channels
            for width in spec.widths:
                layers += [nn.Conv2d(prev, width, 3, stride=2, padding=1), nn.ReLU()]
                prev = width
            self.features = nn.Sequential(*layers)
        elif spec.backbone == "resnet18-like":
            stem = [
                nn.Conv2d(spec.in_channels, spec.widths[0], 7, stride=2, padding=3),
                nn.GroupNorm(8 if spec.widths[0] % 8 == 0 else 1, spec.widths[0]),
                nn.ReLU(),
                nn.MaxPool2d(3, stride=2, padding=1),
            ]
            blocks = []
            prev = spec.widths[0]
            for i, width in enumerate(spec.widths):
                stride = 1 if i == 0 else 2
                blocks.append(_ResidualBlock(prev, width, stride))
                blocks.append(_ResidualBlock(width, width, 1))
                prev = width
            self.features = nn.Sequential(*stem, *blocks)
        else:
            raise ValueError(f"unknown image backbone {spec.backbone!r}")
        self.project = nn.Linear(spec.widths[-1], spec.embed_dim)
        self.to(dtype)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, q) via mean pooling over the last feature map."""
        feats = self.features(images)
        pooled = feats.mean(dim=(2, 3))
        return self.project(pooled)


class TNet(nn.Module):
    """Spatial transform net: predicts an F x F matrix from the cloud itself.

    Shared per-point MLP, max pool, small FC head whose final layer is
    initialized to output the identity matrix.
    """

    def __init__(self, size: int, mlp_widths: tuple[int, ...], fc_widths: tuple[int, ...]):
        super().__init__()
        self.size = size
        point_layers = []
        prev = size
        for width in mlp_widths:
            point_layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        self.point_mlp = nn.Sequential(*point_layers)
        head = []
        for width in fc_widths:
            head += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        self.head = nn.Sequential(*head)
        self.out = nn.Linear(prev, size * size)
        self._post_seed_init_()

    def _post_seed_init_(self):
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.copy_(torch.eye(self.size, dtype=self.out.bias.dtype).flatten())

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """(B, n, F) -> (B, F, F)."""
        per_point = self.point_mlp(points)
        pooled = per_point.max(dim=1).values
        flat = self.out(self.head(pooled))
        return flat.view(-1, self.size, self.size)


class PointEncoder(nn.Module):
    """Spatial transform, shared per-point MLP, max pool, projection.

    No normalization layers: every op before the max pool acts on each point
    independently, so permuting input points permutes intermediate rows and
    leaves the pooled embedding bitwise unchanged.
    """

    def __init__(self, spec: PointEncoderSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.spec = spec
        self.tnet = (
            TNet(spec.point_features, spec.tnet_mlp, spec.tnet_fc)
            if spec.use_spatial_transform
            else None
        )
        layers = []
        prev = spec.point_features
        for width in spec.mlp_widths:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        self.point_mlp = nn.Sequential(*layers)
        self.project = nn.Linear(prev, spec.embed_dim)
        self.to(dtype)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """(B, n, F) -> (B, q)."""
        if points.shape[1] < 1:
            raise ValueError("cannot encode an empty point cloud")
        if self.tnet is not None:
            transform = self.tnet(points)
            points = torch.bmm(points, transform.transpose(1, 2))
        per_point = self.point_mlp(points)
        pooled = per_point.max(dim=1).values
        return self.project(pooled)


class ClassifierHead(nn.Module):
    """Affine map from embedding to identity logits."""

    def __init__(self, embed_dim: int, num_classes: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.linear = nn.Linear(embed_dim, num_classes)
        self.to(dtype)

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        return self.linear(embedding)


# ---------------------------------------------------------------------------
# Single-sample functional surface
# ---------------------------------------------------------------------------


def image_to_tensor(img: ImageSample, dtype: torch.dtype) -> torch.Tensor:
    """H x W x C array -> (C, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.pixels.transpose(2, 0, 1))).to(dtype)


def cloud_to_tensor(pc: PointCloudSample, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(pc.points)).to(dtype)


def encode_image(img: ImageSample, model: ImageEncoder) -> Embedding:
    dtype = model.project.weight.dtype
    if img.channels != model.spec.in_channels:
        raise ValueError(
            f"image has {img.channels} channels, encoder expects {model.spec.in_channels}"
        )
    with torch.no_grad():
        vec = model(image_to_tensor(img, dtype).unsqueeze(0))[0]
    return Embedding(vec.numpy())


def encode_points(pc: PointCloudSample, model: PointEncoder) -> Embedding:
    dtype = model.project.weight.dtype
    if pc.num_features != model.spec.point_features:
        raise ValueError(
            f"cloud has {pc.num_features} features, encoder expects "
            f"{model.spec.point_features}"
        )
    with torch.no_grad():
        vec = model(cloud_to_tensor(pc, dtype).unsqueeze(0))[0]
    return Embedding(vec.numpy())


def classify(embedding: Embedding, head: ClassifierHead) -> np.ndarray:
    """Logits for one embedding; softmax of these is the class posterior."""
    dtype = head.linear.weight.dtype
    if len(embedding) != head.linear.in_features:
        raise ValueError(
            f"embedding width {len(embedding)} does not match head input "
            f"{head.linear.in_features}"
        )
    with torch.no_grad():
        logits = head(torch.from_numpy(embedding.vec).to(dtype).unsqueeze(0))[0]
    return logits.numpy()
