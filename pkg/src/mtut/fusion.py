"""Attribute-conditioned dimension reduction feeding the decoders.

The fused vector is nonlinearity(W @ concat(embedding, attributes) + b).
With ``use_attributes`` off the map degrades to a plain affine on the
embedding alone and the attribute vector is provably unused.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .domain import AttributeVector, Embedding


@dataclass(frozen=True)
class FusionSpec:
    embed_dim: int = 32
    attr_dim: int = 40
    out_dim: int = 32
    use_attributes: bool = True
    activation: str = "relu"  # or "identity"

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "attr_dim": self.attr_dim,
            "out_dim": self.out_dim,
            "use_attributes": self.use_attributes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionSpec":
        return cls(**d)


class AttributeFusion(nn.Module):
    """One fully-connected reduction, optionally conditioned on attributes."""

    def __init__(self, spec: FusionSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.spec = spec
        in_dim = spec.embed_dim + (spec.attr_dim if spec.use_attributes else 0)
        self.linear = nn.Linear(in_dim, spec.out_dim)
        if spec.activation == "relu":
            self.activation = nn.ReLU()
        elif spec.activation == "identity":
            self.activation = nn.Identity()
        else:
            raise ValueError(f"unknown fusion activation {spec.activation!r}")
        self.to(dtype)

    def forward(self, embedding: torch.Tensor, attrs: torch.Tensor) -> torch.Tensor:
        """(B, q), (B, a) -> (B, q'). ``attrs`` is ignored when the spec says
        attributes are unused."""
        if embedding.shape[-1] != self.spec.embed_dim:
            raise ValueError(
                f"embedding width {embedding.shape[-1]} does not match fusion "
                f"input {self.spec.embed_dim}"
            )
        if self.spec.use_attributes:
            if attrs.shape[-1] != self.spec.attr_dim:
                raise ValueError(
                    f"attribute width {attrs.shape[-1]} does not match fusion "
                    f"input {self.spec.attr_dim}"
                )
            x = torch.cat([embedding, attrs], dim=-1)
        else:
            x = embedding
        return self.activation(self.linear(x))


def fuse_attributes(
    x: Embedding, attrs: AttributeVector, module: AttributeFusion
) -> Embedding:
    """Single-sample functional surface over ``AttributeFusion``."""
    dtype = module.linear.weight.dtype
    with torch.no_grad():
        out = module(
            torch.from_numpy(x.vec).to(dtype).unsqueeze(0),
            torch.from_numpy(attrs.probs).to(dtype).unsqueeze(0),
        )[0]
    return Embedding(out.numpy())
