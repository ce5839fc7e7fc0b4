"""Training objectives: classification, gated embedding divergence,
reconstruction, and their weighted total.

Gradient-flow contracts, stated once here and tested:

* The gate value rho is computed from scalar loss values and never carries
  gradient; it scales the divergence term as a constant.
* With ``stop_gradient_on_stronger`` on, the embedding of the
  better-classifying modality is detached inside the divergence term, so
  alignment only pulls the weaker embedding toward the stronger one.
* Zero-weighted terms are skipped entirely, so a closed gate (rho = 0) or a
  zero lambda contributes exactly zero gradient, bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .domain import ModalityId

DELTA_CONVENTIONS = ("worked-example", "formal")


@dataclass(frozen=True)
class GatingConfig:
    """Adaptive gate parameters.

    ``missing`` is the modality absent at test time. ``beta`` scales how
    sharply bigger classification-loss gaps open the gate.
    """

    beta: float = 1.0
    missing: ModalityId = ModalityId.IMAGE
    stop_gradient_on_stronger: bool = True

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda1: float = 0.001
    lambda2: float = 0.1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("objective weights must be non-negative")


def cls_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Cross entropy; batch loss is the mean of per-sample losses.

    Accepts (K,) logits with an int label or (B, K) with a (B,) label tensor.
    """
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
        labels = torch.tensor([labels])
    if isinstance(labels, int):
        raise ValueError("batched logits need a label tensor")
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError(
            f"label out of range [0, {logits.shape[-1]}): {labels.tolist()}"
        )
    return F.cross_entropy(logits, labels)


def loss_delta(
    cls_avail: float, cls_missing: float, convention: str = "worked-example"
) -> float:
    """Classification-loss gap steering the gate.

    Default ("worked-example") convention: available minus missing, positive
    when the training-only modality classifies better and should be mimicked.
    The "formal" convention flips the sign.
    """
    if convention not in DELTA_CONVENTIONS:
        raise ValueError(f"unknown delta convention {convention!r}")
    delta = cls_avail - cls_missing
    return delta if convention == "worked-example" else -delta


def adaptive_rho(delta: float, beta: float) -> float:
    """Gate value: exp(beta * delta) - 1 for positive delta, else 0.

    Treated as a constant during differentiation; callers must not pass
    tensors that require grad.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    return math.expm1(beta * delta) if delta > 0 else 0.0


def aed_loss(
    x_img: torch.Tensor,
    x_pts: torch.Tensor,
    rho: float,
    gate: GatingConfig,
    stronger: ModalityId | None = None,
) -> torch.Tensor:
    """Gated embedding divergence: rho * mean L2 distance between embeddings.

    ``stronger`` names the better-classifying modality this step (defaults to
    the missing modality, which is the teacher whenever the gate is open
    under the default delta convention). With stop-gradient active, that
    side's embedding is treated as a constant.
    """
    if x_img.shape != x_pts.shape:
        raise ValueError(f"embedding shapes differ: {tuple(x_img.shape)} vs {tuple(x_pts.shape)}")
    if rho == 0.0:
        return torch.zeros((), dtype=x_img.dtype)
    if gate.stop_gradient_on_stronger:
        side = stronger if stronger is not None else gate.missing
        if side is ModalityId.IMAGE:
            x_img = x_img.detach()
        else:
            x_pts = x_pts.detach()
    diff = x_img - x_pts
    if diff.dim() == 1:
        diff = diff.unsqueeze(0)
    return rho * torch.linalg.vector_norm(diff, dim=-1).mean()


def recon_loss(
    target: torch.Tensor,
    from_img: torch.Tensor,
    from_pts: torch.Tensor,
    normalize: bool = False,
    batched: bool = False,
) -> torch.Tensor:
    """Sum of Euclidean norms of both reconstruction residuals.

    Without ``batched`` the arguments are one sample of any shape and each
    residual is flattened whole. With ``batched`` the leading dimension
    indexes samples and the value is the mean of per-sample norms.
    ``normalize`` divides by sqrt(elements per sample) so the scale is
    resolution independent.
    """
    if target.shape != from_img.shape or target.shape != from_pts.shape:
        raise ValueError(
            f"shape mismatch: target {tuple(target.shape)}, "
            f"from_img {tuple(from_img.shape)}, from_pts {tuple(from_pts.shape)}"
        )
    lead = target.shape[0] if batched else 1
    flat_target = target.reshape(lead, -1)
    flat_img = from_img.reshape(lead, -1)
    flat_pts = from_pts.reshape(lead, -1)
    norms = (
        torch.linalg.vector_norm(flat_img - flat_target, dim=1)
        + torch.linalg.vector_norm(flat_pts - flat_target, dim=1)
    )
    if normalize:
        norms = norms / math.sqrt(flat_target.shape[1])
    return norms.mean()


def chamfer_loss(
    target: torch.Tensor, from_img: torch.Tensor, from_pts: torch.Tensor
) -> torch.Tensor:
    """Order-insensitive alternative for cloud targets: symmetric Chamfer
    distance of each reconstruction to the target, summed over the two
    reconstructions and averaged over the batch."""
    if target.dim() == 2:
        target, from_img, from_pts = (t.unsqueeze(0) for t in (target, from_img, from_pts))

    def one_sided(a, b):
        d = torch.cdist(a, b)  # (B, n, m)
        return d.min(dim=2).values.mean(dim=1) + d.min(dim=1).values.mean(dim=1)

    return (one_sided(from_img, target) + one_sided(from_pts, target)).mean()


def total_objective(
    cls_image: torch.Tensor | float | None,
    cls_points: torch.Tensor | float | None,
    recon: torch.Tensor | float,
    aed: torch.Tensor | float,
    weights: ObjectiveWeights,
    missing: ModalityId,
):
    """Weighted sum actually optimized: available-modality classification
    loss plus lambda1 * reconstruction plus lambda2 * divergence.

    Zero-weighted terms are skipped rather than multiplied by zero, so they
    contribute no gradient graph at all.
    """
    cls_avail = cls_points if missing is ModalityId.IMAGE else cls_image
    if cls_avail is None:
        raise ValueError("available-modality classification loss is required")
    total = cls_avail
    if weights.lambda1 != 0.0:
        total = total + weights.lambda1 * recon
    if weights.lambda2 != 0.0:
        total = total + weights.lambda2 * aed
    return total
