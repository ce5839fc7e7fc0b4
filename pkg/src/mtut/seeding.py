"""Derived random-number streams.

Every stochastic choice in the toolkit draws from a stream derived from the
experiment seed plus a path of labels, e.g. ``rng(seed, "augment2d", epoch,
sample_index)``. Streams are independent of each other and of the order in
which they are created, which is what makes per-component model init, resume,
and the unimodal-reduction contract reproducible bit for bit.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np
import torch


def derive_seed(root: int, *path) -> int:
    """Collapse (root, *path) into a stable 64-bit seed via SHA-256.

    Path elements are stringified, so ints and strings can be mixed freely.
    Independent of PYTHONHASHSEED and platform.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng(root: int, *path) -> np.random.Generator:
    """NumPy generator for the stream named by (root, *path)."""
    return np.random.default_rng(derive_seed(root, *path))


def torch_generator(root: int, *path) -> torch.Generator:
    """Torch generator for the stream named by (root, *path)."""
    g = torch.Generator()
    g.manual_seed(derive_seed(root, *path) & 0x7FFF_FFFF_FFFF_FFFF)
    return g


def seeded_init_(module: torch.nn.Module, root: int, component: str) -> None:
    """Re-initialize all parameters of ``module`` from named streams.

    Each parameter gets its own stream keyed by (root, "init", component,
    parameter name), so adding or removing sibling components never shifts
    another component's initial values. Weights and biases use fan-in-scaled
    uniform init; normalization affine parameters are reset to (1, 0).
    Submodules exposing ``_post_seed_init_`` (e.g. the spatial-transform net's
    identity-output layer) are given the last word.
    """
    params = dict(module.named_parameters())
    with torch.no_grad():
        for name in sorted(params):
            param = params[name]
            g = torch_generator(root, "init", component, name)
            if param.dim() >= 2:
                bound = 1.0 / math.sqrt(param[0].numel())
                param.uniform_(-bound, bound, generator=g)
            elif name.endswith("bias"):
                fan_in = _bias_fan_in(params, name)
                if fan_in:
                    bound = 1.0 / math.sqrt(fan_in)
                    param.uniform_(-bound, bound, generator=g)
                else:
                    param.zero_()
            else:
                # 1-d weight: norm-layer scale.
                param.fill_(1.0)
        for sub in module.modules():
            post = getattr(sub, "_post_seed_init_", None)
            if post is not None:
                post()


def _bias_fan_in(params: dict, bias_name: str) -> int:
    """Fan-in of the layer owning ``bias_name`` (0 for norm-layer biases)."""
    weight = params.get(bias_name[: -len("bias")] + "weight")
    if weight is None or weight.dim() < 2:
        return 0
    return weight[0].numel()
