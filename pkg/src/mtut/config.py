"""Experiment configuration: every tunable of every module in one nested
structure, loadable from YAML, with unknown keys rejected and the resolved
values echoed into each run manifest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
import yaml

from .augment import AugmentParams2D, AugmentParams3D
from .domain import Dims, ModalityId
from .errors import ConfigError
from .synthgen import CorruptionSpec, GeneratorParams

AUX_MODES = ("full", "head-only", "none")
PRECISIONS = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class Encoder2DConfig:
    backbone: str = "small-cnn"  # or "resnet18-like"
    widths: tuple[int, ...] = (16, 32, 64)

    def to_dict(self) -> dict:
        return {"backbone": self.backbone, "widths": list(self.widths)}

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder2DConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


@dataclass(frozen=True)
class Encoder3DConfig:
    mlp_widths: tuple[int, ...] = (32, 64, 128)
    use_spatial_transform: bool = True
    tnet_mlp: tuple[int, ...] = (16, 32)
    tnet_fc: tuple[int, ...] = (32,)

    def to_dict(self) -> dict:
        return {
            "mlp_widths": list(self.mlp_widths),
            "use_spatial_transform": self.use_spatial_transform,
            "tnet_mlp": list(self.tnet_mlp),
            "tnet_fc": list(self.tnet_fc),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder3DConfig":
        d = dict(d)
        for key in ("mlp_widths", "tnet_mlp", "tnet_fc"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class FusionConfig:
    use_attributes: bool = True
    share_fusion: bool = False
    out_dim: int | None = None  # None keeps the embedding width
    activation: str = "relu"

    def to_dict(self) -> dict:
        return {
            "use_attributes": self.use_attributes,
            "share_fusion": self.share_fusion,
            "out_dim": self.out_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(**d)


@dataclass(frozen=True)
class Decoder2DConfig:
    preset: str = "auto"  # auto | desk | reference

    def to_dict(self) -> dict:
        return {"preset": self.preset}

    @classmethod
    def from_dict(cls, d: dict) -> "Decoder2DConfig":
        return cls(**d)


@dataclass(frozen=True)
class Decoder3DConfig:
    hidden: tuple[int, ...] = (16, 8)
    freeze_seed: bool = False

    def to_dict(self) -> dict:
        return {"hidden": list(self.hidden), "freeze_seed": self.freeze_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "Decoder3DConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(frozen=True)
class LossesConfig:
    beta: float = 1.0
    lambda1: float = 0.001
    lambda2: float = 0.1
    lambda_aux: float = 1.0
    aux_mode: str = "full"  # full | head-only | none
    delta_convention: str = "worked-example"  # or "formal"
    stop_gradient_on_stronger: bool = True
    recon_metric: str = "l2"  # l2 | chamfer (clouds only)
    normalize_recon: bool = True  # desk default; reference preset turns it off
    rho_smoothing: float = 0.0  # EMA factor for the gate's loss estimates

    def __post_init__(self):
        if self.aux_mode not in AUX_MODES:
            raise ConfigError(f"aux_mode must be one of {AUX_MODES}, got {self.aux_mode!r}")
        if self.recon_metric not in ("l2", "chamfer"):
            raise ConfigError(f"recon_metric must be 'l2' or 'chamfer', got {self.recon_metric!r}")
        if not 0.0 <= self.rho_smoothing < 1.0:
            raise ConfigError("rho_smoothing must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda_aux": self.lambda_aux,
            "aux_mode": self.aux_mode,
            "delta_convention": self.delta_convention,
            "stop_gradient_on_stronger": self.stop_gradient_on_stronger,
            "recon_metric": self.recon_metric,
            "normalize_recon": self.normalize_recon,
            "rho_smoothing": self.rho_smoothing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossesConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainerConfig:
    missing: str = "image"  # modality absent at test time: image | points
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    lr_drop_factor: float = 10.0
    patience: int = 3
    saturation_eps: float = 1e-4
    max_drops: int = 2
    use_autoencoder: bool = True  # off = plain unimodal training
    use_aed: bool = True

    def __post_init__(self):
        if self.missing not in ("image", "points"):
            raise ConfigError(f"missing must be 'image' or 'points', got {self.missing!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    @property
    def missing_modality(self) -> ModalityId:
        return ModalityId(self.missing)

    def to_dict(self) -> dict:
        return {
            "missing": self.missing,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "betas": list(self.betas),
            "lr_drop_factor": self.lr_drop_factor,
            "patience": self.patience,
            "saturation_eps": self.saturation_eps,
            "max_drops": self.max_drops,
            "use_autoencoder": self.use_autoencoder,
            "use_aed": self.use_aed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass(frozen=True)
class EvalConfig:
    batch_size: int = 64

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        return cls(**d)


@dataclass(frozen=True)
class CorpusConfig:
    num_identities: int = 10
    per_identity: int = 20

    def to_dict(self) -> dict:
        return {"num_identities": self.num_identities, "per_identity": self.per_identity}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    """The one structure every command reads. Defaults are desk scale."""

    seed: int = 0
    precision: str = "float32"
    embed_dim: int = 32
    dims: Dims = field(default_factory=Dims)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    generator: GeneratorParams = field(default_factory=GeneratorParams)
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    augment2d: AugmentParams2D = field(default_factory=AugmentParams2D)
    augment3d: AugmentParams3D = field(default_factory=AugmentParams3D)
    encoder2d: Encoder2DConfig = field(default_factory=Encoder2DConfig)
    encoder3d: Encoder3DConfig = field(default_factory=Encoder3DConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder2d: Decoder2DConfig = field(default_factory=Decoder2DConfig)
    decoder3d: Decoder3DConfig = field(default_factory=Decoder3DConfig)
    losses: LossesConfig = field(default_factory=LossesConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(
                f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}"
            )
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")

    @property
    def torch_dtype(self) -> torch.dtype:
        return PRECISIONS[self.precision]

    @property
    def fusion_out_dim(self) -> int:
        return self.fusion.out_dim if self.fusion.out_dim is not None else self.embed_dim

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "precision": self.precision,
            "embed_dim": self.embed_dim,
            "dims": self.dims.to_dict(),
            "corpus": self.corpus.to_dict(),
            "generator": self.generator.to_dict(),
            "corruption": self.corruption.to_dict(),
            "augment2d": self.augment2d.to_dict(),
            "augment3d": self.augment3d.to_dict(),
            "encoder2d": self.encoder2d.to_dict(),
            "encoder3d": self.encoder3d.to_dict(),
            "fusion": self.fusion.to_dict(),
            "decoder2d": self.decoder2d.to_dict(),
            "decoder3d": self.decoder3d.to_dict(),
            "losses": self.losses.to_dict(),
            "trainer": self.trainer.to_dict(),
            "eval": self.eval.to_dict(),
        }

    _SECTIONS = {
        "dims": Dims.from_dict,
        "corpus": CorpusConfig.from_dict,
        "generator": GeneratorParams.from_dict,
        "corruption": CorruptionSpec.from_dict,
        "augment2d": AugmentParams2D.from_dict,
        "augment3d": AugmentParams3D.from_dict,
        "encoder2d": Encoder2DConfig.from_dict,
        "encoder3d": Encoder3DConfig.from_dict,
        "fusion": FusionConfig.from_dict,
        "decoder2d": Decoder2DConfig.from_dict,
        "decoder3d": Decoder3DConfig.from_dict,
        "losses": LossesConfig.from_dict,
        "trainer": TrainerConfig.from_dict,
        "eval": EvalConfig.from_dict,
    }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"seed", "precision", "embed_dim"} | set(cls._SECTIONS)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {}
        for key in ("seed", "precision", "embed_dim"):
            if key in d:
                kwargs[key] = d[key]
        for name, parse in cls._SECTIONS.items():
            if name in d:
                section = d[name]
                if not isinstance(section, dict):
                    raise ConfigError(f"config section '{name}' must be a mapping")
                try:
                    kwargs[name] = parse(section)
                except TypeError as exc:
                    raise ConfigError(f"config section '{name}': {exc}") from exc
                except ValueError as exc:
                    raise ConfigError(f"config section '{name}': {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def reference(cls) -> "ExperimentConfig":
        """Full-scale instantiation: 224x224 images, 4000-point clouds,
        1024-wide embeddings, residual backbone, six-layer image decoder."""
        return cls(
            embed_dim=1024,
            dims=Dims(height=224, width=224, channels=3, points=4000),
            encoder2d=Encoder2DConfig(backbone="resnet18-like", widths=(64, 128, 256, 512)),
            encoder3d=Encoder3DConfig(
                mlp_widths=(64, 128, 1024), tnet_mlp=(64, 128), tnet_fc=(64,)
            ),
            decoder2d=Decoder2DConfig(preset="reference"),
            decoder3d=Decoder3DConfig(hidden=(256, 64)),
            losses=LossesConfig(normalize_recon=False),
        )


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config file (all keys optional) and apply flat overrides.

    Overrides use dotted paths, e.g. {"trainer.missing": "points"}; flags
    always win over file keys.
    """
    data: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        data = loaded
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} collides with a scalar")
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(data)


def config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
