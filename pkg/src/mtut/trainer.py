"""End-to-end optimization loop: model assembly per ablation flags, Adam
steps on the weighted objective, saturation-based LR drops, best-checkpoint
tracking, resume, and the five ablation variants.

Determinism contract: every stochastic choice (component init, per-epoch
shuffling, per-sample augmentation, decoder seed noise) draws from a stream
derived from the experiment seed, so a (corpus, config) pair fully determines
the run, and a resumed run continues the exact same trajectory.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .augment import augment_cloud, augment_image
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .decoders import (
    ImageDecoder,
    ImageDecoderSpec,
    DeconvLayer,
    PointDecoder,
    PointDecoderSpec,
    reference_image_decoder_spec,
)
from .domain import LossBundle, ModalityId, validate_paired_sample
from .encoders import (
    ClassifierHead,
    ImageEncoder,
    ImageEncoderSpec,
    PointEncoder,
    PointEncoderSpec,
)
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .fusion import AttributeFusion, FusionSpec
from .losses import (
    GatingConfig,
    ObjectiveWeights,
    adaptive_rho,
    aed_loss,
    chamfer_loss,
    cls_loss,
    loss_delta,
    recon_loss,
    total_objective,
)
from .seeding import rng, seeded_init_, torch_generator
from .synthgen import Corpus

ABLATION_VARIANTS = ("UTUT", "MTUT", "MTUT+AED", "MTUT+Attr", "MTUT+AED+Attr")


# ---------------------------------------------------------------------------
# Model assembly
# ---------------------------------------------------------------------------


def image_decoder_spec_for(cfg: ExperimentConfig) -> ImageDecoderSpec:
    """Pick the transposed-conv chain matching the configured image size."""
    preset = cfg.decoder2d.preset
    h, w, c = cfg.dims.height, cfg.dims.width, cfg.dims.channels
    in_dim = cfg.fusion_out_dim
    if preset == "reference" or (preset == "auto" and h == 224):
        spec = reference_image_decoder_spec(in_dim)
    else:
        if h != w or h < 4 or (h & (h - 1)) != 0:
            raise ConfigError(
                f"image decoder needs a square power-of-two size (or 224), got {h}x{w}"
            )
        num_layers = int(math.log2(h)) - 1
        layers = []
        for i in range(num_layers):
            out_ch = c if i == num_layers - 1 else min(256, 8 * 2 ** (num_layers - 1 - i))
            layers.append(DeconvLayer(out_ch, 4, 2, 0 if i == 0 else 1))
        spec = ImageDecoderSpec(in_dim=in_dim, layers=tuple(layers))
    if spec.output_shape() != (h, w, c):
        raise ConfigError(
            f"decoder2d preset {preset!r} produces {spec.output_shape()}, "
            f"corpus needs {(h, w, c)}"
        )
    return spec


class MTUTModel(nn.Module):
    """All trainable components of one experiment.

    Which components exist depends on the ablation flags: the available
    modality always gets an encoder and head; multimodal training adds the
    missing modality's encoder and head, per-modality fusion maps, and the
    one decoder that reconstructs the missing modality.
    """

    def __init__(self, cfg: ExperimentConfig):
        super().__init__()
        self.cfg = cfg
        dtype = cfg.torch_dtype
        dims = cfg.dims
        self.missing = cfg.trainer.missing_modality
        self.available = self.missing.other
        multimodal = cfg.trainer.use_autoencoder

        image_spec = ImageEncoderSpec(
            backbone=cfg.encoder2d.backbone,
            in_channels=dims.channels,
            widths=cfg.encoder2d.widths,
            embed_dim=cfg.embed_dim,
        )
        point_spec = PointEncoderSpec(
            point_features=dims.point_features,
            mlp_widths=cfg.encoder3d.mlp_widths,
            embed_dim=cfg.embed_dim,
            use_spatial_transform=cfg.encoder3d.use_spatial_transform,
            tnet_mlp=cfg.encoder3d.tnet_mlp,
            tnet_fc=cfg.encoder3d.tnet_fc,
        )

        need_image = multimodal or self.available is ModalityId.IMAGE
        need_points = multimodal or self.available is ModalityId.POINTS
        self.encoder_image = ImageEncoder(image_spec, dtype) if need_image else None
        self.encoder_points = PointEncoder(point_spec, dtype) if need_points else None
        self.head_image = (
            ClassifierHead(cfg.embed_dim, dims.num_classes, dtype) if need_image else None
        )
        self.head_points = (
            ClassifierHead(cfg.embed_dim, dims.num_classes, dtype) if need_points else None
        )

        self.fusion_image = self.fusion_points = None
        self.decoder_image = self.decoder_points = None
        if multimodal:
            fusion_spec = FusionSpec(
                embed_dim=cfg.embed_dim,
                attr_dim=dims.attr_dim,
                out_dim=cfg.fusion_out_dim,
                use_attributes=cfg.fusion.use_attributes,
                activation=cfg.fusion.activation,
            )
            self.fusion_image = AttributeFusion(fusion_spec, dtype)
            self.fusion_points = (
                self.fusion_image if cfg.fusion.share_fusion else AttributeFusion(fusion_spec, dtype)
            )
            if self.missing is ModalityId.IMAGE:
                self.decoder_image = ImageDecoder(image_decoder_spec_for(cfg), dtype)
            else:
                self.decoder_points = PointDecoder(
                    PointDecoderSpec(
                        in_dim=cfg.fusion_out_dim,
                        hidden=cfg.decoder3d.hidden,
                        point_features=dims.point_features,
                        freeze_seed=cfg.decoder3d.freeze_seed,
                    ),
                    dtype,
                )

    def components(self) -> list[tuple[str, nn.Module]]:
        """Named components, each independently seed-initialized."""
        named = []
        shared_fusion = self.fusion_image is not None and self.fusion_image is self.fusion_points
        for name, module in [
            ("encoder_image", self.encoder_image),
            ("encoder_points", self.encoder_points),
            ("head_image", self.head_image),
            ("head_points", self.head_points),
            ("fusion_shared" if shared_fusion else "fusion_image", self.fusion_image),
            ("fusion_points", None if shared_fusion else self.fusion_points),
            ("decoder_image", self.decoder_image),
            ("decoder_points", self.decoder_points),
        ]:
            if module is not None:
                named.append((name, module))
        return named

    def seeded_init(self, seed: int) -> None:
        for name, module in self.components():
            seeded_init_(module, seed, name)

    def encoder_for(self, modality: ModalityId):
        return self.encoder_image if modality is ModalityId.IMAGE else self.encoder_points

    def head_for(self, modality: ModalityId):
        return self.head_image if modality is ModalityId.IMAGE else self.head_points

    def fusion_for(self, modality: ModalityId):
        return self.fusion_image if modality is ModalityId.IMAGE else self.fusion_points

    @property
    def decoder(self):
        return self.decoder_image if self.missing is ModalityId.IMAGE else self.decoder_points


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[MTUTModel, ExperimentConfig]:
    """Rebuild the architecture from the checkpoint's config snapshot and
    load its (final) parameters."""
    cfg = ExperimentConfig.from_dict(ckpt.config)
    model = MTUTModel(cfg)
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in ckpt.model_state.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint does not match its architecture: {exc}") from exc
    return model, cfg


# ---------------------------------------------------------------------------
# Batching and augmentation
# ---------------------------------------------------------------------------


def _collate(
    corpus: Corpus,
    indices: list[int],
    cfg: ExperimentConfig,
    epoch: int | None,
    modalities: tuple[ModalityId, ...],
) -> dict:
    """Tensors for one batch. ``epoch`` not None applies train augmentation,
    with one derived rng stream per (epoch, sample, modality)."""
    dtype = cfg.torch_dtype
    out: dict = {
        "labels": torch.tensor([corpus.samples[i].label for i in indices], dtype=torch.long)
    }
    if ModalityId.IMAGE in modalities:
        images = []
        for i in indices:
            img = corpus.samples[i].image
            if epoch is not None:
                img = augment_image(img, cfg.augment2d, rng(cfg.seed, "augment2d", epoch, i))
            images.append(img.pixels.transpose(2, 0, 1))
        out["images"] = torch.from_numpy(np.ascontiguousarray(np.stack(images))).to(dtype)
    if ModalityId.POINTS in modalities:
        clouds = []
        for i in indices:
            pc = corpus.samples[i].cloud
            if epoch is not None:
                pc = augment_cloud(pc, cfg.augment3d, rng(cfg.seed, "augment3d", epoch, i))
            clouds.append(pc.points)
        out["clouds"] = torch.from_numpy(np.ascontiguousarray(np.stack(clouds))).to(dtype)
    out["attrs"] = torch.from_numpy(
        np.ascontiguousarray(np.stack([corpus.samples[i].attrs.probs for i in indices]))
    ).to(dtype)
    return out


def _modality_input(batch: dict, modality: ModalityId) -> torch.Tensor:
    return batch["images"] if modality is ModalityId.IMAGE else batch["clouds"]


def epoch_batches(
    corpus: Corpus,
    cfg: ExperimentConfig,
    epoch: int,
    modalities: tuple[ModalityId, ...],
):
    """Shuffled, augmented train batches for one epoch (seeded, stateless)."""
    train_idx = corpus.indices("train")
    order = rng(cfg.seed, "shuffle", epoch).permutation(len(train_idx))
    shuffled = [train_idx[int(j)] for j in order]
    bs = cfg.trainer.batch_size
    for start in range(0, len(shuffled), bs):
        yield _collate(corpus, shuffled[start : start + bs], cfg, epoch, modalities)


# ---------------------------------------------------------------------------
# LR schedule
# ---------------------------------------------------------------------------


class SaturationSchedule:
    """Drop the learning rate when validation loss stops improving.

    An epoch counts as improving when it beats the best seen loss by more
    than ``saturation_eps``; ``patience`` consecutive non-improving epochs
    trigger one drop, up to ``max_drops`` drops total.
    """

    def __init__(self, eps: float, patience: int, max_drops: int):
        self.eps = eps
        self.patience = patience
        self.max_drops = max_drops
        self.best = math.inf
        self.staleness = 0
        self.drops = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True means drop the LR now."""
        improved = (self.best - val_loss) > self.eps
        self.best = min(self.best, val_loss)
        if improved:
            self.staleness = 0
            return False
        self.staleness += 1
        if self.staleness >= self.patience and self.drops < self.max_drops:
            self.drops += 1
            self.staleness = 0
            return True
        return False

    def state(self) -> dict:
        return {
            "best": None if math.isinf(self.best) else self.best,
            "staleness": self.staleness,
            "drops": self.drops,
        }

    def load_state(self, state: dict) -> None:
        self.best = math.inf if state["best"] is None else state["best"]
        self.staleness = state["staleness"]
        self.drops = state["drops"]


def lr_step(val_losses: list[float], initial_lr: float, cfg) -> float:
    """Pure replay of the saturation rule over a full val-loss history;
    returns the learning rate in force after the last epoch."""
    sched = SaturationSchedule(cfg.saturation_eps, cfg.patience, cfg.max_drops)
    lr = initial_lr
    for v in val_losses:
        if sched.update(v):
            lr /= cfg.lr_drop_factor
    return lr


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    """Per-epoch records: mean train loss components, val metrics, lr."""

    rows: list[dict]

    def __len__(self) -> int:
        return len(self.rows)

    def to_long_csv(self, path) -> None:
        """(epoch, split, metric, value) rows, one metric per line."""
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "split", "metric", "value"])
            for row in self.rows:
                for key in (
                    "cls_image",
                    "cls_points",
                    "aed",
                    "recon",
                    "rho",
                    "delta",
                    "total",
                ):
                    writer.writerow([row["epoch"], "train", key, f"{row[key]:.17g}"])
                writer.writerow([row["epoch"], "train", "lr", f"{row['lr']:.17g}"])
                writer.writerow([row["epoch"], "val", "loss", f"{row['val_loss']:.17g}"])
                writer.writerow(
                    [row["epoch"], "val", "accuracy", f"{row['val_accuracy']:.17g}"]
                )


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


class Trainer:
    """Owns model, optimizer, schedule, and rng streams for one run."""

    def __init__(self, corpus: Corpus, cfg: ExperimentConfig, resume_from: Checkpoint | None = None):
        _check_corpus(corpus, cfg)
        self.corpus = corpus
        self.cfg = cfg
        self.missing = cfg.trainer.missing_modality
        self.available = self.missing.other
        if cfg.losses.recon_metric == "chamfer" and self.missing is ModalityId.IMAGE:
            raise ConfigError("recon_metric 'chamfer' only applies when points are missing")

        self.model = MTUTModel(cfg)
        self.model.seeded_init(cfg.seed)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=cfg.trainer.lr, betas=cfg.trainer.betas
        )
        self.gauss = torch_generator(cfg.seed, "gauss")
        self.schedule = SaturationSchedule(
            cfg.trainer.saturation_eps, cfg.trainer.patience, cfg.trainer.max_drops
        )
        self.current_lr = cfg.trainer.lr
        self.ema_avail: float | None = None
        self.ema_missing: float | None = None
        self.history: list[dict] = []
        self.epoch = 0
        self.best = {"epoch": 0, "val_accuracy": -1.0}
        self.best_model_state: dict | None = None
        if resume_from is not None:
            self._restore(resume_from)

    # -- one optimizer step ------------------------------------------------

    def train_step(self, batch: dict) -> LossBundle:
        cfg = self.cfg
        self.model.train()
        multimodal = cfg.trainer.use_autoencoder

        x = {}
        x[self.available] = self.model.encoder_for(self.available)(
            _modality_input(batch, self.available)
        )
        cls_avail = cls_loss(self.model.head_for(self.available)(x[self.available]), batch["labels"])

        cls_missing_t = None
        aux_term = None
        if multimodal:
            x[self.missing] = self.model.encoder_for(self.missing)(
                _modality_input(batch, self.missing)
            )
            head_m = self.model.head_for(self.missing)
            if cfg.losses.aux_mode == "full":
                cls_missing_t = cls_loss(head_m(x[self.missing]), batch["labels"])
                aux_term = cls_missing_t
            elif cfg.losses.aux_mode == "head-only":
                cls_missing_t = cls_loss(head_m(x[self.missing].detach()), batch["labels"])
                aux_term = cls_missing_t
            else:
                with torch.no_grad():
                    cls_missing_t = cls_loss(head_m(x[self.missing]), batch["labels"])

        # Gate bookkeeping happens on scalar values, outside the graph.
        avail_val = float(cls_avail.detach())
        missing_val = float(cls_missing_t.detach()) if cls_missing_t is not None else 0.0
        if cfg.losses.rho_smoothing > 0 and multimodal:
            a = cfg.losses.rho_smoothing
            self.ema_avail = avail_val if self.ema_avail is None else a * self.ema_avail + (1 - a) * avail_val
            self.ema_missing = (
                missing_val if self.ema_missing is None else a * self.ema_missing + (1 - a) * missing_val
            )
            gate_avail, gate_missing = self.ema_avail, self.ema_missing
        else:
            gate_avail, gate_missing = avail_val, missing_val

        use_aed = multimodal and cfg.trainer.use_aed
        delta = (
            loss_delta(gate_avail, gate_missing, cfg.losses.delta_convention) if multimodal else 0.0
        )
        rho = adaptive_rho(delta, cfg.losses.beta) if use_aed else 0.0

        aed_t: torch.Tensor | float = 0.0
        if use_aed and rho > 0.0:
            gate = GatingConfig(
                beta=cfg.losses.beta,
                missing=self.missing,
                stop_gradient_on_stronger=cfg.losses.stop_gradient_on_stronger,
            )
            img_val = avail_val if self.available is ModalityId.IMAGE else missing_val
            pts_val = avail_val if self.available is ModalityId.POINTS else missing_val
            stronger = ModalityId.IMAGE if img_val <= pts_val else ModalityId.POINTS
            aed_t = aed_loss(x[ModalityId.IMAGE], x[ModalityId.POINTS], rho, gate, stronger)

        recon_t: torch.Tensor | float = 0.0
        if multimodal and cfg.losses.lambda1 != 0.0:
            fused_i = self.model.fusion_for(ModalityId.IMAGE)(x[ModalityId.IMAGE], batch["attrs"])
            fused_p = self.model.fusion_for(ModalityId.POINTS)(x[ModalityId.POINTS], batch["attrs"])
            target = _modality_input(batch, self.missing)
            if self.missing is ModalityId.IMAGE:
                from_i = self.model.decoder_image(fused_i)
                from_p = self.model.decoder_image(fused_p)
            else:
                n = target.shape[1]
                from_i = self.model.decoder_points(fused_i, n, self.gauss)
                from_p = self.model.decoder_points(fused_p, n, self.gauss)
            if cfg.losses.recon_metric == "chamfer":
                recon_t = chamfer_loss(target, from_i, from_p)
            else:
                recon_t = recon_loss(
                    target, from_i, from_p, normalize=cfg.losses.normalize_recon, batched=True
                )

        weights = ObjectiveWeights(cfg.losses.lambda1, cfg.losses.lambda2)
        cls_image_t = cls_avail if self.available is ModalityId.IMAGE else cls_missing_t
        cls_points_t = cls_avail if self.available is ModalityId.POINTS else cls_missing_t
        total = total_objective(
            cls_image_t, cls_points_t, recon_t, aed_t, weights, self.missing
        )

        opt_loss = total
        if aux_term is not None and cfg.losses.lambda_aux != 0.0:
            opt_loss = opt_loss + cfg.losses.lambda_aux * aux_term

        bundle = LossBundle(
            cls_image=float(cls_image_t.detach()) if cls_image_t is not None else 0.0,
            cls_points=float(cls_points_t.detach()) if cls_points_t is not None else 0.0,
            aed=float(aed_t.detach()) if isinstance(aed_t, torch.Tensor) else float(aed_t),
            recon=float(recon_t.detach()) if isinstance(recon_t, torch.Tensor) else float(recon_t),
            rho=rho,
            delta=delta,
            total=float(total.detach()),
        )
        for name, value in bundle.as_dict().items():
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss component '{name}' at epoch {self.epoch + 1}"
                )

        self.optimizer.zero_grad(set_to_none=True)
        opt_loss.backward()
        self.optimizer.step()
        return bundle

    # -- epochs ------------------------------------------------------------

    def _needed_modalities(self) -> tuple[ModalityId, ...]:
        if self.cfg.trainer.use_autoencoder:
            return (ModalityId.IMAGE, ModalityId.POINTS)
        return (self.available,)

    def run_epoch(self) -> dict:
        bundles = [
            self.train_step(batch)
            for batch in epoch_batches(self.corpus, self.cfg, self.epoch, self._needed_modalities())
        ]
        val_loss, val_accuracy = self.val_metrics()
        row = {
            "epoch": self.epoch + 1,
            "lr": self.current_lr,
            "val_loss": val_loss,
            "val_accuracy": val_accuracy,
        }
        for key in ("cls_image", "cls_points", "aed", "recon", "rho", "delta", "total"):
            row[key] = float(np.mean([b.as_dict()[key] for b in bundles]))
        self.history.append(row)
        self.epoch += 1

        if val_accuracy > self.best["val_accuracy"]:
            self.best = {"epoch": self.epoch, "val_accuracy": val_accuracy}
            self.best_model_state = {
                k: v.detach().cpu().numpy().copy() for k, v in self.model.state_dict().items()
            }

        if self.schedule.update(val_loss):
            self.current_lr /= self.cfg.trainer.lr_drop_factor
            for group in self.optimizer.param_groups:
                group["lr"] = self.current_lr
        return row

    def val_metrics(self) -> tuple[float, float]:
        """Mean available-modality CE loss and accuracy on the val split."""
        idx = self.corpus.indices("val")
        self.model.eval()
        total_loss, correct = 0.0, 0
        bs = self.cfg.eval.batch_size
        with torch.no_grad():
            for start in range(0, len(idx), bs):
                chunk = idx[start : start + bs]
                batch = _collate(self.corpus, chunk, self.cfg, None, (self.available,))
                logits = self.model.head_for(self.available)(
                    self.model.encoder_for(self.available)(_modality_input(batch, self.available))
                )
                total_loss += float(cls_loss(logits, batch["labels"])) * len(chunk)
                correct += int((logits.argmax(dim=1) == batch["labels"]).sum())
        self.model.train()
        return total_loss / len(idx), correct / len(idx)

    # -- checkpointing -----------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        model_state = {
            k: v.detach().cpu().numpy().copy() for k, v in self.model.state_dict().items()
        }
        opt_state = _tensors_to_numpy(self.optimizer.state_dict())
        return Checkpoint(
            config=self.cfg.to_dict(),
            epoch=self.epoch,
            model_state=model_state,
            optimizer_state=opt_state,
            rng_state={"gauss": self.gauss.get_state().numpy().copy()},
            scheduler_state={**self.schedule.state(), "current_lr": self.current_lr},
            trainer_state={"ema_avail": self.ema_avail, "ema_missing": self.ema_missing},
            history=copy.deepcopy(self.history),
            best=dict(self.best),
            best_model_state=copy.deepcopy(self.best_model_state),
        )

    def _restore(self, ckpt: Checkpoint) -> None:
        mismatches = _config_mismatches(ckpt.config, self.cfg.to_dict())
        if mismatches:
            raise CheckpointError(
                "checkpoint config does not match the current config: "
                + ", ".join(mismatches)
            )
        state = {
            k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in ckpt.model_state.items()
        }
        try:
            self.model.load_state_dict(state)
        except RuntimeError as exc:
            raise CheckpointError(f"model state does not fit architecture: {exc}") from exc
        self.optimizer.load_state_dict(_numpy_to_tensors(ckpt.optimizer_state))
        self.gauss.set_state(torch.from_numpy(ckpt.rng_state["gauss"].copy()))
        sched = dict(ckpt.scheduler_state)
        self.current_lr = sched.pop("current_lr")
        self.schedule.load_state(sched)
        for group in self.optimizer.param_groups:
            group["lr"] = self.current_lr
        self.ema_avail = ckpt.trainer_state["ema_avail"]
        self.ema_missing = ckpt.trainer_state["ema_missing"]
        self.history = copy.deepcopy(ckpt.history)
        self.epoch = ckpt.epoch
        self.best = dict(ckpt.best)
        self.best_model_state = copy.deepcopy(ckpt.best_model_state)


def fit(
    corpus: Corpus, cfg: ExperimentConfig, resume_from: Checkpoint | None = None
) -> tuple[Checkpoint, TrainHistory]:
    """Train for cfg.trainer.epochs epochs (continuing from ``resume_from``
    if given) and return the final checkpoint plus per-epoch history."""
    if cfg.trainer.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    trainer = Trainer(corpus, cfg, resume_from)
    while trainer.epoch < cfg.trainer.epochs:
        trainer.run_epoch()
    return trainer.to_checkpoint(), TrainHistory(rows=copy.deepcopy(trainer.history))


# ---------------------------------------------------------------------------
# Plain unimodal reference loop (the reduction oracle)
# ---------------------------------------------------------------------------


def fit_unimodal_classifier(corpus: Corpus, cfg: ExperimentConfig) -> dict:
    """Train a bare encoder + head on the available modality with a plain
    cross-entropy loop, sharing the full trainer's init and data streams.

    Returns the final parameter arrays; the multimodal trainer with every
    extra component disabled must match these exactly.
    """
    _check_corpus(corpus, cfg)
    available = cfg.trainer.missing_modality.other
    dims = cfg.dims
    dtype = cfg.torch_dtype
    if available is ModalityId.IMAGE:
        encoder = ImageEncoder(
            ImageEncoderSpec(
                backbone=cfg.encoder2d.backbone,
                in_channels=dims.channels,
                widths=cfg.encoder2d.widths,
                embed_dim=cfg.embed_dim,
            ),
            dtype,
        )
        names = ("encoder_image", "head_image")
    else:
        encoder = PointEncoder(
            PointEncoderSpec(
                point_features=dims.point_features,
                mlp_widths=cfg.encoder3d.mlp_widths,
                embed_dim=cfg.embed_dim,
                use_spatial_transform=cfg.encoder3d.use_spatial_transform,
                tnet_mlp=cfg.encoder3d.tnet_mlp,
                tnet_fc=cfg.encoder3d.tnet_fc,
            ),
            dtype,
        )
        names = ("encoder_points", "head_points")
    head = ClassifierHead(cfg.embed_dim, dims.num_classes, dtype)
    seeded_init_(encoder, cfg.seed, names[0])
    seeded_init_(head, cfg.seed, names[1])
    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(head.parameters()),
        lr=cfg.trainer.lr,
        betas=cfg.trainer.betas,
    )
    schedule = SaturationSchedule(
        cfg.trainer.saturation_eps, cfg.trainer.patience, cfg.trainer.max_drops
    )
    lr = cfg.trainer.lr
    val_idx = corpus.indices("val")
    for epoch in range(cfg.trainer.epochs):
        for batch in epoch_batches(corpus, cfg, epoch, (available,)):
            loss = cls_loss(head(encoder(_modality_input(batch, available))), batch["labels"])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
        with torch.no_grad():
            total = 0.0
            for start in range(0, len(val_idx), cfg.eval.batch_size):
                chunk = val_idx[start : start + cfg.eval.batch_size]
                batch = _collate(corpus, chunk, cfg, None, (available,))
                total += float(
                    cls_loss(head(encoder(_modality_input(batch, available))), batch["labels"])
                ) * len(chunk)
        if schedule.update(total / len(val_idx)):
            lr /= cfg.trainer.lr_drop_factor
            for group in optimizer.param_groups:
                group["lr"] = lr
    params = {}
    for prefix, module in zip(names, (encoder, head)):
        for key, value in module.state_dict().items():
            params[f"{prefix}.{key}"] = value.detach().cpu().numpy().copy()
    return params


# ---------------------------------------------------------------------------
# Ablation variants
# ---------------------------------------------------------------------------


def variant_config(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    """Resolve an ablation variant name into concrete flags."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    aed = "AED" in variant
    attrs = "Attr" in variant
    multimodal = variant != "UTUT"
    losses = cfg.losses
    if not multimodal:
        losses = replace(losses, lambda1=0.0, lambda2=0.0, aux_mode="none")
    elif not aed:
        # Without the gate there is no use for the auxiliary head either.
        losses = replace(losses, lambda2=0.0, aux_mode="none")
    return replace(
        cfg,
        trainer=replace(cfg.trainer, use_autoencoder=multimodal, use_aed=aed),
        fusion=replace(cfg.fusion, use_attributes=attrs),
        losses=losses,
    )


def run_ablation(corpus: Corpus, variant: str, cfg: ExperimentConfig) -> dict:
    """Train one variant and evaluate the available modality on the test
    split; returns one comparable metrics row."""
    from .evalkit import evaluate

    vcfg = variant_config(cfg, variant)
    ckpt, _ = fit(corpus, vcfg)
    model, _ = model_from_checkpoint(ckpt)
    report = evaluate(model, corpus, "test", vcfg.trainer.missing_modality.other,
                      batch_size=vcfg.eval.batch_size)
    return {
        "variant": variant,
        "seed": vcfg.seed,
        "modality": report.modality,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "corpus_hash": corpus.content_hash(),
    }


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _check_corpus(corpus: Corpus, cfg: ExperimentConfig) -> None:
    if not corpus.indices("train"):
        raise DataError("corpus has an empty train split")
    if not corpus.indices("val"):
        raise DataError("corpus has an empty val split")
    if corpus.num_classes != cfg.dims.num_classes:
        raise DataError(
            f"corpus has {corpus.num_classes} identities, config expects "
            f"{cfg.dims.num_classes}"
        )
    for sid, sample in zip(corpus.sample_ids, corpus.samples):
        problems = validate_paired_sample(sample, cfg.dims)
        if problems:
            raise DataError(f"sample {sid}: " + "; ".join(problems))


def _tensors_to_numpy(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().numpy().copy()
    if isinstance(obj, dict):
        return {k: _tensors_to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tensors_to_numpy(v) for v in obj]
    return obj


def _numpy_to_tensors(obj):
    if isinstance(obj, np.ndarray):
        return torch.from_numpy(obj.copy())
    if isinstance(obj, dict):
        return {k: _numpy_to_tensors(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_numpy_to_tensors(v) for v in obj]
    return obj


def _config_mismatches(saved: dict, current: dict, prefix: str = "") -> list[str]:
    """Paths whose values differ, ignoring trainer.epochs (a resumed run may
    extend the schedule)."""
    mismatches = []
    for key in sorted(set(saved) | set(current)):
        path = f"{prefix}{key}"
        if path == "trainer.epochs":
            continue
        a, b = saved.get(key), current.get(key)
        if isinstance(a, dict) and isinstance(b, dict):
            mismatches += _config_mismatches(a, b, path + ".")
        elif a != b:
            mismatches.append(f"{path} ({a!r} vs {b!r})")
    return mismatches
