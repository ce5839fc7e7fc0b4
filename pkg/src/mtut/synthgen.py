"""Synthetic paired-modality corpus generation and corpus directory IO.

Each identity is a latent vector z. Its image is a superposition of Gaussian
blobs whose positions, widths, intensities and colors are fixed functions of
z; its point cloud is an ellipsoid surface whose radii and bump deformations
come from the same z; its attribute vector is an affine-then-squash map of z.
Image, cloud, and attributes therefore share one latent, which is what makes
cross-modal learning on the corpus meaningful.

Directory layout (also accepted for externally supplied corpora):

    manifest.json            dims, identity count, seed, corruption, sample list
    images/<id>_<k>.png      8-bit, normalized to [0, 1] on load
    clouds/<id>_<k>.xyz      ASCII, one "x y z" triple per line
    attrs.csv                header row; columns: sample_id, a0..a{A-1}
    splits.csv               sample_id, split
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .domain import (
    AttributeVector,
    Dims,
    ImageSample,
    PairedSample,
    PointCloudSample,
    validate_paired_sample,
)
from .errors import DataError
from .seeding import rng

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class CorruptionSpec:
    """Generation-time noise on one or both modalities.

    ``splits`` limits corruption to the named splits; None corrupts globally,
    which is the "noisy modality at train and test time" scenario.
    """

    image_noise_sigma: float = 0.0
    cloud_noise_sigma: float = 0.0
    splits: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.image_noise_sigma < 0 or self.cloud_noise_sigma < 0:
            raise ValueError("corruption sigmas must be non-negative")

    def applies_to(self, split: str) -> bool:
        return self.splits is None or split in self.splits

    def to_dict(self) -> dict:
        return {
            "image_noise_sigma": self.image_noise_sigma,
            "cloud_noise_sigma": self.cloud_noise_sigma,
            "splits": list(self.splits) if self.splits is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        splits = d.get("splits")
        return cls(
            image_noise_sigma=d.get("image_noise_sigma", 0.0),
            cloud_noise_sigma=d.get("cloud_noise_sigma", 0.0),
            splits=tuple(splits) if splits is not None else None,
        )


@dataclass(frozen=True)
class GeneratorParams:
    """Knobs of the procedural generator."""

    latent_dim: int = 8
    image_jitter: float = 0.02
    cloud_jitter: float = 0.01
    attr_noise: float = 0.02
    bump_width: float = 0.6
    split_fractions: tuple[float, float, float] = (0.5, 0.2, 0.3)

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "image_jitter": self.image_jitter,
            "cloud_jitter": self.cloud_jitter,
            "attr_noise": self.attr_noise,
            "bump_width": self.bump_width,
            "split_fractions": list(self.split_fractions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        d = dict(d)
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)


@dataclass(frozen=True)
class IdentityLatent:
    """Latent appearance vector of one identity, fixed by (seed, index)."""

    index: int
    z: np.ndarray


@dataclass
class Corpus:
    """A list of paired samples plus split assignments and manifest metadata."""

    samples: list[PairedSample]
    sample_ids: list[str]
    splits: list[str]
    num_classes: int
    manifest: dict

    def __len__(self) -> int:
        return len(self.samples)

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def split_counts(self) -> dict[str, int]:
        return {s: len(self.indices(s)) for s in SPLITS}

    def content_hash(self) -> str:
        """SHA-256 over manifest and all sample arrays (order-sensitive)."""
        h = hashlib.sha256()
        h.update(json.dumps(self.manifest, sort_keys=True).encode())
        for sample, sid, split in zip(self.samples, self.sample_ids, self.splits):
            h.update(sid.encode())
            h.update(split.encode())
            h.update(str(sample.label).encode())
            h.update(sample.image.pixels.tobytes())
            h.update(sample.cloud.points.tobytes())
            h.update(sample.attrs.probs.tobytes())
        return h.hexdigest()


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def identity_latent(seed: int, index: int, latent_dim: int) -> IdentityLatent:
    z = rng(seed, "identity", index).standard_normal(latent_dim)
    return IdentityLatent(index=index, z=z)


def _split_sizes(per_identity: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Per-identity split sizes; train is never empty."""
    n_train = max(1, round(fractions[0] * per_identity))
    n_val = min(round(fractions[1] * per_identity), per_identity - n_train)
    n_test = per_identity - n_train - n_val
    return n_train, n_val, n_test


class _IdentityPattern:
    """Deterministic appearance model for one identity."""

    def __init__(self, seed: int, index: int, dims: Dims, params: GeneratorParams):
        self.dims = dims
        self.params = params
        z = identity_latent(seed, index, params.latent_dim).z
        self.z = z
        d_z = params.latent_dim
        proj = rng(seed, "proj")
        # Blob parameters: position, width, intensity, per-channel color.
        w = proj.standard_normal((d_z, 5 + dims.channels, d_z)) / np.sqrt(d_z)
        raw = _sigmoid(w @ z * 2.0)  # (d_z, 5 + C)
        self.blob_cy = 0.15 + 0.7 * raw[:, 0]
        self.blob_cx = 0.15 + 0.7 * raw[:, 1]
        self.blob_width = 0.06 + 0.10 * raw[:, 2]
        self.blob_amp = 0.4 + 0.6 * raw[:, 3]
        self.blob_color = 0.2 + 0.8 * raw[:, 5 : 5 + dims.channels]  # (d_z, C)
        # Ellipsoid radii and bump deformation field.
        w_radii = proj.standard_normal((3, d_z)) / np.sqrt(d_z)
        self.radii = 0.6 + 0.9 * _sigmoid(w_radii @ z * 2.0)
        w_dirs = proj.standard_normal((d_z, 3, d_z)) / np.sqrt(d_z)
        dirs = w_dirs @ z
        self.bump_dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        w_heights = proj.standard_normal((d_z, d_z)) / np.sqrt(d_z)
        self.bump_heights = 0.25 * np.tanh(w_heights @ z * 2.0)
        # Attribute map.
        w_attr = proj.standard_normal((dims.attr_dim, d_z)) * 1.5 / np.sqrt(d_z)
        b_attr = proj.standard_normal(dims.attr_dim) * 0.3
        self.attr_base = _sigmoid(w_attr @ z + b_attr)

    def render_image(self, sample_rng: np.random.Generator) -> np.ndarray:
        dims, params = self.dims, self.params
        cy = self.blob_cy + sample_rng.normal(0.0, params.image_jitter, self.blob_cy.shape)
        cx = self.blob_cx + sample_rng.normal(0.0, params.image_jitter, self.blob_cx.shape)
        amp = self.blob_amp * (1.0 + sample_rng.normal(0.0, params.image_jitter, self.blob_amp.shape))
        ys = (np.arange(dims.height) + 0.5) / dims.height
        xs = (np.arange(dims.width) + 0.5) / dims.width
        dy = ys[:, None] - cy[None, :]  # (H, d_z)
        dx = xs[:, None] - cx[None, :]  # (W, d_z)
        # (H, W, d_z) blob masses, then mixed per channel.
        mass = np.exp(
            -(dy[:, None, :] ** 2 + dx[None, :, :] ** 2) / (2.0 * self.blob_width**2)
        )
        field = (mass * amp) @ self.blob_color  # (H, W, C)
        return np.clip(field, 0.0, 1.0)

    def render_cloud(self, sample_rng: np.random.Generator) -> np.ndarray:
        dims, params = self.dims, self.params
        u = sample_rng.standard_normal((dims.points, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        base = 1.0 / np.sqrt(np.sum((u / self.radii) ** 2, axis=1))
        sq_dist = np.sum((u[:, None, :] - self.bump_dirs[None, :, :]) ** 2, axis=2)
        bump = 1.0 + np.sum(
            self.bump_heights[None, :] * np.exp(-sq_dist / (2.0 * params.bump_width**2)),
            axis=1,
        )
        pts = u * (base * bump)[:, None]
        pts = pts + sample_rng.normal(0.0, params.cloud_jitter, pts.shape)
        return pts - pts.mean(axis=0, keepdims=True)

    def render_attrs(self, sample_rng: np.random.Generator) -> np.ndarray:
        noisy = self.attr_base + sample_rng.normal(0.0, self.params.attr_noise, self.attr_base.shape)
        return np.clip(noisy, 0.0, 1.0)


def quantize_pixels(pixels: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so PNG round-trips are exact."""
    return np.round(pixels * 255.0) / 255.0


def generate_corpus(
    seed: int,
    num_identities: int,
    per_identity: int,
    dims: Dims,
    corruption: CorruptionSpec | None = None,
    params: GeneratorParams | None = None,
) -> Corpus:
    """Build a deterministic desk-scale corpus of paired samples.

    Pure function of its arguments: the same inputs always produce a
    byte-identical corpus. Per-identity generation is independently seeded,
    so identities could be generated in parallel without changing results.
    """
    if num_identities < 2:
        raise ValueError("need at least 2 identities")
    if per_identity < 2:
        raise ValueError("need at least 2 samples per identity")
    corruption = corruption or CorruptionSpec()
    params = params or GeneratorParams()
    if dims.num_classes != num_identities:
        dims = Dims(**{**dims.to_dict(), "num_classes": num_identities})

    n_train, n_val, n_test = _split_sizes(per_identity, params.split_fractions)
    samples: list[PairedSample] = []
    sample_ids: list[str] = []
    splits: list[str] = []
    for identity in range(num_identities):
        pattern = _IdentityPattern(seed, identity, dims, params)
        order = rng(seed, "split", identity).permutation(per_identity)
        split_of = {}
        for pos, k in enumerate(order):
            split_of[int(k)] = (
                "train" if pos < n_train else "val" if pos < n_train + n_val else "test"
            )
        for k in range(per_identity):
            sid = f"{identity:03d}_{k:03d}"
            split = split_of[k]
            sample_rng = rng(seed, "sample", identity, k)
            pixels = pattern.render_image(sample_rng)
            points = pattern.render_cloud(sample_rng)
            attrs = pattern.render_attrs(sample_rng)
            if corruption.applies_to(split):
                noise_rng = rng(seed, "corrupt", identity, k)
                if corruption.image_noise_sigma > 0:
                    pixels = np.clip(
                        pixels + noise_rng.normal(0.0, corruption.image_noise_sigma, pixels.shape),
                        0.0,
                        1.0,
                    )
                if corruption.cloud_noise_sigma > 0:
                    points = points + noise_rng.normal(
                        0.0, corruption.cloud_noise_sigma, points.shape
                    )
            pixels = quantize_pixels(pixels)
            samples.append(
                PairedSample(
                    image=ImageSample(pixels),
                    cloud=PointCloudSample(points),
                    attrs=AttributeVector(attrs),
                    label=identity,
                )
            )
            sample_ids.append(sid)
            splits.append(split)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "seed": seed,
        "num_identities": num_identities,
        "per_identity": per_identity,
        "dims": dims.to_dict(),
        "corruption": corruption.to_dict(),
        "generator": params.to_dict(),
        "samples": [
            {"id": sid, "label": s.label} for sid, s in zip(sample_ids, samples)
        ],
    }
    return Corpus(
        samples=samples,
        sample_ids=sample_ids,
        splits=splits,
        num_classes=num_identities,
        manifest=manifest,
    )


def sample_points(
    source: PointCloudSample, n: int, sample_rng: np.random.Generator
) -> PointCloudSample:
    """Randomly sample n points: without replacement when the source has at
    least n points, with replacement otherwise."""
    if n <= 0:
        raise ValueError("cannot sample zero points")
    if source.num_points < 1:
        raise ValueError("source cloud is empty")
    replace = source.num_points < n
    idx = sample_rng.choice(source.num_points, size=n, replace=replace)
    return PointCloudSample(source.points[idx])


# ---------------------------------------------------------------------------
# Directory IO
# ---------------------------------------------------------------------------


def save_corpus(corpus: Corpus, root: str | Path, force: bool = False) -> Path:
    """Write the documented directory layout under ``root``."""
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise DataError(f"output directory {root} is not empty (use force to overwrite)")
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "clouds").mkdir(parents=True, exist_ok=True)

    with open(root / "manifest.json", "w") as fh:
        json.dump(corpus.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    attr_dim = len(corpus.samples[0].attrs)
    with open(root / "attrs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id"] + [f"a{i}" for i in range(attr_dim)])
        for sid, sample in zip(corpus.sample_ids, corpus.samples):
            writer.writerow([sid] + [f"{v:.17g}" for v in sample.attrs.probs])

    with open(root / "splits.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "split"])
        for sid, split in zip(corpus.sample_ids, corpus.splits):
            writer.writerow([sid, split])

    for sid, sample in zip(corpus.sample_ids, corpus.samples):
        eight_bit = np.round(sample.image.pixels * 255.0).astype(np.uint8)
        mode = "RGB" if sample.image.channels == 3 else "L"
        img = Image.fromarray(eight_bit.squeeze(-1) if mode == "L" else eight_bit, mode=mode)
        img.save(root / "images" / f"{sid}.png")
        with open(root / "clouds" / f"{sid}.xyz", "w") as fh:
            for row in sample.cloud.points:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    return root


def load_corpus(root: str | Path, center_clouds: bool = False) -> Corpus:
    """Load a corpus directory, validating every sample against the manifest.

    ``center_clouds`` subtracts each cloud's centroid on ingestion (useful for
    externally produced clouds so that origin-rotation augmentation is
    pose-preserving; generated corpora are already centered).
    """
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DataError(
            f"manifest format_version {manifest.get('format_version')} "
            f"not supported (expected {MANIFEST_VERSION})"
        )
    dims = Dims.from_dict(manifest["dims"])

    attrs_by_id: dict[str, np.ndarray] = {}
    with open(root / "attrs.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected_cols = 1 + dims.attr_dim
        if len(header) != expected_cols:
            raise DataError(
                f"attrs.csv header: expected {expected_cols} columns, got {len(header)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != expected_cols:
                raise DataError(
                    f"attrs.csv line {line_no}: expected {expected_cols} columns, "
                    f"got {len(row)}"
                )
            try:
                attrs_by_id[row[0]] = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"attrs.csv line {line_no}: {exc}") from exc

    split_by_id: dict[str, str] = {}
    with open(root / "splits.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2 or row[1] not in SPLITS:
                raise DataError(f"splits.csv line {line_no}: malformed row {row}")
            split_by_id[row[0]] = row[1]

    samples: list[PairedSample] = []
    sample_ids: list[str] = []
    splits: list[str] = []
    for entry in manifest["samples"]:
        sid, label = entry["id"], int(entry["label"])
        img_path = root / "images" / f"{sid}.png"
        cloud_path = root / "clouds" / f"{sid}.xyz"
        if not img_path.exists():
            raise DataError(f"sample {sid}: image file missing ({img_path.name})")
        if not cloud_path.exists():
            raise DataError(f"sample {sid}: cloud file missing ({cloud_path.name})")
        if sid not in attrs_by_id:
            raise DataError(f"sample {sid}: no attribute row in attrs.csv")
        if sid not in split_by_id:
            raise DataError(f"sample {sid}: no split row in splits.csv")

        raw = np.asarray(Image.open(img_path), dtype=np.float64) / 255.0
        if raw.ndim == 2:
            raw = raw[:, :, None]
        try:
            points = np.loadtxt(cloud_path, dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"sample {sid}: malformed cloud file: {exc}") from exc
        if center_clouds:
            points = points - points.mean(axis=0, keepdims=True)

        sample = PairedSample(
            image=ImageSample(raw),
            cloud=PointCloudSample(points),
            attrs=AttributeVector(attrs_by_id[sid]),
            label=label,
        )
        problems = validate_paired_sample(sample, dims)
        if problems:
            raise DataError(f"sample {sid}: " + "; ".join(problems))
        samples.append(sample)
        sample_ids.append(sid)
        splits.append(split_by_id[sid])

    return Corpus(
        samples=samples,
        sample_ids=sample_ids,
        splits=splits,
        num_classes=dims.num_classes,
        manifest=manifest,
    )
