"""Co-learning toolkit: train face classifiers on paired 2D-image +
3D-point-cloud data, deploy on a single modality."""

__version__ = "0.1.0"

from .domain import (
    AttributeVector,
    Dims,
    Embedding,
    ImageSample,
    LossBundle,
    ModalityId,
    PairedSample,
    PointCloudSample,
    validate_paired_sample,
)

__all__ = [
    "AttributeVector",
    "Dims",
    "Embedding",
    "ImageSample",
    "LossBundle",
    "ModalityId",
    "PairedSample",
    "PointCloudSample",
    "validate_paired_sample",
    "__version__",
]
