"""Unimodal-test evaluation: accuracy, macro F1, one-vs-rest ROC/AUC,
confusion matrix, and report emission.

``evaluate`` reads exactly one modality's data; the other modality's arrays
are never touched, which the test suite enforces by poisoning them with
sentinels and asserting identical reports.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .domain import ModalityId
from .errors import DataError
from .synthgen import Corpus


@dataclass
class EvalReport:
    modality: str
    accuracy: float
    macro_f1: float
    macro_ovr_auc: float
    per_class: list[dict]
    confusion: np.ndarray
    roc_curves: dict[int, tuple[np.ndarray, np.ndarray]]
    num_samples: int
    split: str

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "split": self.split,
            "num_samples": self.num_samples,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "macro_ovr_auc": self.macro_ovr_auc,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
        }

    def save(self, out_dir: str | Path) -> Path:
        """Write report.json plus curves/<class>.csv with (fpr, tpr) columns."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        curves = out_dir / "curves"
        curves.mkdir(exist_ok=True)
        for cls_idx, (fpr, tpr) in self.roc_curves.items():
            with open(curves / f"{cls_idx}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["fpr", "tpr"])
                for f, t in zip(fpr, tpr):
                    writer.writerow([f"{f:.17g}", f"{t:.17g}"])
        return out_dir / "report.json"


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> np.ndarray:
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        mat[t, p] += 1
    return mat


def per_class_prf(confusion: np.ndarray) -> list[dict]:
    """Precision, recall, F1, support per class (zero where undefined)."""
    out = []
    for k in range(confusion.shape[0]):
        tp = float(confusion[k, k])
        fp = float(confusion[:, k].sum() - tp)
        fn = float(confusion[k, :].sum() - tp)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        out.append(
            {
                "class": k,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "support": int(confusion[k, :].sum()),
            }
        )
    return out


def macro_f1(confusion: np.ndarray) -> float:
    return float(np.mean([row["f1"] for row in per_class_prf(confusion)]))


def roc_curve(scores: np.ndarray, positives: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """ROC points for one class, thresholds grouped over tied scores.

    Returns (fpr, tpr) arrays starting at (0, 0) and ending at (1, 1);
    trapezoidal integration of these equals the Mann-Whitney statistic with
    ties counted half.
    """
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positives[order].astype(np.float64)
    num_pos = sorted_pos.sum()
    num_neg = len(positives) - num_pos
    tps, fps = [0.0], [0.0]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j < len(sorted_scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        tps.append(tps[-1] + sorted_pos[i:j].sum())
        fps.append(fps[-1] + (j - i) - sorted_pos[i:j].sum())
        i = j
    tpr = np.array(tps) / num_pos if num_pos else np.zeros(len(tps))
    fpr = np.array(fps) / num_neg if num_neg else np.zeros(len(fps))
    return fpr, tpr


def roc_auc_macro(scores: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest AUC per class, trapezoid-integrated, averaged over classes
    with at least one positive (others are skipped with a warning)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise ValueError("scores must be an N x K matrix")
    row_sums = scores.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError("score rows must sum to 1 (softmax outputs)")
    aucs = []
    for k in range(scores.shape[1]):
        positives = labels == k
        if not positives.any():
            warnings.warn(f"class {k} has no positives; skipped in macro AUC")
            continue
        if positives.all():
            warnings.warn(f"class {k} has no negatives; skipped in macro AUC")
            continue
        fpr, tpr = roc_curve(scores[:, k], positives)
        aucs.append(float(np.trapezoid(tpr, fpr)))
    if not aucs:
        raise DataError("no class had both positives and negatives")
    return float(np.mean(aucs))


def evaluate(
    model,
    corpus: Corpus,
    split: str,
    modality: ModalityId,
    batch_size: int = 64,
) -> EvalReport:
    """Classify every sample of ``split`` using only the stated modality's
    encoder and head; never mutates the model."""
    from .trainer import _collate, _modality_input  # local to avoid an import cycle

    encoder = model.encoder_for(modality)
    head = model.head_for(modality)
    if encoder is None or head is None:
        raise DataError(
            f"model has no trained encoder/head for modality {modality.value!r}"
        )
    idx = corpus.indices(split)
    if not idx:
        raise DataError(f"split {split!r} is empty")

    was_training = model.training
    model.eval()
    all_scores, all_labels = [], []
    try:
        with torch.no_grad():
            for start in range(0, len(idx), batch_size):
                chunk = idx[start : start + batch_size]
                batch = _collate(corpus, chunk, model.cfg, None, (modality,))
                logits = head(encoder(_modality_input(batch, modality)))
                all_scores.append(torch.softmax(logits, dim=1).numpy())
                all_labels.append(batch["labels"].numpy())
    finally:
        model.train(was_training)

    scores = np.concatenate(all_scores).astype(np.float64)
    scores = scores / scores.sum(axis=1, keepdims=True)
    labels = np.concatenate(all_labels)
    preds = scores.argmax(axis=1)
    k = corpus.num_classes
    confusion = confusion_matrix(labels, preds, k)
    per_class = per_class_prf(confusion)
    curves = {}
    for cls_idx in range(k):
        positives = labels == cls_idx
        if positives.any() and not positives.all():
            curves[cls_idx] = roc_curve(scores[:, cls_idx], positives)
    return EvalReport(
        modality=modality.value,
        accuracy=float(np.trace(confusion) / len(labels)),
        macro_f1=macro_f1(confusion),
        macro_ovr_auc=roc_auc_macro(scores, labels),
        per_class=per_class,
        confusion=confusion,
        roc_curves=curves,
        num_samples=len(labels),
        split=split,
    )
