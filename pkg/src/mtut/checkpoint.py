"""Single-file checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a canonical
JSON header (sorted keys, no whitespace), then raw array bytes concatenated
in the order listed by the header's array table. Everything is
content-addressed and timestamp-free, so save -> load -> save is byte-stable.

Arrays anywhere in the stored structures are pulled out into the binary
section and replaced by ``{"__array__": name}`` markers; dicts with integer
keys (optimizer state) are wrapped in ``{"__intdict__": ...}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MTUTCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run."""

    config: dict
    epoch: int
    model_state: dict
    optimizer_state: dict
    rng_state: dict
    scheduler_state: dict
    trainer_state: dict
    history: list
    best: dict
    best_model_state: dict | None = None
    format_version: int = FORMAT_VERSION


def _encode(obj, arrays: dict, path: str):
    if isinstance(obj, np.ndarray):
        arrays[path] = obj
        return {"__array__": path}
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        if obj and all(isinstance(k, int) for k in obj):
            return {
                "__intdict__": {
                    str(k): _encode(v, arrays, f"{path}/{k}") for k, v in obj.items()
                }
            }
        return {k: _encode(v, arrays, f"{path}/{k}") for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v, arrays, f"{path}/{i}") for i, v in enumerate(obj)]
    return obj


def _decode(obj, arrays: dict):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return arrays[obj["__array__"]]
        if set(obj) == {"__intdict__"}:
            return {int(k): _decode(v, arrays) for k, v in obj["__intdict__"].items()}
        return {k: _decode(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v, arrays) for v in obj]
    return obj


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    """Write the container; returns the path written."""
    arrays: dict[str, np.ndarray] = {}
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "model": _encode(ckpt.model_state, arrays, "model"),
        "optimizer": _encode(ckpt.optimizer_state, arrays, "optimizer"),
        "rng": _encode(ckpt.rng_state, arrays, "rng"),
        "scheduler": ckpt.scheduler_state,
        "trainer_state": ckpt.trainer_state,
        "history": ckpt.history,
        "best": ckpt.best,
        "best_model": (
            _encode(ckpt.best_model_state, arrays, "best_model")
            if ckpt.best_model_state is not None
            else None
        ),
    }
    table = []
    offset = 0
    ordered = sorted(arrays)
    for name in ordered:
        arr = np.ascontiguousarray(arrays[name])
        arrays[name] = arr
        table.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": arr.nbytes,
            }
        )
        offset += arr.nbytes
    header["arrays"] = table
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in ordered:
            fh.write(arrays[name].tobytes())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
            header_len = int.from_bytes(fh.read(8), "little")
            header_bytes = fh.read(header_len)
            if len(header_bytes) != header_len:
                raise CheckpointError(f"{path} is truncated (incomplete header)")
            header = json.loads(header_bytes)
            version = header.get("format_version")
            if version != FORMAT_VERSION:
                raise CheckpointError(
                    f"checkpoint format version {version}, this build reads "
                    f"version {FORMAT_VERSION}"
                )
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError(f"{path} is truncated (array {entry['name']})")
        buf = payload[start : start + nbytes]
        arrays[entry["name"]] = (
            np.frombuffer(buf, dtype=np.dtype(entry["dtype"]))
            .reshape(entry["shape"])
            .copy()
        )

    return Checkpoint(
        config=header["config"],
        epoch=header["epoch"],
        model_state=_decode(header["model"], arrays),
        optimizer_state=_decode(header["optimizer"], arrays),
        rng_state=_decode(header["rng"], arrays),
        scheduler_state=header["scheduler"],
        trainer_state=header["trainer_state"],
        history=header["history"],
        best=header["best"],
        best_model_state=(
            _decode(header["best_model"], arrays)
            if header["best_model"] is not None
            else None
        ),
        format_version=version,
    )
