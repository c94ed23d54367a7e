"""Versioned binary checkpoint container.

Layout: magic ``GDCK`` | u32 format version | u64 header length | header
JSON (canonical utf-8) | concatenated little-endian float64 payloads.
The header carries the schedule kind, the model-spec fingerprint, the
training metadata, and a name/shape/offset table, so a checkpoint loads
without its producing config.  Canonical JSON plus a fixed array order
makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"GDCK"
FORMAT_VERSION = 1


class FingerprintMismatch(RuntimeError):
    """Stored model-spec fingerprint disagrees with the expected one."""


class CheckpointError(RuntimeError):
    """Malformed or unreadable checkpoint file."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(spec: dict) -> str:
    """sha256 of the canonical model-spec JSON."""
    return hashlib.sha256(canonical_json(spec).encode()).hexdigest()


@dataclass
class Checkpoint:
    model_spec: dict
    schedule_kind: str
    arrays: dict
    metadata: dict
    fingerprint: str
    format_version: int = FORMAT_VERSION


def save_checkpoint(path, model_spec: dict, schedule_kind: str,
                    arrays: dict, metadata: dict | None = None) -> None:
    table = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blob = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = canonical_json({
        "format_version": FORMAT_VERSION,
        "schedule": schedule_kind,
        "fingerprint": fingerprint(model_spec),
        "model_spec": model_spec,
        "metadata": metadata or {},
        "arrays": table,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_fingerprint: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        try:
            header = json.loads(fh.read(header_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        payload = fh.read()
    stored = header["fingerprint"]
    recomputed = fingerprint(header["model_spec"])
    if stored != recomputed:
        raise FingerprintMismatch(f"{path}: stored fingerprint does not match its model spec")
    if expect_fingerprint is not None and stored != expect_fingerprint:
        raise FingerprintMismatch(f"{path}: fingerprint {stored} != expected {expect_fingerprint}")
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return Checkpoint(header["model_spec"], header["schedule"], arrays,
                      header["metadata"], stored, version)


def save_model(path, model, metadata: dict | None = None) -> None:
    """Persist an MLPDenoiser (its spec + parameter arrays)."""
    save_checkpoint(path, model.spec(), model.schedule.kind,
                    model.params.arrays(), metadata)


def load_model(path, schedule=None, expect_fingerprint: str | None = None):
    """Rebuild an MLPDenoiser from a checkpoint."""
    from .denoiser import MLPDenoiser
    from .schedule import make_schedule

    ckpt = load_checkpoint(path, expect_fingerprint)
    schedule = schedule if schedule is not None else make_schedule(ckpt.schedule_kind)
    model = MLPDenoiser.from_spec(ckpt.model_spec, schedule)
    model.params.load(ckpt.arrays)
    return model, ckpt
