"""Self-describing binary checkpoint format.

Layout: 8 magic bytes `LEDACKPT`, a 32-bit little-endian header length, a
UTF-8 JSON header {version, config, tensors, bases, epoch, final_loss}, then
a payload of row-major little-endian float64 blocks at the offsets stated in
the header (offsets are relative to the payload start). Loading is strict:
unknown or missing tensors are an error that lists the offending names.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .dpu import DomainBasis
from .errors import CheckpointFormatError, DataError

if TYPE_CHECKING:
    from .trainer import TrainConfig

MAGIC = b"LEDACKPT"
FORMAT_VERSION = 1

PARAM_TENSOR_NAMES = (
    "dpu.W1",
    "dpu.b1",
    "dpu.W2",
    "dpu.b2",
    "lda.W_base",
    "lda.W_mu",
    "lda.W_sigma",
    "lda.W_dec",
)


def basis_tensor_name(domain_id: str) -> str:
    return f"basis/{domain_id}"


@dataclass
class Checkpoint:
    """Everything needed to embed new domains: config snapshot, all trained
    parameter matrices, and the frozen per-domain bases."""

    config: "TrainConfig"
    params: dict[str, np.ndarray]
    bases: list[DomainBasis]
    epoch: int
    final_loss: dict[str, float]
    loss_trace: list[dict[str, float]] = field(default_factory=list, repr=False)

    def basis_for(self, domain_id: str) -> DomainBasis | None:
        for basis in self.bases:
            if basis.domain_id == domain_id:
                return basis
        return None


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Atomic write (temp file + rename); matrices round-trip bit-exactly."""
    path = Path(path)
    tensors: dict[str, np.ndarray] = {}
    for name in PARAM_TENSOR_NAMES:
        if name not in ckpt.params:
            raise CheckpointFormatError(f"checkpoint is missing parameter tensor '{name}'")
        tensors[name] = ckpt.params[name]
    for basis in ckpt.bases:
        tensors[basis_tensor_name(basis.domain_id)] = basis.V

    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append(
            {"name": name, "rows": arr.shape[0], "cols": arr.shape[1], "offset": len(payload)}
        )
        payload.extend(arr.tobytes(order="C"))

    header = {
        "version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "tensors": entries,
        "bases": [
            {"domain_id": b.domain_id, "padded": b.padded, "tensor": basis_tensor_name(b.domain_id)}
            for b in ckpt.bases
        ],
        "epoch": ckpt.epoch,
        "final_loss": ckpt.final_loss,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    from .trainer import TrainConfig  # deferred: trainer imports this module

    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes, not a checkpoint file")
    (header_len,) = struct.unpack("<I", blob[len(MAGIC): len(MAGIC) + 4])
    header_start = len(MAGIC) + 4
    if header_start + header_len > len(blob):
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start: header_start + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: version mismatch: file has {header.get('version')!r}, "
            f"reader supports {FORMAT_VERSION}"
        )

    config = TrainConfig.from_dict(header["config"])
    basis_meta = header.get("bases", [])
    expected = set(PARAM_TENSOR_NAMES) | {meta["tensor"] for meta in basis_meta}
    listed = {entry["name"] for entry in header.get("tensors", [])}
    unknown = sorted(listed - expected)
    if unknown:
        raise CheckpointFormatError(f"{path}: unknown tensors in header: {unknown}")
    missing = sorted(expected - listed)
    if missing:
        raise CheckpointFormatError(f"{path}: missing tensors: {missing}")

    payload = blob[header_start + header_len:]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        rows, cols, offset = entry["rows"], entry["cols"], entry["offset"]
        nbytes = rows * cols * 8
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointFormatError(
                f"{path}: truncated payload for tensor '{entry['name']}'"
            )
        arr = np.frombuffer(payload, dtype="<f8", count=rows * cols, offset=offset)
        arrays[entry["name"]] = arr.reshape(rows, cols).astype(np.float64)

    bases = [
        DomainBasis(
            domain_id=meta["domain_id"],
            V=arrays[meta["tensor"]],
            padded=bool(meta["padded"]),
        )
        for meta in basis_meta
    ]
    params = {name: arrays[name] for name in PARAM_TENSOR_NAMES}
    return Checkpoint(
        config=config,
        params=params,
        bases=bases,
        epoch=int(header["epoch"]),
        final_loss=dict(header["final_loss"]),
    )
