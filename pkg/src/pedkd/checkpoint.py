"""Named-tensor checkpoints: a text manifest plus a little-endian float32 blob.

Layout of a checkpoint directory::

    manifest.txt   pedkd-checkpoint <version>
                   config_hash <hex or ->
                   tensor <name> <d0xd1x...> <byte offset>   (one per tensor)
    weights.bin    concatenated <f4 arrays in manifest order
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

import numpy as np

from .autograd import ContractError
from .nn import Module

FORMAT_VERSION = 1
MAGIC = "pedkd-checkpoint"
MANIFEST = "manifest.txt"
BLOB = "weights.bin"


class CheckpointError(ContractError):
    pass


class IntegrityError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(model: Module | Mapping[str, np.ndarray], path: str | Path,
                    config_hash: str = "") -> Path:
    """Write ``model`` (a Module or a name -> array mapping) under directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(model, Module):
        tensors = {n: p.data for n, p in model.named_parameters(include_frozen=True)}
    else:
        tensors = dict(model)
    lines = [f"{MAGIC} {FORMAT_VERSION}", f"config_hash {config_hash or '-'}"]
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        a = np.asarray(arr, dtype="<f4")
        shape = "x".join(map(str, a.shape)) if a.ndim else "scalar"
        lines.append(f"tensor {name} {shape} {offset}")
        chunks.append(a.tobytes(order="C"))
        offset += a.nbytes
    _atomic_write(path / BLOB, b"".join(chunks))
    _atomic_write(path / MANIFEST, ("\n".join(lines) + "\n").encode("utf-8"))
    return path


def read_manifest(path: str | Path) -> tuple[int, str, list[tuple[str, tuple[int, ...], int]]]:
    text = (Path(path) / MANIFEST).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(MAGIC + " "):
        raise IntegrityError("not a checkpoint manifest")
    try:
        version = int(text[0].split()[1])
    except ValueError as exc:
        raise IntegrityError("unreadable format version") from exc
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(text) < 2 or not text[1].startswith("config_hash "):
        raise IntegrityError("manifest lacks a config_hash line")
    chash = text[1].split(" ", 1)[1].strip()
    entries = []
    for line in text[2:]:
        if not line.strip():
            continue
        kind, name, shape_s, off = line.split()
        if kind != "tensor":
            raise IntegrityError(f"unexpected manifest line {line!r}")
        shape = () if shape_s == "scalar" else tuple(int(v) for v in shape_s.split("x"))
        entries.append((name, shape, int(off)))
    return version, ("" if chash == "-" else chash), entries


def load_checkpoint(path: str | Path, model: Module | None = None, config_hash: str | None = None,
                    allow_hash_mismatch: bool = False):
    """Read every tensor, validate, and only then copy into ``model``.

    Returns the model when given one, otherwise the name -> float64 array dict.
    """
    path = Path(path)
    _, saved_hash, entries = read_manifest(path)
    if config_hash is not None and saved_hash != config_hash and not allow_hash_mismatch:
        raise VersionError(f"checkpoint was written for config {saved_hash or '-'}, not {config_hash}")
    blob = (path / BLOB).read_bytes()
    expected = 0
    for _, shape, off in entries:
        if off != expected:
            raise IntegrityError(f"tensor offsets are not contiguous at byte {off}")
        expected += 4 * int(np.prod(shape, dtype=np.int64))
    if expected != len(blob):
        raise IntegrityError(f"blob holds {len(blob)} bytes, manifest describes {expected}")
    state = {}
    for name, shape, off in entries:
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float64)
    if model is None:
        return state
    named = dict(model.named_parameters(include_frozen=True))
    if set(named) != set(state):
        raise IntegrityError(f"checkpoint tensors differ from the model: {sorted(set(named) ^ set(state))[:5]}")
    for n, p in named.items():
        if state[n].shape != p.shape:
            raise IntegrityError(f"{n}: checkpoint shape {state[n].shape} != model {p.shape}")
    for n, p in named.items():
        p.data = state[n].copy()
    return model
