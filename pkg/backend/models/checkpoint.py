"""
Binary checkpoint format (little-endian throughout):

    magic     6 bytes   b"SACCN1"
    version   u16
    config    u32 length + utf-8 ``key=value`` text
    count     u32
    tensors   count × (u16 name length, utf-8 name, u8 rank,
                       rank × u32 extent, f32 data row-major)

Tensors are written in sorted name order. Besides the network parameters a
checkpoint may carry the optimizer state as ``adam.m/<name>`` and
``adam.v/<name>`` plus ``adam_t`` in the config block.

Example
-------
>>> from backend.models.checkpoint import load_checkpoint, save_checkpoint
>>> save_checkpoint("/tmp/model.ckpt", model)            # doctest: +SKIP
>>> restored = load_checkpoint("/tmp/model.ckpt")        # doctest: +SKIP
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from backend.errors import CheckpointError, CheckpointMagicError, ConfigError
from backend.models.adam_optimizer import AdamState
from backend.models.net_config import NetConfig
from backend.models.saccn import SaccnModel
from backend.models.tensor import get_dtype

logger = logging.getLogger(__name__)

MAGIC: bytes = b"SACCN1"
VERSION: int = 1
ADAM_M_PREFIX: str = "adam.m/"
ADAM_V_PREFIX: str = "adam.v/"
EXTRA_KEYS: tuple[str, ...] = ("adam_t",)
STORAGE_DTYPE = np.dtype("<f4")


@dataclass
class CheckpointHeader:
    version: int
    config_text: str
    tensors: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    @property
    def extras(self) -> dict[str, str]:
        return _split_config(self.config_text)[1]

    @property
    def config(self) -> NetConfig:
        try:
            return NetConfig.from_text(_split_config(self.config_text)[0])
        except ConfigError as exc:
            raise CheckpointError(f"checkpoint config block is invalid: {exc}") from exc


@dataclass
class CheckpointData:
    header: CheckpointHeader
    arrays: dict[str, np.ndarray]


def _split_config(text: str) -> tuple[str, dict[str, str]]:
    kept: list[str] = []
    extras: dict[str, str] = {}
    for line in text.splitlines():
        key, _, value = line.partition("=")
        if key.strip() in EXTRA_KEYS:
            extras[key.strip()] = value.strip()
        else:
            kept.append(line)
    return "\n".join(kept) + "\n", extras


def _read_exact(fh: BinaryIO, size: int, what: str, path: Path) -> bytes:
    chunk = fh.read(size)
    if len(chunk) != size:
        raise CheckpointError(f"{path}: truncated while reading {what}")
    return chunk


def _collect(model: SaccnModel, state: AdamState | None) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {name: t.data for name, t in model.params.items()}
    if state is not None:
        for name in model.params.names():
            if name in state.m:
                arrays[ADAM_M_PREFIX + name] = state.m[name]
                arrays[ADAM_V_PREFIX + name] = state.v[name]
    return arrays


def save_checkpoint(path: str | Path, model: SaccnModel, state: AdamState | None = None) -> Path:
    """Write parameters (and optimizer state when given) to ``path``."""
    path = Path(path)
    state = state if state is not None else model.params.optimizer_state
    config_text: str = model.config.to_text()
    if state is not None:
        config_text += f"adam_t={state.t}\n"
    arrays = _collect(model, state)
    encoded_config = config_text.encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<H", VERSION))
            fh.write(struct.pack("<I", len(encoded_config)))
            fh.write(encoded_config)
            fh.write(struct.pack("<I", len(arrays)))
            for name in sorted(arrays):
                arr = np.asarray(arrays[name])
                encoded_name = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded_name)))
                fh.write(encoded_name)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype=STORAGE_DTYPE).tobytes())
    except OSError as exc:
        raise CheckpointError(f"{path}: checkpoint write failed: {exc}") from exc
    logger.info("Saved checkpoint %s (%d tensors)", path, len(arrays))
    return path


def _parse(path: Path, with_data: bool) -> CheckpointData:
    try:
        fh = path.open("rb")
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot open checkpoint: {exc}") from exc
    with fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointMagicError(f"{path}: not a SACCN checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version", path))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length", path))
        try:
            config_text = _read_exact(fh, config_len, "config block", path).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: config block is not utf-8") from exc
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count", path))
        header = CheckpointHeader(version=version, config_text=config_text)
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length", path))
            name = _read_exact(fh, name_len, "tensor name", path).decode("utf-8", errors="replace")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of {name}", path))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"shape of {name}", path))
            nbytes = int(np.prod(shape, dtype=np.int64)) * STORAGE_DTYPE.itemsize
            if any(name == seen for seen, _ in header.tensors):
                raise CheckpointError(f"{path}: tensor {name} appears twice")
            header.tensors.append((name, tuple(int(s) for s in shape)))
            if with_data:
                raw = _read_exact(fh, nbytes, f"data of {name}", path)
                arrays[name] = np.frombuffer(raw, dtype=STORAGE_DTYPE).reshape(shape)
            else:
                fh.seek(nbytes, 1)
        if with_data and fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last tensor")
    return CheckpointData(header=header, arrays=arrays)


def read_checkpoint_header(path: str | Path) -> CheckpointHeader:
    """Version, config text and the ``(name, shape)`` table, without tensor data."""
    return _parse(Path(path), with_data=False).header


def read_checkpoint(path: str | Path) -> CheckpointData:
    return _parse(Path(path), with_data=True)


def load_checkpoint(path: str | Path, config: NetConfig | None = None) -> SaccnModel:
    """Rebuild a model from ``path``; optimizer state lands on ``model.params``.

    With ``config`` the architecture comes from the caller and every stored
    tensor must match it.
    """
    path = Path(path)
    data = read_checkpoint(path)
    stored_config = data.header.config
    model = SaccnModel(config or stored_config)
    expected = set(model.params.names())
    for name, tensor in model.params.items():
        if name not in data.arrays:
            raise CheckpointError(f"{path}: tensor {name} is missing")
        arr = data.arrays[name]
        if arr.shape != tensor.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {arr.shape}, model expects {tensor.shape}"
            )
        tensor.data = np.array(arr, dtype=get_dtype())
        tensor.grad = None

    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, arr in data.arrays.items():
        if name.startswith((ADAM_M_PREFIX, ADAM_V_PREFIX)):
            prefix = ADAM_M_PREFIX if name.startswith(ADAM_M_PREFIX) else ADAM_V_PREFIX
            target = name[len(prefix):]
            if target not in expected:
                raise CheckpointError(f"{path}: optimizer tensor {name} has no matching parameter")
            if arr.shape != model.params[target].shape:
                raise CheckpointError(f"{path}: tensor {name} has shape {arr.shape}, model expects "
                                      f"{model.params[target].shape}")
            (m if prefix == ADAM_M_PREFIX else v)[target] = np.array(arr, dtype=get_dtype())
        elif name not in expected:
            raise CheckpointError(f"{path}: tensor {name} is not part of the model")

    extras = data.header.extras
    if m or "adam_t" in extras:
        if set(m) != set(v):
            raise CheckpointError(f"{path}: optimizer moments are incomplete")
        try:
            step = int(extras.get("adam_t", "0"))
        except ValueError as exc:
            raise CheckpointError(f"{path}: adam_t is not an integer") from exc
        state = AdamState.from_config(model.config)
        state.t, state.m, state.v = step, m, v
        model.params.optimizer_state = state
    logger.info("Loaded checkpoint %s (%d parameters)", path, len(expected))
    return model
