"""Decoder checkpoint file format.

Layout (all integers little endian):

    8 bytes   magic b"PCWMCKPT"
    u32       format version
    u32       length L of the JSON header
    L bytes   JSON {"config": {...}, "best_val_accuracy": float, "epoch": int,
                    "parameter_count": int}
    rest      float32 parameters, concatenated in named_parameters() order

Every read failure is a typed error; nothing is guessed from a damaged file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import torch

from point_watermark import watermark_config as cfg
from point_watermark.errors import (
    CheckpointConfigMismatch,
    CheckpointVersionMismatch,
    CloudIOError,
    ConfigError,
    MalformedCheckpoint,
    ParameterCountMismatch,
)
from point_watermark.neural_decoder import (
    DecoderConfig,
    WatermarkDecoder,
    build_decoder,
    parameter_count,
    parameter_layout,
)

_PREFIX = struct.Struct("<II")


@dataclass
class Checkpoint:
    """Decoder config plus its flattened float32 parameters."""

    config: DecoderConfig
    parameters: np.ndarray
    best_val_accuracy: float = 0.0
    epoch: int = 0

    def __post_init__(self) -> None:
        self.parameters = np.ascontiguousarray(self.parameters, dtype="<f4").ravel()
        expected = parameter_count(self.config)
        if self.parameters.size != expected:
            raise ParameterCountMismatch(
                f"checkpoint holds {self.parameters.size} parameters, config needs {expected}"
            )

    @classmethod
    def from_model(cls, model: WatermarkDecoder, best_val_accuracy: float = 0.0,
                   epoch: int = 0) -> "Checkpoint":
        flat = [p.detach().cpu().to(torch.float32).numpy().ravel() for _, p in model.named_parameters()]
        return cls(
            config=model.config,
            parameters=np.concatenate(flat),
            best_val_accuracy=float(best_val_accuracy),
            epoch=int(epoch),
        )

    def to_model(self) -> WatermarkDecoder:
        model = build_decoder(self.config, seed=0)
        offset = 0
        state = {}
        for name, shape in parameter_layout(self.config):
            size = int(np.prod(shape))
            chunk = self.parameters[offset:offset + size].astype(np.float32).reshape(shape)
            state[name] = torch.from_numpy(chunk.copy())
            offset += size
        model.load_state_dict(state)
        model.eval()
        return model

    def ensure_compatible(self, n_bits: int) -> None:
        if self.config.n_bits != n_bits:
            raise CheckpointConfigMismatch(
                f"checkpoint decodes {self.config.n_bits} bits, run uses {n_bits}"
            )


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "best_val_accuracy": ckpt.best_val_accuracy,
        "epoch": ckpt.epoch,
        "parameter_count": int(ckpt.parameters.size),
    }, sort_keys=True).encode("utf-8")
    return (
        cfg.CHECKPOINT_MAGIC
        + _PREFIX.pack(cfg.CHECKPOINT_VERSION, len(header))
        + header
        + ckpt.parameters.astype("<f4").tobytes()
    )


def decode_checkpoint(data: bytes) -> Checkpoint:
    magic_len = len(cfg.CHECKPOINT_MAGIC)
    if len(data) < magic_len + _PREFIX.size:
        raise MalformedCheckpoint(f"checkpoint is {len(data)} bytes, shorter than its header")
    if data[:magic_len] != cfg.CHECKPOINT_MAGIC:
        raise MalformedCheckpoint(f"bad magic {data[:magic_len]!r}")
    version, header_len = _PREFIX.unpack_from(data, magic_len)
    if version != cfg.CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(
            f"checkpoint format version {version}, this build reads {cfg.CHECKPOINT_VERSION}"
        )

    start = magic_len + _PREFIX.size
    if len(data) < start + header_len:
        raise MalformedCheckpoint("checkpoint header is truncated")
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
        config = DecoderConfig.from_dict(header["config"])
        declared = int(header["parameter_count"])
        best = float(header.get("best_val_accuracy", 0.0))
        epoch = int(header.get("epoch", 0))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigError) as exc:
        raise MalformedCheckpoint(f"unreadable checkpoint header: {exc}") from None

    payload = data[start + header_len:]
    if len(payload) != 4 * declared:
        raise MalformedCheckpoint(
            f"payload is {len(payload)} bytes, header declares {declared} float32 values"
        )
    if declared != parameter_count(config):
        raise ParameterCountMismatch(
            f"header declares {declared} parameters, config needs {parameter_count(config)}"
        )
    params = np.frombuffer(payload, dtype="<f4").copy()
    return Checkpoint(config=config, parameters=params, best_val_accuracy=best, epoch=epoch)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(ckpt))
    except OSError as exc:
        raise CloudIOError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CloudIOError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data)
