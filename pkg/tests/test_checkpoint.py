"""Tests for point_watermark.checkpoint.

Covers:
    - save/load preserves every parameter and the decoder's logits
    - on-disk layout: magic, version, sorted JSON header, float32 payload
    - each damaged-file case maps to its typed error
    - Checkpoint construction and ensure_compatible()
"""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest
import torch

from point_watermark.checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from point_watermark.errors import (
    CheckpointConfigMismatch,
    CheckpointVersionMismatch,
    CloudIOError,
    MalformedCheckpoint,
    ParameterCountMismatch,
)
from point_watermark.neural_decoder import build_decoder, decode_logits, parameter_count


@pytest.fixture
def ckpt(tiny_config) -> Checkpoint:
    return Checkpoint.from_model(build_decoder(tiny_config, seed=3), best_val_accuracy=0.75, epoch=12)


def split_file(data: bytes):
    version, header_len = struct.unpack_from("<II", data, 8)
    header = json.loads(data[16:16 + header_len])
    return version, header, data[16 + header_len:]


def join_file(header: dict, payload: bytes, version: int = 1) -> bytes:
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"PCWMCKPT" + struct.pack("<II", version, len(raw)) + raw + payload


# ═══════════════════════════════════════════════════════════════════════════════
# Round trip
# ═══════════════════════════════════════════════════════════════════════════════


class TestSaveLoad:
    """Checkpoint files survive a write and a read."""

    def test_parameters_and_metadata_survive(self, ckpt, tmp_path):
        loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "nested" / "decoder.ckpt"))
        np.testing.assert_array_equal(loaded.parameters, ckpt.parameters)
        assert loaded.config == ckpt.config
        assert loaded.best_val_accuracy == 0.75
        assert loaded.epoch == 12

    def test_restored_model_decodes_identically(self, ckpt, tiny_config, make_cloud):
        original = build_decoder(tiny_config, seed=3)
        restored = decode_checkpoint(encode_checkpoint(ckpt)).to_model()
        clouds = [make_cloud(40, seed=1)]
        np.testing.assert_array_equal(decode_logits(restored, clouds), decode_logits(original, clouds))
        assert not restored.training

    def test_float64_model_is_stored_as_float32(self, tiny_config):
        model = build_decoder(tiny_config, seed=0).double()
        ckpt = Checkpoint.from_model(model)
        assert ckpt.parameters.dtype == np.dtype("<f4")
        expected = torch.cat([p.detach().float().reshape(-1) for p in model.parameters()]).numpy()
        np.testing.assert_array_equal(ckpt.parameters, expected)

    def test_encoding_is_deterministic(self, ckpt):
        assert encode_checkpoint(ckpt) == encode_checkpoint(ckpt)


class TestLayout:
    """Parameter order and shapes in the payload."""

    def test_header_fields(self, ckpt, tiny_config):
        data = encode_checkpoint(ckpt)
        assert data[:8] == b"PCWMCKPT"
        version, header, payload = split_file(data)
        assert version == 1
        assert sorted(header) == ["best_val_accuracy", "config", "epoch", "parameter_count"]
        assert header["parameter_count"] == parameter_count(tiny_config) == 126
        assert len(payload) == 4 * 126
        np.testing.assert_array_equal(np.frombuffer(payload, dtype="<f4"), ckpt.parameters)


# ═══════════════════════════════════════════════════════════════════════════════
# Damaged files
# ═══════════════════════════════════════════════════════════════════════════════


class TestDecodeErrors:
    """Corrupt or mismatched checkpoints raise typed errors."""

    def test_too_short(self):
        with pytest.raises(MalformedCheckpoint):
            decode_checkpoint(b"PCWMCKPT\x01")

    def test_bad_magic(self, ckpt):
        data = encode_checkpoint(ckpt)
        with pytest.raises(MalformedCheckpoint):
            decode_checkpoint(b"XXXXXXXX" + data[8:])

    def test_unknown_version(self, ckpt):
        _, header, payload = split_file(encode_checkpoint(ckpt))
        with pytest.raises(CheckpointVersionMismatch):
            decode_checkpoint(join_file(header, payload, version=2))

    def test_truncated_header(self, ckpt):
        data = encode_checkpoint(ckpt)
        with pytest.raises(MalformedCheckpoint):
            decode_checkpoint(data[:40])

    def test_header_not_json(self):
        with pytest.raises(MalformedCheckpoint):
            decode_checkpoint(b"PCWMCKPT" + struct.pack("<II", 1, 5) + b"{oops")

    def test_header_with_invalid_config(self, ckpt):
        _, header, payload = split_file(encode_checkpoint(ckpt))
        header["config"]["sa2_centroids"] = 99
        with pytest.raises(MalformedCheckpoint):
            decode_checkpoint(join_file(header, payload))

    def test_short_payload(self, ckpt):
        with pytest.raises(MalformedCheckpoint):
            decode_checkpoint(encode_checkpoint(ckpt)[:-4])

    def test_declared_count_disagrees_with_config(self, ckpt):
        _, header, payload = split_file(encode_checkpoint(ckpt))
        header["parameter_count"] = 125
        with pytest.raises(ParameterCountMismatch):
            decode_checkpoint(join_file(header, payload[:-4]))

    def test_parameter_count_mismatch_is_malformed(self):
        assert issubclass(ParameterCountMismatch, MalformedCheckpoint)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CloudIOError):
            load_checkpoint(tmp_path / "absent.ckpt")


# ═══════════════════════════════════════════════════════════════════════════════
# Checkpoint object
# ═══════════════════════════════════════════════════════════════════════════════


class TestCheckpoint:
    """Construction checks and compatibility with a decoder config."""

    def test_wrong_parameter_count(self, tiny_config):
        with pytest.raises(ParameterCountMismatch):
            Checkpoint(config=tiny_config, parameters=np.zeros(10))

    def test_ensure_compatible(self, ckpt):
        ckpt.ensure_compatible(2)
        with pytest.raises(CheckpointConfigMismatch):
            ckpt.ensure_compatible(3)
