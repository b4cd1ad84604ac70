"""Tests for point_watermark.decoder_training.

Covers:
    - TrainConfig validation and dict round trip
    - TrainingLog: CSV round trip, best epoch, loss check, summary
    - train_on_examples(): epoch-0 row, best checkpoint, determinism, zero learning rate,
      diverged loss, empty inputs, progress events
    - train(): manifest wrapper and its n_bits check
    - (slow) the decoder overfits 32 embedded clouds covering all eight 3-bit patterns
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from point_watermark import decoder_training
from point_watermark.block_svd import EmbedConfig, Watermark, embed
from point_watermark.decoder_training import (
    EpochRecord,
    TrainConfig,
    TrainingExample,
    TrainingLog,
    train,
    train_on_examples,
)
from point_watermark.errors import ConfigError, DivergedLoss, EmptyDataset
from point_watermark.neural_decoder import DecoderConfig, build_decoder


def quick_config(**overrides) -> TrainConfig:
    settings = {"epochs": 3, "batch_size": 4, "lr": 1e-2, "augment": False}
    settings.update(overrides)
    return TrainConfig(**settings)


def record(epoch: int, val_acc: float, train_loss: float = 0.7, val_loss: float = 0.7) -> EpochRecord:
    return EpochRecord(epoch, train_loss, val_loss, 0.5, val_acc, [val_acc, val_acc], 1e-3)


# ═══════════════════════════════════════════════════════════════════════════════
# Configuration
# ═══════════════════════════════════════════════════════════════════════════════


class TestTrainConfig:
    """Training options and their checks."""

    def test_defaults(self):
        config = TrainConfig()
        config.validate()
        assert (config.epochs, config.batch_size, config.lr) == (150, 32, 2e-3)
        assert config.betas == (0.9, 0.999)

    @pytest.mark.parametrize("field_name,value", [
        ("batch_size", 0), ("lr", -1.0), ("betas", (0.9, 1.0)), ("plateau_factor", 1.0),
        ("workers", 0), ("eps", 0.0),
    ])
    def test_validation_names_the_field(self, field_name, value):
        with pytest.raises(ConfigError, match=f"train.{field_name}"):
            TrainConfig.from_dict({field_name: value})

    def test_dict_round_trip(self):
        config = TrainConfig(epochs=7, betas=(0.8, 0.99), augment_with_attacks=True)
        data = config.to_dict()
        assert data["betas"] == [0.8, 0.99]
        assert TrainConfig.from_dict(data) == config

    def test_unknown_field(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"momentum": 0.9})


# ═══════════════════════════════════════════════════════════════════════════════
# Training log
# ═══════════════════════════════════════════════════════════════════════════════


class TestTrainingLog:
    """Per-epoch records and CSV output."""

    def test_csv_round_trip(self, tmp_path):
        log = TrainingLog(records=[record(0, 0.5), record(1, 0.6251, train_loss=0.1 + 0.2)])
        path = tmp_path / "logs" / "train.csv"
        log.save(path)
        assert path.read_text().splitlines()[0] == \
            "epoch,train_loss,val_loss,train_acc,val_acc,per_bit_acc_0,per_bit_acc_1,lr"
        assert TrainingLog.load(path).records == log.records

    def test_add_epoch_rewrites_file(self, tmp_path):
        path = tmp_path / "train.csv"
        log = TrainingLog(log_path=path)
        log.add_epoch(record(0, 0.5))
        log.add_epoch(record(1, 0.7))
        assert len(path.read_text().splitlines()) == 3

    def test_best_epoch_is_first_maximum(self):
        log = TrainingLog(records=[record(0, 0.5), record(1, 0.8), record(2, 0.8), record(3, 0.7)])
        assert log.best_epoch().epoch == 1

    def test_loss_decreased(self):
        log = TrainingLog(records=[record(0, 0.5, 0.7, 0.7), record(1, 0.9, 0.4, 0.5)])
        assert log.loss_decreased()
        log.records[1] = record(1, 0.9, 0.4, 0.8)
        assert not log.loss_decreased()

    def test_empty(self):
        log = TrainingLog()
        assert log.best_epoch() is None
        assert not log.loss_decreased()
        assert log.summary() == "No epochs logged."

    def test_summary(self):
        log = TrainingLog(records=[record(0, 0.5), record(1, 0.75), record(2, 0.625)])
        text = log.summary()
        assert text.startswith("Training: 2 epochs")
        assert "Best val acc: 75.0% (epoch 1)" in text


# ═══════════════════════════════════════════════════════════════════════════════
# Epoch loop
# ═══════════════════════════════════════════════════════════════════════════════


class TestTrainOnExamples:
    """The epoch loop on in-memory examples."""

    def test_log_and_checkpoint(self, make_examples, tiny_config):
        examples = make_examples()
        log = TrainingLog()
        ckpt = train_on_examples(examples[:6], examples[6:], tiny_config, quick_config(), log=log)
        assert [r.epoch for r in log.records] == [0, 1, 2, 3]
        assert all(len(r.per_bit_acc) == 2 for r in log.records)
        best = log.best_epoch()
        assert ckpt.epoch == best.epoch
        assert ckpt.best_val_accuracy == best.val_acc
        assert ckpt.config == tiny_config

    def test_deterministic_across_worker_counts(self, make_examples, tiny_config):
        examples = make_examples()
        a = train_on_examples(examples[:6], examples[6:], tiny_config,
                              quick_config(augment=True, workers=1))
        b = train_on_examples(examples[:6], examples[6:], tiny_config,
                              quick_config(augment=True, workers=3))
        np.testing.assert_array_equal(a.parameters, b.parameters)
        assert a.epoch == b.epoch

    def test_zero_learning_rate_keeps_initial_weights(self, make_examples, tiny_config):
        examples = make_examples()
        log = TrainingLog()
        ckpt = train_on_examples(examples[:6], examples[6:], tiny_config,
                                 quick_config(lr=0.0, min_lr=0.0, seed=4), log=log)
        initial = build_decoder(tiny_config, seed=4)
        expected = torch.cat([p.detach().reshape(-1) for p in initial.parameters()]).numpy()
        np.testing.assert_array_equal(ckpt.parameters, expected)
        assert all(r.lr == 0.0 for r in log.records)

    def test_loss_decreases_on_a_constant_target(self, make_examples, tiny_config):
        examples = [TrainingExample(ex.path, ex.cloud, np.array([1, 0])) for ex in make_examples()]
        log = TrainingLog()
        train_on_examples(examples[:6], examples[6:], tiny_config, quick_config(epochs=30), log=log)
        assert min(r.train_loss for r in log.records[1:]) < log.records[0].train_loss
        assert log.records[-1].val_loss < log.records[0].val_loss

    def test_diverged_loss(self, make_examples, tiny_config, monkeypatch):
        monkeypatch.setattr(decoder_training, "bce_loss", lambda logits, bits: (logits * float("nan")).mean())
        examples = make_examples()
        with pytest.raises(DivergedLoss):
            train_on_examples(examples[:6], examples[6:], tiny_config, quick_config())

    def test_empty_inputs(self, make_examples, tiny_config):
        examples = make_examples(count=2)
        with pytest.raises(EmptyDataset):
            train_on_examples([], examples, tiny_config, quick_config())
        with pytest.raises(EmptyDataset):
            train_on_examples(examples, [], tiny_config, quick_config())

    def test_progress_events(self, make_examples, tiny_config):
        events = []
        examples = make_examples()
        train_on_examples(examples[:6], examples[6:], tiny_config, quick_config(epochs=2),
                          progress_callback=lambda e, d: events.append((e, d)))
        assert [e for e, _ in events] == ["epoch_completed", "epoch_completed", "training_completed"]
        assert events[1][1]["epoch"] == 2 and events[1][1]["epochs"] == 2


# ═══════════════════════════════════════════════════════════════════════════════
# Manifest wrapper
# ═══════════════════════════════════════════════════════════════════════════════


class TestTrain:
    """Training straight from a manifest."""

    def test_trains_from_manifest(self, make_manifest, tiny_config):
        manifest = make_manifest(n_points=64, n_bits=2)
        events = []
        ckpt = train(manifest, EmbedConfig(alpha=0.5), quick_config(epochs=1), tiny_config,
                     progress_callback=lambda e, d: events.append((e, d)))
        assert events[0][0] == "examples_prepared"
        assert events[0][1]["train"] >= 1 and events[0][1]["val"] >= 1
        assert ckpt.config.n_bits == 2

    def test_n_bits_mismatch(self, make_manifest):
        manifest = make_manifest(n_points=64, n_bits=2)
        with pytest.raises(ConfigError, match="decoder.n_bits"):
            train(manifest, EmbedConfig(alpha=0.5), quick_config(), DecoderConfig.tiny(3))


@pytest.mark.slow
def test_overfits_every_three_bit_pattern(make_cloud):
    rng = np.random.default_rng(5)
    examples = []
    for i in range(32):
        bits = Watermark.from_int(i % 8, 3)
        dims = (1.0 + rng.random(), 0.5 + rng.random(), 0.25 + rng.random())
        cloud, _ = embed(make_cloud(128, seed=i, dims=dims), bits)
        examples.append(TrainingExample(path=f"embedded/{i}.off", cloud=cloud, bits=bits.as_array()))
    config = DecoderConfig(n_bits=3, n_points=128, sa1_centroids=32, sa1_k=8, sa1_widths=(3, 16, 32),
                           sa2_centroids=16, sa2_k=8, sa2_widths=(35, 64))
    ckpt = train_on_examples(examples, examples, config,
                             TrainConfig(epochs=200, batch_size=8, lr=3e-3, augment=False))
    assert ckpt.best_val_accuracy >= 0.95
