"""Decoder training -- Adam over shuffled mini-batches with a plateau schedule.

Provides:
    - TrainConfig: optimizer, schedule and augmentation settings
    - TrainingLog: per-epoch rows (loss, accuracy, per-bit accuracy, lr) with CSV I/O
    - prepare_examples(): embed each manifest cloud once and cache the result
    - train_on_examples(): the epoch loop; returns the best-validation checkpoint
    - train(): manifest -> checkpoint convenience wrapper

Epoch 0 is an evaluation-only row so the log always starts from the untrained
model. Everything random is derived from TrainConfig.seed: the initial
weights, the per-epoch order and every augmentation draw.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from point_watermark import watermark_config as cfg
from point_watermark.augmentation import augment
from point_watermark.block_svd import EmbedConfig, embed
from point_watermark.checkpoint import Checkpoint
from point_watermark.dataset_manifest import DatasetManifest, ManifestEntry
from point_watermark.errors import ConfigError, DivergedLoss, EmptyDataset, WatermarkError
from point_watermark.neural_decoder import (
    DecoderConfig,
    WatermarkDecoder,
    batch_tensors,
    bce_loss,
    build_decoder,
)
from point_watermark.set_abstraction import CloudGrouping, group_cloud
from point_watermark.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, Dict[str, Any]], None]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = cfg.EPOCHS
    batch_size: int = cfg.BATCH_SIZE
    lr: float = cfg.LEARNING_RATE
    betas: Tuple[float, float] = cfg.ADAM_BETAS
    eps: float = cfg.ADAM_EPS
    plateau_factor: float = cfg.PLATEAU_FACTOR
    plateau_patience: int = cfg.PLATEAU_PATIENCE
    min_lr: float = cfg.MIN_LEARNING_RATE
    seed: int = 0
    augment: bool = True
    augment_with_attacks: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        self.betas = tuple(float(b) for b in self.betas)

    def validate(self) -> None:
        def need(cond: bool, name: str, message: str) -> None:
            if not cond:
                raise ConfigError(f"train.{name}: {message}")

        need(self.epochs >= 0, "epochs", f"must be >= 0, got {self.epochs}")
        need(self.batch_size >= 1, "batch_size", f"must be >= 1, got {self.batch_size}")
        need(math.isfinite(self.lr) and self.lr >= 0, "lr", f"must be >= 0, got {self.lr}")
        need(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), "betas",
             f"must be two values in [0, 1), got {list(self.betas)}")
        need(self.eps > 0, "eps", f"must be > 0, got {self.eps}")
        need(0 < self.plateau_factor < 1, "plateau_factor", f"must be in (0, 1), got {self.plateau_factor}")
        need(self.plateau_patience >= 0, "plateau_patience", f"must be >= 0, got {self.plateau_patience}")
        need(self.min_lr >= 0, "min_lr", f"must be >= 0, got {self.min_lr}")
        need(self.workers >= 1, "workers", f"must be >= 1, got {self.workers}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train field(s): {', '.join(sorted(unknown))}")
        try:
            config = cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train config: {exc}") from None
        config.validate()
        return config


# ---------------------------------------------------------------------------
# Training log
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    per_bit_acc: List[float]
    lr: float


@dataclass
class TrainingLog:
    """Per-epoch history; rewritten to ``log_path`` after every epoch when set."""

    records: List[EpochRecord] = field(default_factory=list)
    log_path: Optional[Path] = None

    def add_epoch(self, record: EpochRecord) -> None:
        self.records.append(record)
        if self.log_path:
            self.save(self.log_path)

    def columns(self) -> List[str]:
        n_bits = len(self.records[0].per_bit_acc) if self.records else 0
        return (["epoch", "train_loss", "val_loss", "train_acc", "val_acc"]
                + [f"per_bit_acc_{i}" for i in range(n_bits)] + ["lr"])

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.columns())
            for r in self.records:
                writer.writerow(
                    [r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.train_acc), repr(r.val_acc)]
                    + [repr(a) for a in r.per_bit_acc] + [repr(r.lr)]
                )

    @classmethod
    def load(cls, path: Path) -> "TrainingLog":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        records = []
        for row in rows:
            bit_cols = sorted((k for k in row if k.startswith("per_bit_acc_")),
                              key=lambda k: int(k.rsplit("_", 1)[1]))
            records.append(EpochRecord(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                val_loss=float(row["val_loss"]),
                train_acc=float(row["train_acc"]),
                val_acc=float(row["val_acc"]),
                per_bit_acc=[float(row[k]) for k in bit_cols],
                lr=float(row["lr"]),
            ))
        return cls(records=records, log_path=Path(path))

    def best_epoch(self) -> Optional[EpochRecord]:
        """First epoch reaching the highest validation accuracy."""
        if not self.records:
            return None
        best = self.records[0]
        for r in self.records[1:]:
            if r.val_acc > best.val_acc:
                best = r
        return best

    def loss_decreased(self) -> bool:
        """Train and validation loss at the best epoch are no higher than at epoch 0."""
        best = self.best_epoch()
        if best is None:
            return False
        first = self.records[0]
        return best.train_loss <= first.train_loss and best.val_loss <= first.val_loss

    def summary(self) -> str:
        if not self.records:
            return "No epochs logged."
        best = self.best_epoch()
        last = self.records[-1]
        return "\n".join([
            f"Training: {len(self.records) - 1} epochs",
            f"  Best val acc: {best.val_acc:.1%} (epoch {best.epoch})",
            f"  Final train loss: {last.train_loss:.4f}  val loss: {last.val_loss:.4f}  lr: {last.lr:.2e}",
        ])


# ---------------------------------------------------------------------------
# Examples
# ---------------------------------------------------------------------------

@dataclass
class TrainingExample:
    path: str
    cloud: np.ndarray      # watermarked, normalized
    bits: np.ndarray


def prepare_examples(
    manifest: DatasetManifest,
    entries: Sequence[ManifestEntry],
    embed_config: EmbedConfig,
    max_workers: int = 1,
) -> List[TrainingExample]:
    """Watermark each entry's cloud with its assigned bits; failures are skipped."""

    def one(entry: ManifestEntry) -> Optional[TrainingExample]:
        try:
            cloud, _ = embed(
                manifest.load_cloud(entry),
                entry.bits,
                embed_config.alpha,
                embed_config.mode,
                normalized_embedding=embed_config.normalized_embedding,
                max_iterations=embed_config.max_iterations,
            )
        except WatermarkError as exc:
            logger.warning("skipping %s: %s", entry.path, exc)
            return None
        return TrainingExample(path=entry.path, cloud=cloud, bits=entry.bits.as_array())

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        prepared = list(pool.map(one, entries))
    return [ex for ex in prepared if ex is not None]


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------

def _group_all(clouds: Sequence[np.ndarray], config: DecoderConfig,
               pool: ThreadPoolExecutor) -> List[CloudGrouping]:
    return list(pool.map(lambda c: group_cloud(c, config), clouds))


def _evaluate(model: WatermarkDecoder, groupings: Sequence[CloudGrouping], bits: np.ndarray,
              batch_size: int) -> Tuple[float, float, List[float]]:
    """(mean loss, bitwise accuracy, per-bit accuracy) without gradient."""
    model.eval()
    total_loss = 0.0
    correct = np.zeros(bits.shape[1])
    with torch.no_grad():
        for start in range(0, len(groupings), batch_size):
            chunk = groupings[start:start + batch_size]
            target = torch.as_tensor(bits[start:start + batch_size], dtype=torch.float32)
            logits = model(*batch_tensors(chunk))
            total_loss += float(bce_loss(logits, target)) * len(chunk)
            correct += ((logits > 0).numpy() == bits[start:start + batch_size].astype(bool)).sum(axis=0)
    per_bit = correct / len(groupings)
    return total_loss / len(groupings), float(per_bit.mean()), [float(a) for a in per_bit]


def train_on_examples(
    train_examples: Sequence[TrainingExample],
    val_examples: Sequence[TrainingExample],
    decoder_config: DecoderConfig,
    train_config: TrainConfig,
    log: Optional[TrainingLog] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> Checkpoint:
    """Run the epoch loop and return the weights with the best validation accuracy.

    Raises:
        EmptyDataset: no training or validation examples.
        DivergedLoss: a batch loss became NaN or infinite.
    """
    def emit(event: str, data: Dict[str, Any]) -> None:
        if progress_callback:
            progress_callback(event, data)

    train_config.validate()
    decoder_config.validate()
    if not train_examples:
        raise EmptyDataset("no training examples")
    if not val_examples:
        raise EmptyDataset("no validation examples")
    log = log if log is not None else TrainingLog()
    seed = train_config.seed

    model = build_decoder(decoder_config, seed=seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.lr,
                                 betas=train_config.betas, eps=train_config.eps)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=train_config.plateau_factor,
        patience=train_config.plateau_patience, min_lr=train_config.min_lr,
    )

    train_bits = np.stack([ex.bits for ex in train_examples])
    val_bits = np.stack([ex.bits for ex in val_examples])
    batch_size = train_config.batch_size

    with ThreadPoolExecutor(max_workers=train_config.workers) as pool:
        clean_train = _group_all([ex.cloud for ex in train_examples], decoder_config, pool)
        val_groups = _group_all([ex.cloud for ex in val_examples], decoder_config, pool)

        train_loss, train_acc, _ = _evaluate(model, clean_train, train_bits, batch_size)
        val_loss, val_acc, per_bit = _evaluate(model, val_groups, val_bits, batch_size)
        log.add_epoch(EpochRecord(0, train_loss, val_loss, train_acc, val_acc, per_bit, train_config.lr))
        best_acc, best_epoch = val_acc, 0
        best_state = copy.deepcopy(model.state_dict())

        for epoch in range(1, train_config.epochs + 1):
            order = make_rng(seed, epoch).permutation(len(train_examples))
            if train_config.augment:
                clouds = [augment(train_examples[i].cloud, derive_seed(seed, epoch, int(i)),
                                  train_config.augment_with_attacks) for i in order]
                groups = _group_all(clouds, decoder_config, pool)
            else:
                groups = [clean_train[i] for i in order]
            bits = train_bits[order]

            model.train()
            running_loss = 0.0
            correct = 0
            for start in range(0, len(groups), batch_size):
                chunk = groups[start:start + batch_size]
                target = torch.as_tensor(bits[start:start + batch_size], dtype=torch.float32)
                logits = model(*batch_tensors(chunk))
                loss = bce_loss(logits, target)
                if not torch.isfinite(loss):
                    raise DivergedLoss(f"loss became {float(loss)} at epoch {epoch}, batch {start // batch_size}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                running_loss += float(loss) * len(chunk)
                correct += int(((logits.detach() > 0) == target.bool()).sum())

            train_loss = running_loss / len(groups)
            train_acc = correct / bits.size
            val_loss, val_acc, per_bit = _evaluate(model, val_groups, val_bits, batch_size)

            previous_lr = optimizer.param_groups[0]["lr"]
            scheduler.step(val_loss)
            lr = optimizer.param_groups[0]["lr"]
            if lr < previous_lr:
                logger.info("epoch %d: validation loss plateaued, lr %.2e -> %.2e", epoch, previous_lr, lr)

            log.add_epoch(EpochRecord(epoch, train_loss, val_loss, train_acc, val_acc, per_bit, lr))
            logger.info("epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f",
                        epoch, train_loss, train_acc, val_loss, val_acc)
            emit("epoch_completed", {"epoch": epoch, "epochs": train_config.epochs,
                                     "train_loss": train_loss, "val_loss": val_loss,
                                     "train_acc": train_acc, "val_acc": val_acc, "lr": lr})

            if val_acc > best_acc:
                best_acc, best_epoch = val_acc, epoch
                best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    emit("training_completed", {"best_epoch": best_epoch, "best_val_accuracy": best_acc})
    return Checkpoint.from_model(model, best_val_accuracy=best_acc, epoch=best_epoch)


def train(
    manifest: DatasetManifest,
    embed_config: EmbedConfig,
    train_config: TrainConfig,
    decoder_config: Optional[DecoderConfig] = None,
    log: Optional[TrainingLog] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> Checkpoint:
    """Train on the manifest's train split, validating on its test split.

    A manifest without a test split validates on the training clouds.
    """
    if decoder_config is None:
        decoder_config = DecoderConfig(n_bits=manifest.n_bits, n_points=manifest.n_points)
    if decoder_config.n_bits != manifest.n_bits:
        raise ConfigError(
            f"decoder.n_bits: decoder has {decoder_config.n_bits} bits, manifest {manifest.n_bits}"
        )
    train_config.validate()

    train_examples = prepare_examples(manifest, manifest.train, embed_config, train_config.workers)
    if not train_examples:
        raise EmptyDataset(f"no usable training clouds in {manifest.root}")
    if manifest.test:
        val_examples = prepare_examples(manifest, manifest.test, embed_config, train_config.workers)
    else:
        logger.warning("manifest has no test split; validating on the training clouds")
        val_examples = list(train_examples)
    if progress_callback:
        progress_callback("examples_prepared", {"train": len(train_examples), "val": len(val_examples)})

    return train_on_examples(train_examples, val_examples, decoder_config, train_config,
                             log=log, progress_callback=progress_callback)
