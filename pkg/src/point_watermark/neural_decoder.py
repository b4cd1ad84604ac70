"""Neural decoder -- two-level set abstraction network mapping a cloud to bit logits.

Architecture (desk-scale defaults in watermark_config):

    SA1   FPS 256 centroids, kNN 16, shared MLP 3 -> 32 -> 64, max over neighbours
    SA2   FPS 64 of the SA1 centroids, kNN 16, [offset || feature] 67 -> 128, max
    pool  max over the SA2 centroids -> 128
    head  128 -> 64 -> n_bits, ReLU between layers, raw logits out

Sampling and grouping happen in set_abstraction on the canonical cloud; the
module only sees constant offset/index tensors, so gradients flow through
the MLPs and through the max-pool winners.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from point_watermark import watermark_config as cfg
from point_watermark.errors import ConfigError, ShapeMismatch
from point_watermark.set_abstraction import CloudGrouping, group_cloud


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class DecoderConfig:
    """Layer sizes of the decoder. ``head_widths`` defaults to (128, 64, n_bits)."""

    n_bits: int = cfg.N_BITS
    n_points: int = cfg.N_POINTS
    sa1_centroids: int = cfg.SA1_CENTROIDS
    sa1_k: int = cfg.SA1_K
    sa1_widths: Tuple[int, ...] = cfg.SA1_WIDTHS
    sa2_centroids: int = cfg.SA2_CENTROIDS
    sa2_k: int = cfg.SA2_K
    sa2_widths: Tuple[int, ...] = cfg.SA2_WIDTHS
    head_widths: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.sa1_widths = tuple(int(w) for w in self.sa1_widths)
        self.sa2_widths = tuple(int(w) for w in self.sa2_widths)
        if not self.head_widths:
            self.head_widths = (self.sa2_widths[-1], cfg.HEAD_HIDDEN, self.n_bits)
        self.head_widths = tuple(int(w) for w in self.head_widths)

    @classmethod
    def tiny(cls, n_bits: int = 2) -> "DecoderConfig":
        """Small config for tests: N=32, centroids 8/4, k=4."""
        return cls(
            n_bits=n_bits,
            n_points=32,
            sa1_centroids=8,
            sa1_k=4,
            sa1_widths=(3, 4),
            sa2_centroids=4,
            sa2_k=4,
            sa2_widths=(7, 8),
            head_widths=(8, 4, n_bits),
        )

    def validate(self) -> None:
        def need(cond: bool, name: str, message: str) -> None:
            if not cond:
                raise ConfigError(f"decoder.{name}: {message}")

        need(self.n_bits >= 1, "n_bits", f"must be >= 1, got {self.n_bits}")
        need(self.sa1_centroids >= 1, "sa1_centroids", f"must be >= 1, got {self.sa1_centroids}")
        need(self.sa1_centroids <= self.n_points, "sa1_centroids",
             f"{self.sa1_centroids} exceeds n_points {self.n_points}")
        need(1 <= self.sa2_centroids <= self.sa1_centroids, "sa2_centroids",
             f"must be in [1, {self.sa1_centroids}], got {self.sa2_centroids}")
        need(1 <= self.sa1_k <= self.n_points, "sa1_k", f"must be in [1, {self.n_points}], got {self.sa1_k}")
        need(1 <= self.sa2_k <= self.sa1_centroids, "sa2_k",
             f"must be in [1, {self.sa1_centroids}], got {self.sa2_k}")
        need(len(self.sa1_widths) >= 2 and self.sa1_widths[0] == 3, "sa1_widths",
             f"must start at 3 and have a layer, got {list(self.sa1_widths)}")
        need(len(self.sa2_widths) >= 2 and self.sa2_widths[0] == 3 + self.sa1_widths[-1], "sa2_widths",
             f"must start at {3 + self.sa1_widths[-1]}, got {list(self.sa2_widths)}")
        need(len(self.head_widths) >= 2 and self.head_widths[0] == self.sa2_widths[-1], "head_widths",
             f"must start at {self.sa2_widths[-1]}, got {list(self.head_widths)}")
        need(self.head_widths[-1] == self.n_bits, "head_widths",
             f"must end at n_bits={self.n_bits}, got {list(self.head_widths)}")
        need(all(w >= 1 for w in self.sa1_widths + self.sa2_widths + self.head_widths),
             "widths", "every layer width must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for name in ("sa1_widths", "sa2_widths", "head_widths"):
            data[name] = list(data[name])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DecoderConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown decoder field(s): {', '.join(sorted(unknown))}")
        try:
            config = cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid decoder config: {exc}") from None
        config.validate()
        return config


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def _linear_stack(widths: Sequence[int]) -> nn.ModuleList:
    return nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))


def _shared_mlp(layers: nn.ModuleList, x: torch.Tensor) -> torch.Tensor:
    for layer in layers:
        x = F.relu(layer(x))
    return x


class WatermarkDecoder(nn.Module):
    """Permutation-invariant bit decoder over pre-grouped clouds."""

    def __init__(self, config: DecoderConfig) -> None:
        super().__init__()
        config.validate()
        self.config = config
        self.sa1 = _linear_stack(config.sa1_widths)
        self.sa2 = _linear_stack(config.sa2_widths)
        self.head = _linear_stack(config.head_widths)

    def _check(self, name: str, tensor: torch.Tensor, shape: Tuple[int, ...]) -> None:
        if tuple(tensor.shape[1:]) != shape:
            raise ShapeMismatch(f"{name} must be (B, {', '.join(map(str, shape))}), got {tuple(tensor.shape)}")

    def point_features(self, rel1: torch.Tensor) -> torch.Tensor:
        """Per-neighbour SA1 features before pooling, (B, M1, k1, C1)."""
        c = self.config
        self._check("rel1", rel1, (c.sa1_centroids, c.sa1_k, 3))
        return _shared_mlp(self.sa1, rel1)

    def local_features(self, rel1: torch.Tensor) -> torch.Tensor:
        return self.point_features(rel1).amax(dim=2)

    def forward_from_local(self, local: torch.Tensor, rel2: torch.Tensor,
                           nbr2: torch.Tensor) -> torch.Tensor:
        c = self.config
        self._check("local", local, (c.sa1_centroids, c.sa1_widths[-1]))
        self._check("rel2", rel2, (c.sa2_centroids, c.sa2_k, 3))
        self._check("nbr2", nbr2, (c.sa2_centroids, c.sa2_k))

        batch, _, channels = local.shape
        index = nbr2.reshape(batch, -1, 1).expand(-1, -1, channels)
        grouped = torch.gather(local, 1, index).reshape(batch, c.sa2_centroids, c.sa2_k, channels)
        h = _shared_mlp(self.sa2, torch.cat([rel2, grouped], dim=-1))
        pooled = h.amax(dim=2).amax(dim=1)

        for layer in self.head[:-1]:
            pooled = F.relu(layer(pooled))
        return self.head[-1](pooled)

    def forward(self, rel1: torch.Tensor, rel2: torch.Tensor, nbr2: torch.Tensor) -> torch.Tensor:
        return self.forward_from_local(self.local_features(rel1), rel2, nbr2)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def batch_tensors(groupings: Sequence[CloudGrouping],
                  dtype: torch.dtype = torch.float32) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack per-cloud groupings into (rel1, rel2, nbr2) batch tensors."""
    if not groupings:
        raise ShapeMismatch("cannot batch zero clouds")
    rel1 = torch.as_tensor(np.stack([g.rel1 for g in groupings]), dtype=dtype)
    rel2 = torch.as_tensor(np.stack([g.rel2 for g in groupings]), dtype=dtype)
    nbr2 = torch.as_tensor(np.stack([g.nbr2 for g in groupings]), dtype=torch.int64)
    return rel1, rel2, nbr2


def grouped_logits(model: WatermarkDecoder, groupings: Sequence[CloudGrouping]) -> np.ndarray:
    with torch.no_grad():
        logits = model(*batch_tensors(groupings, _model_dtype(model)))
    return logits.detach().cpu().numpy().astype(np.float64)


def decode_logits(model: WatermarkDecoder, clouds: Sequence[Any]) -> np.ndarray:
    """Logits (B, n_bits) for raw clouds; each is canonicalized and grouped first."""
    return grouped_logits(model, [group_cloud(c, model.config) for c in clouds])


def predicted_bits(logits: Any) -> np.ndarray:
    """Bit = 1 where sigmoid(logit) > 0.5."""
    return (np.asarray(logits) > 0.0).astype(np.int64)


def bce_loss(logits: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on raw logits (softplus-stable form)."""
    if logits.shape != bits.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs bits {tuple(bits.shape)}")
    return F.binary_cross_entropy_with_logits(logits, bits.to(logits.dtype))


def parameter_gradients(model: nn.Module, loss: torch.Tensor) -> Dict[str, torch.Tensor]:
    """Reverse-mode gradient of ``loss`` for every named parameter."""
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for name, p, g in zip(names, params, grads)
    }


def parameter_layout(config: DecoderConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Parameter names and shapes in ``named_parameters()`` order, without building a model."""
    layout: List[Tuple[str, Tuple[int, ...]]] = []
    for stack, widths in (("sa1", config.sa1_widths), ("sa2", config.sa2_widths),
                          ("head", config.head_widths)):
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            layout.append((f"{stack}.{i}.weight", (fan_out, fan_in)))
            layout.append((f"{stack}.{i}.bias", (fan_out,)))
    return layout


def parameter_count(config: DecoderConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in parameter_layout(config))


def build_decoder(config: DecoderConfig, seed: Optional[int] = None) -> WatermarkDecoder:
    """Fresh decoder; with ``seed`` the initial weights are reproducible and the global RNG is left untouched."""
    if seed is None:
        return WatermarkDecoder(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed & 0x7FFF_FFFF_FFFF_FFFF)
        return WatermarkDecoder(config)
