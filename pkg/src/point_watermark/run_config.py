"""Run configuration -- one JSON schema for every CLI subcommand.

A config file holds any subset of the fields below; unknown keys are
rejected. Command-line flags override file values, but only flags the user
actually set (None means "not given").

Example file:

    {
      "dataset": "data/ModelNet40",
      "n_bits": 3,
      "alpha": 2.0,
      "mode": "reference",
      "attacks": ["dropout", "crop"],
      "train": {"epochs": 60, "seed": 7},
      "decoder": {"sa1_centroids": 128}
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from point_watermark import watermark_config as cfg
from point_watermark.attacks import AttackSpec, default_attacks, resolve_attacks
from point_watermark.block_svd import EmbedConfig
from point_watermark.decoder_training import TrainConfig
from point_watermark.errors import ConfigError
from point_watermark.neural_decoder import DecoderConfig


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    n_points: int = cfg.N_POINTS
    n_bits: int = cfg.N_BITS
    alpha: float = cfg.ALPHA
    mode: str = "reference"
    normalized_embedding: bool = True
    max_embed_iterations: int = cfg.MAX_EMBED_ITERATIONS
    sample_seed: int = 0
    attack_seed: int = 0
    attacks: List[str] = field(default_factory=list)   # empty: Clean + full catalogue
    train: Dict[str, Any] = field(default_factory=dict)
    decoder: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "report"
    workers: int = 1
    limit: Optional[int] = None
    negatives_per_cloud: int = cfg.NEGATIVES_PER_CLOUD

    def validate(self) -> None:
        """Raise ConfigError naming the first invalid field."""
        def need(cond: bool, name: str, message: str) -> None:
            if not cond:
                raise ConfigError(f"{name}: {message}")

        for name in ("n_points", "n_bits", "max_embed_iterations", "workers", "negatives_per_cloud"):
            value = getattr(self, name)
            need(isinstance(value, int) and not isinstance(value, bool) and value >= 1,
                 name, f"must be an integer >= 1, got {value!r}")
        need(self.n_points >= self.n_bits, "n_points", f"must be >= n_bits ({self.n_bits}), got {self.n_points}")
        need(self.limit is None or (isinstance(self.limit, int) and self.limit >= 1),
             "limit", f"must be a positive integer, got {self.limit!r}")
        for name in ("sample_seed", "attack_seed"):
            value = getattr(self, name)
            need(isinstance(value, int) and not isinstance(value, bool) and value >= 0,
                 name, f"must be an integer >= 0, got {value!r}")
        need(isinstance(self.attacks, list), "attacks", "must be a list of attack names")
        need(isinstance(self.train, dict), "train", f"must be an object, got {self.train!r}")
        need(isinstance(self.decoder, dict), "decoder", f"must be an object, got {self.decoder!r}")
        self.embed_config()
        self.train_config()
        # default layer sizes need n_points >= 256; only commands that build a decoder check them
        if self.decoder:
            self.decoder_config()
        self.attack_specs()

    # -- derived configs ----------------------------------------------------

    def embed_config(self) -> EmbedConfig:
        return EmbedConfig(mode=self.mode, alpha=self.alpha,
                           normalized_embedding=bool(self.normalized_embedding),
                           max_iterations=self.max_embed_iterations)

    def train_config(self) -> TrainConfig:
        data = {"workers": self.workers}
        data.update(self.train)
        return TrainConfig.from_dict(data)

    def decoder_config(self) -> DecoderConfig:
        data = {"n_bits": self.n_bits, "n_points": self.n_points}
        data.update(self.decoder)
        config = DecoderConfig.from_dict(data)
        if config.n_bits != self.n_bits:
            raise ConfigError(f"decoder.n_bits: {config.n_bits} differs from n_bits {self.n_bits}")
        return config

    def attack_specs(self) -> List[AttackSpec]:
        if not self.attacks:
            return default_attacks(self.attack_seed)
        return resolve_attacks(self.attacks, self.attack_seed)

    def require_dataset(self) -> Path:
        if not self.dataset:
            raise ConfigError("dataset: no dataset root given (use --dataset or the config file)")
        return Path(self.dataset)

    # -- I/O ----------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with every non-None override applied, then validated."""
        config = replace(self, **{k: v for k, v in overrides.items() if v is not None})
        config.validate()
        return config
