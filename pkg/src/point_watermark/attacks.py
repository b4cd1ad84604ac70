"""Attack suite -- seeded corruptions applied to watermarked clouds.

Every attack is described by an AttackSpec (kind, params, seed) and applied
with apply_attack(); the seed fully determines the output. attack_catalogue()
returns the fifteen robustness-table attacks in table order.

The primitives (noise, rotation, dropout, ...) are public so the training
augmentation pipeline can reuse them with its own generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Union

import numpy as np
from scipy.spatial.transform import Rotation

from point_watermark import watermark_config as cfg
from point_watermark.errors import CloudIOError, ConfigError, EmptyResult, InvalidAttackSpec
from point_watermark.geometry_io import as_cloud
from point_watermark.seeding import make_rng


class AttackKind(Enum):
    CLEAN = "clean"
    GAUSSIAN_NOISE = "gaussian_noise"
    GAUSSIAN_SMOOTHING = "gaussian_smoothing"
    ISOTROPIC_SCALE = "isotropic_scale"
    ROTATION_FIXED_AXIS = "rotation_fixed_axis"
    ROTATION_ARBITRARY_AXIS = "rotation_arbitrary_axis"
    TRANSLATION = "translation"
    DROPOUT = "dropout"
    SHUFFLE = "shuffle"
    CROP = "crop"
    AFFINE = "affine"
    QUANTIZATION = "quantization"
    JITTER = "jitter"
    CHUNK_REMOVAL = "chunk_removal"
    COMBINED = "combined"
    CHUNK_SMOOTHING = "chunk_smoothing"


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def floor_count(fraction: float, n: int) -> int:
    """floor(fraction * n), immune to 0.1 * 1000 = 100.00000000000001 style noise."""
    return int(math.floor(round(fraction * n, 9)))


def ceil_count(fraction: float, n: int) -> int:
    return int(math.ceil(round(fraction * n, 9)))


def add_gaussian_noise(pts: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return pts + rng.normal(0.0, sigma, size=pts.shape)


def knn_by_index(pts: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """k nearest points per query by Euclidean distance, ties to the lower index."""
    d2 = ((queries[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def gaussian_smoothing(pts: np.ndarray, k: int, sigma: float) -> np.ndarray:
    """Replace each point by the Gaussian-weighted mean of its k nearest neighbours (self included)."""
    k = min(int(k), len(pts))
    nbr = knn_by_index(pts, pts, k)
    neighbours = pts[nbr]
    d2 = ((neighbours - pts[:, None, :]) ** 2).sum(axis=-1)
    weights = np.exp(-d2 / (2.0 * sigma * sigma))
    return (weights[..., None] * neighbours).sum(axis=1) / weights.sum(axis=1)[:, None]


def rotation_about_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation from a normalized 4-d Gaussian (uniform unit quaternion)."""
    q = rng.normal(size=4)
    while np.linalg.norm(q) == 0.0:
        q = rng.normal(size=4)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()


def rotate(pts: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    return pts @ matrix.T


def drop_points(pts: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Remove ``count`` uniformly chosen points; survivors keep their order."""
    if count <= 0:
        return pts.copy()
    keep = np.ones(len(pts), dtype=bool)
    keep[rng.choice(len(pts), size=min(count, len(pts)), replace=False)] = False
    return pts[keep]


def random_direction(rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=3)
    while np.linalg.norm(d) == 0.0:
        d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def crop_halfspace(pts: np.ndarray, retain: float, direction: np.ndarray) -> np.ndarray:
    """Keep the ceil(retain * N) points with the smallest projection onto ``direction``."""
    keep_n = ceil_count(retain, len(pts))
    order = np.argsort(pts @ direction, kind="stable")
    return pts[np.sort(order[:keep_n])]


def quantize(pts: np.ndarray, step: float) -> np.ndarray:
    """Snap to multiples of ``step``, rounding halves away from zero."""
    q = pts / step
    return step * (np.sign(q) * np.floor(np.abs(q) + 0.5))


def remove_chunk(pts: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Remove a random seed point and its count-1 nearest neighbours."""
    seed_idx = int(rng.integers(len(pts)))
    if count <= 0:
        return pts.copy()
    d2 = ((pts - pts[seed_idx]) ** 2).sum(axis=1)
    d2[seed_idx] = -1.0
    removed = np.argsort(d2, kind="stable")[:count]
    keep = np.ones(len(pts), dtype=bool)
    keep[removed] = False
    return pts[keep]


# ---------------------------------------------------------------------------
# Per-kind application
# ---------------------------------------------------------------------------

def _dropout(pts: np.ndarray, p: Dict[str, float], rng: np.random.Generator) -> np.ndarray:
    fraction = p["fraction"]
    if p["uniform"]:
        fraction = fraction * (1.0 - rng.random())  # U(0, fraction]
    return drop_points(pts, floor_count(fraction, len(pts)), rng)


def _combined(pts: np.ndarray, p: Dict[str, float], rng: np.random.Generator) -> np.ndarray:
    noisy = add_gaussian_noise(pts, p["sigma"], rng)
    return drop_points(noisy, floor_count(p["fraction"], len(noisy)), rng)


def _chunk_smoothing(pts: np.ndarray, p: Dict[str, float], rng: np.random.Generator) -> np.ndarray:
    remaining = remove_chunk(pts, floor_count(p["fraction"], len(pts)), rng)
    if len(remaining) == 0:
        return remaining
    return gaussian_smoothing(remaining, int(p["k"]), p["sigma"])


_APPLY: Dict[AttackKind, Callable[[np.ndarray, Dict[str, float], np.random.Generator], np.ndarray]] = {
    AttackKind.CLEAN: lambda pts, p, rng: pts.copy(),
    AttackKind.GAUSSIAN_NOISE: lambda pts, p, rng: add_gaussian_noise(pts, p["sigma"], rng),
    AttackKind.GAUSSIAN_SMOOTHING: lambda pts, p, rng: gaussian_smoothing(pts, int(p["k"]), p["sigma"]),
    AttackKind.ISOTROPIC_SCALE: lambda pts, p, rng: pts * rng.uniform(p["low"], p["high"]),
    AttackKind.ROTATION_FIXED_AXIS: lambda pts, p, rng: rotate(pts, rotation_about_z(rng.uniform(0.0, 2.0 * math.pi))),
    AttackKind.ROTATION_ARBITRARY_AXIS: lambda pts, p, rng: rotate(pts, random_rotation(rng)),
    AttackKind.TRANSLATION: lambda pts, p, rng: pts + rng.uniform(-p["max_shift"], p["max_shift"], size=3),
    AttackKind.DROPOUT: _dropout,
    AttackKind.SHUFFLE: lambda pts, p, rng: pts[rng.permutation(len(pts))],
    AttackKind.CROP: lambda pts, p, rng: crop_halfspace(pts, p["retain"], random_direction(rng)),
    AttackKind.AFFINE: lambda pts, p, rng: pts * rng.uniform(p["low"], p["high"], size=3),
    AttackKind.QUANTIZATION: lambda pts, p, rng: quantize(pts, p["step"]),
    AttackKind.JITTER: lambda pts, p, rng: add_gaussian_noise(pts, p["sigma"], rng),
    AttackKind.CHUNK_REMOVAL: lambda pts, p, rng: remove_chunk(pts, floor_count(p["fraction"], len(pts)), rng),
    AttackKind.COMBINED: _combined,
    AttackKind.CHUNK_SMOOTHING: _chunk_smoothing,
}


# ---------------------------------------------------------------------------
# AttackSpec
# ---------------------------------------------------------------------------

def _check_params(kind: AttackKind, p: Dict[str, float]) -> None:
    def need(cond: bool, message: str) -> None:
        if not cond:
            raise InvalidAttackSpec(f"{kind.value}: {message}")

    for name, value in p.items():
        need(math.isfinite(value), f"{name} must be finite, got {value}")
    if "sigma" in p:
        if kind in (AttackKind.GAUSSIAN_SMOOTHING, AttackKind.CHUNK_SMOOTHING):
            need(p["sigma"] > 0, f"kernel sigma must be > 0, got {p['sigma']}")
        else:
            need(p["sigma"] >= 0, f"sigma must be >= 0, got {p['sigma']}")
    if "k" in p:
        need(p["k"] >= 1 and float(p["k"]).is_integer(), f"k must be a positive integer, got {p['k']}")
    if "low" in p:
        need(0 < p["low"] <= p["high"], f"need 0 < low <= high, got [{p['low']}, {p['high']}]")
    if "max_shift" in p:
        need(p["max_shift"] >= 0, f"max_shift must be >= 0, got {p['max_shift']}")
    if "fraction" in p:
        need(0 <= p["fraction"] < 1, f"fraction must be in [0, 1), got {p['fraction']}")
    if "uniform" in p:
        need(p["uniform"] in (0, 1), f"uniform must be 0 or 1, got {p['uniform']}")
    if "retain" in p:
        need(0 < p["retain"] <= 1, f"retain must be in (0, 1], got {p['retain']}")
    if "step" in p:
        need(p["step"] > 0, f"step must be > 0, got {p['step']}")


@dataclass(frozen=True)
class AttackSpec:
    """One attack: kind, kind-specific parameters and the seed that fixes its randomness."""

    kind: AttackKind
    params: Dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            kind = AttackKind(self.kind.value if isinstance(self.kind, AttackKind) else self.kind)
        except ValueError:
            raise InvalidAttackSpec(f"unknown attack kind {self.kind!r}") from None
        defaults = cfg.ATTACK_DEFAULTS[kind.value]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise InvalidAttackSpec(f"{kind.value}: unknown parameter(s) {', '.join(sorted(unknown))}")
        try:
            params = {name: float(self.params.get(name, default)) for name, default in defaults.items()}
        except (TypeError, ValueError):
            raise InvalidAttackSpec(f"{kind.value}: parameters must be numbers, got {self.params}") from None
        _check_params(kind, params)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise InvalidAttackSpec(f"{kind.value}: seed must be an integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def label(self) -> str:
        """Display name used as the attack column in reports."""
        p = self.params
        names = {
            AttackKind.CLEAN: "Clean",
            AttackKind.GAUSSIAN_NOISE: f"Gaussian Noise ({p.get('sigma', 0):g})",
            AttackKind.GAUSSIAN_SMOOTHING: "Gaussian Smoothing",
            AttackKind.ISOTROPIC_SCALE: "Isotropic Scaling",
            AttackKind.ROTATION_FIXED_AXIS: "Random Rotation",
            AttackKind.ROTATION_ARBITRARY_AXIS: "Random Rotation (Arbitrary Axis)",
            AttackKind.TRANSLATION: "Translation",
            AttackKind.DROPOUT: "Random Dropout",
            AttackKind.SHUFFLE: "Shuffle Points",
            AttackKind.CROP: f"Crop ({p.get('retain', 0):.0%})",
            AttackKind.AFFINE: "Affine Distortion",
            AttackKind.QUANTIZATION: "Quantization",
            AttackKind.JITTER: "Jitter",
            AttackKind.CHUNK_REMOVAL: "Chunk Removal",
            AttackKind.COMBINED: "Noise & Dropout",
            AttackKind.CHUNK_SMOOTHING: "Chunk Removal + Smoothing",
        }
        return names[self.kind]

    def with_seed(self, seed: int) -> "AttackSpec":
        return replace(self, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackSpec":
        unknown = set(data) - {"kind", "params", "seed"}
        if unknown:
            raise ConfigError(f"unknown attack spec field(s): {', '.join(sorted(unknown))}")
        if "kind" not in data:
            raise InvalidAttackSpec("attack spec needs a 'kind'")
        params = data.get("params") or {}
        if not isinstance(params, dict):
            raise ConfigError(f"attack spec params must be an object, got {params!r}")
        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError(f"attack spec seed must be an integer, got {seed!r}")
        return cls(kind=data["kind"], params=dict(params), seed=seed)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AttackSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise CloudIOError(f"cannot read attack spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def apply_attack(cloud: Any, spec: AttackSpec) -> np.ndarray:
    """Apply one attack; raises EmptyResult if nothing would remain."""
    pts = as_cloud(cloud)
    out = _APPLY[spec.kind](pts, spec.params, make_rng(spec.seed))
    if len(out) == 0:
        raise EmptyResult(f"{spec.label} left no points (input had {len(pts)})")
    return out


def attack_catalogue(seed: int = 0) -> List[AttackSpec]:
    """The fifteen robustness-table attacks, in table order."""
    return [AttackSpec(kind=AttackKind(kind), params=dict(params), seed=seed)
            for kind, params in cfg.CATALOGUE]


def clean_attack() -> AttackSpec:
    return AttackSpec(kind=AttackKind.CLEAN)


def default_attacks(seed: int = 0) -> List[AttackSpec]:
    """Clean no-op row followed by the catalogue."""
    return [clean_attack()] + attack_catalogue(seed)


def resolve_attacks(names: List[str], seed: int = 0) -> List[AttackSpec]:
    """Select catalogue attacks by kind value or display label; 'clean' is always first."""
    catalogue = default_attacks(seed)
    chosen = [clean_attack()]
    for name in names:
        matches = [s for s in catalogue if name in (s.kind.value, s.label)]
        if not matches:
            try:
                matches = [AttackSpec(kind=name, seed=seed)]
            except InvalidAttackSpec:
                raise ConfigError(f"unknown attack '{name}'") from None
        chosen.extend(s for s in matches if s.kind is not AttackKind.CLEAN)
    return chosen
