"""Block SVD watermark -- n bits in the leading singular values of n point blocks.

Points are sorted lexicographically by (x, y, z, original index) and split into
n contiguous, nearly equal index ranges. Bit i moves the largest singular
value of block i with a rank-1 update along its leading singular pair:

    REFERENCE  sigma' = sigma + alpha * b          (key keeps the original sigmas)
    QIM        sigma' = alpha * (floor(sigma / alpha) + 0.25 + 0.5 * b)   (blind)

Extraction always re-sorts and re-normalizes, so shuffling, uniform scaling
and translation of a watermarked cloud leave the decoded bits unchanged. With
``normalized_embedding`` the key also carries the normalization record of the
watermarked cloud; extraction maps the re-normalized cloud back through it so
spectra are read in the frame they were written in.

Usage:
    wm_cloud, key = embed(cloud, Watermark.from_string("101"))
    assert extract(wm_cloud, key) == Watermark.from_string("101")
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from point_watermark import watermark_config as cfg
from point_watermark.errors import (
    CloudIOError,
    ConfigError,
    EmbedNonConvergent,
    InvalidWatermark,
    NonNormalizedInput,
    ShapeMismatch,
    TooFewPoints,
)
from point_watermark.geometry_io import NormalizationRecord, as_cloud, normalize

logger = logging.getLogger(__name__)


class EmbedMode(Enum):
    """How a bit is written into a block's leading singular value."""

    REFERENCE = "reference"
    QIM = "qim"


# ---------------------------------------------------------------------------
# Data classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Watermark:
    """An n-bit payload, most significant bit first."""

    bits: Tuple[int, ...]

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        if not bits:
            raise InvalidWatermark("watermark needs at least one bit")
        if any(b not in (0, 1) for b in bits):
            raise InvalidWatermark(f"watermark bits must be 0 or 1, got {bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text: str) -> "Watermark":
        if not text or any(ch not in "01" for ch in text):
            raise InvalidWatermark(f"watermark string must be 0/1 digits, got {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @classmethod
    def from_int(cls, value: int, n_bits: int) -> "Watermark":
        if n_bits < 1 or not 0 <= value < (1 << n_bits):
            raise InvalidWatermark(f"{value} does not fit in {n_bits} bits")
        return cls(tuple((value >> (n_bits - 1 - i)) & 1 for i in range(n_bits)))

    @classmethod
    def coerce(cls, value: Union["Watermark", str, Sequence[int]]) -> "Watermark":
        if isinstance(value, Watermark):
            return value
        if isinstance(value, str):
            return cls.from_string(value)
        return cls(tuple(value))

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def to_int(self) -> int:
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return value

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int64)


@dataclass
class BlockPartition:
    """Lexicographic order of the points and the n contiguous block ranges over it."""

    sorted_order: np.ndarray
    ranges: List[Tuple[int, int]]

    @classmethod
    def of(cls, cloud: np.ndarray, n_blocks: int) -> "BlockPartition":
        return cls(sorted_order=lex_sort(cloud), ranges=partition_ranges(len(cloud), n_blocks))

    def block_indices(self) -> Iterable[np.ndarray]:
        for start, stop in self.ranges:
            yield self.sorted_order[start:stop]


@dataclass
class BlockSpectrum:
    """Singular values (descending, padded to 3) and the sign-fixed leading pair."""

    sigmas: np.ndarray
    u1: np.ndarray
    v1: np.ndarray

    @property
    def sigma1(self) -> float:
        return float(self.sigmas[0])


@dataclass
class BlockUpdate:
    block: np.ndarray
    sigma: float
    target: float

    @property
    def shift(self) -> float:
        return self.target - self.sigma


@dataclass
class EmbedConfig:
    """Embedding options shared by the CLI, trainer and evaluation harness."""

    mode: EmbedMode = EmbedMode.REFERENCE
    alpha: float = cfg.ALPHA
    normalized_embedding: bool = True
    max_iterations: int = cfg.MAX_EMBED_ITERATIONS

    def __post_init__(self) -> None:
        if not isinstance(self.mode, EmbedMode):
            try:
                self.mode = EmbedMode(str(self.mode).lower())
            except ValueError:
                raise ConfigError(f"mode must be 'reference' or 'qim', got {self.mode!r}") from None
        self.validate()

    def validate(self) -> None:
        if not (isinstance(self.alpha, (int, float)) and math.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be a positive number, got {self.alpha!r}")
        if int(self.max_iterations) < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "alpha": self.alpha,
            "normalized_embedding": self.normalized_embedding,
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EmbedConfig":
        unknown = set(data) - {"mode", "alpha", "normalized_embedding", "max_iterations"}
        if unknown:
            raise ConfigError(f"unknown embed config field(s): {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class EmbedKey:
    """Everything extraction needs besides the cloud itself.

    A key file may omit "normalization" (mode, alpha, n_bits,
    reference_sigmas and normalized_embedding only). Loading such a file with
    ``normalized_embedding`` set uses the identity record, so spectra are read
    in the unit frame.
    """

    mode: EmbedMode
    alpha: float
    n_bits: int
    reference_sigmas: Optional[Tuple[float, ...]] = None
    normalized_embedding: bool = True
    normalization: Optional[NormalizationRecord] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        self.mode = EmbedMode(self.mode)
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.n_bits < 1:
            raise ConfigError(f"n_bits must be >= 1, got {self.n_bits}")
        if self.mode is EmbedMode.REFERENCE:
            if self.reference_sigmas is None or len(self.reference_sigmas) != self.n_bits:
                raise ConfigError("reference mode needs one reference sigma per bit")
            self.reference_sigmas = tuple(float(s) for s in self.reference_sigmas)
            if any(s < 0 or not math.isfinite(s) for s in self.reference_sigmas):
                raise ConfigError("reference sigmas must be finite and non-negative")
        elif self.reference_sigmas is not None:
            raise ConfigError("qim mode does not take reference sigmas")
        if self.normalized_embedding and self.normalization is None:
            raise ConfigError("normalized_embedding needs a normalization record")

    @property
    def frame(self) -> Optional[NormalizationRecord]:
        return self.normalization if self.normalized_embedding else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "alpha": self.alpha,
            "n_bits": self.n_bits,
            "reference_sigmas": list(self.reference_sigmas) if self.reference_sigmas is not None else None,
            "normalized_embedding": self.normalized_embedding,
            "normalization": self.normalization.to_dict() if self.normalization is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EmbedKey":
        known = {"mode", "alpha", "n_bits", "reference_sigmas", "normalized_embedding", "normalization"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown key field(s): {', '.join(sorted(unknown))}")
        try:
            record = data.get("normalization")
            normalized = bool(data.get("normalized_embedding", False))
            if normalized and not record:
                logger.warning("key has no normalization record; reading spectra in the unit frame")
                record = {"centroid": [0.0, 0.0, 0.0], "scale": 1.0}
            return cls(
                mode=EmbedMode(data["mode"]),
                alpha=float(data["alpha"]),
                n_bits=int(data["n_bits"]),
                reference_sigmas=data.get("reference_sigmas"),
                normalized_embedding=normalized,
                normalization=NormalizationRecord.from_dict(record) if record else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid embed key: {exc}") from None

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EmbedKey":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CloudIOError(f"cannot read key {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def lex_sort(cloud: Any) -> np.ndarray:
    """Indices sorting points by x, then y, then z, then original index."""
    pts = np.asarray(cloud, dtype=np.float64)
    return np.lexsort((np.arange(len(pts)), pts[:, 2], pts[:, 1], pts[:, 0]))


def partition_ranges(n_points: int, n_blocks: int) -> List[Tuple[int, int]]:
    """Range i = [floor(i*N/n), floor((i+1)*N/n))."""
    if n_blocks < 1:
        raise ConfigError(f"block count must be >= 1, got {n_blocks}")
    if n_points < n_blocks:
        raise TooFewPoints(f"cloud has {n_points} points, need at least {n_blocks}")
    return [(i * n_points // n_blocks, (i + 1) * n_points // n_blocks) for i in range(n_blocks)]


def block_svd(block: Any) -> BlockSpectrum:
    """Singular values and sign-fixed leading singular vectors of an m x 3 block.

    The largest-magnitude component of v1 is made positive (first one on ties)
    and u1 = X v1 / sigma1, so X v1 = sigma1 u1 holds by construction. A zero
    block gets v1 = (1, 0, 0) and u1 = e1.
    """
    x = np.asarray(block, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3 or x.shape[0] < 1:
        raise ShapeMismatch(f"block must be m x 3 with m >= 1, got shape {x.shape}")

    m = x.shape[0]
    if not np.any(x):
        u1 = np.zeros(m)
        u1[0] = 1.0
        return BlockSpectrum(sigmas=np.zeros(3), u1=u1, v1=np.array([1.0, 0.0, 0.0]))

    _, s, vt = np.linalg.svd(x, full_matrices=False)
    sigmas = np.zeros(3)
    sigmas[:len(s)] = s
    v1 = vt[0].copy()
    if v1[int(np.argmax(np.abs(v1)))] < 0:
        v1 = -v1
    u1 = x @ v1 / sigmas[0]
    return BlockSpectrum(sigmas=sigmas, u1=u1, v1=v1)


def target_sigma(sigma: float, bit: int, alpha: float, mode: EmbedMode,
                 reference: Optional[float] = None) -> float:
    if mode is EmbedMode.REFERENCE:
        base = sigma if reference is None else reference
        return base + alpha * bit
    return alpha * (math.floor(sigma / alpha) + cfg.QIM_LOW_OFFSET + cfg.QIM_BIT_OFFSET * bit)


def embed_block(block: Any, bit: int, alpha: float, mode: EmbedMode,
                reference: Optional[float] = None) -> BlockUpdate:
    """Rank-1 update X' = X + (sigma' - sigma) u1 v1^T of a single block."""
    x = np.asarray(block, dtype=np.float64)
    spectrum = block_svd(x)
    target = target_sigma(spectrum.sigma1, bit, alpha, EmbedMode(mode), reference)
    shift = target - spectrum.sigma1
    if shift == 0.0:
        return BlockUpdate(block=x.copy(), sigma=spectrum.sigma1, target=target)
    updated = x + shift * np.outer(spectrum.u1, spectrum.v1)
    return BlockUpdate(block=updated, sigma=spectrum.sigma1, target=target)


def _block_sigmas(pts: np.ndarray, n_bits: int) -> np.ndarray:
    partition = BlockPartition.of(pts, n_bits)
    return np.array([block_svd(pts[idx]).sigma1 for idx in partition.block_indices()])


def leading_sigmas(cloud: Any, n_bits: int,
                   frame: Optional[NormalizationRecord] = None) -> np.ndarray:
    """Per-block sigma1 as extraction sees it.

    The cloud is sorted first and then normalized; normalization is a positive
    similarity, so the order is the same one a sort after normalization gives,
    and any permutation of the input yields the identical normalized array.
    """
    pts = as_cloud(cloud)
    if len(pts) < n_bits:
        raise TooFewPoints(f"cloud has {len(pts)} points, need at least {n_bits}")
    canonical, _ = normalize(pts[lex_sort(pts)])
    if frame is not None:
        canonical = frame.invert(canonical)
    return np.array([
        block_svd(canonical[start:stop]).sigma1
        for start, stop in partition_ranges(len(canonical), n_bits)
    ])


def decode_sigmas(sigmas: Sequence[float], key: EmbedKey) -> Watermark:
    sig = np.asarray(sigmas, dtype=np.float64)
    if len(sig) != key.n_bits:
        raise ShapeMismatch(f"expected {key.n_bits} sigmas, got {len(sig)}")
    if key.mode is EmbedMode.REFERENCE:
        ref = np.asarray(key.reference_sigmas, dtype=np.float64)
        bits = (sig - ref) / key.alpha >= cfg.REFERENCE_THRESHOLD
    else:
        ratio = sig / key.alpha
        bits = (ratio - np.floor(ratio)) >= cfg.QIM_BIT_OFFSET
    return Watermark(tuple(int(b) for b in bits))


def frame_record(cloud: np.ndarray) -> NormalizationRecord:
    """Normalization record exactly as extraction computes it (after sorting)."""
    return normalize(cloud[lex_sort(cloud)])[1]


def _check_normalized(pts: np.ndarray) -> None:
    tol = cfg.NORMALIZATION_TOLERANCE
    centroid = np.linalg.norm(pts.mean(axis=0))
    max_norm = float(np.linalg.norm(pts, axis=1).max())
    if centroid > tol or abs(max_norm - 1.0) > tol:
        raise NonNormalizedInput(
            f"cloud must be normalized (centroid norm {centroid:.3g}, max norm {max_norm:.6f})"
        )


# ---------------------------------------------------------------------------
# Embed / extract
# ---------------------------------------------------------------------------

def _embed_pass(current: np.ndarray, wm: Watermark, mode: EmbedMode, alpha: float,
                reference: Optional[Tuple[float, ...]]) -> np.ndarray:
    out = current.copy()
    partition = BlockPartition.of(current, len(wm))
    for i, idx in enumerate(partition.block_indices()):
        ref = reference[i] if reference is not None else None
        out[idx] = embed_block(current[idx], wm.bits[i], alpha, mode, ref).block
    return out


def embed(
    cloud: Any,
    wm: Union[Watermark, str, Sequence[int]],
    alpha: float = cfg.ALPHA,
    mode: Union[EmbedMode, str] = EmbedMode.REFERENCE,
    *,
    normalized_embedding: bool = True,
    max_iterations: int = cfg.MAX_EMBED_ITERATIONS,
) -> Tuple[np.ndarray, EmbedKey]:
    """Embed ``wm`` into a normalized cloud; returns the watermarked cloud and its key.

    Points keep their input order. The loop re-embeds until extraction of
    the output with the returned key yields ``wm`` exactly.

    Raises:
        NonNormalizedInput: centroid or max norm off by more than 1e-6.
        TooFewPoints: fewer points than bits.
        EmbedNonConvergent: no exact round trip within ``max_iterations`` passes.
    """
    pts = as_cloud(cloud)
    wm = Watermark.coerce(wm)
    mode = EmbedMode(mode)
    EmbedConfig(mode=mode, alpha=alpha, max_iterations=max_iterations)
    n_bits = len(wm)
    if len(pts) < n_bits:
        raise TooFewPoints(f"cloud has {len(pts)} points, need at least {n_bits}")
    _check_normalized(pts)

    reference = None
    if mode is EmbedMode.REFERENCE:
        reference = tuple(float(s) for s in _block_sigmas(pts, n_bits))

    current = pts
    decoded = None
    for iteration in range(1, max_iterations + 1):
        current = _embed_pass(current, wm, mode, alpha, reference)
        key = EmbedKey(
            mode=mode,
            alpha=alpha,
            n_bits=n_bits,
            reference_sigmas=reference,
            normalized_embedding=normalized_embedding,
            normalization=frame_record(current) if normalized_embedding else None,
        )
        decoded = extract(current, key)
        if decoded == wm:
            if iteration > 1:
                logger.debug("embed converged after %d passes", iteration)
            return current, key
        if not normalized_embedding:
            current, _ = normalize(current)

    raise EmbedNonConvergent(
        f"watermark {wm} not recoverable after {max_iterations} passes (last read {decoded})"
    )


def extract(cloud: Any, key: EmbedKey) -> Watermark:
    """Recover the watermark: re-sort, re-normalize, read block spectra, threshold."""
    return decode_sigmas(leading_sigmas(cloud, key.n_bits, key.frame), key)
