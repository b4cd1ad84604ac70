"""Dataset manifest -- which mesh files are usable, their split and their watermark.

Provides:
    - build_manifest(): walk a class/{train,test}/*.off|*.ply tree (or a single
      file), sample every mesh once and drop files that fail to parse or sample
    - assign_watermark(): per-path pattern from a stable hash mixed with the seed
    - DatasetManifest: split views, cached cloud loading, balance report,
      disjointness check, JSON save/load

Usage:
    manifest = build_manifest("data/ModelNet40", n_points=1024, n_bits=3, seed=0)
    print(manifest.summary())
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.stats import chisquare

from point_watermark import watermark_config as cfg
from point_watermark.block_svd import Watermark
from point_watermark.errors import (
    CloudIOError,
    ConfigError,
    EmptyDataset,
    GeometryError,
    OverlapDetected,
)
from point_watermark.geometry_io import sample_file
from point_watermark.seeding import derive_seed, stable_hash64

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, Dict[str, Any]], None]

SPLITS = ("train", "test")


def assign_watermark(path: str, n_bits: int, seed: int) -> Watermark:
    """Pattern for ``path``: (seed-mixed 64-bit path hash) mod 2^n, MSB first."""
    value = derive_seed(seed, stable_hash64(path)) % (1 << n_bits)
    return Watermark.from_int(value, n_bits)


@dataclass(frozen=True)
class ManifestEntry:
    path: str          # relative to the manifest root, POSIX separators
    label: str
    split: str
    bits: Watermark

    def to_dict(self) -> Dict[str, Any]:
        return {"path": self.path, "label": self.label, "split": self.split, "bits": str(self.bits)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestEntry":
        return cls(
            path=data["path"],
            label=data.get("label", ""),
            split=data["split"],
            bits=Watermark.from_string(data["bits"]),
        )


@dataclass
class DatasetManifest:
    """Usable files of a dataset root with their split and assigned watermark."""

    root: Path
    n_points: int
    n_bits: int
    seed: int
    entries: List[ManifestEntry] = field(default_factory=list)
    exclusions: List[Tuple[str, str]] = field(default_factory=list)
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def train(self) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == "train"]

    @property
    def test(self) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == "test"]

    def load_cloud(self, entry: ManifestEntry) -> np.ndarray:
        """Normalized ``n_points`` cloud for ``entry``; sampled once, then cached."""
        with self._lock:
            cached = self._cache.get(entry.path)
        if cached is not None:
            return cached.copy()
        cloud = sample_file(self.root / entry.path, self.n_points, self.seed, stable_hash64(entry.path))
        with self._lock:
            self._cache.setdefault(entry.path, cloud)
        return cloud.copy()

    def class_counts(self) -> Dict[str, Dict[str, int]]:
        counts: Dict[str, Dict[str, int]] = {}
        for e in self.entries:
            counts.setdefault(e.label, {s: 0 for s in SPLITS})[e.split] += 1
        return dict(sorted(counts.items()))

    def pattern_counts(self, split: Optional[str] = None) -> List[int]:
        counts = [0] * (1 << self.n_bits)
        for e in self.entries:
            if split is None or e.split == split:
                counts[e.bits.to_int()] += 1
        return counts

    def balance_report(self, split: Optional[str] = None) -> Dict[str, Any]:
        """Chi-square goodness of fit of the pattern counts against uniform."""
        counts = self.pattern_counts(split)
        total = sum(counts)
        if total == 0:
            return {"counts": counts, "chi2": 0.0, "p_value": 1.0}
        result = chisquare(counts)
        return {"counts": counts, "chi2": float(result.statistic), "p_value": float(result.pvalue)}

    def check_disjoint(self) -> None:
        train = {e.path for e in self.train}
        overlap = sorted(train & {e.path for e in self.test})
        if overlap:
            raise OverlapDetected(f"{len(overlap)} file(s) in both splits, e.g. {overlap[0]}")

    def summary(self) -> str:
        lines = [
            f"Manifest: {len(self.train)} train / {len(self.test)} test "
            f"({len(self.exclusions)} excluded) from {self.root}",
        ]
        report = self.balance_report()
        lines.append(f"  Patterns: {report['counts']} (chi2={report['chi2']:.2f}, p={report['p_value']:.3f})")
        return "\n".join(lines)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "root": str(self.root),
            "n_points": self.n_points,
            "n_bits": self.n_bits,
            "seed": self.seed,
            "entries": [e.to_dict() for e in self.entries],
            "exclusions": [{"path": p, "reason": r} for p, r in self.exclusions],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetManifest":
        try:
            return cls(
                root=Path(data["root"]),
                n_points=int(data["n_points"]),
                n_bits=int(data["n_bits"]),
                seed=int(data["seed"]),
                entries=[ManifestEntry.from_dict(e) for e in data.get("entries", [])],
                exclusions=[(x["path"], x["reason"]) for x in data.get("exclusions", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid manifest: {exc}") from None

    def save(self, path: Union[str, Path]) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        except OSError as exc:
            raise CloudIOError(f"cannot write manifest {path}: {exc}") from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DatasetManifest":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CloudIOError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        manifest = cls.from_dict(data)
        manifest.check_disjoint()
        return manifest


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def _mesh_files(directory: Path) -> List[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in cfg.MESH_SUFFIXES)


def _candidates(root: Path) -> Tuple[Path, List[Tuple[str, str, str]]]:
    """(base dir, [(relative path, label, split)]) for a dataset root or a single file."""
    if root.is_file():
        return root.parent, [(root.name, root.parent.name, "test")]
    if not root.is_dir():
        raise CloudIOError(f"dataset root {root} does not exist")

    found: List[Tuple[str, str, str]] = []
    if any((root / s).is_dir() for s in SPLITS):
        groups = [(root, "")]
    else:
        groups = [(d, d.name) for d in sorted(root.iterdir()) if d.is_dir()]
    for base, label in groups:
        for split in SPLITS:
            split_dir = base / split
            if split_dir.is_dir():
                for f in _mesh_files(split_dir):
                    found.append((f.relative_to(root).as_posix(), label, split))
    return root, found


def build_manifest(
    root: Union[str, Path],
    n_points: int = cfg.N_POINTS,
    n_bits: int = cfg.N_BITS,
    seed: int = 0,
    max_workers: int = 1,
    progress_callback: Optional[ProgressCallback] = None,
) -> DatasetManifest:
    """Scan ``root``, sample every mesh once and keep the files that work.

    Files whose parse or sampling raises a geometry or I/O error are listed
    in ``exclusions`` with the reason.
    """
    def emit(event: str, data: Dict[str, Any]) -> None:
        if progress_callback:
            progress_callback(event, data)

    if n_points < 1 or n_bits < 1:
        raise ConfigError(f"n_points and n_bits must be >= 1, got {n_points}, {n_bits}")
    base, candidates = _candidates(Path(root))
    manifest = DatasetManifest(root=base, n_points=n_points, n_bits=n_bits, seed=seed)

    def check(item: Tuple[str, str, str]) -> Tuple[Optional[np.ndarray], str]:
        rel = item[0]
        try:
            return sample_file(base / rel, n_points, seed, stable_hash64(rel)), ""
        except (GeometryError, CloudIOError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(check, candidates))

    for (rel, label, split), (cloud, reason) in zip(candidates, results):
        if cloud is None:
            logger.warning("excluding %s: %s", rel, reason)
            manifest.exclusions.append((rel, reason))
            emit("file_excluded", {"path": rel, "reason": reason})
            continue
        manifest.entries.append(ManifestEntry(rel, label, split, assign_watermark(rel, n_bits, seed)))
        manifest._cache[rel] = cloud

    if not manifest.entries:
        raise EmptyDataset(f"no usable meshes under {root} ({len(manifest.exclusions)} excluded)")
    manifest.check_disjoint()
    logger.info("manifest: %d train, %d test, %d excluded",
                len(manifest.train), len(manifest.test), len(manifest.exclusions))
    emit("manifest_built", {"train": len(manifest.train), "test": len(manifest.test),
                            "excluded": len(manifest.exclusions)})
    return manifest
