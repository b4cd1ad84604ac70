"""Shared fixtures for the watermarking tests."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
import pytest

from point_watermark.dataset_manifest import build_manifest
from point_watermark.decoder_training import TrainingExample
from point_watermark.geometry_io import TriangleMesh, normalize, parse_off, sample_surface
from point_watermark.neural_decoder import DecoderConfig


# ---------------------------------------------------------------------------
# Mesh text
# ---------------------------------------------------------------------------

# Quads of an axis-aligned box whose vertex index is 4*ix + 2*iy + iz
BOX_QUADS = [
    (0, 1, 3, 2), (4, 5, 7, 6),
    (0, 1, 5, 4), (2, 3, 7, 6),
    (0, 2, 6, 4), (1, 3, 7, 5),
]


def box_off(sx: float = 2.0, sy: float = 1.0, sz: float = 0.5, header: str = "OFF\n") -> bytes:
    """ASCII OFF box centred on the origin, faces as quads."""
    corners = itertools.product((-sx / 2, sx / 2), (-sy / 2, sy / 2), (-sz / 2, sz / 2))
    lines = [f"{x} {y} {z}" for x, y, z in corners]
    faces = [f"4 {a} {b} {c} {d}" for a, b, c, d in BOX_QUADS]
    return (header + "8 6 0\n" + "\n".join(lines + faces) + "\n").encode("ascii")


def tetra_ply(face_name: str = "vertex_indices") -> bytes:
    return (
        "ply\n"
        "format ascii 1.0\n"
        "comment unit tetrahedron\n"
        "element vertex 4\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "element face 4\n"
        f"property list uchar int {face_name}\n"
        "end_header\n"
        "0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
        "3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n"
    ).encode("ascii")


@pytest.fixture
def box_mesh() -> TriangleMesh:
    """2 x 1 x 0.5 box, 12 triangles."""
    return parse_off(box_off())


# ---------------------------------------------------------------------------
# Cloud factories
# ---------------------------------------------------------------------------

@pytest.fixture
def make_cloud():
    """Factory for normalized clouds sampled from a box surface."""

    def _factory(n: int = 1024, seed: int = 0, dims=(2.0, 1.0, 0.5)) -> np.ndarray:
        mesh = parse_off(box_off(*dims))
        cloud, _ = normalize(sample_surface(mesh, n, seed))
        return cloud

    return _factory


@pytest.fixture
def make_examples(make_cloud):
    """Factory for training examples with random bit targets (no embedding)."""

    def _factory(count: int = 8, n_points: int = 48, n_bits: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        examples = []
        for i in range(count):
            dims = (1.0 + rng.random(), 0.5 + rng.random(), 0.25 + rng.random())
            examples.append(TrainingExample(
                path=f"synthetic/{i}.off",
                cloud=make_cloud(n_points, seed=seed * 1000 + i, dims=dims),
                bits=rng.integers(0, 2, size=n_bits),
            ))
        return examples

    return _factory


# ---------------------------------------------------------------------------
# Dataset tree
# ---------------------------------------------------------------------------

@pytest.fixture
def make_dataset(tmp_path):
    """Factory writing a class/{train,test}/*.off tree of boxes; returns its root."""

    def _factory(classes=("box", "slab"), n_train: int = 3, n_test: int = 3,
                 broken: bool = False, name: str = "data") -> Path:
        root = tmp_path / name
        for c, label in enumerate(classes):
            for split, count in (("train", n_train), ("test", n_test)):
                split_dir = root / label / split
                split_dir.mkdir(parents=True, exist_ok=True)
                for i in range(count):
                    dims = (1.5 + 0.3 * i + c, 1.0 + 0.1 * i, 0.4 + 0.2 * c)
                    (split_dir / f"{label}_{i:04d}.off").write_bytes(box_off(*dims))
        if broken:
            (root / classes[0] / "test" / "zz_broken.off").write_bytes(b"OFF\n8 6 0\n0 0 0\n")
        return root

    return _factory


@pytest.fixture
def make_manifest(make_dataset):
    """Factory for a manifest over a freshly written toy dataset."""

    def _factory(n_points: int = 256, n_bits: int = 3, seed: int = 0, **dataset_kwargs):
        return build_manifest(make_dataset(**dataset_kwargs), n_points=n_points, n_bits=n_bits, seed=seed)

    return _factory


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------

@pytest.fixture
def tiny_config() -> DecoderConfig:
    return DecoderConfig.tiny(n_bits=2)
