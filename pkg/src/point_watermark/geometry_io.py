"""Geometry I/O -- mesh parsing, surface sampling, normalization and cloud files.

Turns dataset meshes into the fixed-size, unit-normalized point clouds that the
rest of the pipeline works on:

    mesh = parse_off(path.read_bytes())
    cloud = sample_surface(mesh, 1024, seed=0, stream=stable_hash64("chair/train/chair_0001.off"))
    cloud, record = normalize(cloud)

Provides:
    - parse_off / parse_ply: ASCII readers with typed failures, fan triangulation
    - sample_surface: area-weighted triangle choice + uniform barycentric placement
    - normalize: zero mean, unit max norm, invertible through NormalizationRecord
    - read_cloud / write_cloud: PCB binary ("PCB1", u32 N, N*3 f64 LE) and XYZ text
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from point_watermark import watermark_config as cfg
from point_watermark.errors import (
    CloudIOError,
    ConfigError,
    CountMismatch,
    DegenerateCloud,
    EmptyCloud,
    IndexOutOfRange,
    MalformedHeader,
    MalformedRecord,
    NonFiniteCoordinate,
    ShapeMismatch,
    UnsupportedEncoding,
    ZeroAreaMesh,
)
from point_watermark.seeding import make_rng

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Data classes
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TriangleMesh:
    """Vertices (V, 3) and triangular faces (F, 3) of a parsed mesh."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise NonFiniteCoordinate("mesh has non-finite vertex coordinates")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise IndexOutOfRange(
                f"face index outside [0, {len(self.vertices)})"
            )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangle_areas(self) -> np.ndarray:
        if not self.n_faces:
            return np.zeros(0)
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def surface_area(self) -> float:
        return float(self.triangle_areas().sum())


@dataclass(eq=False)
class NormalizationRecord:
    """Centroid and scale removed by normalize(); invert() puts them back."""

    centroid: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DegenerateCloud(f"normalization scale must be positive, got {self.scale}")

    def apply(self, cloud: np.ndarray) -> np.ndarray:
        return (np.asarray(cloud, dtype=np.float64) - self.centroid) / self.scale

    def invert(self, cloud: np.ndarray) -> np.ndarray:
        return np.asarray(cloud, dtype=np.float64) * self.scale + self.centroid

    def to_dict(self) -> Dict[str, Any]:
        return {"centroid": [float(c) for c in self.centroid], "scale": self.scale}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormalizationRecord":
        return cls(centroid=data["centroid"], scale=data["scale"])


def as_cloud(points: Any) -> np.ndarray:
    """Validate and convert to a float64 (N, 3) array with N >= 1."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeMismatch(f"expected an (N, 3) point array, got shape {arr.shape}")
    if len(arr) == 0:
        raise EmptyCloud("point cloud is empty")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteCoordinate("point cloud has non-finite coordinates")
    return arr


# ---------------------------------------------------------------------------
# Text helpers
# ---------------------------------------------------------------------------

def _decode_ascii(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"{what} is not ASCII (byte {exc.start})") from None


def _token_lines(text: str) -> List[List[str]]:
    """Split into whitespace tokens per line; '#' comments and blank lines dropped."""
    lines = []
    for line in text.splitlines():
        tokens = line.split("#", 1)[0].split()
        if tokens:
            lines.append(tokens)
    return lines


def _parse_point(tokens: Sequence[str], lineno: int) -> Tuple[float, float, float]:
    if len(tokens) < 3:
        raise MalformedRecord(f"record {lineno}: expected 3 coordinates, got {len(tokens)}")
    try:
        x, y, z = (float(t) for t in tokens[:3])
    except ValueError:
        raise MalformedRecord(f"record {lineno}: non-numeric coordinate in {tokens[:3]}") from None
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise NonFiniteCoordinate(f"record {lineno}: non-finite coordinate {tokens[:3]}")
    return x, y, z


def _fan(indices: Sequence[int], n_vertices: int, lineno: int) -> List[Tuple[int, int, int]]:
    if len(indices) < 3:
        raise MalformedRecord(f"face {lineno}: polygon needs at least 3 vertices")
    for idx in indices:
        if idx < 0 or idx >= n_vertices:
            raise IndexOutOfRange(
                f"face {lineno}: vertex index {idx} outside [0, {n_vertices})"
            )
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _parse_ints(tokens: Sequence[str], what: str) -> List[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise MalformedRecord(f"{what}: non-integer value in {list(tokens)}") from None


def _mesh(vertices: List[Tuple[float, float, float]],
          triangles: List[Tuple[int, int, int]]) -> TriangleMesh:
    return TriangleMesh(
        vertices=np.array(vertices, dtype=np.float64).reshape(-1, 3),
        faces=np.array(triangles, dtype=np.int64).reshape(-1, 3),
    )


# ---------------------------------------------------------------------------
# OFF
# ---------------------------------------------------------------------------

def _off_counts(tokens: Sequence[str]) -> Tuple[int, int]:
    if len(tokens) < 2:
        raise MalformedHeader(f"OFF counts line needs vertex and face counts, got {list(tokens)}")
    try:
        counts = [int(t) for t in tokens[:3]]
    except ValueError:
        raise MalformedHeader(f"OFF counts are not integers: {list(tokens)}") from None
    if any(c < 0 for c in counts):
        raise MalformedHeader(f"OFF counts must be non-negative: {counts}")
    return counts[0], counts[1]


def parse_off(raw: bytes) -> TriangleMesh:
    """Parse an ASCII OFF mesh.

    Accepts an optional "OFF" header line, including the common variant where
    the counts follow the keyword on the same line ("OFF490 518 0").
    Polygons with more than three vertices are fan-triangulated.

    Raises:
        MalformedHeader: missing/invalid counts or non-ASCII input.
        CountMismatch: fewer vertex or face records than declared.
        IndexOutOfRange: a face references a vertex that does not exist.
        NonFiniteCoordinate: a vertex coordinate is nan or inf.
        MalformedRecord: a record has missing or non-numeric fields.
    """
    lines = _token_lines(_decode_ascii(raw, "OFF input"))
    if not lines:
        raise MalformedHeader("OFF input is empty")

    first, body = lines[0], lines[1:]
    if first[0].startswith("OFF"):
        rest = first[0][3:]
        tokens = ([rest] if rest else []) + first[1:]
        if not tokens:
            if not body:
                raise MalformedHeader("OFF header without a counts line")
            tokens, body = body[0], body[1:]
    else:
        tokens = first
    n_vertices, n_faces = _off_counts(tokens)

    if len(body) < n_vertices + n_faces:
        raise CountMismatch(
            f"OFF declares {n_vertices} vertices and {n_faces} faces, "
            f"but only {len(body)} records follow"
        )

    vertices = [_parse_point(body[i], i + 1) for i in range(n_vertices)]
    triangles: List[Tuple[int, int, int]] = []
    for j in range(n_faces):
        record = _parse_ints(body[n_vertices + j], f"face {j + 1}")
        size = record[0]
        if size < 0:
            raise MalformedRecord(f"face {j + 1}: negative vertex count {size}")
        if len(record) < size + 1:
            raise MalformedRecord(f"face {j + 1}: declares {size} vertices, has {len(record) - 1}")
        triangles.extend(_fan(record[1:size + 1], n_vertices, j + 1))
    return _mesh(vertices, triangles)


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

@dataclass
class _PlyElement:
    name: str
    count: int
    properties: List[Tuple[str, bool]]  # (name, is_list)


def _ply_header(text: str) -> List[_PlyElement]:
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != ["ply"]:
        raise MalformedHeader("PLY input must start with 'ply'")

    elements: List[_PlyElement] = []
    seen_format = False
    for tokens in lines[1:]:
        keyword = tokens[0]
        if keyword == "format":
            if len(tokens) < 2:
                raise MalformedHeader("PLY format line is incomplete")
            if tokens[1] != "ascii":
                raise UnsupportedEncoding(f"PLY encoding '{tokens[1]}' is not supported (ASCII only)")
            seen_format = True
        elif keyword == "element":
            if len(tokens) != 3:
                raise MalformedHeader(f"bad PLY element line: {' '.join(tokens)}")
            try:
                count = int(tokens[2])
            except ValueError:
                raise MalformedHeader(f"PLY element count is not an integer: {tokens[2]}") from None
            if count < 0:
                raise MalformedHeader(f"PLY element count is negative: {count}")
            elements.append(_PlyElement(tokens[1], count, []))
        elif keyword == "property":
            if not elements:
                raise MalformedHeader("PLY property declared before any element")
            if len(tokens) >= 5 and tokens[1] == "list":
                elements[-1].properties.append((tokens[4], True))
            elif len(tokens) == 3:
                elements[-1].properties.append((tokens[2], False))
            else:
                raise MalformedHeader(f"bad PLY property line: {' '.join(tokens)}")
        elif keyword in ("comment", "obj_info"):
            continue
        else:
            raise MalformedHeader(f"unknown PLY header keyword '{keyword}'")
    if not seen_format:
        raise MalformedHeader("PLY header has no format line")
    return elements


def _split_record(tokens: List[str], element: _PlyElement, lineno: int) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    pos = 0
    for name, is_list in element.properties:
        if pos >= len(tokens):
            raise MalformedRecord(f"{element.name} record {lineno}: too few values")
        if is_list:
            size = _parse_ints(tokens[pos:pos + 1], f"{element.name} record {lineno}")[0]
            if size < 0 or pos + 1 + size > len(tokens):
                raise MalformedRecord(f"{element.name} record {lineno}: list length {size} overruns record")
            values[name] = tokens[pos + 1:pos + 1 + size]
            pos += 1 + size
        else:
            values[name] = tokens[pos]
            pos += 1
    return values


def parse_ply(raw: bytes) -> TriangleMesh:
    """Parse an ASCII PLY mesh (``element vertex`` with x/y/z, ``element face`` with an index list).

    Raises:
        MalformedHeader: no 'ply' magic, no end_header, unknown keywords, no x/y/z.
        UnsupportedEncoding: binary PLY.
        CountMismatch: fewer records than the header declares.
        IndexOutOfRange: a face references a vertex that does not exist.
    """
    marker = raw.find(b"end_header")
    if marker < 0:
        raise MalformedHeader("PLY header has no end_header line")
    elements = _ply_header(_decode_ascii(raw[:marker], "PLY header"))

    try:
        body_text = raw[marker + len(b"end_header"):].decode("ascii")
    except UnicodeDecodeError:
        raise MalformedRecord("PLY body is not ASCII") from None
    body = _token_lines(body_text)

    by_name = {e.name: e for e in elements}
    vertex_el = by_name.get("vertex")
    if vertex_el is None:
        raise MalformedHeader("PLY header has no vertex element")
    names = {name for name, _ in vertex_el.properties}
    if not {"x", "y", "z"} <= names:
        raise MalformedHeader("PLY vertex element lacks x/y/z properties")
    if any(is_list for name, is_list in vertex_el.properties if name in ("x", "y", "z")):
        raise MalformedHeader("PLY vertex x/y/z must be scalar properties")

    total = sum(e.count for e in elements)
    if len(body) < total:
        raise CountMismatch(f"PLY header declares {total} records, found {len(body)}")

    vertices: List[Tuple[float, float, float]] = []
    face_lists: List[List[str]] = []
    cursor = 0
    for element in elements:
        for i in range(element.count):
            record = _split_record(body[cursor], element, i + 1)
            cursor += 1
            if element.name == "vertex":
                vertices.append(_parse_point([record["x"], record["y"], record["z"]], i + 1))
            elif element.name == "face":
                face_list = record.get("vertex_indices", record.get("vertex_index"))
                if not isinstance(face_list, list):
                    raise MalformedHeader("PLY face element has no vertex_indices list")
                face_lists.append(face_list)

    triangles: List[Tuple[int, int, int]] = []
    for j, face_list in enumerate(face_lists):
        triangles.extend(_fan(_parse_ints(face_list, f"face {j + 1}"), len(vertices), j + 1))
    return _mesh(vertices, triangles)


def load_mesh(path: PathLike) -> TriangleMesh:
    """Read and parse a mesh file, choosing the parser by suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in cfg.MESH_SUFFIXES:
        raise UnsupportedEncoding(f"unsupported mesh format '{suffix}' ({path.name})")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CloudIOError(f"cannot read mesh {path}: {exc}") from exc
    return parse_off(raw) if suffix == ".off" else parse_ply(raw)


# ---------------------------------------------------------------------------
# Sampling and normalization
# ---------------------------------------------------------------------------

def sample_surface(mesh: TriangleMesh, count: int, seed: int, stream: int = 0) -> np.ndarray:
    """Draw ``count`` points uniformly over the mesh surface.

    Triangles are chosen with probability proportional to area, then each
    point is placed with P = (1 - sqrt(r1)) A + sqrt(r1)(1 - r2) B + sqrt(r1) r2 C.
    The generator is keyed by (seed, stream) so results do not depend on the
    order in which files are processed.
    """
    if count < 1:
        raise ConfigError(f"sample count must be positive, got {count}")
    areas = mesh.triangle_areas()
    total = float(areas.sum())
    if not (math.isfinite(total) and total > 0.0):
        raise ZeroAreaMesh(f"mesh has no positive-area triangles ({mesh.n_faces} faces)")

    rng = make_rng(seed, stream)
    tri = rng.choice(len(areas), size=count, p=areas / total)
    r1 = rng.random(count)
    r2 = rng.random(count)

    s1 = np.sqrt(r1)
    a = mesh.vertices[mesh.faces[tri, 0]]
    b = mesh.vertices[mesh.faces[tri, 1]]
    c = mesh.vertices[mesh.faces[tri, 2]]
    return (1.0 - s1)[:, None] * a + (s1 * (1.0 - r2))[:, None] * b + (s1 * r2)[:, None] * c


def normalize(cloud: Any) -> Tuple[np.ndarray, NormalizationRecord]:
    """Center on the centroid and scale to unit maximum Euclidean norm."""
    pts = as_cloud(cloud)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.sqrt((centered * centered).sum(axis=1)).max())
    # identical points leave only rounding residue after centering
    floor = 8 * np.finfo(np.float64).eps * max(1.0, float(np.abs(pts).max()))
    if not scale > floor:
        raise DegenerateCloud(f"all {len(pts)} points coincide; cannot normalize")
    return centered / scale, NormalizationRecord(centroid=centroid, scale=scale)


def sample_file(path: PathLike, count: int, seed: int, stream: int = 0) -> np.ndarray:
    """Parse, sample and normalize one mesh file."""
    mesh = load_mesh(path)
    cloud, _ = normalize(sample_surface(mesh, count, seed, stream))
    return cloud


# ---------------------------------------------------------------------------
# Cloud files
# ---------------------------------------------------------------------------

_FORMATS = {".pcb": "pcb", ".xyz": "xyz", ".txt": "xyz"}


def _cloud_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is not None:
        if fmt not in ("pcb", "xyz"):
            raise ConfigError(f"unknown cloud format '{fmt}' (expected pcb or xyz)")
        return fmt
    try:
        return _FORMATS[path.suffix.lower()]
    except KeyError:
        raise ConfigError(f"cannot infer cloud format from '{path.name}'") from None


def encode_pcb(cloud: Any) -> bytes:
    pts = as_cloud(cloud)
    return cfg.PCB_MAGIC + struct.pack("<I", len(pts)) + pts.astype("<f8").tobytes()


def decode_pcb(data: bytes) -> np.ndarray:
    header = len(cfg.PCB_MAGIC) + 4
    if len(data) < header or data[:len(cfg.PCB_MAGIC)] != cfg.PCB_MAGIC:
        raise MalformedRecord("not a PCB cloud (bad magic or short header)")
    (n,) = struct.unpack_from("<I", data, len(cfg.PCB_MAGIC))
    expected = header + 24 * n
    if len(data) != expected:
        raise MalformedRecord(f"PCB payload is {len(data) - header} bytes, expected {24 * n}")
    if n == 0:
        raise MalformedRecord("PCB cloud has no points")
    pts = np.frombuffer(data, dtype="<f8", count=3 * n, offset=header).reshape(n, 3)
    return as_cloud(pts.astype(np.float64))


def parse_xyz(text: str) -> np.ndarray:
    lines = _token_lines(text)
    if not lines:
        raise MalformedRecord("XYZ file has no points")
    return as_cloud([_parse_point(tokens, i + 1) for i, tokens in enumerate(lines)])


def write_cloud(cloud: Any, path: PathLike, fmt: Optional[str] = None) -> Path:
    """Write a cloud as PCB (bit-exact) or XYZ text (9 significant digits)."""
    path = Path(path)
    fmt = _cloud_format(path, fmt)
    pts = as_cloud(cloud)
    try:
        if fmt == "pcb":
            path.write_bytes(encode_pcb(pts))
        else:
            np.savetxt(path, pts, fmt=f"%.{cfg.XYZ_DIGITS}g")
    except OSError as exc:
        raise CloudIOError(f"cannot write cloud {path}: {exc}") from exc
    logger.debug("wrote %d points to %s (%s)", len(pts), path, fmt)
    return path


def read_cloud(path: PathLike, fmt: Optional[str] = None) -> np.ndarray:
    path = Path(path)
    fmt = _cloud_format(path, fmt)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CloudIOError(f"cannot read cloud {path}: {exc}") from exc
    if fmt == "pcb":
        return decode_pcb(data)
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedRecord(f"{path.name} is not an ASCII XYZ file") from None
    return parse_xyz(text)
