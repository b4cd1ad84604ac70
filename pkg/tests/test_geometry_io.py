"""Tests for point_watermark.geometry_io.

Covers:
    - parse_off(): counts, same-line header variant, comments, fan triangulation, typed failures
    - parse_ply(): ASCII meshes, extra properties/elements, binary rejection
    - corrupted OFF, PLY, PCB and XYZ input raises only typed errors
    - sample_surface(): determinism per (seed, stream), on-surface points, area weighting
    - normalize(): unit max norm, zero centroid, invertibility, degenerate input, idempotence
    - read_cloud() / write_cloud(): PCB bit-exactness, XYZ precision, malformed files
"""

from __future__ import annotations

import numpy as np
import pytest

from conftest import box_off, tetra_ply
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
    WatermarkError,
    ZeroAreaMesh,
)
from point_watermark.geometry_io import (
    NormalizationRecord,
    TriangleMesh,
    decode_pcb,
    encode_pcb,
    load_mesh,
    normalize,
    parse_off,
    parse_ply,
    parse_xyz,
    read_cloud,
    sample_file,
    sample_surface,
    write_cloud,
)


# ═══════════════════════════════════════════════════════════════════════════════
# OFF parsing
# ═══════════════════════════════════════════════════════════════════════════════


class TestParseOff:
    """ASCII OFF parsing."""

    def test_box_counts(self):
        mesh = parse_off(box_off())
        assert mesh.n_vertices == 8
        assert mesh.n_faces == 12
        assert mesh.surface_area == pytest.approx(2 * (2 * 1 + 2 * 0.5 + 1 * 0.5))

    def test_counts_on_header_line(self):
        text = box_off().decode().replace("OFF\n8 6 0\n", "OFF8 6 0\n")
        mesh = parse_off(text.encode())
        assert mesh.n_faces == 12

    def test_header_keyword_optional(self):
        mesh = parse_off(box_off(header=""))
        assert mesh.n_vertices == 8

    def test_comments_and_blank_lines_ignored(self):
        raw = b"OFF\n# a comment\n\n3 1 0\n0 0 0 # origin\n1 0 0\n0 1 0\n3 0 1 2\n"
        mesh = parse_off(raw)
        assert mesh.n_faces == 1
        assert mesh.surface_area == pytest.approx(0.5)

    def test_quad_fan_triangulation(self):
        raw = b"OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        mesh = parse_off(raw)
        assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]

    # --- Failures ---

    def test_too_few_records(self):
        with pytest.raises(CountMismatch):
            parse_off(b"OFF\n8 6 0\n0 0 0\n")

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n")

    def test_non_finite_vertex(self):
        with pytest.raises(NonFiniteCoordinate):
            parse_off(b"OFF\n3 1 0\n0 0 nan\n1 0 0\n0 1 0\n3 0 1 2\n")

    def test_non_ascii(self):
        with pytest.raises(MalformedHeader):
            parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2 é\n".encode("utf-8"))

    def test_empty_input(self):
        with pytest.raises(MalformedHeader):
            parse_off(b"")

    def test_bad_counts(self):
        with pytest.raises(MalformedHeader):
            parse_off(b"OFF\nthree one zero\n")

    def test_polygon_with_two_vertices(self):
        with pytest.raises(MalformedRecord):
            parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n")

    def test_non_numeric_coordinate(self):
        with pytest.raises(MalformedRecord):
            parse_off(b"OFF\n3 1 0\n0 0 x\n1 0 0\n0 1 0\n3 0 1 2\n")


# ═══════════════════════════════════════════════════════════════════════════════
# PLY parsing
# ═══════════════════════════════════════════════════════════════════════════════


class TestParsePly:
    """ASCII PLY parsing."""

    def test_tetrahedron(self):
        mesh = parse_ply(tetra_ply())
        assert mesh.n_vertices == 4
        assert mesh.n_faces == 4

    def test_vertex_index_name(self):
        assert parse_ply(tetra_ply("vertex_index")).n_faces == 4

    def test_extra_properties_and_elements_skipped(self):
        raw = (
            b"ply\nformat ascii 1.0\n"
            b"element vertex 3\nproperty float x\nproperty float nx\nproperty float y\nproperty float z\n"
            b"element face 1\nproperty list uchar int vertex_indices\n"
            b"element edge 1\nproperty int vertex1\nproperty int vertex2\n"
            b"end_header\n"
            b"0 9 0 0\n1 9 0 0\n0 9 1 0\n3 0 1 2\n0 1\n"
        )
        mesh = parse_ply(raw)
        np.testing.assert_array_equal(mesh.vertices[1], [1.0, 0.0, 0.0])
        assert mesh.surface_area == pytest.approx(0.5)

    def test_binary_rejected(self):
        raw = tetra_ply().replace(b"format ascii 1.0", b"format binary_little_endian 1.0")
        with pytest.raises(UnsupportedEncoding):
            parse_ply(raw)

    def test_missing_end_header(self):
        with pytest.raises(MalformedHeader):
            parse_ply(b"ply\nformat ascii 1.0\nelement vertex 0\n")

    def test_missing_magic(self):
        with pytest.raises(MalformedHeader):
            parse_ply(tetra_ply()[4:])

    def test_too_few_records(self):
        raw = tetra_ply().rsplit(b"3 1 2 3\n", 1)[0]
        with pytest.raises(CountMismatch):
            parse_ply(raw)


class TestLoadMesh:
    """Suffix dispatch and file errors."""

    def test_dispatch_on_suffix(self, tmp_path):
        (tmp_path / "t.ply").write_bytes(tetra_ply())
        (tmp_path / "b.off").write_bytes(box_off())
        assert load_mesh(tmp_path / "t.ply").n_faces == 4
        assert load_mesh(tmp_path / "b.off").n_faces == 12

    def test_unknown_suffix(self, tmp_path):
        (tmp_path / "m.obj").write_text("v 0 0 0\n")
        with pytest.raises(UnsupportedEncoding):
            load_mesh(tmp_path / "m.obj")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CloudIOError):
            load_mesh(tmp_path / "missing.off")


FUZZ_TOKENS = (b"-1", b"0", b"3", b"99999999999999999999", b"nan", b"1e999", b"list",
               b"#", b"\n", b" ", b"x", b"OFF", b"element", b"property", b"\xff")


def mutate(raw: bytes, rng: np.random.Generator) -> bytes:
    """One random flip, truncation, deletion or token insertion."""
    data = bytearray(raw)
    pos = int(rng.integers(0, len(data)))
    op = int(rng.integers(0, 4))
    if op == 0:
        data[pos] = int(rng.integers(0, 256))
    elif op == 1:
        del data[pos:]
    elif op == 2:
        del data[pos:pos + int(rng.integers(1, 12))]
    else:
        token = FUZZ_TOKENS[int(rng.integers(0, len(FUZZ_TOKENS)))]
        data[pos:pos] = b" " + token + b" "
    return bytes(data)


class TestParserFuzz:
    """Corrupted mesh input either parses or fails with a typed error."""

    @pytest.mark.parametrize("parser, source", [
        (parse_off, box_off()),
        (parse_ply, tetra_ply()),
    ], ids=["off", "ply"])
    def test_only_typed_errors(self, parser, source):
        rng = np.random.default_rng(31)
        parsed = 0
        for _ in range(2000):
            raw = source
            for _ in range(int(rng.integers(1, 4))):
                if raw:
                    raw = mutate(raw, rng)
            try:
                mesh = parser(raw)
            except WatermarkError:
                continue
            assert isinstance(mesh, TriangleMesh)
            parsed += 1
        assert parsed < 2000

    def test_pcb_and_xyz_only_typed_errors(self, make_cloud):
        rng = np.random.default_rng(32)
        cloud = make_cloud(20)
        pcb = encode_pcb(cloud)
        xyz = "\n".join(" ".join(f"{c:.6f}" for c in p) for p in cloud).encode("ascii")
        for _ in range(1000):
            for raw, decode in ((pcb, decode_pcb), (xyz, lambda b: parse_xyz(b.decode("latin-1")))):
                try:
                    out = decode(mutate(raw, rng))
                except WatermarkError:
                    continue
                assert out.ndim == 2 and out.shape[1] == 3


# ═══════════════════════════════════════════════════════════════════════════════
# Surface sampling
# ═══════════════════════════════════════════════════════════════════════════════


class TestSampleSurface:
    """Area-weighted surface sampling."""

    def test_shape_and_determinism(self, box_mesh):
        a = sample_surface(box_mesh, 500, seed=3, stream=11)
        b = sample_surface(box_mesh, 500, seed=3, stream=11)
        assert a.shape == (500, 3)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_independent(self, box_mesh):
        a = sample_surface(box_mesh, 200, seed=3, stream=1)
        b = sample_surface(box_mesh, 200, seed=3, stream=2)
        assert not np.array_equal(a, b)

    def test_points_lie_on_box_faces(self, box_mesh):
        pts = sample_surface(box_mesh, 2000, seed=0)
        half = np.array([1.0, 0.5, 0.25])
        assert np.all(np.abs(pts) <= half + 1e-12)
        on_face = np.any(np.isclose(np.abs(pts), half, rtol=0, atol=1e-12), axis=1)
        assert on_face.all()

    def test_area_weighting(self):
        # two disjoint triangles, the second three times the area of the first
        mesh = TriangleMesh(
            vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [5, 0, 0], [8, 0, 0], [5, 1, 0]],
            faces=[[0, 1, 2], [3, 4, 5]],
        )
        pts = sample_surface(mesh, 20000, seed=1)
        share = np.mean(pts[:, 0] > 2.5)
        assert share == pytest.approx(0.75, abs=0.02)

    def test_zero_area_mesh(self):
        mesh = TriangleMesh(vertices=[[0, 0, 0], [1, 1, 1], [2, 2, 2]], faces=[[0, 1, 2]])
        with pytest.raises(ZeroAreaMesh):
            sample_surface(mesh, 10, seed=0)

    def test_non_positive_count(self, box_mesh):
        with pytest.raises(ConfigError):
            sample_surface(box_mesh, 0, seed=0)

    def test_sample_file_is_normalized(self, tmp_path):
        path = tmp_path / "box.off"
        path.write_bytes(box_off())
        cloud = sample_file(path, 256, seed=0)
        assert np.linalg.norm(cloud.mean(axis=0)) < 1e-12
        assert np.linalg.norm(cloud, axis=1).max() == pytest.approx(1.0, abs=1e-12)


# ═══════════════════════════════════════════════════════════════════════════════
# Normalization
# ═══════════════════════════════════════════════════════════════════════════════


class TestNormalize:
    """Centring and unit-sphere scaling."""

    def test_unit_max_norm_and_zero_centroid(self):
        rng = np.random.default_rng(0)
        cloud = rng.normal(size=(300, 3)) * [3.0, 1.0, 0.2] + [10.0, -4.0, 2.0]
        out, record = normalize(cloud)
        assert np.linalg.norm(out.mean(axis=0)) < 1e-12
        assert np.linalg.norm(out, axis=1).max() == pytest.approx(1.0, abs=1e-12)
        assert record.scale > 0

    def test_invert_reconstructs_input(self):
        rng = np.random.default_rng(1)
        cloud = rng.uniform(-50, 50, size=(100, 3))
        out, record = normalize(cloud)
        np.testing.assert_allclose(record.invert(out), cloud, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(record.apply(cloud), out, rtol=0, atol=1e-12)

    def test_record_dict_round_trip(self):
        record = NormalizationRecord(centroid=[1.0, 2.0, 3.0], scale=0.5)
        back = NormalizationRecord.from_dict(record.to_dict())
        np.testing.assert_array_equal(back.centroid, record.centroid)
        assert back.scale == record.scale

    def test_coincident_points(self):
        with pytest.raises(DegenerateCloud):
            normalize(np.full((10, 3), 0.3))

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            normalize(np.zeros((0, 3)))

    def test_wrong_shape(self):
        with pytest.raises(ShapeMismatch):
            normalize(np.zeros((5, 2)))

    def test_two_points(self):
        out, record = normalize(np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]))
        h = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(record.centroid, [1.0, 1.0, 0.0], rtol=0, atol=1e-12)
        assert record.scale == pytest.approx(np.sqrt(2.0), abs=1e-12)
        np.testing.assert_allclose(out, [[h, -h, 0.0], [-h, h, 0.0]], rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        once, _ = normalize(rng.normal(size=(200, 3)) * 4.0 + 7.0)
        twice, record = normalize(once)
        np.testing.assert_allclose(twice, once, rtol=0, atol=1e-12)
        np.testing.assert_allclose(record.centroid, 0.0, rtol=0, atol=1e-12)
        assert record.scale == pytest.approx(1.0, abs=1e-12)


# ═══════════════════════════════════════════════════════════════════════════════
# Cloud files
# ═══════════════════════════════════════════════════════════════════════════════


class TestCloudFiles:
    """PCB and XYZ cloud files."""

    def test_pcb_is_bit_exact(self, tmp_path, make_cloud):
        cloud = make_cloud(300)
        path = write_cloud(cloud, tmp_path / "c.pcb")
        np.testing.assert_array_equal(read_cloud(path), cloud)

    def test_pcb_layout(self):
        data = encode_pcb([[1.0, 2.0, 3.0]])
        assert data[:4] == b"PCB1"
        assert int.from_bytes(data[4:8], "little") == 1
        assert len(data) == 8 + 24

    def test_xyz_precision(self, tmp_path, make_cloud):
        cloud = make_cloud(300)
        path = write_cloud(cloud, tmp_path / "c.xyz")
        np.testing.assert_allclose(read_cloud(path), cloud, rtol=0, atol=1e-8)

    def test_explicit_format_overrides_suffix(self, tmp_path, make_cloud):
        cloud = make_cloud(50)
        path = write_cloud(cloud, tmp_path / "c.bin", fmt="pcb")
        np.testing.assert_array_equal(read_cloud(path, fmt="pcb"), cloud)

    def test_bad_magic(self):
        with pytest.raises(MalformedRecord):
            decode_pcb(b"XXXX" + bytes(4))

    def test_truncated_payload(self):
        data = encode_pcb([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        with pytest.raises(MalformedRecord):
            decode_pcb(data[:-8])

    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(ConfigError):
            write_cloud([[0.0, 0.0, 0.0]], tmp_path / "c.las")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CloudIOError):
            read_cloud(tmp_path / "missing.pcb")

    def test_malformed_xyz_line(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("0 0 0\n1 2\n")
        with pytest.raises(MalformedRecord):
            read_cloud(path)
