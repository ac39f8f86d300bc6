import json
import os

import numpy as np
import pytest

from dcfg import io, manifold
from dcfg.errors import InputError, MalformedRecord, NonFiniteNumber, ParseError, UnnormalizedQuaternion
from dcfg.graph import NoiseModel
from dcfg.io import G2oDocument
from dcfg.manifold import SE2, SE3, Pose3

from fuzzing import fuzz_parsers, random_document, random_information

IDENTITY_INFO_SE3 = " ".join("1" if i == j else "0" for i in range(6) for j in range(i, 6))


def test_identity_vertex():
    doc = io.parse_g2o("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n")
    assert doc.kind == SE3
    assert list(doc.vertices) == [0]
    assert np.array_equal(doc.vertices[0].matrix(), np.eye(4))


def test_identity_information_whitens_to_identity():
    text = "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 1 0 0 0 0 0 1\n"
    text += "EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 " + IDENTITY_INFO_SE3 + "\n"
    doc = io.parse_g2o(text)
    noise = NoiseModel.from_information(doc.edges[0].information)
    assert np.allclose(noise.sqrt_information, np.eye(6), atol=1e-15)
    r = np.arange(6.0)
    assert np.allclose(noise.whiten(r), r)


def test_information_is_reordered_to_rotation_first():
    info = np.diag([1.0, 2.0, 3.0, 40.0, 50.0, 60.0])  # file order: translation then rotation
    upper = " ".join(str(v) for v in info[np.triu_indices(6)])
    text = "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 0 0 0 0 0 0 1\n"
    text += "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1 " + upper + "\n"
    doc = io.parse_g2o(text)
    assert np.array_equal(np.diag(doc.edges[0].information), [40.0, 50.0, 60.0, 1.0, 2.0, 3.0])
    doc = io.parse_g2o(text, info_order="rotation-first")
    assert np.array_equal(np.diag(doc.edges[0].information), [1.0, 2.0, 3.0, 40.0, 50.0, 60.0])
    with pytest.raises(InputError):
        io.parse_g2o(text, info_order="sideways")


def test_se2_records():
    text = "VERTEX_SE2 0 1 2 0.5\nVERTEX_SE2 1 0 0 0\nEDGE_SE2 0 1 1 0 0.1 10 0 0 20 0 30\n"
    doc = io.parse_g2o(text)
    assert doc.kind == SE2
    assert doc.vertices[0].theta == 0.5
    assert np.array_equal(doc.vertices[0].translation, [1.0, 2.0])
    # file [x, y, theta] to library [theta, x, y]
    assert np.array_equal(np.diag(doc.edges[0].information), [30.0, 10.0, 20.0])


@pytest.mark.parametrize("kind", [SE2, SE3])
def test_round_trip_50_records(kind):
    rng = np.random.default_rng(0 if kind == SE3 else 1)
    doc = random_document(rng, kind, 25, 25)
    text = io.write_g2o(doc)
    back = io.parse_g2o(text)
    assert sorted(back.vertices) == sorted(doc.vertices)
    for vid, pose in doc.vertices.items():
        assert np.allclose(back.vertices[vid].matrix(), pose.matrix(), atol=1e-9)
    original = sorted(doc.edges, key=lambda e: (e.i, e.j))
    for a, b in zip(original, back.edges):
        assert (a.i, a.j) == (b.i, b.j)
        assert np.allclose(a.measurement.matrix(), b.measurement.matrix(), atol=1e-9)
        assert np.allclose(a.information, b.information, atol=1e-9 * np.abs(a.information).max())


def test_write_small_documents():
    assert io.write_g2o(G2oDocument()) == ""
    doc = G2oDocument(kind=SE3, vertices={3: Pose3()})
    assert io.write_g2o(doc) == "VERTEX_SE3:QUAT 3 0 0 0 0 0 0 1\n"


def test_write_is_canonical():
    rng = np.random.default_rng(2)
    doc = random_document(rng, SE3, 5, 5)
    text = io.write_g2o(doc)
    lines = text.splitlines()
    vertex_ids = [int(l.split()[1]) for l in lines if l.startswith("VERTEX")]
    assert vertex_ids == sorted(vertex_ids)
    assert all(l.startswith("VERTEX") for l in lines[:5]) and all(l.startswith("EDGE") for l in lines[5:])
    assert io.write_g2o(doc) == text


def test_skips_unknown_records_and_comments():
    text = "# header\nFIX 0\n\nVERTEX_SE3:QUAT 0 0 0 0 0 0 0 1 # trailing\nPARAMS_SE3OFFSET 0 0 0 0 0 0 0 1\n"
    doc = io.parse_g2o(text)
    assert doc.skipped == 2
    assert list(doc.vertices) == [0]


def error_of(text, **kw):
    with pytest.raises(ParseError) as info:
        io.parse_g2o(text, **kw)
    return info.value


def test_errors_carry_line_and_column():
    err = error_of("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 0 abc 0 0 0 0 1\n")
    assert isinstance(err, MalformedRecord)
    assert (err.line, err.column) == (2, 21)
    assert "line 2, column 21" in str(err)
    err = error_of("VERTEX_SE3:QUAT 0 0 0\n")
    assert isinstance(err, MalformedRecord) and err.line == 1
    err = error_of("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1 7\n")
    assert err.column == 33


def test_non_finite_numbers():
    for bad in ("nan", "inf", "-inf", "1e400"):
        err = error_of(f"VERTEX_SE3:QUAT 0 {bad} 0 0 0 0 0 1\n")
        assert isinstance(err, NonFiniteNumber)


def test_quaternion_tolerance():
    doc = io.parse_g2o("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1.0009\n")
    assert np.allclose(doc.vertices[0].rotation, np.eye(3), atol=1e-12)
    err = error_of("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1.002\n")
    assert isinstance(err, UnnormalizedQuaternion)
    assert err.column == 25


def test_structural_errors():
    v = "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n"
    assert "duplicate" in error_of(v + v).reason
    assert "undeclared" in error_of(v + "EDGE_SE3:QUAT 0 5 0 0 0 0 0 0 1 " + IDENTITY_INFO_SE3 + "\n").reason
    assert "itself" in error_of(v + "EDGE_SE3:QUAT 0 0 0 0 0 0 0 0 1 " + IDENTITY_INFO_SE3 + "\n").reason
    assert "mixed" in error_of(v + "VERTEX_SE2 1 0 0 0\n").reason
    negative = IDENTITY_INFO_SE3.replace("1", "-1", 1)
    err = error_of(v + "VERTEX_SE3:QUAT 1 0 0 0 0 0 0 1\nEDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1 " + negative + "\n")
    assert "semi-definite" in err.reason and err.line == 3


def test_reordering_involution():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = rng.standard_normal((6, 6))
        sym = a + a.T
        assert np.array_equal(io.reorder_information(io.reorder_information(sym, SE3), SE3), sym)
        assert np.array_equal(io.restore_information(io.reorder_information(sym, SE3), SE3), sym)
        b = rng.standard_normal((3, 3))
        sym2 = b + b.T
        assert np.array_equal(io.restore_information(io.reorder_information(sym2, SE2), SE2), sym2)


def test_document_to_pose_graph():
    rng = np.random.default_rng(4)
    doc = G2oDocument(kind=SE3)
    for vid in (10, 20, 30, 40):
        doc.vertices[vid] = manifold.random_element(SE3, rng)
    info = random_information(rng, 6)
    for i, j in ((10, 20), (20, 30), (30, 40), (10, 40)):
        doc.edges.append(io.G2oEdge(i, j, manifold.random_element(SE3, rng), info))
    data, ids = io.document_to_pose_graph(doc)
    assert ids == [10, 20, 30, 40]
    assert [(e.i, e.j) for e in data.odometry] == [(0, 1), (1, 2), (2, 3)]
    assert [(e.i, e.j) for e in data.loops] == [(0, 3)]
    assert np.allclose(data.odometry[0].noise.information, info)
    back = io.pose_graph_to_document(data, data.initial, ids)
    assert back.vertices == doc.vertices
    by_pair = {(e.i, e.j): e for e in back.edges}
    for e in doc.edges:
        assert by_pair[(e.i, e.j)].measurement is e.measurement
        assert np.allclose(by_pair[(e.i, e.j)].information, e.information, rtol=1e-12)
    doc.edges[0].information = np.zeros((6, 6))
    with pytest.raises(InputError):
        io.document_to_pose_graph(doc)
    with pytest.raises(InputError):
        io.document_to_pose_graph(G2oDocument())


def test_xyz_examples():
    cloud = io.parse_xyz("0 0 0\n")
    assert cloud.points.shape == (1, 3) and np.all(cloud.points == 0.0)
    assert len(io.parse_xyz("# only a comment\n\n")) == 0
    with pytest.raises(MalformedRecord) as info:
        io.parse_xyz("1 2 3\n\n1 2\n")
    assert info.value.line == 3
    with pytest.raises(NonFiniteNumber):
        io.parse_xyz("1 nan 3\n")


def test_xyz_round_trip():
    pts = np.random.default_rng(5).standard_normal((100, 3)) * 1e3
    back = io.parse_xyz(io.write_xyz(pts))
    assert np.array_equal(back.points, pts)


def test_metrics_round_trip():
    record = {"problem": "rpgo", "seed": 3, "trace": [{"a": 1.5, "b": [1, 2]}], "final_cost": 0.1 + 0.2, "name": "x"}
    text = io.dump_metrics(record)
    assert text.endswith("\n") and text.count("\n") == 1
    loaded = io.load_metrics(text)
    assert loaded["schema"] == io.METRICS_SCHEMA
    assert {k: v for k, v in loaded.items() if k != "schema"} == record
    assert io.dump_metrics(loaded) == text
    with pytest.raises(ValueError):
        io.dump_metrics({"x": float("nan")})
    with pytest.raises(InputError):
        io.load_metrics(json.dumps({"schema": 99}))


def test_content_hash():
    assert io.content_hash(b"") == "sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_atomic_write(tmp_path, monkeypatch):
    path = tmp_path / "out.json"
    io.atomic_write(str(path), "first\n")
    io.atomic_write(str(path), "second\n")
    assert path.read_text() == "second\n"
    assert os.listdir(tmp_path) == ["out.json"]

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        io.atomic_write(str(path), "third\n")
    assert path.read_text() == "second\n"
    assert os.listdir(tmp_path) == ["out.json"]


def test_fuzz_subset():
    counts = fuzz_parsers(3000, seed=7)
    assert counts["accepted"] > 0 and counts["rejected"] > 0
