"""Readers and writers for g2o pose graphs, ASCII point clouds and metrics records."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import manifold
from .errors import InputError, MalformedRecord, NonFiniteNumber, UnnormalizedQuaternion
from .graph import NoiseModel
from .manifold import SE2, SE3, ManifoldKind, Pose2, Pose3
from .problems.registration import PointCloud
from .problems.robust_pgo import PoseEdge, PoseGraphData

METRICS_SCHEMA = 1
QUATERNION_TOL = 1e-3
PSD_TOL = 1e-9

# file information order -> how to reach the library's [rotation; translation] order
INFO_ORDERS = ("translation-first", "rotation-first")


@dataclass
class G2oEdge:
    i: int
    j: int
    measurement: object
    information: np.ndarray  # library tangent order


@dataclass
class G2oDocument:
    kind: ManifoldKind | None = None
    vertices: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    skipped: int = 0


def _permutation(kind: ManifoldKind, info_order: str) -> np.ndarray:
    """Index map p with library[k] = file[p[k]]."""
    if info_order not in INFO_ORDERS:
        raise InputError(f"unknown information order {info_order!r}; expected one of {INFO_ORDERS}")
    if info_order == "rotation-first":
        return np.arange(kind.dim)
    return np.array([2, 0, 1]) if kind == SE2 else np.array([3, 4, 5, 0, 1, 2])


def reorder_information(info, kind: ManifoldKind, info_order: str = "translation-first") -> np.ndarray:
    """File tangent order to library [rotation; translation] order."""
    p = _permutation(kind, info_order)
    return np.asarray(info, dtype=float)[np.ix_(p, p)]


def restore_information(info, kind: ManifoldKind, info_order: str = "translation-first") -> np.ndarray:
    """Library order back to the file's tangent order (inverse of ``reorder_information``)."""
    inv = np.argsort(_permutation(kind, info_order))
    return np.asarray(info, dtype=float)[np.ix_(inv, inv)]


class _Line:
    """Token cursor over one record that reports 1-based columns in errors."""

    def __init__(self, number: int, text: str):
        self.number = number
        self.tokens = []
        col = 0
        for tok in text.split():
            col = text.index(tok, col)
            self.tokens.append((tok, col + 1))
            col += len(tok)
        self.pos = 1

    def error(self, cls, reason, column=None):
        return cls(self.number, reason, column)

    def _next(self, what: str):
        if self.pos >= len(self.tokens):
            end = self.tokens[-1][1] + len(self.tokens[-1][0]) if self.tokens else 1
            raise self.error(MalformedRecord, f"{self.tokens[0][0]} record ends before its {what}", end)
        tok, col = self.tokens[self.pos]
        self.pos += 1
        return tok, col

    def integer(self, what: str) -> int:
        tok, col = self._next(what)
        try:
            return int(tok)
        except ValueError:
            raise self.error(MalformedRecord, f"{what} must be an integer, got {tok!r}", col) from None

    def real(self, what: str) -> float:
        tok, col = self._next(what)
        try:
            value = float(tok)
        except ValueError:
            raise self.error(MalformedRecord, f"{what} must be a number, got {tok!r}", col) from None
        if not math.isfinite(value):
            raise self.error(NonFiniteNumber, f"{what} is not finite", col)
        return value

    def reals(self, n: int, what: str) -> np.ndarray:
        return np.array([self.real(what) for _ in range(n)])

    def finish(self) -> None:
        if self.pos < len(self.tokens):
            tok, col = self.tokens[self.pos]
            raise self.error(MalformedRecord, f"unexpected trailing token {tok!r}", col)

    @property
    def column(self) -> int:
        return self.tokens[0][1]


def _quaternion(line: _Line) -> np.ndarray:
    col = line.tokens[line.pos][1] if line.pos < len(line.tokens) else None
    q = line.reals(4, "quaternion component")
    norm = float(np.linalg.norm(q))
    if not math.isfinite(norm) or abs(norm - 1.0) > QUATERNION_TOL:
        raise line.error(UnnormalizedQuaternion, f"quaternion norm {norm:.6g} differs from 1 by more than {QUATERNION_TOL}", col)
    return manifold.quat_to_matrix(q / norm)


def _upper_triangular(line: _Line, dim: int) -> np.ndarray:
    col = line.tokens[line.pos][1] if line.pos < len(line.tokens) else None
    values = line.reals(dim * (dim + 1) // 2, "information entry")
    info = np.zeros((dim, dim))
    info[np.triu_indices(dim)] = values
    info = info + np.triu(info, 1).T
    with np.errstate(all="ignore"):
        eig = np.linalg.eigvalsh(info) if np.all(np.isfinite(info)) else np.array([np.nan])
    if not np.all(np.isfinite(eig)) or eig.min() < -PSD_TOL:
        raise line.error(MalformedRecord, "information matrix is not symmetric positive semi-definite", col)
    return info


def _set_kind(doc: G2oDocument, kind: ManifoldKind, line: _Line) -> None:
    if doc.kind is None:
        doc.kind = kind
    elif doc.kind != kind:
        raise line.error(MalformedRecord, "SE2 and SE3 records cannot be mixed in one file", line.column)


def parse_g2o(text: str, info_order: str = "translation-first") -> G2oDocument:
    """Parse VERTEX_SE2 / EDGE_SE2 / VERTEX_SE3:QUAT / EDGE_SE3:QUAT records.

    Information matrices are stored in library tangent order.  Other record
    types are skipped and counted in ``skipped``.
    """
    _permutation(SE3, info_order)
    doc = G2oDocument()
    edge_lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        line = _Line(number, body)
        tag = line.tokens[0][0]
        if tag in ("VERTEX_SE2", "VERTEX_SE3:QUAT"):
            kind = SE2 if tag == "VERTEX_SE2" else SE3
            _set_kind(doc, kind, line)
            vid = line.integer("vertex id")
            if kind == SE2:
                x, y, theta = line.reals(3, "pose component")
                pose = Pose2(theta, np.array([x, y]))
            else:
                t = line.reals(3, "translation component")
                pose = Pose3(_quaternion(line), t)
            line.finish()
            if vid in doc.vertices:
                raise line.error(MalformedRecord, f"duplicate vertex id {vid}", line.tokens[1][1])
            doc.vertices[vid] = pose
        elif tag in ("EDGE_SE2", "EDGE_SE3:QUAT"):
            kind = SE2 if tag == "EDGE_SE2" else SE3
            _set_kind(doc, kind, line)
            i = line.integer("edge endpoint")
            j = line.integer("edge endpoint")
            if kind == SE2:
                x, y, theta = line.reals(3, "measurement component")
                z = Pose2(theta, np.array([x, y]))
                info = _upper_triangular(line, 3)
            else:
                t = line.reals(3, "translation component")
                z = Pose3(_quaternion(line), t)
                info = _upper_triangular(line, 6)
            line.finish()
            if i == j:
                raise line.error(MalformedRecord, "edge joins a vertex to itself", line.tokens[1][1])
            doc.edges.append(G2oEdge(i, j, z, reorder_information(info, kind, info_order)))
            edge_lines.append(line)
        else:
            doc.skipped += 1
    for edge, line in zip(doc.edges, edge_lines):
        for pos, vid in ((1, edge.i), (2, edge.j)):
            if vid not in doc.vertices:
                raise line.error(MalformedRecord, f"edge references undeclared vertex {vid}", line.tokens[pos][1])
    return doc


def _fmt(values) -> str:
    return " ".join("%.17g" % (0.0 if v == 0 else float(v)) for v in values)


def write_g2o(doc: G2oDocument, info_order: str = "translation-first") -> str:
    """Canonical text: vertices by ascending id, then edges sorted by (i, j)."""
    lines = []
    for vid in sorted(doc.vertices):
        pose = doc.vertices[vid]
        if doc.kind == SE2:
            lines.append(f"VERTEX_SE2 {vid} " + _fmt([*pose.translation, pose.theta]))
        else:
            lines.append(f"VERTEX_SE3:QUAT {vid} " + _fmt([*pose.translation, *manifold.matrix_to_quat(pose.rotation)]))
    order = sorted(range(len(doc.edges)), key=lambda n: (doc.edges[n].i, doc.edges[n].j, n))
    for n in order:
        e = doc.edges[n]
        info = restore_information(e.information, doc.kind, info_order)
        upper = info[np.triu_indices(info.shape[0])]
        if doc.kind == SE2:
            z = [*e.measurement.translation, e.measurement.theta]
            lines.append(f"EDGE_SE2 {e.i} {e.j} " + _fmt(z) + " " + _fmt(upper))
        else:
            z = [*e.measurement.translation, *manifold.matrix_to_quat(e.measurement.rotation)]
            lines.append(f"EDGE_SE3:QUAT {e.i} {e.j} " + _fmt(z) + " " + _fmt(upper))
    return "".join(line + "\n" for line in lines)


def document_to_pose_graph(doc: G2oDocument) -> tuple[PoseGraphData, list]:
    """Map vertex ids to contiguous indices; edges between consecutive indices are odometry.

    Returns the pose graph and the sorted vertex ids (index -> id).
    """
    if not doc.vertices:
        raise InputError("pose graph file declares no vertices")
    ids = sorted(doc.vertices)
    index = {vid: n for n, vid in enumerate(ids)}
    odometry, loops = [], []
    for e in doc.edges:
        i, j = index[e.i], index[e.j]
        try:
            noise = NoiseModel.from_information(e.information)
        except InputError:
            raise InputError(f"edge {e.i}-{e.j}: information matrix is singular") from None
        edge = PoseEdge(i, j, e.measurement, noise)
        (odometry if abs(i - j) == 1 else loops).append(edge)
    data = PoseGraphData(doc.kind, len(ids), odometry, loops, initial=[doc.vertices[v] for v in ids])
    return data, ids


def pose_graph_to_document(data: PoseGraphData, poses, ids=None) -> G2oDocument:
    ids = list(range(data.num_poses)) if ids is None else list(ids)
    doc = G2oDocument(kind=data.kind)
    doc.vertices = {ids[n]: pose for n, pose in enumerate(poses)}
    for e in data.odometry + data.loops:
        doc.edges.append(G2oEdge(ids[e.i], ids[e.j], e.measurement, e.noise.information))
    return doc


def parse_xyz(text: str) -> PointCloud:
    """One point per line as three reals; blank lines and '#' comments are ignored."""
    points = []
    for number, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        line = _Line(number, body)
        line.pos = 0
        if len(line.tokens) != 3:
            raise MalformedRecord(number, f"expected 3 coordinates, found {len(line.tokens)}", line.column)
        points.append(line.reals(3, "coordinate"))
    return PointCloud(np.array(points).reshape(-1, 3))


def write_xyz(cloud) -> str:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    return "".join(_fmt(p) + "\n" for p in pts)


def content_hash(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def dump_metrics(record: dict) -> str:
    """One JSON object on one line, keys sorted; schema version added when absent."""
    record = dict(record)
    record.setdefault("schema", METRICS_SCHEMA)
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def load_metrics(text: str) -> dict:
    record = json.loads(text)
    if record.get("schema") != METRICS_SCHEMA:
        raise InputError(f"unsupported metrics schema {record.get('schema')!r}")
    return record


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the destination directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
