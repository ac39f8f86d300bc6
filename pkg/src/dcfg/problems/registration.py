"""Point-cloud registration as a hybrid factor graph.

Every source point owns a discrete correspondence variable ranging over the
target cloud; the single continuous variable is the rigid transform taking
the source into the target frame.  Conditioned on the transform the
correspondences decouple, and alternating minimization reduces to ICP with a
naive nearest-neighbour search.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .. import manifold
from ..dcsolver import DcParams, DcResult, solve
from ..errors import EmptyCloud, InputError
from ..factors import CorrespondenceFactor
from ..graph import FactorGraph, VariableKey
from ..manifold import SE3, Pose3


@dataclass
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"point clouds are (n, 3) arrays, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point coordinates must be finite")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


def _as_points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else PointCloud(cloud).points


@dataclass
class RegistrationProblem:
    graph: FactorGraph
    pose_key: VariableKey
    correspondence_keys: list
    source: np.ndarray
    target: np.ndarray
    sigma: float
    factor_indices: list = field(default_factory=list)


def build_registration(source, target, sigma: float = 1.0) -> RegistrationProblem:
    src = _as_points(source)
    tgt = _as_points(target)
    if len(src) == 0 or len(tgt) == 0:
        raise EmptyCloud("registration needs non-empty source and target clouds")
    if not sigma > 0.0:
        raise InputError("sigma must be positive")
    graph = FactorGraph()
    pose = VariableKey.continuous(0, SE3)
    graph.add_variable(pose)
    keys, indices = [], []
    for i, point in enumerate(src):
        d = VariableKey.discrete(i + 1, len(tgt))
        graph.add_variable(d)
        indices.append(graph.add_factor(CorrespondenceFactor(pose, d, point, tgt, sigma)))
        keys.append(d)
    return RegistrationProblem(graph, pose, keys, src, tgt, float(sigma), indices)


def register(
    source,
    target,
    initial: Pose3 | None = None,
    sigma: float = 1.0,
    params: DcParams | None = None,
    callback=None,
    use_grid: bool = False,
    cell_size: float | None = None,
) -> tuple[RegistrationProblem, DcResult]:
    """Alternating registration from ``initial``.

    The discrete phase is the naive search over every target point.  With
    ``use_grid`` it is answered by a :class:`GridIndex` instead, which
    returns the same nearest neighbours.
    """
    problem = build_registration(source, target, sigma)
    init = Pose3() if initial is None else initial
    phase = None
    if use_grid:
        grid = GridIndex(problem.target, cell_size)
        n = len(problem.correspondence_keys)

        def phase(continuous):
            pose = continuous[problem.pose_key]
            # same arithmetic as CorrespondenceFactor, so ties resolve identically
            moved = np.array([pose.act(p) for p in problem.source])
            matches = grid.query_all(moved)
            return dict(zip(problem.correspondence_keys, matches.tolist())), n, n

    result = solve(problem.graph, {problem.pose_key: init}, params=params, callback=callback, discrete_phase=phase)
    return problem, result


def nearest_neighbors(points, target) -> np.ndarray:
    """Index of the closest target point for every query point (lowest index on ties)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    tgt = _as_points(target)
    if len(tgt) == 0:
        raise EmptyCloud("nearest-neighbour search needs a non-empty target")
    out = np.empty(len(pts), dtype=int)
    for i, p in enumerate(pts):
        diff = tgt - p
        out[i] = int(np.argmin(np.sum(diff**2, axis=1)))
    return out


class GridIndex:
    """Uniform voxel grid over a target cloud for exact nearest-neighbour queries.

    Cells are searched in growing cubic shells; the search stops once the
    best squared distance found cannot be beaten by any unvisited cell.  Ties
    are broken toward the lowest target index, matching the naive search.
    """

    def __init__(self, target, cell_size: float | None = None):
        self.points = _as_points(target)
        if len(self.points) == 0:
            raise EmptyCloud("grid index needs a non-empty cloud")
        lo = self.points.min(axis=0)
        span = float(np.max(self.points.max(axis=0) - lo))
        if cell_size is None:
            cell_size = max(span / max(len(self.points) ** (1.0 / 3.0), 1.0), 1e-9)
        self.cell = float(cell_size)
        self.origin = lo
        cells = np.floor((self.points - lo) / self.cell).astype(int)
        self.buckets: dict = {}
        for idx, c in enumerate(map(tuple, cells)):
            self.buckets.setdefault(c, []).append(idx)

    def _shell(self, center, radius):
        """Cells whose Chebyshev distance to ``center`` is exactly ``radius``."""
        if radius == 0:
            yield tuple(center)
            return
        cx, cy, cz = center
        span = range(-radius, radius + 1)
        inner = range(-radius + 1, radius)
        for dx in (-radius, radius):
            for dy in span:
                for dz in span:
                    yield (cx + dx, cy + dy, cz + dz)
        for dx in inner:
            for dy in (-radius, radius):
                for dz in span:
                    yield (cx + dx, cy + dy, cz + dz)
            for dy in inner:
                for dz in (-radius, radius):
                    yield (cx + dx, cy + dy, cz + dz)

    def _scan(self, p) -> int:
        diff = self.points - p
        return int(np.argmin(np.sum(diff**2, axis=1)))

    def query(self, point) -> int:
        p = np.asarray(point, dtype=float)
        center = tuple(int(v) for v in np.floor((p - self.origin) / self.cell))
        best, best_d = -1, math.inf
        for radius in itertools.count():
            # once the searched cube outgrows the cloud a linear scan is cheaper
            if (2 * radius + 1) ** 3 > 4 * len(self.points):
                return self._scan(p)
            for cell in self._shell(center, radius):
                for idx in self.buckets.get(cell, ()):
                    d = float(np.sum((self.points[idx] - p) ** 2))
                    if d < best_d or (d == best_d and idx < best):
                        best, best_d = idx, d
            # every point in shells beyond ``radius`` is at least radius * cell away
            if best >= 0 and best_d < (radius * self.cell) ** 2:
                return best

    def query_all(self, points) -> np.ndarray:
        return np.array([self.query(p) for p in np.asarray(points, dtype=float).reshape(-1, 3)], dtype=int)


def transform_error(estimate: Pose3, truth: Pose3) -> tuple[float, float]:
    """(translation error in meters, rotation angle error in radians)."""
    rel = manifold.between(truth, estimate)
    angle = float(np.linalg.norm(manifold.so3_log(rel.rotation)))
    return float(np.linalg.norm(estimate.translation - truth.translation)), angle


def make_registration_instance(
    n_points: int,
    seed: int,
    max_angle: float = math.radians(10.0),
    max_offset: float = 0.2,
    noise: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, Pose3, Pose3]:
    """Random cloud, its image under a random transform, the transform and a perturbed initial guess.

    The source cloud is an anisotropic Gaussian blob; the initial guess lies
    within ``max_angle`` of rotation and ``max_offset`` of translation of the
    true transform.
    """
    rng = np.random.default_rng(seed)
    source = rng.standard_normal((n_points, 3)) * np.array([2.0, 1.2, 0.6])
    truth = Pose3(manifold.random_rotation(rng), rng.uniform(-1.0, 1.0, 3))
    target = source @ truth.rotation.T + truth.translation
    if noise > 0.0:
        target = target + noise * rng.standard_normal(target.shape)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    offset = rng.uniform(0.0, max_offset) * direction
    initial = Pose3(truth.rotation @ manifold.so3_exp(angle * axis), truth.translation + offset)
    return source, target, truth, initial
