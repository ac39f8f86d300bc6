"""Robust pose-graph optimization with binary switch variables on loop closures.

Odometry edges are trusted; every loop closure gets a switch selecting an
inlier Gaussian or a broad outlier Gaussian.  Outlier loops for experiments
are drawn between random non-adjacent poses with translation uniform in a
10 m cube centred at the origin and Haar-uniform rotation.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .. import manifold
from ..continuous import OptimizerParams, optimize_continuous
from ..dcsolver import DcParams, DcResult, solve
from ..errors import DisconnectedGraph, InputError, InsufficientPoses, MissingLabel
from ..factors import BetweenFactor, PriorFactor, SwitchableLoopFactor
from ..graph import FactorGraph, HybridAssignment, NoiseModel, VariableKey
from ..manifold import SE2, SE3, ManifoldKind, Pose2, Pose3

ANCHOR_SIGMA = 1e-3


@dataclass
class PoseEdge:
    i: int
    j: int
    measurement: object
    noise: NoiseModel


@dataclass
class PoseGraphData:
    """Poses are indexed 0..n-1; ``initial`` holds per-pose estimates when known."""

    kind: ManifoldKind
    num_poses: int
    odometry: list
    loops: list
    initial: list | None = None
    ground_truth: list | None = None

    def copy(self) -> "PoseGraphData":
        return replace(self, odometry=list(self.odometry), loops=list(self.loops))


@dataclass
class SwitchParams:
    omega1: float = 1e-7
    outlier_variance: float = 1.6e7
    omega0: float | None = None

    @property
    def weights(self) -> tuple[float, float]:
        w0 = 1.0 - self.omega1 if self.omega0 is None else self.omega0
        return w0, self.omega1


@dataclass
class RobustPgoProblem:
    graph: FactorGraph
    data: PoseGraphData
    pose_keys: list
    switch_keys: list
    loop_factor_indices: list
    anchor: object
    params: SwitchParams = field(default_factory=SwitchParams)

    def odometry_initial(self) -> dict:
        poses = chain_odometry(self.data, self.anchor)
        return {k: p for k, p in zip(self.pose_keys, poses)}

    def values_from(self, poses: Sequence) -> dict:
        return {k: p for k, p in zip(self.pose_keys, poses)}


def _adjacency(num_poses: int, edges: Sequence[PoseEdge]) -> list:
    adj = [[] for _ in range(num_poses)]
    for e in edges:
        adj[e.i].append((e.j, e.measurement, False))
        adj[e.j].append((e.i, e.measurement, True))
    return adj


def chain_odometry(data: PoseGraphData, anchor) -> list:
    """Compose odometry outward from pose 0 (breadth first)."""
    adj = _adjacency(data.num_poses, data.odometry)
    poses = [None] * data.num_poses
    poses[0] = anchor
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j, z, reverse in adj[i]:
            if poses[j] is None:
                poses[j] = manifold.compose(poses[i], manifold.inverse(z) if reverse else z)
                queue.append(j)
    if any(p is None for p in poses):
        missing = next(i for i, p in enumerate(poses) if p is None)
        raise DisconnectedGraph(f"odometry does not reach pose {missing}")
    return poses


def _check_edges(data: PoseGraphData) -> None:
    for e in data.odometry + data.loops:
        if not (0 <= e.i < data.num_poses and 0 <= e.j < data.num_poses) or e.i == e.j:
            raise InputError(f"edge ({e.i}, {e.j}) does not join two distinct poses")


def build_robust_pgo(
    data: PoseGraphData,
    params: SwitchParams | None = None,
    anchor=None,
    anchor_sigma: float = ANCHOR_SIGMA,
) -> RobustPgoProblem:
    params = params or SwitchParams()
    if data.num_poses < 1:
        raise InputError("pose graph has no poses")
    _check_edges(data)
    if anchor is None:
        anchor = data.initial[0] if data.initial else manifold.identity(data.kind)
    chain_odometry(data, anchor)  # connectivity check
    graph = FactorGraph()
    pose_keys = [VariableKey.continuous(i, data.kind) for i in range(data.num_poses)]
    graph.add_variables(pose_keys)
    dim = data.kind.dim
    graph.add_factor(PriorFactor(pose_keys[0], anchor, NoiseModel.isotropic(anchor_sigma, dim)))
    for e in data.odometry:
        graph.add_factor(BetweenFactor(pose_keys[e.i], pose_keys[e.j], e.measurement, e.noise))
    outlier_noise = NoiseModel.isotropic(math.sqrt(params.outlier_variance), dim)
    switch_keys, loop_indices = [], []
    for n, e in enumerate(data.loops):
        s = VariableKey.discrete(data.num_poses + n, 2)
        graph.add_variable(s)
        factor = SwitchableLoopFactor(
            pose_keys[e.i], pose_keys[e.j], s, e.measurement, e.noise, outlier_noise, params.weights
        )
        loop_indices.append(graph.add_factor(factor))
        switch_keys.append(s)
    return RobustPgoProblem(graph, data, pose_keys, switch_keys, loop_indices, anchor, params)


def plain_graph(data: PoseGraphData, anchor, loop_mask: Sequence[bool] | None = None, anchor_sigma: float = ANCHOR_SIGMA):
    """Non-robust graph: anchor, odometry and the loops selected by ``loop_mask``."""
    graph = FactorGraph()
    keys = [VariableKey.continuous(i, data.kind) for i in range(data.num_poses)]
    graph.add_variables(keys)
    graph.add_factor(PriorFactor(keys[0], anchor, NoiseModel.isotropic(anchor_sigma, data.kind.dim)))
    for e in data.odometry:
        graph.add_factor(BetweenFactor(keys[e.i], keys[e.j], e.measurement, e.noise))
    for n, e in enumerate(data.loops):
        if loop_mask is None or loop_mask[n]:
            graph.add_factor(BetweenFactor(keys[e.i], keys[e.j], e.measurement, e.noise))
    return graph, keys


def solve_robust_pgo(problem: RobustPgoProblem, params: DcParams | None = None, callback=None) -> DcResult:
    return solve(problem.graph, problem.odometry_initial(), params=params, callback=callback)


def lm_solve(
    data: PoseGraphData, anchor, loop_mask: Sequence[bool] | None = None, params: OptimizerParams | None = None
) -> tuple[list, float]:
    """Plain Levenberg-Marquardt from the odometry initialization; returns poses and cost."""
    graph, keys = plain_graph(data, anchor, loop_mask)
    init = {k: p for k, p in zip(keys, chain_odometry(data, anchor))}
    values, stats = optimize_continuous(graph, {}, init, params)
    return [values[k] for k in keys], 2.0 * stats.final_objective


def inlier_cost(data: PoseGraphData, anchor, poses: Sequence, outlier_labels: Sequence[bool]) -> float:
    """Cost (sum of squared Mahalanobis residuals) of the inlier-only model."""
    graph, keys = plain_graph(data, anchor, [not o for o in outlier_labels])
    return 2.0 * graph.objective(HybridAssignment({k: p for k, p in zip(keys, poses)}, {}))


def _random_relative(kind: ManifoldKind, rng: np.random.Generator):
    if kind == SE3:
        translation = rng.uniform(-5.0, 5.0, 3)
        return Pose3(manifold.random_rotation(rng), translation)
    if kind == SE2:
        translation = rng.uniform(-5.0, 5.0, 2)
        return Pose2(rng.uniform(-math.pi, math.pi), translation)
    raise InputError(f"outlier injection supports SE2 and SE3 graphs, not {kind}")


def inject_outliers(data: PoseGraphData, count: int, seed: int, noise: NoiseModel | None = None):
    """Append ``count`` random loop closures; returns (new data, outlier label per loop)."""
    if data.num_poses < 3:
        raise InsufficientPoses("outlier injection needs at least 3 poses")
    if count < 0:
        raise InputError("outlier count must be non-negative")
    rng = np.random.default_rng(seed)
    if noise is None:
        template = data.loops[0] if data.loops else data.odometry[0]
        noise = template.noise
    out = data.copy()
    labels = [False] * len(data.loops)
    n = data.num_poses
    for _ in range(count):
        while True:
            i, j = (int(v) for v in rng.integers(0, n, size=2))
            if abs(i - j) > 1:
                break
        out.loops.append(PoseEdge(i, j, _random_relative(data.kind, rng), noise))
        labels.append(True)
    return out, labels


def classify_edges(discrete: Mapping, labels: Mapping) -> tuple[float, float]:
    """Precision and recall of outlier detection (positive = switch state 1).

    Precision is 1.0 when nothing is predicted an outlier; recall is 1.0 when
    there are no true outliers.
    """
    tp = fp = fn = 0
    for key, value in discrete.items():
        if key not in labels:
            raise MissingLabel(f"no ground-truth label for switch {key!r}")
        predicted = int(value) == 1
        actual = bool(labels[key])
        tp += predicted and actual
        fp += predicted and not actual
        fn += actual and not predicted
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def outlier_count_for_fraction(num_loops: int, fraction: float) -> int:
    """Outliers to add so they make up ``fraction`` of all loop edges."""
    return int(round(fraction * num_loops / (1.0 - fraction)))


def _perturb(kind: ManifoldKind, z, sigmas: np.ndarray, rng: np.random.Generator):
    return manifold.retract(z, sigmas * rng.standard_normal(kind.dim))


def generate_pose_graph(
    num_poses: int = 100,
    seed: int = 0,
    ring_size: int = 10,
    radius: float = 5.0,
    climb: float = 0.1,
    rotation_sigma: float = 0.01,
    translation_sigma: float = 0.05,
) -> PoseGraphData:
    """Synthetic SE(3) helix pose graph with odometry and ring-to-ring loops.

    Poses walk around a helix of ``ring_size`` poses per turn; each pose after
    the first turn closes a loop with the pose directly one turn below.  All
    measurements are perturbed on the right by zero-mean Gaussian tangent
    noise with the given per-axis standard deviations (rotation in radians,
    translation in meters), and carry the matching information matrix.
    """
    if num_poses < 2:
        raise InsufficientPoses("need at least two poses")
    rng = np.random.default_rng(seed)
    truth = []
    for k in range(num_poses):
        phi = 2.0 * math.pi * k / ring_size
        position = np.array([radius * math.cos(phi), radius * math.sin(phi), climb * k])
        rotation = manifold.so3_exp(np.array([0.0, 0.0, phi + 0.5 * math.pi]))
        truth.append(Pose3(rotation, position))
    sigmas = np.array([rotation_sigma] * 3 + [translation_sigma] * 3)
    noise = NoiseModel.diagonal(sigmas)
    odometry = []
    for k in range(num_poses - 1):
        z = _perturb(SE3, manifold.between(truth[k], truth[k + 1]), sigmas, rng)
        odometry.append(PoseEdge(k, k + 1, z, noise))
    loops = []
    for k in range(ring_size, num_poses):
        z = _perturb(SE3, manifold.between(truth[k - ring_size], truth[k]), sigmas, rng)
        loops.append(PoseEdge(k - ring_size, k, z, noise))
    return PoseGraphData(SE3, num_poses, odometry, loops, initial=None, ground_truth=truth)
