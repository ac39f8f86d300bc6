"""Synthetic semantic SLAM with likelihood-gated multi-hypothesis data association.

Landmarks carry a 3D position and a discrete class.  Each detection is a
range/azimuth/elevation measurement plus a (possibly confused) class label.
Association compares the detection against every mapped landmark using the
Laplace joint covariance of the current pose and the landmark together with
the landmark's class marginal; landmarks whose likelihood clears a threshold
form the hypothesis set of the detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import manifold
from ..continuous import recover_covariance
from ..dcsolver import DcParams, DcResult, incremental_extend, solve
from ..discrete import condition, marginals
from ..errors import InputError
from ..factors import (
    BetweenFactor,
    PriorFactor,
    RangeBearingFactor,
    SemanticFactor,
    SemanticMixtureFactor,
    point_from_range_bearing,
    range_bearing,
)
from ..graph import FactorGraph, NoiseModel, VariableKey
from ..manifold import SE3, Pose3, VectorSpace

ANCHOR_SIGMA = 1e-3
R3 = VectorSpace(3)


@dataclass
class SemanticNoise:
    """Noise used both to sample the world and to model it.

    Rotation sigmas are radians per axis, translation and range sigmas meters,
    azimuth/elevation sigmas radians.  ``class_accuracy`` is the probability
    of reporting the true class; errors spread evenly over the other classes.
    """

    odom_rotation_sigma: float = 0.01
    odom_translation_sigma: float = 0.05
    range_sigma: float = 0.1
    bearing_sigma: float = 0.01
    class_accuracy: float = 0.8
    sensor_range: float = 15.0

    @classmethod
    def zero(cls, sensor_range: float = 15.0) -> "SemanticNoise":
        return cls(0.0, 0.0, 0.0, 0.0, 1.0, sensor_range)

    def odometry_noise(self) -> NoiseModel:
        return NoiseModel.diagonal([self.odom_rotation_sigma] * 3 + [self.odom_translation_sigma] * 3)

    def measurement_noise(self) -> NoiseModel:
        return NoiseModel.diagonal([self.range_sigma, self.bearing_sigma, self.bearing_sigma])


@dataclass
class Detection:
    pose_index: int
    landmark: int
    measurement: np.ndarray
    label: int


@dataclass
class SemanticWorld:
    poses: list
    landmarks: np.ndarray
    classes: np.ndarray
    odometry: list
    detections: list
    confusion: np.ndarray
    noise: SemanticNoise

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def odometry_trajectory(self) -> list:
        out = [self.poses[0]]
        for z in self.odometry:
            out.append(out[-1] @ z)
        return out


def confusion_matrix(n_classes: int, accuracy: float) -> np.ndarray:
    if n_classes == 1:
        return np.ones((1, 1))
    off = (1.0 - accuracy) / (n_classes - 1)
    out = np.full((n_classes, n_classes), off)
    np.fill_diagonal(out, accuracy)
    return out


def _trajectory(n_poses: int, rng: np.random.Generator, step: float) -> list:
    poses = []
    yaw, rate = 0.0, 0.0
    position = np.zeros(3)
    for _ in range(n_poses):
        poses.append(Pose3(manifold.so3_exp(np.array([0.0, 0.0, yaw])), position.copy()))
        rate = 0.7 * rate + 0.3 * rng.normal(0.0, 0.15)
        yaw += rate
        position = position + step * np.array([math.cos(yaw), math.sin(yaw), 0.0])
    return poses


def generate_semantic_world(
    n_poses: int,
    n_landmarks: int,
    n_classes: int,
    noise: SemanticNoise | None = None,
    seed: int = 0,
    step: float = 1.5,
    landmark_positions=None,
    landmark_classes=None,
    min_separation: float = 2.0,
) -> SemanticWorld:
    """Planar random trajectory with landmarks scattered beside it.

    Landmarks sit 3 to 8 m to either side of a random trajectory pose at
    heights between 0.5 and 2.5 m unless positions are given explicitly.
    Sampled landmarks are kept at least ``min_separation`` apart (resampling
    up to a fixed budget, after which the constraint is dropped).  A
    detection is produced for every landmark within ``noise.sensor_range``.
    """
    if n_poses < 1 or n_landmarks < 0 or n_classes < 1:
        raise InputError("world sizes must be positive")
    noise = noise or SemanticNoise()
    rng = np.random.default_rng(seed)
    poses = _trajectory(n_poses, rng, step)
    if landmark_positions is None:
        landmarks = np.empty((n_landmarks, 3))
        for j in range(n_landmarks):
            for _ in range(1000):
                anchor = poses[int(rng.integers(0, n_poses))]
                side = rng.choice([-1.0, 1.0]) * rng.uniform(3.0, 8.0)
                local = np.array([rng.uniform(-2.0, 2.0), side, rng.uniform(0.5, 2.5)])
                landmarks[j] = anchor.act(local)
                if j == 0 or np.min(np.linalg.norm(landmarks[:j] - landmarks[j], axis=1)) >= min_separation:
                    break
    else:
        landmarks = np.asarray(landmark_positions, dtype=float).reshape(n_landmarks, 3)
    if landmark_classes is None:
        classes = rng.integers(0, n_classes, size=n_landmarks)
    else:
        classes = np.asarray(landmark_classes, dtype=int).reshape(n_landmarks)
    confusion = confusion_matrix(n_classes, noise.class_accuracy)
    odo_sigmas = np.array([noise.odom_rotation_sigma] * 3 + [noise.odom_translation_sigma] * 3)
    odometry = [
        manifold.retract(manifold.between(poses[t], poses[t + 1]), odo_sigmas * rng.standard_normal(6))
        for t in range(n_poses - 1)
    ]
    meas_sigmas = np.array([noise.range_sigma, noise.bearing_sigma, noise.bearing_sigma])
    detections = []
    for t, pose in enumerate(poses):
        frame = []
        for j in range(n_landmarks):
            local = pose.rotation.T @ (landmarks[j] - pose.translation)
            if np.linalg.norm(local) > noise.sensor_range:
                continue
            z = range_bearing(local) + meas_sigmas * rng.standard_normal(3)
            label = int(rng.choice(n_classes, p=confusion[classes[j]]))
            frame.append(Detection(t, j, z, label))
        detections.append(frame)
    return SemanticWorld(poses, landmarks, classes, odometry, detections, confusion, noise)


@dataclass
class Landmark:
    position: VariableKey
    label: VariableKey


@dataclass
class DetectionRecord:
    """How one detection entered the graph.

    ``kind`` is "new" (spawned a landmark), "single" (one hypothesis) or
    "mixture" (association variable over several hypotheses).
    """

    pose_index: int
    detection: Detection
    hypotheses: list
    kind: str
    association: VariableKey | None = None
    log_likelihoods: list = field(default_factory=list)


@dataclass
class SemanticSlamResult:
    graph: FactorGraph
    result: DcResult
    pose_keys: list
    landmarks: list
    records: list

    def trajectory(self) -> list:
        return [self.result.continuous[k] for k in self.pose_keys]

    def landmark_class(self, index: int) -> int:
        return int(self.result.discrete[self.landmarks[index].label])

    def associated_landmark(self, record: DetectionRecord) -> int:
        if record.kind == "mixture":
            return record.hypotheses[int(self.result.discrete[record.association])]
        return record.hypotheses[0]


class _KeyCounter:
    def __init__(self):
        self.next_id = 0

    def take(self) -> int:
        self.next_id += 1
        return self.next_id - 1


def _log_gaussian(innovation: np.ndarray, cov: np.ndarray) -> float:
    chol = np.linalg.cholesky(cov)
    y = np.linalg.solve(chol, innovation)
    return float(-0.5 * y @ y - np.sum(np.log(np.diag(chol))) - 0.5 * len(innovation) * math.log(2.0 * math.pi))


def association_log_likelihoods(
    graph: FactorGraph,
    result: DcResult,
    pose_key: VariableKey,
    pose_value,
    landmarks: list,
    detection: Detection,
    confusion: np.ndarray,
    noise: NoiseModel,
    covariance=None,
    class_marginals=None,
) -> list[float]:
    """Log of (Gaussian measurement likelihood x class-label probability) per landmark."""
    values = dict(result.continuous)
    values[pose_key] = pose_value
    if covariance is None:
        pairs = [(pose_key, lm.position) for lm in landmarks]
        covariance = recover_covariance(graph, result.discrete, values, [], pairs, warn=False)
    if class_marginals is None:
        class_marginals = marginals(condition(graph, values))
    out = []
    for lm in landmarks:
        factor = RangeBearingFactor(pose_key, lm.position, detection.measurement, noise)
        r, (jx, jp) = factor.evaluate([pose_value, values[lm.position]], jacobians=True)
        h = np.hstack((jx, jp))
        s = h @ covariance[(pose_key, lm.position)] @ h.T + noise.covariance
        prob = float(class_marginals[lm.label] @ confusion[:, detection.label])
        out.append(_log_gaussian(r, s) + (math.log(prob) if prob > 0.0 else -math.inf))
    return out


def build_semantic_slam(
    world: SemanticWorld,
    likelihood_threshold: float,
    params: DcParams | None = None,
) -> SemanticSlamResult:
    """Process the world's measurements in time order, re-solving after every pose.

    Each step adds the new pose with its odometry factor, gates every
    detection of that pose against the landmarks mapped so far, then extends
    the graph and re-solves warm-started from the previous result.
    """
    if not likelihood_threshold > 0.0:
        raise InputError("likelihood threshold must be positive")
    log_threshold = math.log(likelihood_threshold)
    odo_noise = world.noise.odometry_noise()
    meas_noise = world.noise.measurement_noise()
    n_classes = world.n_classes
    ids = _KeyCounter()
    graph = FactorGraph()
    pose_keys: list = []
    landmarks: list = []
    records: list = []
    result: DcResult | None = None

    for t, frame in enumerate(world.detections):
        x = VariableKey.continuous(ids.take(), SE3)
        new_vars = [x]
        if t == 0:
            pose_value = world.poses[0]
            new_factors = [PriorFactor(x, pose_value, NoiseModel.isotropic(ANCHOR_SIGMA, 6))]
        else:
            odo = world.odometry[t - 1]
            pose_value = result.continuous[pose_keys[-1]] @ odo
            new_factors = [BetweenFactor(pose_keys[-1], x, odo, odo_noise)]
        new_values = {x: pose_value}

        scored = [[] for _ in frame]
        if landmarks and frame and result is not None:
            probe = graph.copy()
            probe.add_variable(x)
            for f in new_factors:
                probe.add_factor(f)
            values = dict(result.continuous)
            values[x] = pose_value
            pairs = [(x, lm.position) for lm in landmarks]
            cov = recover_covariance(probe, result.discrete, values, [], pairs, warn=False)
            probs = marginals(condition(probe, values))
            for n, det in enumerate(frame):
                scored[n] = association_log_likelihoods(
                    probe, result, x, pose_value, landmarks, det, world.confusion, meas_noise, cov, probs
                )

        for det, logs in zip(frame, scored):
            hyps = [j for j, v in enumerate(logs) if v > log_threshold]
            likelihood = world.confusion[:, det.label]
            if not hyps:
                lm = Landmark(VariableKey.continuous(ids.take(), R3), VariableKey.discrete(ids.take(), n_classes))
                new_vars += [lm.position, lm.label]
                new_values[lm.position] = pose_value.act(point_from_range_bearing(det.measurement))
                new_factors.append(SemanticFactor(x, lm.position, lm.label, det.measurement, meas_noise, likelihood))
                landmarks.append(lm)
                records.append(DetectionRecord(t, det, [len(landmarks) - 1], "new", None, logs))
            elif len(hyps) == 1:
                lm = landmarks[hyps[0]]
                new_factors.append(SemanticFactor(x, lm.position, lm.label, det.measurement, meas_noise, likelihood))
                records.append(DetectionRecord(t, det, hyps, "single", None, logs))
            else:
                a = VariableKey.discrete(ids.take(), len(hyps))
                new_vars.append(a)
                pairs = [(landmarks[j].position, landmarks[j].label) for j in hyps]
                new_factors.append(SemanticMixtureFactor(x, a, pairs, det.measurement, meas_noise, likelihood))
                records.append(DetectionRecord(t, det, hyps, "mixture", a, logs))

        if result is None:
            graph.add_variables(new_vars)
            for f in new_factors:
                graph.add_factor(f)
            result = solve(graph, new_values, params=params)
        else:
            result = incremental_extend(graph, new_vars, new_factors, result, new_values, params)
        pose_keys.append(x)

    return SemanticSlamResult(graph, result, pose_keys, landmarks, records)


def trajectory_error(estimate, truth) -> float:
    """Root-mean-square position error between two pose sequences."""
    sq = [float(np.sum((e.translation - g.translation) ** 2)) for e, g in zip(estimate, truth)]
    return math.sqrt(sum(sq) / len(sq))
