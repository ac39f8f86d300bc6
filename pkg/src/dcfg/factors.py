"""Concrete residual and hybrid factors shipped with the library."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import manifold
from .errors import InputError
from .graph import ContinuousFactor, HybridFactor, NoiseModel, VariableKey
from .manifold import SE2, SE3, hat


def _check_noise(noise: NoiseModel, dim: int) -> None:
    if noise.dim != dim:
        raise InputError(f"noise model has dimension {noise.dim}, residual has {dim}")


class PriorFactor(ContinuousFactor):
    """``r = log(z^-1 x)`` (``x - z`` on vector spaces)."""

    def __init__(self, key: VariableKey, measurement, noise: NoiseModel):
        _check_noise(noise, key.tangent_dim)
        self.keys = (key,)
        self.kind = key.manifold
        self.measurement = measurement
        self.noise = noise

    def evaluate(self, values, jacobians=False):
        (x,) = values
        if self.kind.is_vector:
            r = np.asarray(x, dtype=float) - self.measurement
            return r, ([np.eye(self.kind.dim)] if jacobians else None)
        r = manifold.log(self.kind, manifold.between(self.measurement, x))
        if not jacobians:
            return r, None
        return r, [manifold.right_jacobian_inv(self.kind, r)]


class BetweenFactor(ContinuousFactor):
    """Relative measurement ``r = log(z^-1 x_i^-1 x_j)`` in the body frame of ``z``."""

    def __init__(self, key_i: VariableKey, key_j: VariableKey, measurement, noise: NoiseModel):
        if key_i.manifold != key_j.manifold:
            raise InputError("between factor endpoints must live on the same manifold")
        _check_noise(noise, key_i.tangent_dim)
        self.keys = (key_i, key_j)
        self.kind = key_i.manifold
        self.measurement = measurement
        self._measurement_inv = manifold.inverse(measurement)
        self.noise = noise

    def evaluate(self, values, jacobians=False):
        xi, xj = values
        if self.kind.is_vector:
            r = np.asarray(xj, dtype=float) - np.asarray(xi, dtype=float) - self.measurement
            if not jacobians:
                return r, None
            eye = np.eye(self.kind.dim)
            return r, [-eye, eye]
        rel = manifold.between(xi, xj)
        r = manifold.log(self.kind, manifold.compose(self._measurement_inv, rel))
        if not jacobians:
            return r, None
        jr_inv = manifold.right_jacobian_inv(self.kind, r)
        ad = manifold.adjoint(manifold.inverse(rel))
        return r, [-jr_inv @ ad, jr_inv]


class PointToPointFactor(ContinuousFactor):
    """Registration residual ``r = T p_source - p_target`` for a pose ``T``."""

    def __init__(self, key: VariableKey, source_point, target_point, noise: NoiseModel):
        if key.manifold not in (SE2, SE3):
            raise InputError("point-to-point factors act on SE2 or SE3 poses")
        dim = 2 if key.manifold == SE2 else 3
        _check_noise(noise, dim)
        self.keys = (key,)
        self.source = np.asarray(source_point, dtype=float).reshape(dim)
        self.target = np.asarray(target_point, dtype=float).reshape(dim)
        self.noise = noise

    def evaluate(self, values, jacobians=False):
        (pose,) = values
        r = pose.act(self.source) - self.target
        if not jacobians:
            return r, None
        rot = pose.rotation
        if self.keys[0].manifold == SE3:
            jac = np.hstack((-rot @ hat(self.source), rot))
        else:
            perp = np.array([-self.source[1], self.source[0]])
            jac = np.column_stack((rot @ perp, rot))
        return r, [jac]


def range_bearing(local_point) -> np.ndarray:
    """(range, azimuth, elevation) of a point given in the sensor frame."""
    x, y, z = (float(c) for c in local_point)
    return np.array([math.sqrt(x * x + y * y + z * z), math.atan2(y, x), math.atan2(z, math.hypot(x, y))])


def point_from_range_bearing(measurement) -> np.ndarray:
    rng, az, el = (float(c) for c in measurement)
    return rng * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


class RangeBearingFactor(ContinuousFactor):
    """Range, azimuth and elevation from an SE3 pose to a 3D point."""

    def __init__(self, pose_key: VariableKey, point_key: VariableKey, measurement, noise: NoiseModel):
        if pose_key.manifold != SE3 or point_key.manifold != manifold.VectorSpace(3):
            raise InputError("range-bearing factors connect an SE3 pose and an R3 point")
        _check_noise(noise, 3)
        self.keys = (pose_key, point_key)
        self.measurement = np.asarray(measurement, dtype=float).reshape(3)
        self.noise = noise

    def evaluate(self, values, jacobians=False):
        pose, point = values
        q = pose.rotation.T @ (np.asarray(point, dtype=float) - pose.translation)
        r = range_bearing(q) - self.measurement
        r[1] = math.remainder(r[1], 2.0 * math.pi)
        r[2] = math.remainder(r[2], 2.0 * math.pi)
        if not jacobians:
            return r, None
        x, y, z = q
        rho2 = float(q @ q)
        rho = math.sqrt(rho2)
        s2 = x * x + y * y
        s = math.sqrt(s2)
        dh = np.array(
            [
                [x / rho, y / rho, z / rho],
                [-y / s2, x / s2, 0.0],
                [-z * x / (s * rho2), -z * y / (s * rho2), s / rho2],
            ]
        )
        dq_pose = np.hstack((hat(q), -np.eye(3)))
        return r, [dh @ dq_pose, dh @ pose.rotation.T]


class SwitchableLoopFactor(HybridFactor):
    """Untrusted relative-pose measurement with a binary inlier/outlier switch.

    State 0 uses the inlier noise model with offset ``-log w0``; state 1 uses
    the (much broader) outlier model with offset ``-log w1 + c`` where
    ``c = 0.5 log(det(outlier cov) / det(inlier cov))`` is the difference of
    the Gaussian log-normalizers.
    """

    def __init__(
        self,
        key_i: VariableKey,
        key_j: VariableKey,
        switch: VariableKey,
        measurement,
        inlier_noise: NoiseModel,
        outlier_noise: NoiseModel,
        weights: tuple[float, float] = (1.0 - 1e-7, 1e-7),
    ):
        if switch.cardinality != 2:
            raise InputError("switch variables are binary")
        w0, w1 = weights
        if not (0.0 < w0 < 1.0 and 0.0 < w1 < 1.0):
            raise InputError("switch prior weights must lie in (0, 1)")
        if np.any(np.diag(outlier_noise.covariance) <= np.diag(inlier_noise.covariance)):
            raise InputError("outlier covariance must dominate the inlier covariance")
        super().__init__((key_i, key_j), (switch,))
        self.switch = switch
        self.inlier = BetweenFactor(key_i, key_j, measurement, inlier_noise)
        self.outlier = BetweenFactor(key_i, key_j, measurement, outlier_noise)
        self.weights = (float(w0), float(w1))
        self.normalizer_gap = outlier_noise.log_normalizer() - inlier_noise.log_normalizer()
        self.offsets = np.array([-math.log(w0), -math.log(w1) + self.normalizer_gap])

    @property
    def measurement(self):
        return self.inlier.measurement

    def component(self, state):
        return (self.inlier, self.offsets[0]) if state[0] == 0 else (self.outlier, self.offsets[1])

    def conditioned_costs(self, continuous):
        r = self.inlier.residual(continuous)
        w0 = self.inlier.noise.whiten(r)
        w1 = self.outlier.noise.whiten(r)
        return self.offsets + 0.5 * np.array([w0 @ w0, w1 @ w1])


class CorrespondenceFactor(HybridFactor):
    """Source point ``i`` matched to target point ``d_i`` under transform ``T``."""

    def __init__(self, pose_key: VariableKey, correspondence: VariableKey, source_point, target_points, sigma: float):
        target_points = np.asarray(target_points, dtype=float)
        if correspondence.cardinality != target_points.shape[0]:
            raise InputError("correspondence cardinality must equal the target cloud size")
        super().__init__((pose_key,), (correspondence,))
        self.pose_key = pose_key
        self.source = np.asarray(source_point, dtype=float)
        self.targets = target_points
        self.noise = NoiseModel.isotropic(sigma, target_points.shape[1])
        self._scale = 0.5 / (sigma * sigma)

    def component(self, state):
        return PointToPointFactor(self.pose_key, self.source, self.targets[state[0]], self.noise), 0.0

    def conditioned_costs(self, continuous):
        moved = continuous[self.pose_key].act(self.source)
        diff = self.targets - moved
        return self._scale * np.sum(diff**2, axis=1)


class SemanticFactor(HybridFactor):
    """Detection of one known landmark: ``-log phi(s) + 0.5 ||psi(x, p)||^2``.

    ``class_likelihood[c]`` is the probability of the detected label given
    true class ``c``.
    """

    def __init__(self, pose_key, point_key, class_key, measurement, noise: NoiseModel, class_likelihood):
        likelihood = np.asarray(class_likelihood, dtype=float)
        if likelihood.shape != (class_key.cardinality,) or np.any(likelihood < 0) or not np.any(likelihood > 0):
            raise InputError("class likelihood must be a nonnegative vector over the class variable")
        super().__init__((pose_key, point_key), (class_key,))
        self.measurement_factor = RangeBearingFactor(pose_key, point_key, measurement, noise)
        with np.errstate(divide="ignore"):
            self.class_costs = -np.log(likelihood)

    def component(self, state):
        return self.measurement_factor, float(self.class_costs[state[0]])

    def conditioned_costs(self, continuous):
        return self.class_costs + self.measurement_factor.cost(continuous)


class SemanticMixtureFactor(HybridFactor):
    """Max-mixture over a hypothesis set of landmarks for one detection.

    Discrete keys are the association variable (one state per hypothesis)
    followed by the class variable of every hypothesis landmark.  The state
    ``(a, s_1, ..., s_h)`` costs ``-log phi(s_a) + 0.5 ||psi(x, p_a)||^2``.
    """

    def __init__(
        self,
        pose_key: VariableKey,
        association: VariableKey,
        hypotheses: Sequence[tuple[VariableKey, VariableKey]],
        measurement,
        noise: NoiseModel,
        class_likelihood,
    ):
        if not hypotheses:
            raise InputError("mixture factors need a non-empty hypothesis set")
        if association.cardinality != len(hypotheses):
            raise InputError("association cardinality must equal the hypothesis count")
        likelihood = np.asarray(class_likelihood, dtype=float)
        point_keys = [p for p, _ in hypotheses]
        class_keys = [s for _, s in hypotheses]
        if any(s.cardinality != likelihood.shape[0] for s in class_keys):
            raise InputError("class likelihood length must match every class variable")
        super().__init__((pose_key, *point_keys), (association, *class_keys))
        self.association = association
        self.hypotheses = list(hypotheses)
        self.measurement_factors = [RangeBearingFactor(pose_key, p, measurement, noise) for p in point_keys]
        with np.errstate(divide="ignore"):
            self.class_costs = -np.log(likelihood)

    def component(self, state):
        a = state[0]
        return self.measurement_factors[a], float(self.class_costs[state[1 + a]])

    def conditioned_costs(self, continuous):
        h = len(self.hypotheses)
        n = self.class_costs.shape[0]
        out = np.empty((h,) + (n,) * h)
        for a, factor in enumerate(self.measurement_factors):
            shape = [1] * h
            shape[a] = n
            out[a] = factor.cost(continuous) + np.broadcast_to(self.class_costs.reshape(shape), (n,) * h)
        return out
