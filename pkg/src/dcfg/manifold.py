"""Lie-group machinery for SO(3), SE(2), SE(3) and plain vector spaces.

Tangent vectors always list rotational components first, then translational
ones (SE(3): ``[w; v]``, SE(2): ``[theta; vx; vy]``).  Retraction is the exact
group exponential applied on the right, ``retract(g, d) = g * exp(d)``, and all
Jacobians in the package are taken with respect to that perturbation.

Elements are represented as

* ``VectorSpace(n)`` -- 1-D ``numpy`` array of length ``n``
* ``SO3`` -- 3x3 rotation matrix
* ``SE2`` -- :class:`Pose2`
* ``SE3`` -- :class:`Pose3`
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotOnManifold

SMALL_ANGLE = 1e-8
# below this angle the V-matrix / Jacobian coefficients switch to series form
_SERIES_ANGLE = 1e-2
MEMBERSHIP_TOL = 1e-6


@dataclass(frozen=True)
class ManifoldKind:
    name: str
    dim: int

    @property
    def tangent_dim(self) -> int:
        return self.dim

    @property
    def is_vector(self) -> bool:
        return self.name == "vector"

    def __str__(self) -> str:
        return f"R{self.dim}" if self.is_vector else self.name


def VectorSpace(dim: int) -> ManifoldKind:
    if dim < 1:
        raise DimensionMismatch(f"vector space dimension must be >= 1, got {dim}")
    return ManifoldKind("vector", int(dim))


SO3 = ManifoldKind("SO3", 3)
SE2 = ManifoldKind("SE2", 3)
SE3 = ManifoldKind("SE3", 6)


def _wrap_angle(theta: float) -> float:
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


class Pose2:
    """Planar rigid transform stored as heading angle and translation."""

    __slots__ = ("theta", "translation")

    def __init__(self, theta: float = 0.0, translation=(0.0, 0.0)):
        self.theta = _wrap_angle(float(theta))
        self.translation = np.array(translation, dtype=float).reshape(2)

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @classmethod
    def identity(cls) -> "Pose2":
        return cls()

    def compose(self, other: "Pose2") -> "Pose2":
        return Pose2(self.theta + other.theta, self.translation + self.rotation @ other.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose2":
        return Pose2(-self.theta, -(self.rotation.T @ self.translation))

    def act(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.rotation
        m[:2, 2] = self.translation
        return m

    def __repr__(self) -> str:
        return f"Pose2(theta={self.theta!r}, translation={self.translation.tolist()!r})"


class Pose3:
    """Rigid transform in 3D: rotation matrix plus translation (meters)."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        self.rotation = np.eye(3) if rotation is None else np.array(rotation, dtype=float).reshape(3, 3)
        self.translation = np.zeros(3) if translation is None else np.array(translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "Pose3":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose3":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose3":
        rt = self.rotation.T
        return Pose3(rt, -(rt @ self.translation))

    def act(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __repr__(self) -> str:
        return f"Pose3(rotation={self.rotation.tolist()!r}, translation={self.translation.tolist()!r})"


# --------------------------------------------------------------------- SO(3)


def hat(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(m) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _so3_exp_taylor(w) -> np.ndarray:
    k = hat(w)
    return np.eye(3) + k + 0.5 * (k @ k)


def _so3_exp_closed(w, theta: float) -> np.ndarray:
    k = hat(w)
    a = math.sin(theta) / theta
    b = 2.0 * (math.sin(0.5 * theta) / theta) ** 2
    return np.eye(3) + a * k + b * (k @ k)


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    if theta < SMALL_ANGLE:
        return _so3_exp_taylor(w)
    return _so3_exp_closed(w, theta)


def so3_log(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    s = 0.5 * vee(r - r.T)  # sin(theta) * axis
    sin_t = math.sqrt(float(s @ s))
    cos_t = 0.5 * (r[0, 0] + r[1, 1] + r[2, 2] - 1.0)
    theta = math.atan2(sin_t, cos_t)
    if theta < SMALL_ANGLE:
        return s * (1.0 + theta * theta / 6.0)
    if math.pi - theta > 1e-4:
        return (theta / sin_t) * s
    # near pi: recover the axis from the symmetric part, aa^T = (sym(R) - cos I) / (1 - cos)
    b = (0.5 * (r + r.T) - cos_t * np.eye(3)) / (1.0 - cos_t)
    k = int(np.argmax(np.diag(b)))
    axis = b[:, k] / math.sqrt(b[k, k])
    axis /= np.linalg.norm(axis)
    if float(axis @ s) < 0.0:
        axis = -axis
    return theta * axis


def _so3_v_coeffs(theta: float) -> tuple[float, float]:
    """Coefficients (b, c) of V = I + b K + c K^2."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    return (
        2.0 * (math.sin(0.5 * theta) / theta) ** 2,
        (theta - math.sin(theta)) / theta**3,
    )


def _so3_vinv_coeff(theta: float) -> float:
    """Coefficient d of V^-1 = I - K/2 + d K^2."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    half = 0.5 * theta
    return (1.0 - half * math.cos(half) / math.sin(half)) / (theta * theta)


def so3_left_jacobian(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    b, c = _so3_v_coeffs(theta)
    k = hat(w)
    return np.eye(3) + b * k + c * (k @ k)


def so3_left_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    k = hat(w)
    return np.eye(3) - 0.5 * k + _so3_vinv_coeff(theta) * (k @ k)


def _se3_q(w, v) -> np.ndarray:
    """Off-diagonal block of the SE(3) left Jacobian for tangent [w; v]."""
    theta = math.sqrt(float(w @ w))
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta**4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    p = hat(w)
    r = hat(v)
    pr = p @ r
    rp = r @ p
    prp = pr @ p
    pp = p @ p
    return 0.5 * r + c1 * (pr + rp + prp) + c2 * (pp @ r + rp @ p - 3.0 * prp) + c3 * (prp @ p + p @ prp)


def _se3_left_jacobian_inv(xi) -> np.ndarray:
    w, v = xi[:3], xi[3:]
    jinv = so3_left_jacobian_inv(w)
    out = np.zeros((6, 6))
    out[:3, :3] = jinv
    out[3:, 3:] = jinv
    out[3:, :3] = -jinv @ _se3_q(w, v) @ jinv
    return out


def _se3_left_jacobian(xi) -> np.ndarray:
    w, v = xi[:3], xi[3:]
    j = so3_left_jacobian(w)
    out = np.zeros((6, 6))
    out[:3, :3] = j
    out[3:, 3:] = j
    out[3:, :3] = _se3_q(w, v)
    return out


def _se2_v(theta: float) -> np.ndarray:
    if abs(theta) < SMALL_ANGLE:
        a, b = 1.0 - theta * theta / 6.0, 0.5 * theta
    else:
        a = math.sin(theta) / theta
        b = 2.0 * math.sin(0.5 * theta) ** 2 / theta
    return np.array([[a, -b], [b, a]])


def _se2_right_jacobian(xi) -> np.ndarray:
    theta, x, y = float(xi[0]), float(xi[1]), float(xi[2])
    if abs(theta) < _SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0  # sin t / t
        b = theta * (0.5 - t2 / 24.0 + t2 * t2 / 720.0)  # (1 - cos t) / t
        c = theta * (1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)  # (t - sin t) / t^2
        d = 0.5 - t2 / 24.0 + t2 * t2 / 720.0  # (1 - cos t) / t^2
    else:
        s, co = math.sin(theta), math.cos(theta)
        a = s / theta
        b = (1.0 - co) / theta
        c = (theta - s) / (theta * theta)
        d = (1.0 - co) / (theta * theta)
    out = np.zeros((3, 3))
    out[0, 0] = 1.0
    out[1, 1], out[1, 2] = a, b
    out[2, 1], out[2, 2] = -b, a
    out[1, 0] = x * c - y * d
    out[2, 0] = x * d + y * c
    return out


# ------------------------------------------------------------ dispatch layer


def kind_of(g) -> ManifoldKind:
    if isinstance(g, Pose3):
        return SE3
    if isinstance(g, Pose2):
        return SE2
    arr = np.asarray(g)
    if arr.ndim == 2 and arr.shape == (3, 3):
        return SO3
    if arr.ndim == 1:
        return VectorSpace(arr.shape[0])
    raise DimensionMismatch(f"cannot infer manifold of object with shape {arr.shape}")


def _check_tangent(kind: ManifoldKind, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (kind.dim,):
        raise DimensionMismatch(f"{kind} expects a tangent of length {kind.dim}, got shape {xi.shape}")
    return xi


def identity(kind: ManifoldKind):
    if kind.is_vector:
        return np.zeros(kind.dim)
    if kind == SO3:
        return np.eye(3)
    if kind == SE2:
        return Pose2()
    return Pose3()


def exp(kind: ManifoldKind, xi):
    xi = _check_tangent(kind, xi)
    if kind.is_vector:
        return xi.copy()
    if kind == SO3:
        return so3_exp(xi)
    if kind == SE2:
        theta = float(xi[0])
        return Pose2(theta, _se2_v(theta) @ xi[1:])
    w, v = xi[:3], xi[3:]
    theta = math.sqrt(float(w @ w))
    b, c = _so3_v_coeffs(theta)
    k = hat(w)
    return Pose3(so3_exp(w), v + b * (k @ v) + c * (k @ (k @ v)))


def is_member(kind: ManifoldKind, g, tol: float = MEMBERSHIP_TOL) -> bool:
    try:
        if kind.is_vector:
            arr = np.asarray(g, dtype=float)
            return arr.shape == (kind.dim,) and bool(np.all(np.isfinite(arr)))
        if kind == SE2:
            return isinstance(g, Pose2) and math.isfinite(g.theta) and bool(np.all(np.isfinite(g.translation)))
        r = g.rotation if kind == SE3 else np.asarray(g, dtype=float)
        if kind == SE3 and (not isinstance(g, Pose3) or not np.all(np.isfinite(g.translation))):
            return False
        if r.shape != (3, 3) or not np.all(np.isfinite(r)):
            return False
        return bool(np.abs(r.T @ r - np.eye(3)).max() <= tol) and abs(np.linalg.det(r) - 1.0) <= tol
    except (TypeError, ValueError, AttributeError):
        return False


def log(kind: ManifoldKind, g) -> np.ndarray:
    if not is_member(kind, g):
        raise NotOnManifold(f"element is not a valid {kind}")
    if kind.is_vector:
        return np.array(g, dtype=float)
    if kind == SO3:
        return so3_log(g)
    if kind == SE2:
        theta = g.theta
        v = _se2_v(theta)
        det = v[0, 0] ** 2 + v[1, 0] ** 2
        vinv = np.array([[v[0, 0], v[1, 0]], [-v[1, 0], v[0, 0]]]) / det
        return np.concatenate(([theta], vinv @ g.translation))
    w = so3_log(g.rotation)
    theta = math.sqrt(float(w @ w))
    k = hat(w)
    t = g.translation
    v = t - 0.5 * (k @ t) + _so3_vinv_coeff(theta) * (k @ (k @ t))
    return np.concatenate((w, v))


def compose(a, b):
    kind = kind_of(a)
    if kind != kind_of(b):
        raise DimensionMismatch(f"cannot compose {kind} with {kind_of(b)}")
    if kind.is_vector:
        return np.asarray(a, dtype=float) + np.asarray(b, dtype=float)
    if kind == SO3:
        return np.asarray(a) @ np.asarray(b)
    return a.compose(b)


def inverse(g):
    kind = kind_of(g)
    if kind.is_vector:
        return -np.asarray(g, dtype=float)
    if kind == SO3:
        return np.asarray(g).T.copy()
    return g.inverse()


def between(a, b):
    """Relative element ``a^-1 * b``."""
    return compose(inverse(a), b)


def retract(g, delta):
    kind = kind_of(g)
    delta = _check_tangent(kind, delta)
    if kind.is_vector:
        return np.asarray(g, dtype=float) + delta
    return compose(g, exp(kind, delta))


def local(g, h) -> np.ndarray:
    """Tangent ``d`` with ``retract(g, d) == h``."""
    return log(kind_of(g), between(g, h))


def adjoint(g) -> np.ndarray:
    """Adjoint matrix: ``g * exp(d) * g^-1 == exp(adjoint(g) @ d)``."""
    kind = kind_of(g)
    if kind.is_vector:
        return np.eye(kind.dim)
    if kind == SO3:
        return np.array(g, dtype=float)
    if kind == SE2:
        out = np.zeros((3, 3))
        out[0, 0] = 1.0
        out[1, 0] = g.translation[1]
        out[2, 0] = -g.translation[0]
        out[1:, 1:] = g.rotation
        return out
    r = g.rotation
    out = np.zeros((6, 6))
    out[:3, :3] = r
    out[3:, 3:] = r
    out[3:, :3] = hat(g.translation) @ r
    return out


def right_jacobian(kind: ManifoldKind, xi) -> np.ndarray:
    """``exp(xi + d) ~= exp(xi) * exp(Jr d)`` to first order."""
    xi = _check_tangent(kind, xi)
    if kind.is_vector:
        return np.eye(kind.dim)
    if kind == SO3:
        return so3_left_jacobian(-xi)
    if kind == SE2:
        return _se2_right_jacobian(xi)
    return _se3_left_jacobian(-xi)


def right_jacobian_inv(kind: ManifoldKind, xi) -> np.ndarray:
    """``log(exp(xi) * exp(d)) ~= xi + Jr^-1 d`` to first order."""
    xi = _check_tangent(kind, xi)
    if kind.is_vector:
        return np.eye(kind.dim)
    if kind == SO3:
        return so3_left_jacobian_inv(-xi)
    if kind == SE2:
        return np.linalg.inv(_se2_right_jacobian(xi))
    return _se3_left_jacobian_inv(-xi)


def random_element(kind: ManifoldKind, rng: np.random.Generator, scale: float = 1.0):
    """Draw an element by exponentiating a Gaussian tangent vector."""
    return exp(kind, scale * rng.standard_normal(kind.dim))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quat_to_matrix(q)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix from a unit quaternion stored as (x, y, z, w)."""
    x, y, z, w = (float(c) for c in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r) -> np.ndarray:
    """Unit quaternion (x, y, z, w) with w >= 0 (Shepperd's method)."""
    r = np.asarray(r, dtype=float)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([(r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s, 0.25 * s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array([0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s, (r[2, 1] - r[1, 2]) / s])
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array([(r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s, (r[0, 2] - r[2, 0]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array([(r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s, (r[1, 0] - r[0, 1]) / s])
    q /= np.linalg.norm(q)
    return -q if q[3] < 0.0 else q


def distance(a, b) -> float:
    """Norm of the tangent separating two elements."""
    return float(np.linalg.norm(local(a, b)))
