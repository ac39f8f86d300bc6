import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dcfg import manifold
from dcfg.errors import DimensionMismatch, NotOnManifold
from dcfg.manifold import SE2, SE3, SO3, Pose2, Pose3, VectorSpace

from oracles import haar_angle_cdf

KINDS = [SO3, SE2, SE3, VectorSpace(4)]


def close(a, b, tol):
    kind = manifold.kind_of(a)
    if kind in (SE2, SE3):
        return np.allclose(a.matrix(), b.matrix(), atol=tol, rtol=0)
    return np.allclose(np.asarray(a), np.asarray(b), atol=tol, rtol=0)


def test_tangent_dims():
    assert (SO3.dim, SE2.dim, SE3.dim, VectorSpace(5).dim) == (3, 3, 6, 5)


@pytest.mark.parametrize("kind", KINDS)
def test_exp_of_zero_is_identity(kind):
    assert close(manifold.exp(kind, np.zeros(kind.dim)), manifold.identity(kind), 0.0)


def test_so3_quarter_turn_about_x():
    r = manifold.exp(SO3, [math.pi / 2, 0.0, 0.0])
    assert np.allclose(r @ np.array([0.0, 1.0, 0.0]), [0.0, 0.0, 1.0], atol=1e-12)


def test_se3_round_trip_1000_samples():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        xi = rng.standard_normal(6)
        xi *= rng.uniform(0, 1) / np.linalg.norm(xi)
        assert np.allclose(manifold.log(SE3, manifold.exp(SE3, xi)), xi, atol=1e-9)


def test_round_trip_property_10k_draws():
    rng = np.random.default_rng(1)
    for n in range(10_000):
        kind = (SO3, SE2, SE3)[n % 3]
        xi = rng.standard_normal(kind.dim) * 2.0
        angle = rng.uniform(0.0, math.pi - 1e-4)
        if kind == SE2:
            xi[0] = angle * rng.choice([-1.0, 1.0])
        else:
            w = xi[:3] / np.linalg.norm(xi[:3])
            xi[:3] = angle * w
        assert np.allclose(manifold.log(kind, manifold.exp(kind, xi)), xi, atol=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=6, max_size=6))
def test_hypothesis_se3_exp_log(values):
    xi = np.array(values)
    if np.linalg.norm(xi[:3]) > math.pi - 1e-4:
        xi[:3] *= (math.pi - 1e-3) / np.linalg.norm(xi[:3])
    assert np.allclose(manifold.log(SE3, manifold.exp(SE3, xi)), xi, atol=1e-8)


def test_log_identity_is_zero():
    for kind in (SO3, SE2, SE3):
        assert np.all(manifold.log(kind, manifold.identity(kind)) == 0.0)


def test_near_pi_round_trip():
    axis = np.array([1.0, -2.0, 0.5])
    axis /= np.linalg.norm(axis)
    for angle in (math.pi - 1e-6, math.pi - 1e-5, math.pi):
        r = manifold.so3_exp(angle * axis)
        w = manifold.log(SO3, r)
        assert np.all(np.isfinite(w))
        assert 0.0 <= np.linalg.norm(w) <= math.pi + 1e-12
        assert np.allclose(manifold.so3_exp(w), r, atol=1e-6)


def test_log_rejects_reflection():
    with pytest.raises(NotOnManifold):
        manifold.log(SO3, np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(NotOnManifold):
        manifold.log(SE3, Pose3(np.diag([-1.0, 1.0, 1.0]), np.zeros(3)))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        manifold.exp(SE3, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        manifold.between(Pose3(), Pose2())
    with pytest.raises(DimensionMismatch):
        manifold.retract(Pose2(), np.zeros(6))


@pytest.mark.parametrize("kind", [SO3, SE2, SE3])
def test_between_identities(kind):
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = manifold.random_element(kind, rng)
        b = manifold.random_element(kind, rng)
        assert close(manifold.between(a, a), manifold.identity(kind), 1e-12)
        assert close(manifold.between(manifold.identity(kind), b), b, 1e-12)
        assert close(manifold.compose(a, manifold.between(a, b)), b, 1e-12)


@pytest.mark.parametrize("kind", [SO3, SE2, SE3])
def test_retract_identities(kind):
    rng = np.random.default_rng(3)
    for _ in range(50):
        g = manifold.random_element(kind, rng)
        d = rng.standard_normal(kind.dim) * 0.5
        assert close(manifold.retract(g, np.zeros(kind.dim)), g, 0.0)
        h = manifold.retract(g, d)
        back = manifold.retract(h, -manifold.log(kind, manifold.between(g, h)))
        assert close(back, g, 1e-9)


def test_vector_retract_is_addition():
    x = np.array([1.0, 2.0, 3.0])
    d = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(manifold.retract(x, d), x + d)


@pytest.mark.parametrize("kind", [SO3, SE2, SE3])
def test_group_axioms(kind):
    rng = np.random.default_rng(4)
    for _ in range(100):
        a, b, c = (manifold.random_element(kind, rng) for _ in range(3))
        left = manifold.compose(manifold.compose(a, b), c)
        right = manifold.compose(a, manifold.compose(b, c))
        assert close(left, right, 1e-10)
        assert close(manifold.compose(a, manifold.inverse(a)), manifold.identity(kind), 1e-10)


def test_small_angle_branch_continuity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        for theta in (1e-8 * (1 - 1e-6), 1e-8, 1e-8 * (1 + 1e-6)):
            w = theta * axis
            taylor = manifold._so3_exp_taylor(w)
            closed = manifold._so3_exp_closed(w, theta)
            assert np.allclose(taylor, closed, atol=1e-10)


@pytest.mark.parametrize("kind", [SO3, SE2, SE3])
def test_adjoint(kind):
    rng = np.random.default_rng(6)
    for _ in range(30):
        g = manifold.random_element(kind, rng)
        d = rng.standard_normal(kind.dim) * 0.3
        lhs = manifold.compose(manifold.compose(g, manifold.exp(kind, d)), manifold.inverse(g))
        rhs = manifold.exp(kind, manifold.adjoint(g) @ d)
        assert close(lhs, rhs, 1e-10)


@pytest.mark.parametrize("kind", [SO3, SE2, SE3])
def test_right_jacobians_against_finite_differences(kind):
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(30):
        xi = rng.standard_normal(kind.dim) * 0.8
        g = manifold.exp(kind, xi)
        jr = manifold.right_jacobian(kind, xi)
        jinv = manifold.right_jacobian_inv(kind, xi)
        num = np.zeros((kind.dim, kind.dim))
        num_inv = np.zeros((kind.dim, kind.dim))
        for c in range(kind.dim):
            e = np.zeros(kind.dim)
            e[c] = h
            # exp(xi + e) = exp(xi) exp(Jr e)
            num[:, c] = (
                manifold.log(kind, manifold.between(g, manifold.exp(kind, xi + e)))
                - manifold.log(kind, manifold.between(g, manifold.exp(kind, xi - e)))
            ) / (2 * h)
            # log(exp(xi) exp(e)) = xi + Jr^-1 e
            num_inv[:, c] = (
                manifold.log(kind, manifold.retract(g, e)) - manifold.log(kind, manifold.retract(g, -e))
            ) / (2 * h)
        assert np.allclose(jr, num, atol=1e-7)
        assert np.allclose(jinv, num_inv, atol=1e-7)
        assert np.allclose(jr @ jinv, np.eye(kind.dim), atol=1e-10)


def test_quaternion_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(200):
        r = manifold.random_rotation(rng)
        q = manifold.matrix_to_quat(r)
        assert q[3] >= 0.0 and abs(np.linalg.norm(q) - 1) < 1e-12
        assert np.allclose(manifold.quat_to_matrix(q), r, atol=1e-12)


def test_identity_quaternion():
    assert np.array_equal(manifold.quat_to_matrix([0, 0, 0, 1]), np.eye(3))


def test_random_rotation_is_haar():
    rng = np.random.default_rng(9)
    angles = [np.linalg.norm(manifold.so3_log(manifold.random_rotation(rng))) for _ in range(5000)]
    result = stats.kstest(angles, haar_angle_cdf)
    assert result.pvalue > 0.01


def test_membership():
    assert manifold.is_member(SO3, np.eye(3))
    assert not manifold.is_member(SO3, 1.01 * np.eye(3))
    assert manifold.is_member(SE2, Pose2(0.3, [1, 2]))
    assert not manifold.is_member(VectorSpace(2), np.array([np.nan, 0.0]))


def test_pose2_wraps_heading():
    p = Pose2(3 * math.pi, [0.0, 0.0])
    assert abs(abs(p.theta) - math.pi) < 1e-12
