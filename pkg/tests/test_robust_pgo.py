import math

import numpy as np
import pytest
from scipy import stats

from dcfg import manifold
from dcfg.discrete import condition, solve_mpe
from dcfg.errors import DisconnectedGraph, InputError, InsufficientPoses, MissingLabel
from dcfg.factors import SwitchableLoopFactor
from dcfg.graph import HybridAssignment, NoiseModel, VariableKey
from dcfg.manifold import SE2, SE3, Pose2, Pose3
from dcfg.problems import robust_pgo
from dcfg.problems.robust_pgo import PoseEdge, PoseGraphData, SwitchParams

from oracles import haar_angle_cdf

NOISE = NoiseModel.diagonal([0.01] * 3 + [0.05] * 3)


def straight_graph(n=3, loop_offset=None):
    step = Pose3(np.eye(3), np.array([1.0, 0.0, 0.0]))
    odometry = [PoseEdge(k, k + 1, step, NOISE) for k in range(n - 1)]
    z = Pose3(np.eye(3), np.array([n - 1.0, 0.0, 0.0]))
    if loop_offset is not None:
        z = Pose3(np.eye(3), z.translation + loop_offset)
    loops = [PoseEdge(0, n - 1, z, NOISE)]
    return PoseGraphData(SE3, n, odometry, loops)


def two_row_table(problem):
    values = problem.odometry_initial()
    factor = problem.graph.factors[problem.loop_factor_indices[0]]
    rows = []
    for state in (0, 1):
        rows.append(factor.error(HybridAssignment(values, {factor.switch: state})))
    return rows, values


def test_counts():
    problem = robust_pgo.build_robust_pgo(straight_graph())
    assert len(problem.graph.discrete_keys()) == 1
    assert len(problem.graph.factors) == 4


def test_consistent_loop_is_inlier():
    problem = robust_pgo.build_robust_pgo(straight_graph())
    rows, values = two_row_table(problem)
    assert rows[0] < rows[1]
    assignment, _ = solve_mpe(condition(problem.graph, values))
    assert assignment[problem.switch_keys[0]] == 0


def test_displaced_loop_is_outlier():
    problem = robust_pgo.build_robust_pgo(straight_graph(loop_offset=np.array([10.0, 0.0, 0.0])))
    rows, values = two_row_table(problem)
    assert rows[1] < rows[0]
    assignment, _ = solve_mpe(condition(problem.graph, values))
    assert assignment[problem.switch_keys[0]] == 1


def test_objective_matches_term_by_term_sum():
    data = straight_graph(4, loop_offset=np.array([0.3, -0.2, 0.1]))
    problem = robust_pgo.build_robust_pgo(data)
    values = problem.odometry_initial()
    rng = np.random.default_rng(0)
    values = {k: manifold.retract(v, 0.05 * rng.standard_normal(6)) for k, v in values.items()}
    info = np.diag(1.0 / np.array([0.01] * 3 + [0.05] * 3) ** 2)
    keys = problem.pose_keys
    prior = manifold.log(SE3, values[keys[0]])
    total = 0.5 * prior @ prior / robust_pgo.ANCHOR_SIGMA**2
    for e in data.odometry:
        r = manifold.log(SE3, manifold.compose(manifold.inverse(e.measurement), manifold.between(values[keys[e.i]], values[keys[e.j]])))
        total += 0.5 * r @ info @ r
    e = data.loops[0]
    r = manifold.log(SE3, manifold.compose(manifold.inverse(e.measurement), manifold.between(values[keys[e.i]], values[keys[e.j]])))
    gap = 0.5 * (6 * math.log(1.6e7) - np.linalg.slogdet(np.linalg.inv(info))[1])
    inlier = total + 0.5 * r @ info @ r - math.log(1 - 1e-7)
    outlier = total + 0.5 * r @ r / 1.6e7 - math.log(1e-7) + gap
    s = problem.switch_keys[0]
    assert problem.graph.objective(HybridAssignment(values, {s: 0})) == pytest.approx(inlier, rel=1e-10)
    assert problem.graph.objective(HybridAssignment(values, {s: 1})) == pytest.approx(outlier, rel=1e-10)


def test_crossover_threshold_closed_form():
    sigma, outlier_sigma = 0.1, 100.0
    w0, w1 = 0.9, 0.1
    xi, xj = VariableKey.continuous(0, SE3), VariableKey.continuous(1, SE3)
    s = VariableKey.discrete(2, 2)
    f = SwitchableLoopFactor(
        xi, xj, s, Pose3(), NoiseModel.isotropic(sigma, 6), NoiseModel.isotropic(outlier_sigma, 6), (w0, w1)
    )
    c = 6.0 * math.log(outlier_sigma / sigma)
    rho = math.sqrt(2.0 * (math.log(w0 / w1) + c) / (1.0 / sigma**2 - 1.0 / outlier_sigma**2))
    direction = np.array([0.6, 0.0, 0.8])
    for scale, expected in ((1.0 - 1e-6, 0), (1.0 + 1e-6, 1)):
        xj_value = Pose3(np.eye(3), scale * rho * direction)
        table = f.conditioned_costs({xi: Pose3(), xj: xj_value})
        assert int(np.argmin(table)) == expected
    table = f.conditioned_costs({xi: Pose3(), xj: Pose3(np.eye(3), rho * direction)})
    assert table[0] == pytest.approx(table[1], rel=1e-9)


def test_default_switch_parameters():
    params = SwitchParams()
    assert params.omega1 == 1e-7
    assert params.weights == (1.0 - 1e-7, 1e-7)
    assert params.outlier_variance == 1.6e7


def test_inject_zero_is_unchanged():
    data = robust_pgo.generate_pose_graph(num_poses=20, ring_size=5)
    out, labels = robust_pgo.inject_outliers(data, 0, seed=3)
    assert out.loops == data.loops
    assert labels == [False] * len(data.loops)


def test_inject_is_deterministic():
    data = robust_pgo.generate_pose_graph(num_poses=20, ring_size=5)
    a, la = robust_pgo.inject_outliers(data, 100, seed=7)
    b, lb = robust_pgo.inject_outliers(data, 100, seed=7)
    assert la == lb
    for ea, eb in zip(a.loops, b.loops):
        assert (ea.i, ea.j) == (eb.i, eb.j)
        assert np.array_equal(ea.measurement.matrix(), eb.measurement.matrix())
    new = a.loops[len(data.loops):]
    assert len(new) == 100
    assert all(abs(e.i - e.j) > 1 for e in new)


def test_outlier_sampler_statistics():
    data = robust_pgo.generate_pose_graph(num_poses=10, ring_size=5)
    out, _ = robust_pgo.inject_outliers(data, 10_000, seed=11)
    new = out.loops[len(data.loops):]
    translations = np.array([e.measurement.translation for e in new])
    assert np.all(np.abs(translations.mean(axis=0)) <= 0.15)
    assert np.all(np.abs(translations) <= 5.0)
    angles = [np.linalg.norm(manifold.so3_log(e.measurement.rotation)) for e in new]
    assert stats.kstest(angles, haar_angle_cdf).pvalue > 0.01


def test_se2_injection():
    odometry = [PoseEdge(k, k + 1, Pose2(0.1, [1.0, 0.0]), NoiseModel.diagonal([0.01, 0.05, 0.05])) for k in range(5)]
    data = PoseGraphData(SE2, 6, odometry, [])
    out, labels = robust_pgo.inject_outliers(data, 20, seed=0)
    assert labels == [True] * 20
    for e in out.loops:
        assert isinstance(e.measurement, Pose2)
        assert np.all(np.abs(e.measurement.translation) <= 5.0)


def test_insufficient_poses_and_bad_count():
    data = straight_graph(2)
    with pytest.raises(InsufficientPoses):
        robust_pgo.inject_outliers(data, 1, seed=0)
    with pytest.raises(InputError):
        robust_pgo.inject_outliers(straight_graph(4), -1, seed=0)


def test_disconnected_graph():
    data = straight_graph(4)
    data.odometry = data.odometry[:1]
    data.loops = []
    with pytest.raises(DisconnectedGraph):
        robust_pgo.build_robust_pgo(data)


def keys(n):
    return [VariableKey.discrete(100 + i, 2) for i in range(n)]


def test_classify_edges_examples():
    ks = keys(4)
    labels = dict(zip(ks, [True, False, True, False]))
    assert robust_pgo.classify_edges(dict(zip(ks, [1, 0, 1, 0])), labels) == (1.0, 1.0)
    precision, recall = robust_pgo.classify_edges(dict(zip(ks, [0, 0, 0, 0])), labels)
    assert recall == 0.0
    with pytest.raises(MissingLabel):
        robust_pgo.classify_edges({VariableKey.discrete(7, 2): 1}, labels)


def test_classify_edges_counting_oracle():
    rng = np.random.default_rng(5)
    ks = keys(50)
    truth = rng.random(50) < 0.4
    pred = rng.random(50) < 0.5
    tp = int(np.sum(truth & pred))
    fp = int(np.sum(~truth & pred))
    fn = int(np.sum(truth & ~pred))
    precision, recall = robust_pgo.classify_edges(dict(zip(ks, pred.astype(int).tolist())), dict(zip(ks, truth.tolist())))
    assert precision == tp / (tp + fp)
    assert recall == tp / (tp + fn)


def test_outlier_count_for_fraction():
    assert robust_pgo.outlier_count_for_fraction(90, 0.3) == 39
    assert robust_pgo.outlier_count_for_fraction(90, 0.04) == 4
    assert robust_pgo.outlier_count_for_fraction(90, 0.0) == 0


def test_generator_matches_ground_truth_without_noise():
    data = robust_pgo.generate_pose_graph(num_poses=25, ring_size=5, rotation_sigma=1e-12, translation_sigma=1e-12)
    poses = robust_pgo.chain_odometry(data, data.ground_truth[0])
    for p, t in zip(poses, data.ground_truth):
        assert np.allclose(p.matrix(), t.matrix(), atol=1e-9)
    assert len(data.loops) == 20


def test_robust_solve_small_instance():
    data = robust_pgo.generate_pose_graph(num_poses=40, seed=2, ring_size=5)
    data, labels = robust_pgo.inject_outliers(data, 10, seed=2)
    problem = robust_pgo.build_robust_pgo(data)
    result = robust_pgo.solve_robust_pgo(problem)
    precision, recall = robust_pgo.classify_edges(result.discrete, dict(zip(problem.switch_keys, labels)))
    assert precision == 1.0 and recall == 1.0
    poses = [result.continuous[k] for k in problem.pose_keys]
    cost = robust_pgo.inlier_cost(data, problem.anchor, poses, labels)
    _, reference = robust_pgo.lm_solve(data, problem.anchor, [not o for o in labels])
    assert cost <= 1.01 * reference
