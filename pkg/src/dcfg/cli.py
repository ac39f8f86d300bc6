"""Command-line entry point: ``dcfg icp | rpgo | semsim``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time

import numpy as np

from . import io, manifold
from .continuous import OptimizerParams
from .dcsolver import DcParams
from .errors import DcfgError, InputError, SolverError
from .graph import HybridAssignment
from .manifold import Pose3
from .problems import registration, robust_pgo, semantic

DEFAULT_ASSOC_THRESHOLD = 1e-3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not (value > 0.0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError("must be a positive finite number")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcfg", description="Hybrid discrete-continuous factor graph solver.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--out", required=True, help="metrics file (one JSON record)")
    common.add_argument("--max-iter", type=_positive_int, default=50, help="outer iteration cap")
    common.add_argument("--timing", action="store_true", help="include wall-clock times in the metrics")

    icp = sub.add_parser("icp", parents=[common], help="point-cloud registration")
    icp.add_argument("--source", required=True)
    icp.add_argument("--target", required=True)
    icp.add_argument("--sigma", type=_positive_float, default=1.0)
    icp.add_argument("--init-pose", default=None, help='initial transform "tx ty tz qx qy qz qw"')
    icp.add_argument("--out-transform", default=None)
    icp.add_argument("--grid", action="store_true", help="voxel-grid nearest-neighbour search (same result, faster)")

    rpgo = sub.add_parser("rpgo", parents=[common], help="robust pose-graph optimization")
    rpgo.add_argument("--graph", required=True)
    rpgo.add_argument("--inject-outliers", type=_non_negative_int, default=0)
    rpgo.add_argument("--seed", type=int, default=0)
    rpgo.add_argument("--omega1", type=float, default=1e-7)
    rpgo.add_argument("--outlier-var", type=_positive_float, default=1.6e7)
    rpgo.add_argument("--g2o-info-order", choices=io.INFO_ORDERS, default="translation-first")
    rpgo.add_argument("--out-graph", default=None)

    sem = sub.add_parser("semsim", parents=[common], help="synthetic semantic SLAM")
    sem.add_argument("--poses", type=_positive_int, required=True)
    sem.add_argument("--landmarks", type=_non_negative_int, required=True)
    sem.add_argument("--classes", type=_positive_int, required=True)
    sem.add_argument("--seed", type=int, required=True)
    sem.add_argument("--assoc-threshold", type=_positive_float, default=DEFAULT_ASSOC_THRESHOLD)
    return parser


def _read(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _decode(data: bytes, path: str) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        raise InputError(f"{path} is not UTF-8 text") from None


def _parse_pose(text: str) -> Pose3:
    try:
        values = [float(v) for v in text.split()]
    except ValueError:
        raise InputError("--init-pose expects seven numbers") from None
    if len(values) != 7 or not all(math.isfinite(v) for v in values):
        raise InputError("--init-pose expects seven finite numbers: tx ty tz qx qy qz qw")
    q = np.array(values[3:])
    if abs(np.linalg.norm(q) - 1.0) > io.QUATERNION_TOL:
        raise InputError("--init-pose quaternion is not unit length")
    return Pose3(manifold.quat_to_matrix(q / np.linalg.norm(q)), np.array(values[:3]))


def _format_pose(pose: Pose3) -> str:
    return io._fmt([*pose.translation, *manifold.matrix_to_quat(pose.rotation)]) + "\n"


def _dc_params(args) -> DcParams:
    return DcParams(max_outer_iterations=args.max_iter, continuous_params=OptimizerParams())


def _trace(result, timing: bool) -> list:
    out = result.trace.as_dicts()
    if not timing:
        for record in out:
            record.pop("discrete_time")
            record.pop("continuous_time")
    return out


def _solver_fields(result, timing: bool) -> dict:
    return {
        "final_objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "trace": _trace(result, timing),
    }


def _run_icp(args) -> tuple[dict, object]:
    src_bytes, tgt_bytes = _read(args.source), _read(args.target)
    source = io.parse_xyz(_decode(src_bytes, args.source))
    target = io.parse_xyz(_decode(tgt_bytes, args.target))
    initial = _parse_pose(args.init_pose) if args.init_pose else Pose3()
    problem, result = registration.register(source, target, initial, args.sigma, _dc_params(args), use_grid=args.grid)
    pose = result.continuous[problem.pose_key]
    if args.out_transform:
        io.atomic_write(args.out_transform, _format_pose(pose))
    record = {
        "problem": "icp",
        "seed": None,
        "inputs": {"source": io.content_hash(src_bytes), "target": io.content_hash(tgt_bytes)},
        "params": {"sigma": args.sigma, "max_iter": args.max_iter, "init_pose": args.init_pose, "grid": args.grid},
        "transform": {
            "translation": [float(v) for v in pose.translation],
            "quaternion": [float(v) for v in manifold.matrix_to_quat(pose.rotation)],
        },
        "final_cost": 2.0 * result.objective,
        **_solver_fields(result, args.timing),
    }
    return record, result


def _run_rpgo(args) -> tuple[dict, object]:
    raw = _read(args.graph)
    doc = io.parse_g2o(_decode(raw, args.graph), args.g2o_info_order)
    data, ids = io.document_to_pose_graph(doc)
    labels = None
    if args.inject_outliers:
        data, labels = robust_pgo.inject_outliers(data, args.inject_outliers, args.seed)
    if not 0.0 < args.omega1 < 1.0:
        raise InputError("--omega1 must lie in (0, 1)")
    switch = robust_pgo.SwitchParams(omega1=args.omega1, outlier_variance=args.outlier_var)
    problem = robust_pgo.build_robust_pgo(data, switch)
    result = robust_pgo.solve_robust_pgo(problem, _dc_params(args))
    poses = [result.continuous[k] for k in problem.pose_keys]
    assignment = HybridAssignment(result.continuous, result.discrete)
    final_cost = 2.0 * problem.graph.continuous_objective(assignment.discrete, assignment.continuous)
    _, lm_cost = robust_pgo.lm_solve(data, problem.anchor)
    outliers = [int(result.discrete[k]) for k in problem.switch_keys]
    record = {
        "problem": "rpgo",
        "seed": args.seed if args.inject_outliers else None,
        "inputs": {"graph": io.content_hash(raw)},
        "params": {
            "inject_outliers": args.inject_outliers,
            "omega1": args.omega1,
            "outlier_var": args.outlier_var,
            "max_iter": args.max_iter,
            "g2o_info_order": args.g2o_info_order,
        },
        "num_poses": data.num_poses,
        "num_loops": len(data.loops),
        "skipped_records": doc.skipped,
        "final_cost": final_cost,
        "lm_only_cost": lm_cost,
        "outliers_detected": int(sum(outliers)),
        **_solver_fields(result, args.timing),
    }
    if labels is not None:
        by_key = dict(zip(problem.switch_keys, labels))
        precision, recall = robust_pgo.classify_edges(result.discrete, by_key)
        record["precision"] = precision
        record["recall"] = recall
        record["inlier_cost"] = robust_pgo.inlier_cost(data, problem.anchor, poses, labels)
        record["outlier_free_lm_cost"] = robust_pgo.lm_solve(data, problem.anchor, [not o for o in labels])[1]
    if args.out_graph:
        io.atomic_write(args.out_graph, io.write_g2o(io.pose_graph_to_document(data, poses, ids), args.g2o_info_order))
    return record, result


def _run_semsim(args) -> tuple[dict, object]:
    world = semantic.generate_semantic_world(args.poses, args.landmarks, args.classes, seed=args.seed)
    slam = semantic.build_semantic_slam(world, args.assoc_threshold, _dc_params(args))
    result = slam.result
    kinds = [r.kind for r in slam.records]
    record = {
        "problem": "semsim",
        "seed": args.seed,
        "params": {
            "poses": args.poses,
            "landmarks": args.landmarks,
            "classes": args.classes,
            "assoc_threshold": args.assoc_threshold,
            "max_iter": args.max_iter,
        },
        "ate": semantic.trajectory_error(slam.trajectory(), world.poses),
        "odometry_ate": semantic.trajectory_error(world.odometry_trajectory(), world.poses),
        "mapped_landmarks": len(slam.landmarks),
        "landmark_classes": [slam.landmark_class(j) for j in range(len(slam.landmarks))],
        "detections": {"new": kinds.count("new"), "single": kinds.count("single"), "mixture": kinds.count("mixture")},
        "final_cost": 2.0 * result.objective,
        **_solver_fields(result, args.timing),
    }
    return record, result


_COMMANDS = {"icp": _run_icp, "rpgo": _run_rpgo, "semsim": _run_semsim}


def _check_threads() -> None:
    value = os.environ.get("DCFG_THREADS")
    if value is None:
        return
    try:
        ok = int(value) >= 1
    except ValueError:
        ok = False
    if not ok:
        raise InputError("DCFG_THREADS must be a positive integer")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    start = time.perf_counter()
    try:
        _check_threads()
        record, result = _COMMANDS[args.command](args)
        if args.timing:
            record["wall_time"] = time.perf_counter() - start
        io.atomic_write(args.out, io.dump_metrics(record))
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    except DcfgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(f"final objective: {result.objective:.17g}")
    print(f"iterations: {result.iterations}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
