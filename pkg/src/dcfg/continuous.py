"""Nonlinear least squares over manifold-valued variables for a fixed discrete assignment."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from . import manifold
from .errors import InputError, MissingAssignment, SingularSystem
from .graph import ContinuousFactor, FactorGraph, HybridFactor, VariableKey

logger = logging.getLogger(__name__)

# pivot^2 / max diag(A) below this is treated as rank deficiency
_RANK_TOL = 1e-12


@dataclass
class OptimizerParams:
    max_iterations: int = 100
    relative_decrease_tol: float = 1e-6
    absolute_decrease_tol: float = 1e-8
    lm_lambda_init: float = 1e-4
    lm_lambda_factor: float = 10.0
    lm_lambda_max: float = 1e10

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InputError(f"optimizer parameter {name} must be positive and finite, got {value}")


@dataclass
class LinearSystem:
    """Whitened Jacobian ``J`` and right-hand side ``-r`` of the stacked residuals."""

    jacobian: sp.csr_matrix
    rhs: np.ndarray
    column_index: dict
    keys: list

    @property
    def normal_matrix(self) -> np.ndarray:
        j = self.jacobian
        return np.asarray((j.T @ j).todense())

    @property
    def gradient(self) -> np.ndarray:
        """Gradient of ``0.5 ||r||^2`` with respect to the tangent perturbation."""
        return -(self.jacobian.T @ self.rhs)


@dataclass
class OptimizerStats:
    iterations: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    initial_objective: float = 0.0
    final_objective: float = 0.0
    objectives: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    final_lambda: float = 0.0


def active_residuals(graph: FactorGraph, discrete: Mapping):
    """Yield the residual factor each non-discrete factor contributes under ``discrete``."""
    for factor in graph.factors:
        if isinstance(factor, ContinuousFactor):
            yield factor
        elif isinstance(factor, HybridFactor):
            comp, _ = factor.component(factor.state_of(discrete))
            if comp is not None:
                yield comp


def column_layout(keys: Sequence[VariableKey]) -> tuple[dict, int]:
    index, offset = {}, 0
    for key in keys:
        index[key] = (offset, key.tangent_dim)
        offset += key.tangent_dim
    return index, offset


def linearize(graph: FactorGraph, discrete: Mapping, continuous: Mapping, keys: Sequence[VariableKey] | None = None) -> LinearSystem:
    keys = list(graph.continuous_keys() if keys is None else keys)
    column_index, ncols = column_layout(keys)
    rows, cols, vals, rhs = [], [], [], []
    row = 0
    for factor in active_residuals(graph, discrete):
        w, jacs = factor.whitened(continuous, jacobians=True)
        m = w.shape[0]
        for key, jac in zip(factor.keys, jacs):
            offset, width = column_index[key]
            rows.append(np.repeat(np.arange(row, row + m), width))
            cols.append(np.tile(np.arange(offset, offset + width), m))
            vals.append(np.asarray(jac, dtype=float).ravel())
        rhs.append(-w)
        row += m
    if rows:
        jac = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, ncols))
        b = np.concatenate(rhs)
    else:
        jac = sp.csr_matrix((0, ncols))
        b = np.zeros(0)
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(jac.data)):
        raise SingularSystem("non-finite residual or Jacobian entry")
    return LinearSystem(jac, b, column_index, keys)


def _retract_all(continuous: Mapping, system: LinearSystem, delta: np.ndarray) -> dict:
    out = dict(continuous)
    for key in system.keys:
        offset, width = system.column_index[key]
        out[key] = manifold.retract(continuous[key], delta[offset : offset + width])
    return out


def _try_solve(a: np.ndarray, g: np.ndarray):
    try:
        factor = cho_factor(a, lower=False, check_finite=False)
    except LinAlgError:
        return None
    if np.any(np.diag(factor[0]) <= 0.0):
        return None
    step = cho_solve(factor, g, check_finite=False)
    return step if np.all(np.isfinite(step)) else None


def optimize_continuous(
    graph: FactorGraph,
    discrete: Mapping,
    initial: Mapping,
    params: OptimizerParams | None = None,
) -> tuple[dict, OptimizerStats]:
    """Levenberg-Marquardt with explicit accept/reject on the true objective.

    Every iteration first tries the undamped Gauss-Newton step and falls back
    to Marquardt damping ``A + lambda diag(A)``.  A step is applied only when
    it lowers the objective by more than the decrease tolerances; a step whose
    decrease falls under them ends the solve without being applied.  The
    returned objective is therefore never above the initial one.
    """
    params = params or OptimizerParams()
    keys = graph.continuous_keys()
    current = dict(initial)
    for key in keys:
        if key not in current:
            raise MissingAssignment(key.id)
    cost = graph.continuous_objective(discrete, current)
    stats = OptimizerStats(initial_objective=cost, objectives=[cost])
    lam = params.lm_lambda_init
    if not keys:
        stats.converged, stats.reason, stats.final_objective = True, "no continuous variables", cost
        return current, stats

    while stats.iterations < params.max_iterations:
        stats.iterations += 1
        system = linearize(graph, discrete, current, keys)
        a = system.normal_matrix
        g = system.jacobian.T @ system.rhs
        if cost == 0.0 or not np.any(g):
            stats.converged, stats.reason = True, "stationary"
            break
        diag = np.diag(a).copy()
        accepted = False
        stop = None
        undamped = True
        while True:
            if undamped:
                step = _try_solve(a, g)
            else:
                damped = a.copy()
                damped[np.diag_indices_from(damped)] += lam * diag
                step = _try_solve(damped, g)
                if step is None:
                    lam *= params.lm_lambda_factor
                    if lam > params.lm_lambda_max:
                        raise SingularSystem("damped normal matrix is not positive definite; is the graph anchored?")
                    continue
            if step is not None:
                candidate = _retract_all(current, system, step)
                new_cost = graph.continuous_objective(discrete, candidate)
                if new_cost < cost:
                    decrease = cost - new_cost
                    if decrease <= params.absolute_decrease_tol or decrease <= params.relative_decrease_tol * cost:
                        stop = "decrease below tolerance"
                    else:
                        current, cost = candidate, new_cost
                        accepted = True
                    break
                stats.rejected_steps += 1
            if not undamped:
                lam *= params.lm_lambda_factor
                if lam > params.lm_lambda_max:
                    stop = "lambda limit"
                    break
            undamped = False
        if stop is not None:
            stats.converged, stats.reason = True, stop
            break
        if accepted:
            stats.accepted_steps += 1
            stats.objectives.append(cost)
            lam = max(lam / params.lm_lambda_factor, 1e-12)
    else:
        stats.reason = "iteration limit"
    stats.final_objective = cost
    stats.final_lambda = lam
    return current, stats


@dataclass
class MarginalCovariance:
    """Per-key covariance blocks in the tangent space, plus optional joint blocks."""

    blocks: dict = field(default_factory=dict)
    joint: dict = field(default_factory=dict)

    def __getitem__(self, key) -> np.ndarray:
        if isinstance(key, tuple):
            return self.joint[key]
        return self.blocks[key]


def square_root_information(system: LinearSystem) -> np.ndarray:
    """Upper-triangular ``R`` with ``R^T R = J^T J``."""
    a = system.normal_matrix
    try:
        r = np.linalg.cholesky(a).T
    except LinAlgError:
        raise SingularSystem("information matrix is singular (gauge freedom or unobserved variable)") from None
    scale = float(np.max(np.diag(a))) if a.size else 0.0
    if a.size and (scale <= 0.0 or float(np.min(np.diag(r))) ** 2 <= _RANK_TOL * scale):
        raise SingularSystem("information matrix is singular (gauge freedom or unobserved variable)")
    return r


def recover_covariance(
    graph: FactorGraph,
    discrete: Mapping,
    continuous: Mapping,
    keys: Sequence[VariableKey],
    pairs: Sequence[tuple[VariableKey, VariableKey]] = (),
    warn: bool = True,
) -> MarginalCovariance:
    """Laplace marginal covariances from back-substitution on the square-root information.

    With ``warn`` set, a warning is logged when the point is not a critical
    point of the continuous objective.  Callers that deliberately linearize
    at a prediction (such as association gating) turn it off.
    """
    system = linearize(graph, discrete, continuous)
    grad = np.linalg.norm(system.gradient) if system.rhs.size else 0.0
    level = graph.continuous_objective(discrete, continuous)
    if warn and grad > 1e-5 * (1.0 + abs(level)):
        logger.warning("covariance requested away from a critical point (gradient norm %.3g)", grad)
    r = square_root_information(system)
    wanted = list(dict.fromkeys(list(keys) + [k for pair in pairs for k in pair]))
    columns = {}
    for key in wanted:
        if key not in system.column_index:
            raise InputError(f"{key!r} is not a continuous variable of the graph")
        offset, width = system.column_index[key]
        e = np.zeros((r.shape[0], width))
        e[offset : offset + width, :] = np.eye(width)
        y = solve_triangular(r, e, trans="T", lower=False)
        columns[key] = solve_triangular(r, y, lower=False)
    out = MarginalCovariance()
    for key in keys:
        offset, width = system.column_index[key]
        block = columns[key][offset : offset + width]
        out.blocks[key] = 0.5 * (block + block.T)
    for a, b in pairs:
        oa, wa = system.column_index[a]
        ob, wb = system.column_index[b]
        top = np.hstack((columns[a][oa : oa + wa], columns[b][oa : oa + wa]))
        bottom = np.hstack((columns[a][ob : ob + wb], columns[b][ob : ob + wb]))
        joint = np.vstack((top, bottom))
        out.joint[(a, b)] = 0.5 * (joint + joint.T)
    return out
