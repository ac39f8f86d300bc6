"""Alternating minimization over discrete and continuous variables.

Each outer iteration solves the discrete subproblem exactly at the current
continuous estimate and then runs a descent-only continuous solve with the
new discrete assignment held fixed, so the objective never increases.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping

from .continuous import OptimizerParams, optimize_continuous
from .discrete import DEFAULT_MAX_WIDTH, components, condition, marginals, solve_mpe
from .errors import InputError, MissingAssignment, SolverError
from .graph import Factor, FactorGraph, HybridAssignment, VariableKey


@dataclass
class DcParams:
    max_outer_iterations: int = 50
    relative_decrease_tol: float = 1e-6
    continuous_params: OptimizerParams = field(default_factory=OptimizerParams)
    compute_marginals_each_iter: bool = False
    max_width: int = DEFAULT_MAX_WIDTH
    trace_limit: int | None = None

    def __post_init__(self):
        if self.max_outer_iterations < 1 or not self.relative_decrease_tol > 0 or self.max_width < 1:
            raise InputError("outer iteration cap, tolerance and width cap must be positive")
        if self.trace_limit is not None and self.trace_limit < 1:
            raise InputError("trace_limit must be positive when given")


@dataclass
class IterationRecord:
    iteration: int
    objective_before: float
    objective_after_discrete: float
    objective_after_continuous: float
    discrete_changed: int
    components_solved: int
    discrete_variables_solved: int
    continuous_steps: int
    continuous_converged: bool
    discrete_time: float
    continuous_time: float
    marginals: dict | None = None

    def as_dict(self) -> dict:
        out = asdict(self)
        out.pop("marginals")
        return out


class SolveTrace:
    """Per-iteration objective record, optionally capped as a ring buffer."""

    def __init__(self, limit: int | None = None):
        self.records: deque = deque(maxlen=limit)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i) -> IterationRecord:
        return self.records[i]

    def objective_sequence(self) -> list[float]:
        seq = []
        for r in self.records:
            seq.extend(float(v) for v in (r.objective_before, r.objective_after_discrete, r.objective_after_continuous))
        return seq

    def is_monotone(self, slack: float = 1e-9) -> bool:
        seq = self.objective_sequence()
        return all(b <= a + slack for a, b in zip(seq, seq[1:]))

    def as_dicts(self) -> list[dict]:
        return [r.as_dict() for r in self.records]


@dataclass
class DcResult:
    continuous: dict
    discrete: dict
    trace: SolveTrace
    objective: float
    converged: bool
    stop_reason: str

    @property
    def assignment(self) -> HybridAssignment:
        return HybridAssignment(self.continuous, self.discrete)

    @property
    def iterations(self) -> int:
        return len(self.trace)


Callback = Callable[[IterationRecord, Mapping, Mapping], None]


def _check_continuous(graph: FactorGraph, values: Mapping) -> None:
    for key in graph.continuous_keys():
        if key not in values:
            raise MissingAssignment(key.id)


def _count_changes(old: Mapping | None, new: Mapping) -> int:
    if old is None:
        return len(new)
    return sum(1 for k, v in new.items() if old.get(k) != v)


def _solve_all(graph: FactorGraph, continuous: Mapping, max_width: int):
    conditioned = condition(graph, continuous)
    assignment, _ = solve_mpe(conditioned, max_width=max_width)
    return assignment, len(components(conditioned)), len(conditioned.variables)


def _alternate(
    graph: FactorGraph,
    continuous: dict,
    discrete: dict | None,
    params: DcParams,
    callback: Callback | None,
    first_phase: Callable | None = None,
    discrete_phase: Callable | None = None,
) -> DcResult:
    trace = SolveTrace(params.trace_limit)
    has_discrete = bool(graph.discrete_keys())
    has_continuous = bool(graph.continuous_keys())
    converged, reason = False, "iteration limit"
    current_objective = math.nan
    for it in range(1, params.max_outer_iterations + 1):
        try:
            t0 = time.perf_counter()
            if it == 1 and first_phase is not None:
                new_discrete, n_comp, n_vars = first_phase(continuous)
            elif discrete_phase is not None:
                new_discrete, n_comp, n_vars = discrete_phase(continuous)
            else:
                new_discrete, n_comp, n_vars = _solve_all(graph, continuous, params.max_width)
            t1 = time.perf_counter()
            after_discrete = graph.objective(HybridAssignment(continuous, new_discrete))
            if discrete is None or set(discrete) != set(new_discrete):
                before = after_discrete
            else:
                before = graph.objective(HybridAssignment(continuous, discrete))
            changed = _count_changes(discrete, new_discrete)
            new_continuous, stats = optimize_continuous(graph, new_discrete, continuous, params.continuous_params)
            t2 = time.perf_counter()
            after_continuous = graph.objective(HybridAssignment(new_continuous, new_discrete))
            probs = None
            if params.compute_marginals_each_iter and has_discrete:
                probs = marginals(condition(graph, new_continuous), params.max_width)
        except SolverError as exc:
            raise exc.with_iteration(it)
        record = IterationRecord(
            iteration=it,
            objective_before=before,
            objective_after_discrete=after_discrete,
            objective_after_continuous=after_continuous,
            discrete_changed=changed,
            components_solved=n_comp,
            discrete_variables_solved=n_vars,
            continuous_steps=stats.accepted_steps,
            continuous_converged=stats.converged,
            discrete_time=t1 - t0,
            continuous_time=t2 - t1,
            marginals=probs,
        )
        trace.append(record)
        if callback is not None:
            callback(record, continuous, new_discrete)
        continuous, discrete = new_continuous, new_discrete
        current_objective = after_continuous
        if not has_discrete or not has_continuous:
            converged, reason = True, "single subproblem"
            break
        if changed == 0 and stats.converged and stats.accepted_steps == 0:
            converged, reason = True, "fixed point"
            break
        if it > 1 and before - after_continuous <= params.relative_decrease_tol * abs(before):
            converged, reason = True, "relative decrease below tolerance"
            break
    return DcResult(continuous, dict(discrete or {}), trace, current_objective, converged, reason)


def solve(
    graph: FactorGraph,
    initial_continuous: Mapping,
    initial_discrete: Mapping | None = None,
    params: DcParams | None = None,
    callback: Callback | None = None,
    discrete_phase: Callable | None = None,
) -> DcResult:
    """Alternate exact discrete solves and descent continuous solves.

    The first action is always a discrete solve at ``initial_continuous``;
    ``initial_discrete`` (when given) only serves as the reference point for
    the first iteration's objective and change count.

    ``discrete_phase(continuous)`` replaces the generic conditioned MPE with
    a problem-specific exact solver.  It must return ``(assignment,
    components, variables)`` with an assignment that minimizes the
    conditioned discrete cost; monotone descent relies on that.
    """
    params = params or DcParams()
    _check_continuous(graph, initial_continuous)
    continuous = {k: initial_continuous[k] for k in graph.continuous_keys()}
    discrete = None
    if initial_discrete is not None:
        discrete = {k: int(initial_discrete[k]) for k in graph.discrete_keys() if k in initial_discrete}
    return _alternate(graph, continuous, discrete, params, callback, discrete_phase=discrete_phase)


def incremental_extend(
    graph: FactorGraph,
    new_variables: Iterable[VariableKey],
    new_factors: Iterable[Factor],
    previous: DcResult,
    new_values: Mapping,
    params: DcParams | None = None,
    callback: Callback | None = None,
) -> DcResult:
    """Grow ``graph`` in place and re-solve warm-started from ``previous``.

    The first discrete phase re-solves only those conditioned components that
    contain a new discrete variable or a table coming from a new factor; every
    other discrete variable keeps its previous (still optimal) value.
    """
    params = params or DcParams()
    new_variables = list(new_variables)
    new_factors = list(new_factors)
    first_new = len(graph.factors)
    known = set(graph.variables)
    for key in new_variables:
        graph.add_variable(key)
    for factor in new_factors:
        graph.add_factor(factor)
    continuous = {k: v for k, v in previous.continuous.items() if k.id in graph.variables}
    continuous.update(new_values)
    _check_continuous(graph, continuous)
    continuous = {k: continuous[k] for k in graph.continuous_keys()}
    old_discrete = {k: v for k, v in previous.discrete.items() if k.id in known}

    def first_phase(values):
        conditioned = condition(graph, values)
        assignment = dict(old_discrete)
        n_comp = n_vars = 0
        for comp in components(conditioned):
            fresh = any(v not in old_discrete for v in comp.variables)
            touched = any(t.origin is not None and t.origin >= first_new for t in comp.tables)
            if fresh or touched:
                part, _ = solve_mpe(comp, max_width=params.max_width)
                assignment.update(part)
                n_comp += 1
                n_vars += len(comp.variables)
        return assignment, n_comp, n_vars

    reference = old_discrete if set(old_discrete) == {k for k in graph.discrete_keys()} else None
    return _alternate(graph, continuous, reference, params, callback, first_phase)
