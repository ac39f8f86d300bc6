"""Exact inference on the discrete subgraph obtained by fixing continuous values.

All tables live in the cost (negative log) domain.  The most probable
explanation is computed by min-sum (max-product) variable elimination; per
variable marginals by sum-product elimination carried out with log-sum-exp.
Both operate independently on each connected component of the conditioned
graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptySupport, InputError, TreewidthExceeded
from .graph import DiscreteFactor, FactorGraph, HybridFactor, VariableKey

DEFAULT_MAX_WIDTH = 12


@dataclass
class CostTable:
    keys: tuple
    costs: np.ndarray
    origin: int | None = None

    def value(self, assignment: Mapping) -> float:
        return float(self.costs[tuple(int(assignment[k]) for k in self.keys)])


@dataclass
class ConditionedDiscreteGraph:
    variables: list = field(default_factory=list)
    tables: list = field(default_factory=list)

    def cost(self, assignment: Mapping) -> float:
        return float(sum(t.value(assignment) for t in self.tables))

    def __len__(self) -> int:
        return len(self.variables)


def condition(graph: FactorGraph, continuous: Mapping) -> ConditionedDiscreteGraph:
    """Fix the continuous variables and collect one cost table per discrete-touching factor."""
    tables = []
    for index, factor in enumerate(graph.factors):
        if isinstance(factor, DiscreteFactor):
            tables.append(CostTable(factor.keys, factor.cost_table(), index))
        elif isinstance(factor, HybridFactor):
            tables.append(CostTable(factor.discrete_keys, factor.conditioned_costs(continuous), index))
    return ConditionedDiscreteGraph(graph.discrete_keys(), tables)


def components(g: ConditionedDiscreteGraph) -> list[ConditionedDiscreteGraph]:
    """Split into connected components; ordered by their smallest key id."""
    parent = {k: k for k in g.variables}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for table in g.tables:
        for k in table.keys:
            if k not in parent:
                parent[k] = k
        roots = [find(k) for k in table.keys]
        for r in roots[1:]:
            if r != roots[0]:
                parent[r] = roots[0]
    groups: dict = {}
    for k in sorted(parent, key=lambda k: k.id):
        groups.setdefault(find(k), ConditionedDiscreteGraph()).variables.append(k)
    for table in g.tables:
        if table.keys:
            groups[find(table.keys[0])].tables.append(table)
    return sorted(groups.values(), key=lambda c: c.variables[0].id)


def _adjacency(g: ConditionedDiscreteGraph) -> dict:
    adj = {k: set() for k in g.variables}
    for table in g.tables:
        for k in table.keys:
            adj.setdefault(k, set()).update(o for o in table.keys if o != k)
    return adj


def min_fill_ordering(g: ConditionedDiscreteGraph, keep: Iterable[VariableKey] = ()) -> list[VariableKey]:
    """Greedy min-fill elimination ordering; ties go to the smallest key id.

    Variables in ``keep`` are left out of the ordering (they are not
    eliminated).
    """
    adj = {k: set(v) for k, v in _adjacency(g).items()}
    keep = set(keep)
    remaining = sorted((k for k in adj if k not in keep), key=lambda k: k.id)
    order = []
    while remaining:
        best, best_fill = None, None
        for k in remaining:
            nbrs = list(adj[k])
            fill = 0
            for a in range(len(nbrs)):
                na = adj[nbrs[a]]
                for b in range(a + 1, len(nbrs)):
                    if nbrs[b] not in na:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = k, fill
                if fill == 0:
                    break
        nbrs = adj.pop(best)
        for a in nbrs:
            adj[a].discard(best)
            adj[a].update(n for n in nbrs if n != a)
        order.append(best)
        remaining.remove(best)
    return order


def induced_width(g: ConditionedDiscreteGraph, ordering: Sequence[VariableKey]) -> int:
    """Largest neighbour count met while eliminating in ``ordering``."""
    adj = {k: set(v) for k, v in _adjacency(g).items()}
    width = 0
    for k in ordering:
        nbrs = adj.pop(k, set())
        width = max(width, len(nbrs))
        for a in nbrs:
            adj[a].discard(k)
            adj[a].update(n for n in nbrs if n != a)
    return width


def _expand(costs: np.ndarray, keys: tuple, scope: tuple) -> np.ndarray:
    """View ``costs`` (axes ordered by ``keys``) broadcastable over ``scope``."""
    perm = sorted(range(len(keys)), key=lambda i: scope.index(keys[i]))
    arr = np.transpose(costs, perm) if perm != list(range(len(keys))) else costs
    present = {keys[i] for i in perm}
    shape = [k.cardinality if k in present else 1 for k in scope]
    return arr.reshape(shape)


def _combine(tables: list, var: VariableKey, max_width: int) -> tuple[tuple, np.ndarray]:
    scope_set = {var}
    for keys, _ in tables:
        scope_set.update(keys)
    scope = tuple(sorted(scope_set, key=lambda k: k.id))
    if len(scope) - 1 > max_width:
        raise TreewidthExceeded(f"induced width {len(scope) - 1} exceeds cap {max_width}")
    total = np.zeros([k.cardinality for k in scope])
    for keys, costs in tables:
        total = total + _expand(costs, keys, scope)
    return scope, total


def _eliminate(g: ConditionedDiscreteGraph, ordering: Sequence[VariableKey], mode: str, max_width: int):
    """Run min-sum or sum-product elimination; returns (remaining tables, trail)."""
    pool = [(t.keys, np.asarray(t.costs, dtype=float)) for t in g.tables]
    trail = []
    for var in ordering:
        involved = [t for t in pool if var in t[0]]
        pool = [t for t in pool if var not in t[0]]
        scope, total = _combine(involved, var, max_width)
        axis = scope.index(var)
        if mode == "min":
            message = total.min(axis=axis)
            trail.append((var, scope, total))
        else:
            message = -logsumexp(-total, axis=axis)
        pool.append((scope[:axis] + scope[axis + 1 :], message))
    return pool, trail


def _check_ordering(g: ConditionedDiscreteGraph, ordering: Sequence[VariableKey]) -> None:
    if len(set(ordering)) != len(ordering) or set(ordering) != set(g.variables):
        raise InputError("elimination ordering must be a permutation of the graph's discrete variables")


def _solve_single(g: ConditionedDiscreteGraph) -> tuple[dict, float]:
    var = g.variables[0]
    total = np.zeros(var.cardinality)
    for t in g.tables:
        total = total + t.costs
    best = int(np.argmin(total))
    return {var: best}, float(total[best])


def _solve_component(g: ConditionedDiscreteGraph, ordering, max_width: int) -> dict:
    if ordering is None:
        ordering = min_fill_ordering(g)
    _, trail = _eliminate(g, ordering, "min", max_width)
    assignment: dict = {}
    for var, scope, total in reversed(trail):
        index = tuple(slice(None) if k == var else assignment[k] for k in scope)
        assignment[var] = int(np.argmin(total[index]))
    return assignment


def solve_mpe(
    g: ConditionedDiscreteGraph,
    ordering: Sequence[VariableKey] | None = None,
    max_width: int = DEFAULT_MAX_WIDTH,
) -> tuple[dict, float]:
    """Minimum-cost joint assignment of ``g`` and its cost.

    With ``ordering=None`` each connected component is eliminated separately
    with its own min-fill ordering.  Ties go to the lowest category index
    during back-substitution.
    """
    if ordering is not None:
        _check_ordering(g, ordering)
        assignment = _solve_component(g, list(ordering), max_width)
    else:
        assignment = {}
        for comp in components(g):
            if len(comp.variables) == 1 and all(t.keys == (comp.variables[0],) for t in comp.tables):
                part, _ = _solve_single(comp)
            else:
                part = _solve_component(comp, None, max_width)
            assignment.update(part)
    cost = g.cost(assignment)
    if math.isinf(cost):
        raise EmptySupport("every discrete assignment has zero probability")
    return assignment, cost


def marginals(g: ConditionedDiscreteGraph, max_width: int = DEFAULT_MAX_WIDTH) -> dict:
    """Exact per-variable marginal probability vectors."""
    out = {}
    for comp in components(g):
        for var in comp.variables:
            ordering = min_fill_ordering(comp, keep=(var,))
            pool, _ = _eliminate(comp, ordering, "sum", max_width)
            log_p = np.zeros(var.cardinality)
            for keys, costs in pool:
                log_p = log_p - (costs if keys else float(costs))
            norm = logsumexp(log_p)
            if not np.isfinite(norm):
                raise EmptySupport(f"component of {var!r} has no finite-cost assignment")
            out[var] = np.exp(log_p - norm)
    return out

