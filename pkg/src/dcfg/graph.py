"""Variables, noise models, factor base classes and the factor graph itself.

The objective of a graph is the negative log posterior up to a global
constant.  Residual factors contribute ``0.5 * ||L r||^2`` where ``L`` is the
square-root information of their noise model; discrete tables contribute
``-log(entry)``; hybrid factors contribute the residual term selected by their
discrete keys plus a per-assignment constant offset.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from . import manifold
from .errors import DuplicateKey, InputError, MissingAssignment, NonPositiveDensity, UnknownKey
from .manifold import ManifoldKind

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class VariableKey:
    """Typed handle for one variable; either discrete or continuous."""

    id: int
    cardinality: int | None = None
    manifold: ManifoldKind | None = None

    def __post_init__(self):
        if self.id < 0:
            raise InputError(f"variable ids must be non-negative, got {self.id}")
        if (self.cardinality is None) == (self.manifold is None):
            raise InputError("a key is either discrete (cardinality) or continuous (manifold)")
        if self.cardinality is not None and self.cardinality < 1:
            raise InputError(f"cardinality must be >= 1, got {self.cardinality}")

    @classmethod
    def discrete(cls, id: int, cardinality: int) -> "VariableKey":
        return cls(int(id), cardinality=int(cardinality))

    @classmethod
    def continuous(cls, id: int, kind: ManifoldKind) -> "VariableKey":
        return cls(int(id), manifold=kind)

    @property
    def is_discrete(self) -> bool:
        return self.cardinality is not None

    @property
    def tangent_dim(self) -> int:
        return 0 if self.manifold is None else self.manifold.dim

    def __repr__(self) -> str:
        if self.is_discrete:
            return f"D{self.id}[{self.cardinality}]"
        return f"C{self.id}[{self.manifold}]"


class NoiseModel:
    """Gaussian noise described by an upper-triangular square-root information.

    ``whiten(r) = L @ r`` so that ``0.5 * ||whiten(r)||^2`` is the negative log
    density up to :meth:`log_normalizer`.
    """

    def __init__(self, sqrt_information, sigma: float | None = None):
        sqrt_information = np.array(sqrt_information, dtype=float)
        if sqrt_information.ndim != 2 or sqrt_information.shape[0] != sqrt_information.shape[1]:
            raise InputError("square-root information must be a square matrix")
        if not np.all(np.isfinite(sqrt_information)):
            raise InputError("square-root information must be finite")
        if np.any(np.tril(sqrt_information, -1) != 0.0):
            raise InputError("square-root information must be upper triangular")
        if np.any(np.diag(sqrt_information) <= 0.0):
            raise InputError("square-root information needs a positive diagonal")
        self.sqrt_information = sqrt_information
        self.sigma = sigma

    @classmethod
    def isotropic(cls, sigma: float, dim: int) -> "NoiseModel":
        if not sigma > 0.0:
            raise InputError(f"sigma must be positive, got {sigma}")
        return cls(np.eye(dim) / sigma, sigma=float(sigma))

    @classmethod
    def diagonal(cls, sigmas) -> "NoiseModel":
        sigmas = np.asarray(sigmas, dtype=float)
        if np.any(~(sigmas > 0.0)):
            raise InputError("all sigmas must be positive")
        return cls(np.diag(1.0 / sigmas))

    @classmethod
    def from_information(cls, information) -> "NoiseModel":
        information = np.asarray(information, dtype=float)
        try:
            return cls(cholesky(0.5 * (information + information.T), lower=False))
        except np.linalg.LinAlgError as exc:
            raise InputError("information matrix is not positive definite") from exc

    @classmethod
    def from_covariance(cls, covariance) -> "NoiseModel":
        covariance = np.asarray(covariance, dtype=float)
        try:
            lower = cholesky(0.5 * (covariance + covariance.T), lower=True)
        except np.linalg.LinAlgError as exc:
            raise InputError("covariance matrix is not positive definite") from exc
        return cls.from_information(np.linalg.inv(lower).T @ np.linalg.inv(lower))

    @property
    def dim(self) -> int:
        return self.sqrt_information.shape[0]

    @property
    def information(self) -> np.ndarray:
        return self.sqrt_information.T @ self.sqrt_information

    @property
    def covariance(self) -> np.ndarray:
        linv = solve_triangular(self.sqrt_information, np.eye(self.dim), lower=False)
        return linv @ linv.T

    def whiten(self, r) -> np.ndarray:
        if self.sigma is not None:
            return np.asarray(r, dtype=float) / self.sigma
        return self.sqrt_information @ r

    def unwhiten(self, w) -> np.ndarray:
        if self.sigma is not None:
            return np.asarray(w, dtype=float) * self.sigma
        return solve_triangular(self.sqrt_information, w, lower=False)

    def log_normalizer(self) -> float:
        """``0.5 * log det(2 pi Sigma)``."""
        return 0.5 * self.dim * LOG_2PI - float(np.sum(np.log(np.diag(self.sqrt_information))))

    def __repr__(self) -> str:
        if self.sigma is not None:
            return f"NoiseModel.isotropic({self.sigma!r}, {self.dim})"
        return f"NoiseModel(dim={self.dim})"


@dataclass
class HybridAssignment:
    """A pair (continuous values, discrete values) keyed by variable key."""

    continuous: dict = field(default_factory=dict)
    discrete: dict = field(default_factory=dict)

    def copy(self) -> "HybridAssignment":
        return HybridAssignment(dict(self.continuous), dict(self.discrete))

    def validate(self) -> None:
        for key, value in self.discrete.items():
            if not 0 <= int(value) < key.cardinality:
                raise InputError(f"value {value} out of range for {key}")
        for key, value in self.continuous.items():
            if not manifold.is_member(key.manifold, value):
                raise InputError(f"value for {key} is not on its manifold")


def _lookup(values: Mapping, key: VariableKey):
    try:
        return values[key]
    except KeyError:
        raise MissingAssignment(key.id) from None


class Factor:
    """Base class.  ``keys`` lists every variable the factor touches."""

    keys: tuple = ()

    @property
    def discrete_keys(self) -> tuple:
        return tuple(k for k in self.keys if k.is_discrete)

    @property
    def continuous_keys(self) -> tuple:
        return tuple(k for k in self.keys if not k.is_discrete)

    def error(self, assignment: HybridAssignment) -> float:
        raise NotImplementedError


class DiscreteFactor(Factor):
    """Table of nonnegative values over the joint states of its keys."""

    def __init__(self, keys: Sequence[VariableKey], table):
        keys = tuple(keys)
        if not keys or any(not k.is_discrete for k in keys):
            raise InputError("discrete factors need one or more discrete keys")
        table = np.array(table, dtype=float).reshape(tuple(k.cardinality for k in keys))
        if np.any(~np.isfinite(table)) or np.any(table < 0.0):
            raise InputError("discrete table entries must be finite and nonnegative")
        if not np.any(table > 0.0):
            raise InputError("discrete table needs at least one positive entry")
        self.keys = keys
        self.table = table

    def cost_table(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return -np.log(self.table)

    def error(self, assignment: HybridAssignment) -> float:
        index = tuple(int(_lookup(assignment.discrete, k)) for k in self.keys)
        value = self.table[index]
        if value <= 0.0:
            return math.inf
        return -math.log(value)


class ContinuousFactor(Factor):
    """Residual factor over continuous keys: ``0.5 * ||whiten(r(values))||^2``.

    Subclasses implement :meth:`evaluate`, returning the unwhitened residual
    and, when requested, one Jacobian per key with respect to the right
    retraction of that key.
    """

    noise: NoiseModel

    def evaluate(self, values: Sequence, jacobians: bool = False):
        raise NotImplementedError

    def values_of(self, continuous: Mapping) -> list:
        return [_lookup(continuous, k) for k in self.keys]

    def residual(self, continuous: Mapping) -> np.ndarray:
        return self.evaluate(self.values_of(continuous))[0]

    def whitened(self, continuous: Mapping, jacobians: bool = False):
        r, jacs = self.evaluate(self.values_of(continuous), jacobians)
        w = self.noise.whiten(r)
        if not jacobians:
            return w, None
        return w, [self.noise.whiten(j) for j in jacs]

    def cost(self, continuous: Mapping) -> float:
        w = self.noise.whiten(self.residual(continuous))
        return 0.5 * float(w @ w)

    def error(self, assignment: HybridAssignment) -> float:
        return self.cost(assignment.continuous)


class HybridFactor(Factor):
    """Factor whose residual and constant offset depend on discrete keys.

    For every joint state ``d`` of :attr:`discrete_keys` the contribution is
    ``component(d).cost(C) + offset(d)``; a ``None`` component contributes only
    the offset.  Subclasses implement :meth:`component`; they may override
    :meth:`conditioned_costs` with a vectorized version.
    """

    def __init__(self, continuous_keys: Sequence[VariableKey], discrete_keys: Sequence[VariableKey]):
        continuous_keys = tuple(continuous_keys)
        discrete_keys = tuple(discrete_keys)
        if not discrete_keys or any(not k.is_discrete for k in discrete_keys):
            raise InputError("hybrid factors need one or more discrete keys")
        if any(k.is_discrete for k in continuous_keys):
            raise InputError("continuous key list contains a discrete key")
        self.keys = continuous_keys + discrete_keys
        if len({k.id for k in self.keys}) != len(self.keys):
            raise InputError("a factor may reference each key only once")
        self._discrete = discrete_keys
        self._continuous = continuous_keys

    @property
    def discrete_keys(self) -> tuple:
        return self._discrete

    @property
    def continuous_keys(self) -> tuple:
        return self._continuous

    @property
    def shape(self) -> tuple:
        return tuple(k.cardinality for k in self._discrete)

    def component(self, state: tuple) -> tuple[ContinuousFactor | None, float]:
        raise NotImplementedError

    def state_of(self, discrete: Mapping) -> tuple:
        return tuple(int(_lookup(discrete, k)) for k in self._discrete)

    def conditioned_costs(self, continuous: Mapping) -> np.ndarray:
        out = np.empty(self.shape)
        for state in itertools.product(*(range(n) for n in self.shape)):
            comp, offset = self.component(state)
            out[state] = offset + (0.0 if comp is None else comp.cost(continuous))
        return out

    def error(self, assignment: HybridAssignment) -> float:
        comp, offset = self.component(self.state_of(assignment.discrete))
        return offset + (0.0 if comp is None else comp.cost(assignment.continuous))


class HybridResidualFactor(HybridFactor):
    """Hybrid factor given by an explicit residual per joint discrete state.

    ``components`` maps each joint state (a tuple, in the order of
    ``discrete_keys``) to ``(ContinuousFactor or None, offset)``.
    """

    def __init__(self, discrete_keys: Sequence[VariableKey], components: Mapping[tuple, tuple]):
        discrete_keys = tuple(discrete_keys)
        if not discrete_keys or any(not k.is_discrete for k in discrete_keys):
            raise InputError("hybrid factors need one or more discrete keys")
        shape = tuple(k.cardinality for k in discrete_keys)
        states = list(itertools.product(*(range(n) for n in shape)))
        components = {tuple(int(i) for i in s): c for s, c in components.items()}
        missing = [s for s in states if s not in components]
        if missing:
            raise InputError(f"hybrid factor lacks a residual for discrete states {missing[:3]}")
        continuous: list[VariableKey] = []
        for comp, _ in components.values():
            if comp is not None:
                for k in comp.keys:
                    if k not in continuous:
                        continuous.append(k)
        super().__init__(continuous, discrete_keys)
        self.components = components

    def component(self, state: tuple) -> tuple[ContinuousFactor | None, float]:
        return self.components[tuple(state)]


class MaxMixtureFactor(HybridFactor):
    """Weighted mixture of residual factors selected by one discrete key.

    Component ``k`` costs ``-log(weight_k) + component_k`` plus, when
    ``normalize`` is set, the Gaussian log-normalizer of its noise model, so
    that components with different covariances compete fairly.
    """

    def __init__(self, selector: VariableKey, components: Sequence[tuple[float, ContinuousFactor]], normalize: bool = False):
        if selector.cardinality != len(components):
            raise InputError("selector cardinality must equal the number of mixture components")
        continuous: list[VariableKey] = []
        for weight, comp in components:
            if not weight > 0.0:
                raise InputError("mixture weights must be positive")
            for k in comp.keys:
                if k not in continuous:
                    continuous.append(k)
        super().__init__(continuous, (selector,))
        self.selector = selector
        self.weights = [float(w) for w, _ in components]
        self.mixture = [c for _, c in components]
        self.offsets = [
            -math.log(w) + (c.noise.log_normalizer() if normalize else 0.0) for w, c in zip(self.weights, self.mixture)
        ]

    def component(self, state: tuple) -> tuple[ContinuousFactor | None, float]:
        i = state[0]
        return self.mixture[i], self.offsets[i]


class FactorGraph:
    """Variables plus an append-only list of factors."""

    def __init__(self):
        self.variables: dict[int, VariableKey] = {}
        self.factors: list[Factor] = []

    def __len__(self) -> int:
        return len(self.factors)

    def add_variable(self, key: VariableKey) -> None:
        existing = self.variables.get(key.id)
        if existing is not None:
            if existing != key:
                raise DuplicateKey(f"variable id {key.id} already registered as {existing!r}")
            return
        self.variables[key.id] = key

    def add_variables(self, keys: Iterable[VariableKey]) -> None:
        for key in keys:
            self.add_variable(key)

    def add_factor(self, factor: Factor) -> int:
        for key in factor.keys:
            registered = self.variables.get(key.id)
            if registered is None:
                raise UnknownKey(key.id)
            if registered != key:
                raise DuplicateKey(f"factor uses {key!r} but id {key.id} is registered as {registered!r}")
        self.factors.append(factor)
        return len(self.factors) - 1

    def copy(self) -> "FactorGraph":
        out = FactorGraph()
        out.variables = dict(self.variables)
        out.factors = list(self.factors)
        return out

    def subgraph(self, indices: Iterable[int]) -> "FactorGraph":
        out = FactorGraph()
        out.variables = dict(self.variables)
        out.factors = [self.factors[i] for i in indices]
        return out

    def discrete_keys(self) -> list[VariableKey]:
        return sorted((k for k in self.variables.values() if k.is_discrete), key=lambda k: k.id)

    def continuous_keys(self) -> list[VariableKey]:
        return sorted((k for k in self.variables.values() if not k.is_discrete), key=lambda k: k.id)

    def factor_errors(self, assignment: HybridAssignment) -> list[float]:
        return [f.error(assignment) for f in self.factors]

    def objective(self, assignment: HybridAssignment, allow_infinite: bool = False) -> float:
        """Negative log posterior (up to a global constant) at ``assignment``."""
        total = 0.0
        for index, factor in enumerate(self.factors):
            value = factor.error(assignment)
            if value == math.inf and not allow_infinite:
                raise NonPositiveDensity(f"factor {index} has zero density at the given assignment")
            total += value
        return total

    def continuous_objective(self, discrete: Mapping, continuous: Mapping) -> float:
        """Sum over factors that depend on continuous variables."""
        assignment = HybridAssignment(continuous, discrete)
        return sum(f.error(assignment) for f in self.factors if not isinstance(f, DiscreteFactor))


def objective(graph: FactorGraph, assignment: HybridAssignment, allow_infinite: bool = False) -> float:
    return graph.objective(assignment, allow_infinite)
