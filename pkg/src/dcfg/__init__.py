"""Hybrid discrete-continuous factor graphs solved by alternating minimization."""

from . import manifold
from .continuous import MarginalCovariance, OptimizerParams, linearize, optimize_continuous, recover_covariance
from .dcsolver import DcParams, DcResult, SolveTrace, incremental_extend, solve
from .discrete import components, condition, marginals, min_fill_ordering, solve_mpe
from .errors import DcfgError, InputError, SolverError
from .factors import (
    BetweenFactor,
    CorrespondenceFactor,
    PointToPointFactor,
    PriorFactor,
    RangeBearingFactor,
    SemanticFactor,
    SemanticMixtureFactor,
    SwitchableLoopFactor,
)
from .graph import (
    DiscreteFactor,
    FactorGraph,
    HybridAssignment,
    HybridFactor,
    HybridResidualFactor,
    MaxMixtureFactor,
    NoiseModel,
    VariableKey,
    objective,
)
from .manifold import SE2, SE3, SO3, Pose2, Pose3, VectorSpace

__version__ = "0.1.0"
