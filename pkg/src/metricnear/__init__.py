"""Weighted l1/l2/linf metric nearness solvers.

Given a nonnegative symmetric dissimilarity matrix, find the nearest matrix
of distances satisfying every triangle inequality, nearness measured by a
weighted lp norm (p in {1, 2, inf}).  The main solver runs delayed
constraint generation over the 3*C(n,3) triangle rows with each reduced
problem solved by a semismooth-Newton proximal augmented Lagrangian method;
a Dykstra cyclic-projection baseline covers the regularized QP
reformulations.
"""

from .core import (
    ConstraintRecord,
    ConstraintSet,
    Norm,
    ProblemInstance,
    SolveReport,
    SolverConfig,
    SparseTriVec,
    SsnConfig,
)
from .dcgm import certify, dcgm_solve
from .dykstra import build_system, dykstra_solve
from .ingest import (
    Graph,
    build_instance,
    gen_random_instance,
    largest_component,
    load_edge_list,
)

__version__ = "0.1.0"

__all__ = [
    "Norm",
    "SparseTriVec",
    "ProblemInstance",
    "ConstraintRecord",
    "ConstraintSet",
    "SsnConfig",
    "SolverConfig",
    "SolveReport",
    "dcgm_solve",
    "certify",
    "build_system",
    "dykstra_solve",
    "Graph",
    "load_edge_list",
    "largest_component",
    "build_instance",
    "gen_random_instance",
    "__version__",
]
