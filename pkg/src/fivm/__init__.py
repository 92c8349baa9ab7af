"""Factorized higher-order incremental view maintenance over rings.

The package keeps join-aggregate query results fresh under inserts and
deletes by maintaining a tree of materialized views shaped by a variable
order, with payloads drawn from a pluggable commutative ring. Applications
on top cover covariance matrices and linear regression, mutual information
and dependence trees, listing query results, and matrix chain products.
"""

from fivm.rings import (
    CovarianceTriple,
    LiftingFunction,
    RelationalPayload,
    RingSpec,
    covariance_ring,
    integer_ring,
    real_ring,
    relational_ring,
)
from fivm.relations import OpCounters, Relation
from fivm.queries import FDSet, Query, VariableOrder
from fivm.viewtree import ViewNode, ViewTree
from fivm.ivm import RuntimeState, UpdateDelta

__version__ = "0.1.0"

__all__ = [
    "RingSpec",
    "RelationalPayload",
    "CovarianceTriple",
    "LiftingFunction",
    "integer_ring",
    "real_ring",
    "covariance_ring",
    "relational_ring",
    "Relation",
    "OpCounters",
    "Query",
    "VariableOrder",
    "FDSet",
    "ViewNode",
    "ViewTree",
    "RuntimeState",
    "UpdateDelta",
]
