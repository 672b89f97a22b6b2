"""Symbolic regression: expression trees and the genetic-programming engine."""

from .engine import (  # noqa: F401
    FrontEntry,
    ParetoFront,
    SRConfig,
    evolve,
    fit_constants,
    fitness,
)
from .expr import (  # noqa: F401
    Binary,
    Const,
    Expr,
    FEATURE_NAMES,
    ParseError,
    Unary,
    Var,
    depth,
    eval_tree,
    node_count,
    parse_expr,
    render,
    simplify,
)
