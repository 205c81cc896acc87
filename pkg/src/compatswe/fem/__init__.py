"""Reference elements, quadrature and global function spaces."""
from .quadrature import QuadratureRule, gauss_interval, quadrature_rule
from .reference import BDM, DG, LAGRANGE, ReferenceElement, build_reference
from .spaces import (Field, FunctionSpace, build_space, evaluate, l2_error,
                     physical_points, project, scatter_matrix)

__all__ = [
    "BDM", "DG", "LAGRANGE", "Field", "FunctionSpace", "QuadratureRule",
    "ReferenceElement", "build_reference", "build_space", "evaluate", "gauss_interval",
    "l2_error", "physical_points", "project", "quadrature_rule", "scatter_matrix",
]
