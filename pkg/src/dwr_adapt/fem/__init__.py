"""Lagrange finite elements: quadrature, spaces, transfer operators and assembly."""
from .assembly import (CellQuadrature, SingularMatrixError, SparseSystem, assemble_matrix,
                       assemble_vector, condense, edge_quadrature, edge_reference_points, factorize,
                       load_vector, mass_matrix, solve, stiffness_matrix)
from .quadrature import interval_rule, triangle_rule
from .space import (DirichletBC, Field, MixedSpace, ReferenceElement, Space, build_space, embed,
                    extrapolate, interpolate, locate_points, reference_element, transfer)

quadrature = triangle_rule

__all__ = [
    "CellQuadrature", "DirichletBC", "Field", "MixedSpace", "ReferenceElement", "SingularMatrixError",
    "Space", "SparseSystem", "assemble_matrix", "assemble_vector", "build_space", "condense",
    "edge_quadrature", "edge_reference_points", "embed", "extrapolate", "factorize", "interpolate",
    "interval_rule", "load_vector", "locate_points", "mass_matrix", "quadrature", "reference_element",
    "solve", "stiffness_matrix", "transfer", "triangle_rule",
]
