from .cholesky import CholeskyFactor, SymbolicFactor, analyze, factorize, factorize_numeric
from .ordering import ORDERINGS, fill_reducing_order, nested_dissection
from .sketch import (ExactInverse, ProjectionSketch, build_sketch, exact_inverse_entries,
                     inverse_entry, jl_dimension, quad_form)

__all__ = [
    "CholeskyFactor", "SymbolicFactor", "analyze", "factorize", "factorize_numeric",
    "ORDERINGS", "fill_reducing_order", "nested_dissection",
    "ExactInverse", "ProjectionSketch", "build_sketch", "exact_inverse_entries",
    "inverse_entry", "jl_dimension", "quad_form",
]
