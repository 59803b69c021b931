"""Domain-decomposed 2D elasticity with fractional-norm interface preconditioning."""

from .fem import LoadSpec, Material
from .interface import FractionalNormConfig
from .krylov import KrylovConfig
from .mesh import BoundaryConditions
from .problem import Problem, ProblemSpec

__all__ = [
    "BoundaryConditions",
    "FractionalNormConfig",
    "KrylovConfig",
    "LoadSpec",
    "Material",
    "Problem",
    "ProblemSpec",
]
__version__ = "0.1.0"
