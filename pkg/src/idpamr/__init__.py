"""Conservative, invariant-domain preserving solution transfer for
adaptive quadrilateral meshes, with a low-order IDP solver and benchmark
drivers."""
from .adaptivity import Discretization, IndicatorConfig, adaptation_cycle
from .mesh import MeshForest
from .projection import element_project, projection_operator, redistribute
from .solver import BoundaryConditions, Solver
from .systems import IdealGasEuler, ShallowWater, make_system

__version__ = "0.1.0"

__all__ = [
    "BoundaryConditions", "Discretization", "IdealGasEuler", "IndicatorConfig", "MeshForest",
    "ShallowWater", "Solver", "adaptation_cycle", "element_project", "make_system",
    "projection_operator", "redistribute",
]
