"""Mixed-interface nonlinear substructuring solver for 2D elastoplastic FE problems."""

from .errors import (
    AssemblyError,
    GlobalSolveError,
    ImpedanceError,
    KrylovError,
    LocalSolveError,
    MixddError,
    PartitionError,
)
from .fem import (
    GaussPointState,
    MaterialModel,
    Mesh,
    apply_dirichlet,
    assemble,
    load_mesh,
    radial_return,
    save_mesh,
)

__all__ = [
    "AssemblyError",
    "GaussPointState",
    "GlobalSolveError",
    "ImpedanceError",
    "KrylovError",
    "LocalSolveError",
    "MaterialModel",
    "Mesh",
    "MixddError",
    "PartitionError",
    "apply_dirichlet",
    "assemble",
    "load_mesh",
    "radial_return",
    "save_mesh",
]

__version__ = "0.1.0"
