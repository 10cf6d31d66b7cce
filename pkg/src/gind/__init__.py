"""Graph implicit nonlinear diffusion: an implicit graph layer whose output is
the equilibrium of a learned anisotropic diffusion."""

from .graph import Graph, OrientedIncidence, apply_div, apply_grad, build_graph, orient, spectral_norm
from .layer import (
    EquilibriumState,
    LayerParams,
    Regularizer,
    SolverConfig,
    damped_step,
    flux_map,
    project_spectral,
    regularizer_grad,
    solve_equilibrium,
    solve_row_normalized,
)
from .linalg import Activation, VarNorm

__version__ = "0.1.0"
