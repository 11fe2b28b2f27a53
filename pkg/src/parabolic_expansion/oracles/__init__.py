"""Independent reference solutions: finite differences, Monte Carlo and closed forms."""

from .closed_form import exact_constant_solution, heat_kernel_bound
from .fd import FDGrid, FDSolution, fd_density, fd_price, fd_solve
from .mc import MCResult, mc_solve

__all__ = [
    "FDGrid",
    "FDSolution",
    "MCResult",
    "exact_constant_solution",
    "fd_density",
    "fd_price",
    "fd_solve",
    "heat_kernel_bound",
    "mc_solve",
]
