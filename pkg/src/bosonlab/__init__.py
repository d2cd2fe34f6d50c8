"""Desk-scale laboratory for the mean-field dynamics of weakly coupled bosons."""

from .errors import NumericalError, PreconditionError
from .lattice import Grid, GridFunction, make_grid
from .potential import PotentialProfile, TestKernel, coupling_b, kernel_family

__all__ = [
    "Grid", "GridFunction", "make_grid", "PotentialProfile", "TestKernel",
    "coupling_b", "kernel_family", "PreconditionError", "NumericalError",
]
__version__ = "0.1.0"
