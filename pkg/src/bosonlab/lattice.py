"""Periodic spectral grid on the unit box [0, 1)^d.

Quadrature is the cell-volume weighted lattice sum. Spectral coefficients
use the convention ``c_k = cell_volume * sum_x f(x) exp(-2 pi i k.x)`` so
that the constant function 1 has ``c_0 = 1`` and Parseval reads
``||f||_2 = (sum_k |c_k|^2)^(1/2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.fft as sfft

from .errors import PreconditionError

Space = Literal["position", "momentum"]


@dataclass(frozen=True)
class Grid:
    d: int
    M: int
    L: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise PreconditionError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.M < 8 or self.M & (self.M - 1):
            raise PreconditionError(f"M must be a power of two >= 8, got {self.M}")
        if self.L != 1.0:
            raise PreconditionError("the box has unit edge length")

    @property
    def cell_volume(self) -> float:
        return float(self.M) ** (-self.d)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.d

    @property
    def size(self) -> int:
        return self.M**self.d

    def coordinates(self) -> list[np.ndarray]:
        """Per-axis coordinate arrays broadcastable to ``shape``."""
        x = np.arange(self.M) / self.M
        return list(np.meshgrid(*([x] * self.d), indexing="ij", sparse=True))

    def modes(self) -> np.ndarray:
        """Integer mode ladder {-M/2, ..., M/2 - 1} in FFT order."""
        return np.fft.fftfreq(self.M, d=1.0 / self.M)

    def displacement_index(self) -> np.ndarray:
        """Flat index of x - y (mod 1) for every pair of flat lattice points."""
        idx = np.indices(self.shape).reshape(self.d, -1)
        diff = (idx[:, :, None] - idx[:, None, :]) % self.M
        return np.ravel_multi_index(tuple(diff), self.shape)


def make_grid(d: int, M: int) -> Grid:
    return Grid(d=d, M=M)


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray
    space: Space = "position"

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.size != self.grid.size:
            raise PreconditionError(
                f"expected {self.grid.size} values for {self.grid}, got {values.size}"
            )
        self.values = values.reshape(self.grid.shape)

    @property
    def weight(self) -> float:
        return self.grid.cell_volume if self.space == "position" else 1.0

    def norm(self) -> float:
        return float(np.sqrt(self.weight * np.sum(np.abs(self.values) ** 2)))

    def __len__(self) -> int:
        return self.values.size


def min_image(delta: np.ndarray) -> np.ndarray:
    """Wrap coordinate differences into [-1/2, 1/2)."""
    return (delta + 0.5) % 1.0 - 0.5


def distance_from_origin(grid: Grid) -> np.ndarray:
    """Periodic (minimum image) distance |x| of every lattice point to 0."""
    r2 = sum(min_image(c) ** 2 for c in grid.coordinates())
    return np.sqrt(np.broadcast_to(r2, grid.shape))


def forward(values: np.ndarray, axes=None) -> np.ndarray:
    return sfft.fftn(values, axes=axes, norm="forward")


def inverse(coeffs: np.ndarray, axes=None) -> np.ndarray:
    return sfft.ifftn(coeffs, axes=axes, norm="forward")


def transform(
    f: GridFunction, direction: Literal["forward", "inverse"] = "forward"
) -> GridFunction:
    if direction == "forward":
        if f.space != "position":
            raise PreconditionError("forward transform expects a position-space function")
        return GridFunction(f.grid, forward(f.values), space="momentum")
    if direction == "inverse":
        if f.space != "momentum":
            raise PreconditionError("inverse transform expects spectral coefficients")
        return GridFunction(f.grid, inverse(f.values), space="position")
    raise PreconditionError(f"unknown direction {direction!r}")


def laplacian_symbol(grid: Grid) -> np.ndarray:
    """Eigenvalues |2 pi k|^2 of -Delta on the mode ladder, shape ``grid.shape``."""
    k2 = (2 * np.pi * grid.modes()) ** 2
    out = np.zeros(grid.shape)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.M
        out = out + k2.reshape(shape)
    return out


def sobolev_symbol(grid: Grid) -> np.ndarray:
    """Multiplier (1 + |2 pi k|^2)^(1/2) of S = (1 - Delta)^(1/2)."""
    return np.sqrt(1.0 + laplacian_symbol(grid))


def inner(f: GridFunction, g: GridFunction) -> complex:
    """L^2 pairing, conjugate-linear in ``f``."""
    if f.grid != g.grid or f.space != g.space:
        raise PreconditionError("inner product of functions on different grids")
    return complex(f.weight * np.vdot(f.values, g.values))


def gradient_norm_sq(f: GridFunction) -> float:
    """||grad f||^2 evaluated spectrally."""
    c = forward(f.values)
    return float(np.sum(laplacian_symbol(f.grid) * np.abs(c) ** 2))


def plane_wave(grid: Grid, k) -> GridFunction:
    k = np.broadcast_to(np.asarray(k), (grid.d,))
    phase = sum(2j * np.pi * kk * c for kk, c in zip(k, grid.coordinates()))
    return GridFunction(grid, np.broadcast_to(np.exp(phase), grid.shape).copy())
