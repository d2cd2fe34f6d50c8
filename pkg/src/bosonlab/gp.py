"""Cubic nonlinear Schrodinger (Gross-Pitaevskii) flow and its factorized marginals."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import NumericalError, PreconditionError
from .lattice import Grid, GridFunction, forward, gradient_norm_sq, inverse, laplacian_symbol
from .marginals import FactorizedDensityMatrix, MarginalFamily

MASS_TOL = 1e-10


@dataclass
class FieldState:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.size != self.grid.size:
            raise PreconditionError(f"field needs {self.grid.size} values, got {v.size}")
        self.values = v.reshape(self.grid.shape)

    @classmethod
    def from_function(cls, f: GridFunction, time: float = 0.0) -> "FieldState":
        return cls(f.grid, np.array(f.values, dtype=complex), time)

    def as_function(self) -> GridFunction:
        return GridFunction(self.grid, self.values)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(np.abs(self.values) ** 2)))

    def copy(self) -> "FieldState":
        return FieldState(self.grid, self.values.copy(), self.time)


def gp_energy(phi: FieldState, b: float) -> float:
    """int |grad phi|^2 + (b/2) int |phi|^4."""
    quartic = phi.grid.cell_volume * np.sum(np.abs(phi.values) ** 4)
    return gradient_norm_sq(phi.as_function()) + 0.5 * b * float(quartic)


class _GPStepper:
    def __init__(self, grid: Grid, b: float, dt: float):
        self.b = b
        self.dt = dt
        self.k2 = laplacian_symbol(grid)
        self._kin: dict[float, np.ndarray] = {}

    def _nonlinear(self, v: np.ndarray, tau: float) -> np.ndarray:
        if tau == 0:
            return v
        return v * np.exp(-1j * tau * self.b * np.abs(v) ** 2)

    def _kinetic(self, v: np.ndarray, h: float) -> np.ndarray:
        ph = self._kin.get(h)
        if ph is None:
            ph = self._kin[h] = np.exp(-1j * h * self.k2)
        return inverse(ph * forward(v))

    def advance(self, v: np.ndarray, duration: float) -> np.ndarray:
        # |phi| is unchanged by the nonlinear phase, so adjacent half steps merge
        nfull = int(np.floor(duration / self.dt + 1e-9))
        rem = duration - nfull * self.dt
        steps = [self.dt] * nfull + ([rem] if rem > 1e-9 * self.dt else [])
        if not steps:
            return v
        v = self._nonlinear(v, steps[0] / 2)
        for i, h in enumerate(steps):
            v = self._kinetic(v, h)
            nxt = steps[i + 1] / 2 if i + 1 < len(steps) else 0.0
            v = self._nonlinear(v, h / 2 + nxt)
        return v


def _check_initial(phi0: FieldState) -> None:
    if abs(phi0.norm() - 1.0) > MASS_TOL:
        raise PreconditionError(f"initial field must be normalized, ||phi0|| = {phi0.norm():.12g}")


def gp_trajectory(phi0: FieldState, b: float, times: Iterable[float], dt: float) -> list[FieldState]:
    """Fields at each requested (ascending) time, starting from phi0."""
    _check_initial(phi0)
    if dt <= 0:
        raise PreconditionError("time step must be positive")
    stepper = _GPStepper(phi0.grid, b, dt)
    v = phi0.values.copy()
    t = phi0.time
    out = []
    for target in times:
        if target < t - 1e-12:
            raise PreconditionError("snapshot times must be ascending")
        v = stepper.advance(v, target - t)
        t = target
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite GP field at t = {t}")
        out.append(FieldState(phi0.grid, v.copy(), t))
    return out


def solve_gp(phi0: FieldState, b: float, T: float, dt: float) -> FieldState:
    """Strang split-step solution of i d_t phi = -Lap phi + b |phi|^2 phi at time phi0.time + T."""
    return gp_trajectory(phi0, b, [phi0.time + T], dt)[0]


def factorized_family(phi: FieldState, k_max: int = 2) -> MarginalFamily:
    """Tensor-power projectors |phi><phi|^{(x) k} for k = 1..k_max."""
    if abs(phi.norm() - 1.0) > 1e-8:
        raise PreconditionError("factorized family needs a normalized field")
    f = phi.as_function()
    return MarginalFamily({k: FactorizedDensityMatrix(f, k, phi.time) for k in range(1, k_max + 1)})


def export_trajectory(fields: list[FieldState], directory: str | Path, b: float,
                      config_hash: str = "") -> list[Path]:
    """One little-endian complex128 dump per snapshot plus a JSON sidecar each."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(fields):
        p = directory / f"field_{i:04d}.bin"
        f.values.astype("<c16").tofile(p)
        meta = {"time": f.time, "d": f.grid.d, "M": f.grid.M, "b": b,
                "dtype": "complex128", "config_hash": config_hash}
        Path(str(p) + ".json").write_text(json.dumps(meta, indent=2))
        paths.append(p)
    return paths
