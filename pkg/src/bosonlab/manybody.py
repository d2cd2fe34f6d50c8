"""N-boson wave functions on the tensor grid and their Schrodinger evolution.

The Hamiltonian is ``H_N = -sum_j Lap_j + (1/N) sum_{i<j} V_a(x_i - x_j)``,
one term per unordered pair, so that the mean field felt by one particle
is ``(N-1)/N * V_a * |phi|^2`` and tends to ``b |phi|^2`` as N grows.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import scipy.fft as sfft

from .errors import NumericalError, PreconditionError
from .lattice import Grid, GridFunction, laplacian_symbol, make_grid
from .potential import PotentialProfile, ScaledPotential, pair_matrix, sample_scaled

logger = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
# state + FFT output + one working copy
_WORKING_COPIES = 3


@dataclass
class ManyBodyConfig:
    N: int
    a: float
    profile: PotentialProfile = field(default_factory=PotentialProfile)
    d: int = 1
    M: int = 32
    dt: float = 1e-3
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    epsilon: float | None = None

    def __post_init__(self):
        if self.N < 2:
            raise PreconditionError("need at least two particles")
        if self.dt <= 0:
            raise PreconditionError("time step must be positive")
        self.grid  # validates d and M
        ScaledPotential(self.profile, self.a, self.d)
        if self.a * self.M < 4:
            raise PreconditionError(
                f"under-resolved potential: a*M = {self.a * self.M:.3g} < 4"
            )
        check_budget(self.N, self.d, self.M, self.memory_budget)

    @classmethod
    def from_epsilon(cls, N: int, epsilon: float, **kwargs) -> "ManyBodyConfig":
        """Couple range and particle number through a = N^-epsilon."""
        if not 0 < epsilon < 0.6:
            warnings.warn(f"epsilon = {epsilon} lies outside (0, 3/5)", stacklevel=2)
        return cls(N=N, a=float(N) ** (-epsilon), epsilon=epsilon, **kwargs)

    @property
    def grid(self) -> Grid:
        return make_grid(self.d, self.M)

    @property
    def scaled_potential(self) -> ScaledPotential:
        return ScaledPotential(self.profile, self.a, self.d)

    def pair_potential(self) -> np.ndarray:
        """V_a(x - y) over flat one-particle indices (no 1/N factor)."""
        return pair_matrix(sample_scaled(self.scaled_potential, self.grid))

    def as_dict(self) -> dict:
        return {
            "N": self.N, "a": self.a, "d": self.d, "M": self.M, "dt": self.dt,
            "profile": {"kind": self.profile.kind, "v0": self.profile.v0,
                        "R": self.profile.R, "table": self.profile.table},
        }

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def memory_estimate(N: int, d: int, M: int) -> int:
    return _WORKING_COPIES * 16 * (M**d) ** N


def check_budget(N: int, d: int, M: int, budget: int = DEFAULT_MEMORY_BUDGET) -> None:
    need = memory_estimate(N, d, M)
    if need <= budget:
        return
    feasible = [m for m in (8, 16, 32, 64, 128) if memory_estimate(N, d, m) <= budget]
    hint = f"largest admissible M is {feasible[-1]}" if feasible else "no M >= 8 fits"
    raise PreconditionError(
        f"N={N}, d={d}, M={M} needs ~{need / 2**30:.2f} GiB > budget "
        f"{budget / 2**30:.2f} GiB; {hint}"
    )


@dataclass
class ManyBodyState:
    grid: Grid
    N: int
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        shape = self.grid.shape * self.N
        if self.values.size != self.grid.size**self.N:
            raise PreconditionError(f"state must have {self.grid.size}^{self.N} entries")
        self.values = self.values.reshape(shape)

    def particles(self) -> np.ndarray:
        """View with one flat axis of length M^d per particle."""
        return self.values.reshape((self.grid.size,) * self.N)

    @property
    def weight(self) -> float:
        return self.grid.cell_volume**self.N

    def norm(self) -> float:
        return float(np.sqrt(self.weight * np.vdot(self.values, self.values).real))

    def inner(self, other: "ManyBodyState") -> complex:
        return complex(self.weight * np.vdot(self.values, other.values))

    def symmetry_residual(self) -> float:
        """max over transpositions of ||psi - P_ij psi|| / ||psi||."""
        p = self.particles()
        ref = np.sqrt(np.vdot(p, p).real)
        worst = 0.0
        for i, j in itertools.combinations(range(self.N), 2):
            diff = p - np.swapaxes(p, i, j)
            worst = max(worst, float(np.sqrt(np.vdot(diff, diff).real) / ref))
        return worst

    def copy(self) -> "ManyBodyState":
        return ManyBodyState(self.grid, self.N, self.values.copy(), self.time)


def default_initial_field(grid: Grid) -> GridFunction:
    """phi0 proportional to 1 + cos(2 pi x_1)/2, normalized."""
    x = grid.coordinates()[0]
    phi = GridFunction(grid, np.broadcast_to(1 + 0.5 * np.cos(2 * np.pi * x),
                                             grid.shape).astype(complex))
    phi.values /= phi.norm()
    return phi


def build_product_state(phi0, N: int) -> ManyBodyState:
    grid = phi0.grid
    nrm = np.sqrt(grid.cell_volume * np.sum(np.abs(phi0.values) ** 2))
    if abs(nrm - 1) > 1e-10:
        raise PreconditionError(f"initial field is not normalized (||phi0|| = {nrm})")
    f = phi0.values.ravel().astype(complex)
    out = f
    for _ in range(N - 1):
        out = np.multiply.outer(out, f)
    return ManyBodyState(grid, N, out)


def _check(psi: ManyBodyState, cfg: ManyBodyConfig) -> None:
    if psi.grid != cfg.grid or psi.N != cfg.N:
        raise PreconditionError("state and configuration disagree on grid or N")


def _broadcast(mat: np.ndarray, N: int, axes: tuple[int, ...]) -> np.ndarray:
    shape = [1] * N
    for ax in axes:
        shape[ax] = mat.shape[0]
    return mat.reshape(shape)


def apply_hamiltonian(psi: ManyBodyState, cfg: ManyBodyConfig) -> ManyBodyState:
    """H_N psi (unnormalized)."""
    _check(psi, cfg)
    N, n = cfg.N, psi.grid.size
    k2 = laplacian_symbol(psi.grid).ravel()
    c = sfft.fftn(psi.values).reshape((n,) * N)
    kin = c * _broadcast(k2, N, (0,))
    for j in range(1, N):
        kin += c * _broadcast(k2, N, (j,))
    del c
    out = sfft.ifftn(kin.reshape(psi.values.shape), overwrite_x=True).reshape((n,) * N)
    pair = cfg.pair_potential() / N
    p = psi.particles()
    for i, j in itertools.combinations(range(N), 2):
        out += _broadcast(pair, N, (i, j)) * p
    return ManyBodyState(psi.grid, N, out, psi.time)


class SplitStepPropagator:
    """Strang splitting: half interaction phase, full kinetic phase, half interaction phase.

    Adjacent interaction half steps are merged. Phase tables are cached per
    step length.
    """

    def __init__(self, cfg: ManyBodyConfig):
        self.cfg = cfg
        self.grid = cfg.grid
        self._pair = cfg.pair_potential() / cfg.N
        self._k2 = laplacian_symbol(self.grid).ravel()
        self._pair_phase: dict[float, np.ndarray] = {}
        self._kin_phase: dict[float, np.ndarray] = {}

    def _interaction(self, values: np.ndarray, tau: float) -> None:
        if tau == 0:
            return
        ph = self._pair_phase.get(tau)
        if ph is None:
            ph = self._pair_phase[tau] = np.exp(-1j * tau * self._pair)
        N = self.cfg.N
        view = values.reshape((self.grid.size,) * N)
        for i, j in itertools.combinations(range(N), 2):
            view *= _broadcast(ph, N, (i, j))

    def _kinetic(self, values: np.ndarray, h: float) -> np.ndarray:
        ph = self._kin_phase.get(h)
        if ph is None:
            ph = self._kin_phase[h] = np.exp(-1j * h * self._k2)
        N = self.cfg.N
        c = sfft.fftn(values, overwrite_x=True)
        view = c.reshape((self.grid.size,) * N)
        for j in range(N):
            view *= _broadcast(ph, N, (j,))
        return sfft.ifftn(c, overwrite_x=True)

    def advance(self, values: np.ndarray, duration: float) -> np.ndarray:
        """Evolve ``values`` (consumed) over ``duration``; a short last step absorbs the remainder."""
        dt = self.cfg.dt
        nfull = int(np.floor(duration / dt + 1e-9))
        rem = duration - nfull * dt
        steps = [dt] * nfull
        if rem > 1e-9 * dt:
            steps.append(rem)
        if not steps:
            return values
        self._interaction(values, steps[0] / 2)
        for i, h in enumerate(steps):
            values = self._kinetic(values, h)
            nxt = steps[i + 1] / 2 if i + 1 < len(steps) else 0.0
            self._interaction(values, h / 2 + nxt)
        return values


def snapshots(psi: ManyBodyState, cfg: ManyBodyConfig, times: Iterable[float]) -> Iterator[ManyBodyState]:
    """Like ``evolve`` but every yielded state wraps the single working buffer.

    A yielded state is only valid until the next one is requested; this
    keeps one copy of the tensor alive besides the input.
    """
    _check(psi, cfg)
    prop = SplitStepPropagator(cfg)
    values = psi.values.copy()
    t = psi.time
    for target in times:
        if target < t - 1e-12:
            raise PreconditionError("snapshot times must be ascending")
        values = prop.advance(values, target - t)
        t = target
        state = ManyBodyState(psi.grid, psi.N, values, t)
        if not np.isfinite(state.norm()):
            raise NumericalError(f"non-finite wave function at t = {t}")
        yield state


def evolve(psi: ManyBodyState, cfg: ManyBodyConfig, times: Iterable[float]) -> Iterator[ManyBodyState]:
    """Yield the evolved state at each requested time (ascending, >= psi.time).

    The input state is not modified. Yielded states share no memory with
    each other.
    """
    for state in snapshots(psi, cfg, times):
        yield ManyBodyState(state.grid, state.N, state.values.copy(), state.time)


def propagate(psi: ManyBodyState, cfg: ManyBodyConfig, T: float) -> ManyBodyState:
    """Approximate exp(-i T H_N) psi by Strang splitting with step cfg.dt."""
    (out,) = evolve(psi, cfg, [psi.time + T])
    return out


def energy_moments(psi: ManyBodyState, cfg: ManyBodyConfig, k_max: int = 3) -> list[float]:
    """[<H^0>, <H^1>, ..., <H^k_max>] for a normalized state."""
    if k_max > 3:
        raise PreconditionError("energy moments are limited to k_max <= 3")
    out = [psi.norm() ** 2]
    if k_max >= 1:
        h1 = apply_hamiltonian(psi, cfg)
        out.append(psi.inner(h1).real)
    if k_max >= 2:
        out.append(h1.inner(h1).real)
    if k_max >= 3:
        h2 = apply_hamiltonian(h1, cfg)
        out.append(h1.inner(h2).real)
    return out[: k_max + 1]


def moment_constants(moments: list[float], N: int) -> list[float]:
    """C_k = <H^k>^(1/k) / N for k >= 1."""
    return [max(m, 0.0) ** (1.0 / k) / N for k, m in enumerate(moments) if k >= 1]


# -- dense oracle ---------------------------------------------------------------

DENSE_LIMIT = 4096


def dense_hamiltonian(cfg: ManyBodyConfig) -> np.ndarray:
    """H_N as an explicit matrix on the orthonormal lattice basis, built entry by entry.

    The one-body kinetic matrix is summed mode by mode and the pair term is
    evaluated directly from the scaled profile, independently of the FFT path.
    """
    grid = cfg.grid
    n = grid.size
    dim = n**cfg.N
    if dim > DENSE_LIMIT:
        raise PreconditionError(f"dense oracle limited to {DENSE_LIMIT} states, got {dim}")
    pts = np.stack([c.ravel() for c in np.meshgrid(*([np.arange(grid.M) / grid.M] * grid.d),
                                                  indexing="ij")], axis=1)
    modes = np.stack([m.ravel() for m in np.meshgrid(*([grid.modes()] * grid.d),
                                                    indexing="ij")], axis=1)
    t1 = np.zeros((n, n), dtype=complex)
    for kvec in modes:
        lam = float(np.sum((2 * np.pi * kvec) ** 2))
        e = np.exp(2j * np.pi * pts @ kvec)
        t1 += lam * np.outer(e, e.conj()) / n
    eye = np.eye(n)
    H = np.zeros((dim, dim), dtype=complex)
    for j in range(cfg.N):
        op = np.ones((1, 1))
        for m in range(cfg.N):
            op = np.kron(op, t1 if m == j else eye)
        H += op
    sp = cfg.scaled_potential
    diag = np.zeros(dim)
    for flat, conf in enumerate(itertools.product(range(n), repeat=cfg.N)):
        s = 0.0
        for i, j in itertools.combinations(range(cfg.N), 2):
            delta = (pts[conf[i]] - pts[conf[j]] + 0.5) % 1.0 - 0.5
            s += float(sp(np.sqrt(np.sum(delta**2))))
        diag[flat] = s / cfg.N
    H[np.diag_indices(dim)] += diag
    return H


def dense_propagate(psi: ManyBodyState, cfg: ManyBodyConfig, T: float,
                    H: np.ndarray | None = None) -> ManyBodyState:
    """exp(-i T H) psi by eigendecomposition of the dense Hamiltonian."""
    H = dense_hamiltonian(cfg) if H is None else H
    w, U = np.linalg.eigh(H)
    v = U @ (np.exp(-1j * w * T) * (U.conj().T @ psi.values.ravel()))
    return ManyBodyState(psi.grid, psi.N, v, psi.time + T)


def distance(psi: ManyBodyState, phi: ManyBodyState) -> float:
    diff = ManyBodyState(psi.grid, psi.N, psi.values - phi.values)
    return diff.norm()


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(psi: ManyBodyState, path: str | Path, config_hash: str,
                    dtype: str = "complex128") -> Path:
    """Raw little-endian complex tensor plus ``<path>.json`` sidecar."""
    if dtype not in ("complex64", "complex128"):
        raise PreconditionError("checkpoint dtype must be complex64 or complex128")
    path = Path(path)
    code = "<c8" if dtype == "complex64" else "<c16"
    psi.values.astype(code).tofile(path)
    meta = {"shape": list(psi.values.shape), "dtype": dtype, "time": psi.time,
            "N": psi.N, "d": psi.grid.d, "M": psi.grid.M, "config_hash": config_hash}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))
    return path


def load_checkpoint(path: str | Path, config_hash: str | None = None) -> ManyBodyState:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    if config_hash is not None and meta["config_hash"] != config_hash:
        raise PreconditionError(
            f"checkpoint config hash {meta['config_hash']} does not match {config_hash}"
        )
    code = "<c8" if meta["dtype"] == "complex64" else "<c16"
    values = np.fromfile(path, dtype=code).astype(complex).reshape(meta["shape"])
    return ManyBodyState(make_grid(meta["d"], meta["M"]), meta["N"], values, meta["time"])
