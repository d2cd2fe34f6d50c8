"""Weak-form residuals of the finite BBGKY hierarchy and of the regularized GP hierarchy.

Every identity is paired against a rank-one test kernel
``J(X; X') = L(X) R(X')`` and time integrals use the composite trapezoid
rule over stored snapshots. Collision terms all go through one contraction
primitive::

    C_w[J, gamma^(k+1)] = sum_j int J(X; X') cell sum_y (w(x_j - y) - w(x'_j - y)) T[X, X', y]

where ``T`` is the (sharp or mollified) restriction of gamma^(k+1) to its
last variable and ``w`` is a sampled kernel (V_a, a mollifier, or the grid
delta when ``w`` is None).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from .errors import PreconditionError
from .gp import FieldState, factorized_family, gp_trajectory
from .lattice import Grid, laplacian_symbol
from .manybody import ManyBodyConfig, ManyBodyState, snapshots
from .marginals import (DensityMatrixK, FactorizedDensityMatrix, MarginalFamily,
                        reduce_family, sobolev_trace_norm)
from .potential import Mollifier, TestKernel, sample_mollifier, sample_scaled

PROVENANCES = ("simulation", "factorized-GP")


@dataclass
class SnapshotTrajectory:
    times: np.ndarray
    families: list[MarginalFamily]
    provenance: str = "simulation"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.families) or len(self.times) == 0:
            raise PreconditionError("one marginal family per snapshot time is required")
        if self.provenance not in PROVENANCES:
            raise PreconditionError(f"unknown provenance {self.provenance!r}")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if steps.min() <= 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise PreconditionError("snapshot times must be uniformly spaced")
        grid = self.families[0].grid
        if any(f.grid != grid for f in self.families):
            raise PreconditionError("all snapshots must share one grid")
        self._sob_cache: dict = {}

    @property
    def grid(self) -> Grid:
        return self.families[0].grid

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self) -> int:
        return len(self.times)

    def subsample(self, stride: int) -> "SnapshotTrajectory":
        """Every ``stride``-th snapshot (the last one must be kept)."""
        if (len(self) - 1) % stride:
            raise PreconditionError("stride must divide the number of intervals")
        return SnapshotTrajectory(self.times[::stride], self.families[::stride],
                                  self.provenance, dict(self.meta))

    def upto(self, n: int) -> "SnapshotTrajectory":
        """First ``n`` snapshots."""
        return SnapshotTrajectory(self.times[:n], self.families[:n], self.provenance,
                                  dict(self.meta))

    def sobolev_sup(self, k: int = 2) -> float:
        """sup over snapshots of Tr |S_1..S_k gamma^(k) S_k..S_1| (cached)."""
        if k not in self._sob_cache:
            self._sob_cache[k] = [sobolev_trace_norm(f[k]) for f in self.families]
        return float(max(self._sob_cache[k]))


@dataclass
class ResidualReport:
    kernel_id: str
    k: int
    residual: complex
    components: dict[str, complex]
    params: dict = field(default_factory=dict)

    @property
    def magnitude(self) -> float:
        return abs(self.residual)

    @property
    def max_term(self) -> float:
        return max(abs(c) for c in self.components.values())

    def breakdown_error(self) -> float:
        return abs(sum(self.components.values()) - self.residual)

    def as_dict(self) -> dict:
        return {"kernel": self.kernel_id, "k": self.k, "residual": abs(self.residual),
                "max_term": self.max_term,
                **{f"{n}_re": c.real for n, c in self.components.items()},
                **{f"{n}_im": c.imag for n, c in self.components.items()},
                **self.params}


def _report(J: TestKernel, components: dict[str, complex], params: dict) -> ResidualReport:
    total = complex(sum(components.values()))
    return ResidualReport(J.label or "J", J.k, total, components, params)


# -- pairing primitives ------------------------------------------------------------

def _pair(left: np.ndarray, right: np.ndarray, gamma: DensityMatrixK) -> complex:
    """int L(X) R(X') gamma(X; X')."""
    if isinstance(gamma, FactorizedDensityMatrix):
        v = gamma.vector()
        val = (left @ v) * (right @ v.conj())
    else:
        val = left @ gamma.kernel @ right
    return complex(gamma.weight**2 * val)


def _on_particle(vec: np.ndarray, grid: Grid, k: int, j: int, symbol: np.ndarray) -> np.ndarray:
    """Apply a spectral multiplier to the variable of particle j (0-based)."""
    t = vec.reshape(grid.shape * k)
    axes = tuple(range(j * grid.d, (j + 1) * grid.d))
    sym = symbol.reshape(grid.shape)
    c = sfft.fftn(t, axes=axes)
    c *= sym.reshape([grid.M if i in axes else 1 for i in range(grid.d * k)])
    return sfft.ifftn(c, axes=axes).ravel()


def kinetic_pairing(J: TestKernel, gamma: DensityMatrixK) -> complex:
    """sum_j int J (-Lap_j + Lap'_j) gamma, with the Laplacian moved onto J."""
    grid, k = gamma.grid, gamma.k
    lap = laplacian_symbol(grid)
    L, R = J.left_vector(), J.right_vector()
    total = 0j
    for j in range(k):
        total += _pair(_on_particle(L, grid, k, j, lap), R, gamma)
        total -= _pair(L, _on_particle(R, grid, k, j, lap), gamma)
    return total


def _pair_values(grid: Grid, k: int, j: int, l: int, w_flat: np.ndarray) -> np.ndarray:
    """w(x_j - x_l) as a flat vector over k-particle configurations."""
    W = w_flat[grid.displacement_index()]
    n = grid.size
    shape = [1] * k
    shape[j], shape[l] = n, n
    full = np.broadcast_to(W.reshape(shape) if j < l else W.T.reshape(shape), (n,) * k)
    return full.ravel()


def intra_pairing(J: TestKernel, gamma: DensityMatrixK, w_flat: np.ndarray) -> complex:
    """sum_{j<l} int J (w(x_j - x_l) - w(x'_j - x'_l)) gamma."""
    grid, k = gamma.grid, gamma.k
    L, R = J.left_vector(), J.right_vector()
    total = 0j
    for j in range(k):
        for l in range(j + 1, k):
            v = _pair_values(grid, k, j, l, w_flat)
            total += _pair(L * v, R, gamma) - _pair(L, R * v, gamma)
    return total


def _smooth(c: np.ndarray, w_flat: np.ndarray | None, grid: Grid) -> np.ndarray:
    """(cell * sum_y w(x - y) c(y)) as a function of x; grid delta when w is None."""
    if w_flat is None:
        return c
    wh = sfft.fftn(w_flat.reshape(grid.shape))
    return (sfft.ifftn(wh * sfft.fftn(c.reshape(grid.shape))) * grid.cell_volume).ravel()


def collision_pairing(J: TestKernel, gamma_next: DensityMatrixK, w_flat: np.ndarray | None,
                      mollifier: np.ndarray | None = None, particles=None) -> complex:
    """sum_j int J(X;X') (w(x_j - y) - w(x'_j - y)) T[X, X', y] dy with T as in the module doc.

    ``mollifier`` (sampled, flat) selects the smoothed restriction of the
    last variable; ``particles`` (0-based) restricts the j-sum.
    """
    k = J.k
    if gamma_next.k != k + 1 or gamma_next.grid != J.grid:
        raise PreconditionError(f"collision term needs a sector-{k + 1} kernel on the same grid")
    grid = J.grid
    n = grid.size
    js = range(k) if particles is None else particles
    L, R = J.left_vector(), J.right_vector()
    w2 = gamma_next.weight / grid.cell_volume  # cell^k for the X, X' integrals
    if isinstance(gamma_next, FactorizedDensityMatrix):
        # T = h(X) conj(h(X')) c(y): every sum factorizes
        head = gamma_next.vector(k)
        tail = _tail(gamma_next, mollifier)
        s = _smooth(tail, w_flat, grid)
        LH, RH = (L * head).reshape((n,) * k), (R * head.conj()).reshape((n,) * k)
        total = 0j
        for j in js:
            total += _sum_times(LH, s, j) * RH.sum() - LH.sum() * _sum_times(RH, s, j)
        return complex(w2**2 * total)
    T = gamma_next.last_variable_contraction(mollifier)
    m = n**k
    total = 0j
    for j in js:
        # contract the y slot against w(x_j - y) on either side
        U = np.empty((m, m), dtype=complex)
        Up = np.empty((m, m), dtype=complex)
        Tt = T.reshape((n,) * (2 * k) + (n,))
        for side, out in ((j, U), (k + j, Up)):
            moved = np.moveaxis(Tt, side, -2)  # (..., x_side, y)
            diag_w = _smooth_matrix(moved, w_flat, grid)
            out[...] = np.moveaxis(diag_w, -1, side).reshape(m, m)
        total += L @ (U - Up) @ R
    return complex(w2**2 * total)


def _tail(g: FactorizedDensityMatrix, mollifier: np.ndarray | None) -> np.ndarray:
    phi = g.phi
    if mollifier is None:
        return np.abs(phi) ** 2
    return phi * _smooth(phi.conj(), mollifier, g.grid)


def _sum_times(A: np.ndarray, s: np.ndarray, j: int) -> complex:
    """sum over all indices of A(X) * s(x_j)."""
    shape = [1] * A.ndim
    shape[j] = s.size
    return complex(np.sum(A * s.reshape(shape)))


def _smooth_matrix(moved: np.ndarray, w_flat: np.ndarray | None, grid: Grid) -> np.ndarray:
    """out[..., x] = cell * sum_y w(x - y) moved[..., x, y] (y = x for the grid delta)."""
    if w_flat is None:
        return np.einsum("...xx->...x", moved)
    W = w_flat[grid.displacement_index()]
    return np.einsum("...xy,xy->...x", moved, W) * grid.cell_volume


# -- residuals ------------------------------------------------------------------------

def _check_traj(traj: SnapshotTrajectory, J: TestKernel) -> None:
    if J.grid != traj.grid:
        raise PreconditionError("kernel and trajectory live on different grids")
    fam = traj.families[0]
    if J.k not in fam.sectors:
        raise PreconditionError(f"trajectory lacks sector {J.k}")
    if J.k + 1 not in fam.sectors:
        raise PreconditionError(f"trajectory lacks sector {J.k + 1} needed by the collision term")


def _integrate(traj: SnapshotTrajectory, f: Callable[[MarginalFamily], complex]) -> complex:
    if len(traj) == 1:
        return 0j
    vals = np.array([f(fam) for fam in traj.families], dtype=complex)
    return complex(trapezoid(vals, traj.times))


def bbgky_residual(traj: SnapshotTrajectory, J: TestKernel, cfg: ManyBodyConfig) -> ResidualReport:
    """<J, g_t> - <J, g_0> + i int kinetic + (i/N) int intra + i (1 - k/N) int collision."""
    _check_traj(traj, J)
    k, N = J.k, cfg.N
    if J.grid != cfg.grid:
        raise PreconditionError("configuration grid differs from the trajectory grid")
    v = sample_scaled(cfg.scaled_potential, cfg.grid).values.ravel()
    first, last = traj.families[0], traj.families[-1]
    comps = {
        "delta": _pair(J.left_vector(), J.right_vector(), last[k])
        - _pair(J.left_vector(), J.right_vector(), first[k]),
        "kinetic": 1j * _integrate(traj, lambda f: kinetic_pairing(J, f[k])),
        "intra": 1j / N * _integrate(traj, lambda f: intra_pairing(J, f[k], v)),
        "collision": 1j * (1 - k / N) * _integrate(traj, lambda f: collision_pairing(J, f[k + 1], v)),
    }
    return _report(J, comps, {"dt_snap": traj.spacing, "beta": None, "eta": None})


def _mollifier_samples(width: float | None, grid: Grid) -> np.ndarray | None:
    if width is None or width == 0:
        return None
    return sample_mollifier(Mollifier(width, grid.d), grid).values.ravel()


def gp_residual(traj: SnapshotTrajectory, J: TestKernel, b: float, beta: float | None,
                eta: float | None) -> ResidualReport:
    """<J, g_t> - <J, g_0> + i int kinetic + i b int C_{delta_beta}[J, g^(k+1) smoothed by eta].

    ``beta`` or ``eta`` equal to None selects the grid delta / sharp diagonal.
    """
    _check_traj(traj, J)
    k = J.k
    grid = traj.grid
    wb = _mollifier_samples(beta, grid)
    he = _mollifier_samples(eta, grid)
    first, last = traj.families[0], traj.families[-1]
    comps = {
        "delta": _pair(J.left_vector(), J.right_vector(), last[k])
        - _pair(J.left_vector(), J.right_vector(), first[k]),
        "kinetic": 1j * _integrate(traj, lambda f: kinetic_pairing(J, f[k])),
        "intra": 0j,
        "collision": 1j * b * _integrate(traj, lambda f: collision_pairing(J, f[k + 1], wb, he)),
    }
    return _report(J, comps, {"dt_snap": traj.spacing, "beta": beta, "eta": eta, "b": b})


# -- lemma checks -----------------------------------------------------------------------

@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    C: float | None = None

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else np.inf)

    @property
    def holds(self) -> bool:
        if self.C is None:
            raise PreconditionError("no frozen constant attached to this check")
        return self.lhs <= self.C * self.rhs


def smoothed_contraction_pairing(J: TestKernel, gamma: DensityMatrixK, beta1: float | None,
                                 beta2: float | None, j: int = 1) -> complex:
    """int J(X;X') d_b1(x'_{k+1} - x_{k+1}) d_b2(x_j - x_{k+1}) gamma(X, x_{k+1}; X', x'_{k+1}).

    None for a width selects the grid delta. ``j`` is 1-based.
    """
    grid = J.grid
    return _one_sided(J, gamma, _mollifier_samples(beta2, grid),
                      _mollifier_samples(beta1, grid), j - 1)


def _one_sided(J, gamma, w_flat, mollifier, j0) -> complex:
    # unprimed half of the collision primitive: drop the x'_j term by
    # evaluating with w on the unprimed side only
    k = J.k
    grid = J.grid
    n = grid.size
    L, R = J.left_vector(), J.right_vector()
    w2 = gamma.weight / grid.cell_volume
    if isinstance(gamma, FactorizedDensityMatrix):
        head = gamma.vector(k)
        s = _smooth(_tail(gamma, mollifier), w_flat, grid)
        LH, RH = (L * head).reshape((n,) * k), (R * head.conj()).reshape((n,) * k)
        return complex(w2**2 * _sum_times(LH, s, j0) * RH.sum())
    T = gamma.last_variable_contraction(mollifier)
    m = n**k
    Tt = T.reshape((n,) * (2 * k) + (n,))
    moved = np.moveaxis(Tt, j0, -2)
    U = np.moveaxis(_smooth_matrix(moved, w_flat, grid), -1, j0).reshape(m, m)
    return complex(w2**2 * (L @ U @ R))


def sobsob_bound_check(J: TestKernel, gamma: DensityMatrixK, beta1: float, beta2: float,
                       j: int = 1, C: float | None = None) -> BoundCheck:
    """Smoothed versus sharp diagonal contraction against its Sobolev bound.

    lhs = |<J, (d_b1 d_b2 - delta delta) gamma>|,
    rhs = (||J||_inf + ||grad_j J||_inf) (b1 + sqrt(b2)) Tr|S_j S_{k+1} gamma S_j S_{k+1}|.
    """
    k = gamma.k - 1
    if J.k != k:
        raise PreconditionError(f"kernel sector {J.k} does not match gamma sector {gamma.k} - 1")
    if not 1 <= j <= k:
        raise PreconditionError(f"j={j} must lie in 1..{k}")
    smooth = smoothed_contraction_pairing(J, gamma, beta1, beta2, j)
    sharp = smoothed_contraction_pairing(J, gamma, None, None, j)
    lhs = abs(smooth - sharp)
    b1 = beta1 or 0.0
    b2 = beta2 or 0.0
    jnorm = J.sup_norm() + J.grad_sup_norm(j - 1)
    rhs = jnorm * (b1 + np.sqrt(b2)) * sobolev_trace_norm(gamma, particles=(j, k + 1))
    return BoundCheck(lhs, rhs, C)


@dataclass
class GapReport:
    kernel_id: str
    gap: complex
    components: dict[str, complex]
    envelope: float
    sobolev_sup: float
    params: dict
    C: float | None = None

    @property
    def magnitude(self) -> float:
        return abs(self.gap)

    @property
    def ratio(self) -> float:
        return self.magnitude / self.envelope if self.envelope > 0 else np.inf

    @property
    def holds(self) -> bool:
        if self.C is None:
            raise PreconditionError("no frozen constant attached to this gap report")
        return self.magnitude <= self.C * self.envelope

    def as_dict(self) -> dict:
        return {"kernel": self.kernel_id, "gap": self.magnitude, "envelope": self.envelope,
                "ratio": self.ratio, "sobolev_sup": self.sobolev_sup,
                **{f"{n}": abs(c) for n, c in self.components.items()}, **self.params}


def bbgky_vs_gp_gap(traj: SnapshotTrajectory, J: TestKernel, cfg: ManyBodyConfig, b: float,
                    beta: float, eta: float | None = None, C: float | None = None) -> GapReport:
    """Distance between the simulated pairing and the delta_beta-regularized GP right side.

    gap = gp_residual(beta, eta) splits exactly into the BBGKY residual
    (time quadrature), the intra-sector term, the k/N collision correction,
    the finite-range term (V_a against b times the grid delta) and the
    mollifier-width term (grid delta against delta_beta).
    """
    _check_traj(traj, J)
    if traj.provenance != "simulation":
        raise PreconditionError("the gap compares against a simulated trajectory")
    k, N, a = J.k, cfg.N, cfg.a
    grid = traj.grid
    v = sample_scaled(cfg.scaled_potential, grid).values.ravel()
    wb = _mollifier_samples(beta, grid)
    he = _mollifier_samples(eta, grid)
    res_b = bbgky_residual(traj, J, cfg)
    intra = _integrate(traj, lambda f: intra_pairing(J, f[k], v))
    coll_v = _integrate(traj, lambda f: collision_pairing(J, f[k + 1], v))
    coll_sharp = _integrate(traj, lambda f: collision_pairing(J, f[k + 1], None))
    coll_beta = _integrate(traj, lambda f: collision_pairing(J, f[k + 1], wb, he))
    comps = {
        "quadrature": res_b.residual,
        "intra": -1j / N * intra,
        "finite_N": 1j * k / N * coll_v,
        "range": -1j * (coll_v - b * coll_sharp),
        "width": -1j * b * (coll_sharp - coll_beta),
    }
    gap = complex(sum(comps.values()))
    t = float(traj.times[-1] - traj.times[0])
    sob = traj.sobolev_sup(2)
    envelope = t * (k * np.sqrt(beta) + k * np.sqrt(a) + k**2 / (N * np.sqrt(a))) * sob
    return GapReport(J.label or "J", gap, comps, envelope, sob,
                     {"N": N, "a": a, "beta": beta, "eta": eta, "t": t}, C)


# -- trajectory builders --------------------------------------------------------------

def snapshot_times(T: float, spacing: float) -> np.ndarray:
    n = int(round(T / spacing))
    if n < 1 or abs(n * spacing - T) > 1e-9 * max(T, 1.0):
        raise PreconditionError(f"T = {T} is not a multiple of the snapshot spacing {spacing}")
    return np.linspace(0.0, T, n + 1)


def simulate_trajectory(cfg: ManyBodyConfig, psi0: ManyBodyState, T: float, spacing: float,
                        k_max: int = 2,
                        on_state: Callable[[ManyBodyState], None] | None = None) -> SnapshotTrajectory:
    """Propagate and reduce to sectors 1..k_max at every snapshot time.

    ``on_state`` sees the working buffer; copy it to keep the state.
    """
    times = snapshot_times(T, spacing)
    families = []
    for psi in snapshots(psi0, cfg, psi0.time + times):
        families.append(reduce_family(psi, k_max))
        if on_state is not None:
            on_state(psi)
    return SnapshotTrajectory(times, families, "simulation",
                              {"N": cfg.N, "a": cfg.a, "dt": cfg.dt, "config_hash": cfg.hash()})


def factorized_trajectory(phi0: FieldState, b: float, T: float, spacing: float, dt: float,
                          k_max: int = 2) -> tuple[SnapshotTrajectory, list[FieldState]]:
    """GP flow with tensor-power marginals at every snapshot time."""
    times = snapshot_times(T, spacing)
    fields = gp_trajectory(phi0, b, phi0.time + times, dt)
    fams = [factorized_family(f, k_max) for f in fields]
    return SnapshotTrajectory(times, fams, "factorized-GP", {"b": b, "dt": dt}), fields
