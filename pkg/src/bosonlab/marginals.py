"""Reduced density matrices gamma^(k) and the norms and metrics used on them.

A kernel gamma(X; X') is stored as a square matrix over flat k-particle
lattice indices. The operator it represents acts as
``(gamma f)(X) = cell^k sum_X' gamma(X; X') f(X')``, so spectral quantities
are computed from the weighted matrix ``cell^k * kernel``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import PreconditionError
from .lattice import Grid, sobolev_symbol
from .manybody import ManyBodyState
from .potential import Mollifier, TestKernel, kernel_index, sample_mollifier

MAX_SECTOR = 2
_CHUNK = 4096


@dataclass
class DensityMatrixK:
    grid: Grid
    k: int
    kernel: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = self.grid.size**self.k
        if self.kernel.shape != (n, n):
            raise PreconditionError(f"sector-{self.k} kernel must be {n}x{n}")

    @property
    def weight(self) -> float:
        return self.grid.cell_volume**self.k

    def operator(self) -> np.ndarray:
        return self.weight * self.kernel

    def trace(self) -> float:
        return float(self.weight * np.trace(self.kernel).real)

    def hs_norm(self) -> float:
        return float(self.weight * np.linalg.norm(self.kernel))

    def eigenvalues(self) -> np.ndarray:
        op = self.operator()
        return np.linalg.eigvalsh(0.5 * (op + op.conj().T))

    def tensor(self) -> np.ndarray:
        """Kernel reshaped to (n,)*k + (n,)*k with n = M^d."""
        n = self.grid.size
        return self.kernel.reshape((n,) * (2 * self.k))

    def last_variable_contraction(self, mollifier: np.ndarray | None = None) -> np.ndarray:
        """T[X, X', y] for the last particle of this sector.

        Without a mollifier this is the diagonal restriction
        gamma(X, y; X', y). With a sampled mollifier m it is
        cell * sum_y' m(y - y') gamma(X, y; X', y').
        """
        n = self.grid.size
        m = n ** (self.k - 1)
        g = self.kernel.reshape(m, n, m, n)
        if mollifier is None:
            return _diag_last(g)
        conv = _convolve_last(g, mollifier, self.grid)
        return _diag_last(conv)

    def copy(self) -> "DensityMatrixK":
        return DensityMatrixK(self.grid, self.k, self.kernel.copy(), self.time)


def _diag_last(g: np.ndarray) -> np.ndarray:
    """g[a, y, b, z] -> out[a, b, y] with z = y."""
    return np.einsum("ayby->aby", g)


def _convolve_last(g: np.ndarray, mollifier: np.ndarray, grid: Grid) -> np.ndarray:
    """Circular convolution of the last (primed) variable with a sampled mollifier."""
    m, n = g.shape[0], g.shape[1]
    shape = (m, n, m) + grid.shape
    axes = tuple(range(3, 3 + grid.d))
    mh = sfft.fftn(np.asarray(mollifier).reshape(grid.shape))
    gh = sfft.fftn(g.reshape(shape), axes=axes)
    gh *= mh.reshape((1, 1, 1) + grid.shape)
    out = sfft.ifftn(gh, axes=axes, overwrite_x=True) * grid.cell_volume
    return out.reshape(m, n, m, n)


class FactorizedDensityMatrix(DensityMatrixK):
    """k-fold tensor power of |phi><phi|, with the dense kernel built on demand."""

    def __init__(self, phi, k: int, time: float = 0.0):
        self.grid = phi.grid
        self.k = k
        self.time = time
        self.phi = np.asarray(phi.values).ravel().astype(complex)
        self._kernel = None

    @property
    def kernel(self) -> np.ndarray:
        if self._kernel is None:
            v = self.vector()
            self._kernel = np.outer(v, v.conj())
        return self._kernel

    def vector(self, k: int | None = None) -> np.ndarray:
        out = np.ones(1, dtype=complex)
        for _ in range(self.k if k is None else k):
            out = np.multiply.outer(out, self.phi).ravel()
        return out

    def trace(self) -> float:
        return float(self.weight * np.vdot(self.vector(), self.vector()).real)

    def hs_norm(self) -> float:
        return self.trace()

    def last_variable_contraction(self, mollifier: np.ndarray | None = None) -> np.ndarray:
        head = self.vector(self.k - 1)
        phi = self.phi
        if mollifier is None:
            tail = np.abs(phi) ** 2
        else:
            grid = self.grid
            mh = sfft.fftn(np.asarray(mollifier).reshape(grid.shape))
            sm = sfft.ifftn(mh * sfft.fftn(phi.conj().reshape(grid.shape))) * grid.cell_volume
            tail = phi * sm.ravel()
        return np.einsum("a,b,y->aby", head, head.conj(), tail)

    def copy(self) -> "FactorizedDensityMatrix":
        from .lattice import GridFunction
        return FactorizedDensityMatrix(GridFunction(self.grid, self.phi.copy()), self.k, self.time)


@dataclass
class MarginalFamily:
    sectors: dict[int, DensityMatrixK] = field(default_factory=dict)

    @property
    def k_max(self) -> int:
        return max(self.sectors)

    @property
    def grid(self) -> Grid:
        return next(iter(self.sectors.values())).grid

    def __getitem__(self, k: int) -> DensityMatrixK:
        return self.sectors[k]


def reduce(psi: ManyBodyState, k: int) -> DensityMatrixK:
    """k-particle marginal of the pure state |psi><psi|."""
    if not 1 <= k <= psi.N:
        raise PreconditionError(f"sector k={k} must lie in 1..N={psi.N}")
    if k > MAX_SECTOR and k != psi.N:
        raise PreconditionError(f"sectors above {MAX_SECTOR} are not supported")
    n = psi.grid.size**k
    A = psi.values.reshape(n, -1)
    G = np.zeros((n, n), dtype=complex)
    for s in range(0, A.shape[1], _CHUNK):
        B = A[:, s:s + _CHUNK]
        G += B @ B.conj().T
    G *= psi.grid.cell_volume ** (psi.N - k)
    G = 0.5 * (G + G.conj().T)
    return DensityMatrixK(psi.grid, k, G, psi.time)


def reduce_family(psi: ManyBodyState, k_max: int = 2) -> MarginalFamily:
    return MarginalFamily({k: reduce(psi, k) for k in range(1, min(k_max, psi.N) + 1)})


def partial_trace(gamma: DensityMatrixK) -> DensityMatrixK:
    """Trace out the last particle of a sector-k kernel."""
    if gamma.k < 2:
        raise PreconditionError("partial trace needs k >= 2")
    n = gamma.grid.size
    m = n ** (gamma.k - 1)
    g = gamma.kernel.reshape(m, n, m, n)
    out = np.einsum("ayby->ab", g) * gamma.grid.cell_volume
    return DensityMatrixK(gamma.grid, gamma.k - 1, out, gamma.time)


def invariant_report(gamma: DensityMatrixK) -> dict[str, float]:
    """Deviations from Hermiticity, positivity, unit trace and bosonic symmetry."""
    op = gamma.operator()
    ev = np.linalg.eigvalsh(0.5 * (op + op.conj().T))
    scale = max(float(np.abs(ev).max()), 1e-300)
    out = {
        "hermiticity": float(np.abs(op - op.conj().T).max() / scale),
        "min_eigenvalue": float(min(ev.min(), 0.0) / scale),
        "trace_error": abs(gamma.trace() - 1.0),
        "symmetry": 0.0,
    }
    if gamma.k == 2:
        t = gamma.tensor()
        out["symmetry"] = float(np.abs(t - t.transpose(1, 0, 3, 2)).max() * gamma.weight / scale)
    return out


def check_invariants(gamma: DensityMatrixK, tol: float = 1e-9) -> bool:
    r = invariant_report(gamma)
    return (r["hermiticity"] <= 1e-10 and -r["min_eigenvalue"] <= tol
            and r["trace_error"] <= tol and r["symmetry"] <= 1e-10)


def trace_distance(gamma: DensityMatrixK, sigma: DensityMatrixK) -> float:
    """(1/2) Tr |gamma - sigma|."""
    if gamma.grid != sigma.grid or gamma.k != sigma.k:
        raise PreconditionError("trace distance between different sectors or grids")
    diff = gamma.operator() - sigma.operator()
    ev = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(0.5 * np.sum(np.abs(ev)))


def _to_momentum(gamma: DensityMatrixK) -> np.ndarray:
    """Weighted operator matrix in the orthonormal plane-wave basis."""
    grid, k = gamma.grid, gamma.k
    t = gamma.operator().reshape(grid.shape * (2 * k))
    nax = grid.d * k
    t = sfft.fftn(t, axes=tuple(range(nax)), norm="ortho")
    t = sfft.ifftn(t, axes=tuple(range(nax, 2 * nax)), norm="ortho", overwrite_x=True)
    n = grid.size**k
    return t.reshape(n, n)


def sobolev_trace_norm(gamma: DensityMatrixK, particles=None) -> float:
    """Tr |S_1 ... S_k gamma S_k ... S_1| with S = (1 - Lap)^(1/2).

    ``particles`` (1-based) restricts the weights to a subset of variables.
    """
    if gamma.k > MAX_SECTOR:
        raise PreconditionError(f"sectors above {MAX_SECTOR} are not supported")
    chosen = set(range(1, gamma.k + 1) if particles is None else particles)
    if not chosen <= set(range(1, gamma.k + 1)):
        raise PreconditionError(f"particles {sorted(chosen)} outside 1..{gamma.k}")
    s = sobolev_symbol(gamma.grid).ravel()
    if isinstance(gamma, FactorizedDensityMatrix):
        c = sfft.fftn(gamma.phi.reshape(gamma.grid.shape), norm="ortho").ravel()
        w = gamma.grid.cell_volume
        one = w * float(np.sum(s**2 * np.abs(c) ** 2))
        mass = w * float(np.sum(np.abs(c) ** 2))
        return one ** len(chosen) * mass ** (gamma.k - len(chosen))
    sk = np.ones(1)
    for j in range(1, gamma.k + 1):
        sk = np.multiply.outer(sk, s if j in chosen else np.ones_like(s)).ravel()
    g = _to_momentum(gamma) * np.multiply.outer(sk, sk)
    ev = np.linalg.eigvalsh(0.5 * (g + g.conj().T))
    return float(np.sum(np.abs(ev)))


def pairing(J: TestKernel, gamma: DensityMatrixK, conjugate: bool = False) -> complex:
    """<J, gamma> = int J(X; X') gamma(X; X') dX dX' (or with conj(J))."""
    if J.k != gamma.k or J.grid != gamma.grid:
        raise PreconditionError("kernel and density matrix live on different sectors")
    left, right = J.left_vector(), J.right_vector()
    if conjugate:
        left, right = left.conj(), right.conj()
    if isinstance(gamma, FactorizedDensityMatrix):
        v = gamma.vector()
        val = (left @ v) * (right @ v.conj())
    else:
        val = left @ gamma.kernel @ right
    return complex(gamma.weight**2 * val)


def hminus_norm(family: MarginalFamily) -> float:
    """sum_k 2^-k ||gamma^(k)||_2 over the stored sectors."""
    return float(sum(2.0 ** (-k) * g.hs_norm() for k, g in family.sectors.items()))


def rho_metric(fam: MarginalFamily, other: MarginalFamily, kernels: list[TestKernel]) -> float:
    """sum_i 2^-i |<J_i, gamma^(k_i) - gamma'^(k_i)>| over a finite kernel family."""
    if fam.grid != other.grid or set(fam.sectors) != set(other.sectors):
        raise PreconditionError("families differ in grid or sectors")
    total = 0.0
    for pos, J in enumerate(kernels, start=1):
        if J.k not in fam.sectors:
            raise PreconditionError(f"kernel {J.label} needs sector {J.k}, not stored")
        i = kernel_index(J) or pos
        diff = pairing(J, fam[J.k], conjugate=True) - pairing(J, other[J.k], conjugate=True)
        total += 2.0 ** (-i) * abs(diff)
    return total


def regularized_contraction(gamma: DensityMatrixK, j: int, r: float, r_prime: float) -> DensityMatrixK:
    """Kernel over (X; X') of int h_r(x'_{k+1} - x_{k+1}) h_r'(x_{k+1} - x_j) gamma.

    ``gamma`` is a sector-(k+1) kernel; ``j`` is 1-based and must be <= k.
    The result is a sector-k kernel approximating gamma(X, x_j; X', x_j).
    """
    k = gamma.k - 1
    if not 1 <= j <= k:
        raise PreconditionError(f"j={j} must lie in 1..{k}")
    grid = gamma.grid
    h_r = sample_mollifier(Mollifier(r, grid.d), grid).values
    h_rp = sample_mollifier(Mollifier(r_prime, grid.d), grid).values.ravel()
    T = gamma.last_variable_contraction(h_r)
    return DensityMatrixK(grid, k, contract_at_particle(T, h_rp, j, grid, k), gamma.time)


def contract_at_particle(T: np.ndarray, h: np.ndarray | None, j: int, grid: Grid, k: int) -> np.ndarray:
    """R[X, X'] = cell * sum_y h(y - x_j) T[X, X', y]; sharp (h=None) picks y = x_j."""
    n = grid.size
    t = T.reshape((n,) * (2 * k) + (n,))
    if h is None:
        kern = np.eye(n) / grid.cell_volume
    else:
        kern = h[grid.displacement_index()]
    letters = "abcdefghij"
    X, Xp = letters[:k], letters[k:2 * k]
    out = np.einsum(f"{X}{Xp}y,{X[j - 1]}y->{X}{Xp}", t, kern) * grid.cell_volume
    m = n**k
    return out.reshape(m, m)


def export_kernel(gamma: DensityMatrixK, path: str | Path, config_hash: str = "") -> Path:
    """Binary little-endian complex128 dump plus JSON sidecar."""
    path = Path(path)
    gamma.kernel.astype("<c16").tofile(path)
    meta = {"k": gamma.k, "M": gamma.grid.M, "d": gamma.grid.d, "time": gamma.time,
            "shape": list(gamma.kernel.shape), "dtype": "complex128",
            "config_hash": config_hash}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))
    return path


def load_kernel(path: str | Path) -> DensityMatrixK:
    from .lattice import make_grid
    meta = json.loads(Path(str(path) + ".json").read_text())
    kern = np.fromfile(path, dtype="<c16").reshape(meta["shape"])
    return DensityMatrixK(make_grid(meta["d"], meta["M"]), meta["k"], kern, meta["time"])
