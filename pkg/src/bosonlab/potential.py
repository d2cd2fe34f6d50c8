"""Interaction profiles, their scaling V_a(x) = a^-d V(x/a), mollifiers and test kernels."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma as gamma_fn
from math import pi

import numpy as np
from scipy.integrate import quad

from .errors import PreconditionError
from .lattice import (
    Grid,
    GridFunction,
    distance_from_origin,
    forward,
    gradient_norm_sq,
    inverse,
    laplacian_symbol,
    make_grid,
)

PROFILE_KINDS = ("bump", "square_well", "tabulated")


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2, 2 pi, 4 pi for d = 1, 2, 3)."""
    return 2 * pi ** (d / 2) / gamma_fn(d / 2)


def ball_volume(d: int, r: float) -> float:
    return sphere_area(d) * r**d / d


@dataclass(frozen=True)
class PotentialProfile:
    """Radial, nonnegative, compactly supported pair potential V(|x|).

    ``kind="bump"`` is the smooth canonical profile
    ``v0 * exp(-1 / (1 - (r/R)^2))`` for r < R. ``square_well`` is constant
    ``v0`` on r < R and is meant for the scattering oracle only.
    ``tabulated`` interpolates ``table = ((r0, V0), (r1, V1), ...)``
    linearly and vanishes past the last radius.
    """

    kind: str = "bump"
    v0: float = 1.0
    R: float = 0.25
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise PreconditionError(f"unknown profile kind {self.kind!r}")
        if self.kind == "tabulated":
            if not self.table or len(self.table) < 2:
                raise PreconditionError("tabulated profile needs at least two (r, V) rows")
            r, v = np.asarray(self.table, dtype=float).T
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise PreconditionError("tabulated radii must be increasing and >= 0")
            if np.any(v < 0):
                raise PreconditionError("potential must be nonnegative")
            object.__setattr__(self, "R", float(r[-1]))
        if self.v0 < 0:
            raise PreconditionError("potential must be nonnegative")
        if not 0 < self.R < 0.5:
            raise PreconditionError(f"support radius must lie in (0, 1/2), got {self.R}")

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        out = np.zeros_like(r)
        inside = r < self.R
        if self.kind == "bump":
            u2 = (r[inside] / self.R) ** 2
            out[inside] = self.v0 * np.exp(-1.0 / (1.0 - u2))
        elif self.kind == "square_well":
            out[inside] = self.v0
        else:
            rt, vt = np.asarray(self.table, dtype=float).T
            out[inside] = self.v0 * np.interp(r[inside], rt, vt)
        return out

    @property
    def breakpoints(self) -> list[float]:
        if self.kind == "tabulated":
            return [float(r) for r, _ in self.table]
        return [self.R]


def _radial_integral(func, profile: PotentialProfile, d: int) -> float:
    """Integral over R^d of func(V(|x|)) by adaptive radial quadrature."""

    def integrand(r):
        return r ** (d - 1) * func(float(profile(r)))

    pts = [p for p in profile.breakpoints if 0 < p < profile.R]
    val, _ = quad(integrand, 0.0, profile.R, epsabs=0.0, epsrel=1e-12, limit=400,
                  points=pts or None)
    return sphere_area(d) * val


def coupling_b(profile: PotentialProfile, d: int) -> float:
    """b = integral of V over R^d."""
    if profile.v0 == 0:
        return 0.0
    return _radial_integral(lambda v: v, profile, d)


def lp_norm(profile: PotentialProfile, p: float, d: int = 3) -> float:
    if profile.v0 == 0:
        return 0.0
    return _radial_integral(lambda v: abs(v) ** p, profile, d) ** (1.0 / p)


@dataclass(frozen=True)
class ScaledPotential:
    profile: PotentialProfile
    a: float
    d: int

    def __post_init__(self):
        if self.a <= 0:
            raise PreconditionError("range parameter a must be positive")
        if self.a * self.profile.R >= 0.5:
            raise PreconditionError("scaled support would overlap its periodic image")

    def __call__(self, r) -> np.ndarray:
        return self.a ** (-self.d) * self.profile(np.asarray(r) / self.a)

    @property
    def support(self) -> float:
        return self.a * self.profile.R


def check_resolution(a: float, M: int) -> None:
    if a * M < 4:
        raise PreconditionError(
            f"under-resolved potential: a*M = {a * M:.3g} < 4; increase M or a"
        )


def sample_scaled(sp: ScaledPotential, grid: Grid) -> GridFunction:
    """Periodic wrap of a^-d V(x/a) at the lattice points."""
    if sp.d != grid.d:
        raise PreconditionError("potential and grid dimensions differ")
    check_resolution(sp.a, grid.M)
    return GridFunction(grid, sp(distance_from_origin(grid)))


def pair_matrix(values: GridFunction) -> np.ndarray:
    """Matrix W[x, y] = w(x - y) over flat lattice indices, for an even function w."""
    flat = values.values.ravel()
    return flat[values.grid.displacement_index()]


@dataclass(frozen=True)
class Mollifier:
    """Normalized ball indicator delta_beta(x) = |B_beta|^-1 chi(|x| <= beta)."""

    beta: float
    d: int

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        return np.where(r <= self.beta, 1.0 / ball_volume(self.d, self.beta), 0.0)


def sample_mollifier(m: Mollifier, grid: Grid) -> GridFunction:
    """Discrete ball indicator renormalized to unit lattice integral."""
    if m.d != grid.d:
        raise PreconditionError("mollifier and grid dimensions differ")
    if m.beta * grid.M < 2:
        raise PreconditionError(f"mollifier width beta*M = {m.beta * grid.M:.3g} < 2")
    idx = np.indices(grid.shape)
    wrapped = (idx + grid.M // 2) % grid.M - grid.M // 2
    r2_cells = np.sum(wrapped.astype(float) ** 2, axis=0)
    chi = (r2_cells <= (m.beta * grid.M) ** 2 * (1 + 1e-12)).astype(float)
    return GridFunction(grid, chi / (chi.sum() * grid.cell_volume))


# -- test kernels -------------------------------------------------------------

def trig_factor(grid: Grid, name: str) -> GridFunction:
    """Low-mode trigonometric factor depending on the first coordinate."""
    x = grid.coordinates()[0]
    table = {
        "1": np.ones_like(x),
        "cos1": np.cos(2 * pi * x),
        "sin1": np.sin(2 * pi * x),
        "cos2": np.cos(4 * pi * x),
    }
    if name not in table:
        raise PreconditionError(f"unknown kernel factor {name!r}")
    return GridFunction(grid, np.broadcast_to(table[name], grid.shape).astype(complex))


@dataclass
class TestKernel:
    """Rank-one kernel J(X; X') = scale * prod_j g_j(x_j) * prod_j conj(g'_j(x'_j))."""

    k: int
    left: tuple[GridFunction, ...]
    right: tuple[GridFunction, ...]
    scale: float = 1.0
    label: str = ""
    factor_names: tuple[str, ...] = field(default=(), repr=False)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if len(self.left) != self.k or len(self.right) != self.k:
            raise PreconditionError("a sector-k kernel needs k left and k right factors")

    @property
    def grid(self) -> Grid:
        return self.left[0].grid

    @staticmethod
    def _tensor(factors) -> np.ndarray:
        out = np.ones(1, dtype=complex)
        for g in factors:
            out = np.multiply.outer(out, g.values.ravel()).ravel()
        return out

    def left_vector(self) -> np.ndarray:
        return self.scale * self._tensor(self.left)

    def right_vector(self) -> np.ndarray:
        """conj of the primed factor product, so that J = outer(left, right)."""
        return np.conj(self._tensor(self.right))

    def dense(self) -> np.ndarray:
        return np.outer(self.left_vector(), self.right_vector())

    def l2_norm(self) -> float:
        return self.scale * float(np.prod([g.norm() for g in self.left + self.right]))

    def sup_norm(self) -> float:
        return self.scale * float(
            np.prod([np.abs(g.values).max() for g in self.left + self.right])
        )

    def grad_sup_norm(self, j: int = 0) -> float:
        """sup |grad_{x_j} J|, derivative of factor j taken spectrally."""
        grid = self.grid
        g = self.left[j]
        c = forward(g.values)
        dmax = 0.0
        modes = grid.modes()
        for axis in range(grid.d):
            shape = [1] * grid.d
            shape[axis] = grid.M
            deriv = inverse(2j * pi * modes.reshape(shape) * c)
            dmax = max(dmax, float(np.abs(deriv).max()))
        others = [np.abs(h.values).max() for i, h in enumerate(self.left) if i != j]
        others += [np.abs(h.values).max() for h in self.right]
        return self.scale * dmax * float(np.prod(others))

    @classmethod
    def zero(cls, grid: Grid, k: int = 1) -> "TestKernel":
        z = GridFunction(grid, np.zeros(grid.shape, dtype=complex))
        return cls(k, (z,) * k, (z,) * k, 1.0, "zero")


# fixed enumeration order of the rho-metric family
KERNEL_CATALOG: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...] = (
    (("1",), ("1",)),
    (("cos1",), ("1",)),
    (("cos1",), ("cos1",)),
    (("sin1",), ("sin1",)),
    (("cos2",), ("cos1",)),
    (("1", "1"), ("1", "1")),
    (("cos1", "1"), ("cos1", "1")),
    (("cos1", "cos1"), ("cos2", "1")),
    (("sin1",), ("cos1",)),
    (("cos2",), ("cos2",)),
    (("sin1", "1"), ("sin1", "1")),
    (("cos2", "1"), ("1", "cos2")),
)


def make_kernel(grid: Grid, left: tuple[str, ...], right: tuple[str, ...],
                label: str = "") -> TestKernel:
    """Kernel from named factors, scaled so that ||J||_2 = 2^-k."""
    k = len(left)
    J = TestKernel(k, tuple(trig_factor(grid, n) for n in left),
                   tuple(trig_factor(grid, n) for n in right), 1.0, label,
                   factor_names=left + right)
    J.scale = 2.0 ** (-k) / J.l2_norm()
    return J


def kernel_family(grid: Grid, size: int = 8, sectors=(1, 2)) -> list[TestKernel]:
    """First ``size`` kernels of the catalog, labelled J1, J2, ... in order.

    Kernels outside ``sectors`` are skipped but keep their catalog label.
    """
    if not 1 <= size <= len(KERNEL_CATALOG):
        raise PreconditionError(f"kernel family size must be in 1..{len(KERNEL_CATALOG)}")
    out = []
    for i, (left, right) in enumerate(KERNEL_CATALOG[:size], start=1):
        if len(left) in sectors:
            out.append(make_kernel(grid, left, right, label=f"J{i}"))
    return out


def kernel_index(J: TestKernel) -> int:
    return int(J.label[1:]) if J.label.startswith("J") else 0


# -- Sobolev-type inequality checks (d = 3) ------------------------------------

def random_band_limited(grid: Grid, rng: np.random.Generator, cutoff: int = 2) -> GridFunction:
    """Normalized random function with Fourier support in |k_i| <= cutoff."""
    modes = grid.modes()
    mask = np.ones(grid.shape, dtype=bool)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.M
        mask = mask & (np.abs(modes).reshape(shape) <= cutoff)
    c = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * mask
    f = GridFunction(grid, inverse(c))
    f.values /= f.norm()
    return f


def sobolev_ratio(psi: GridFunction, profile: PotentialProfile, a: float) -> float:
    """[int |psi|^2 a^-2 V(x/a)] / [||V||_{3/2} (||grad psi||^2 + ||psi||^2)^(1/2)]."""
    grid = psi.grid
    v32 = lp_norm(profile, 1.5, d=3)
    if v32 == 0:
        return 0.0
    va = sample_scaled(ScaledPotential(profile, a, 3), grid).values
    num = a * grid.cell_volume * float(np.sum(np.abs(psi.values) ** 2 * va))
    den = v32 * np.sqrt(gradient_norm_sq(psi) + psi.norm() ** 2)
    return num / den


def sobolev_inequality_check(profile: PotentialProfile, a: float, trials: int = 50,
                             M: int = 16, seed: int = 0, cutoff: int = 2) -> float:
    """Worst ratio of the one-body Sobolev inequality over random band-limited states."""
    if M < 16:
        raise PreconditionError("single-particle grid must have M >= 16")
    grid = make_grid(3, M)
    check_resolution(a, M)
    rng = np.random.default_rng(seed)
    return max(sobolev_ratio(random_band_limited(grid, rng, cutoff), profile, a)
               for _ in range(trials))


def pair_operator_ratio(profile: PotentialProfile, a: float, M: int = 8, trials: int = 20,
                        seed: int = 0, cutoff: int = 2) -> float:
    """Largest Rayleigh ratio <W> / (||V||_1 <(1 - Lap_x)(1 - Lap_y)>) for two particles in d = 3.

    W is the pair operator a^-3 V((x - y)/a).
    """
    grid = make_grid(3, M)
    check_resolution(a, M)
    v1 = coupling_b(profile, 3)
    if v1 == 0:
        return 0.0
    w = pair_matrix(sample_scaled(ScaledPotential(profile, a, 3), grid))
    s2 = (1.0 + laplacian_symbol(grid)).ravel()
    weight = np.multiply.outer(s2, s2)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        f = random_band_limited(grid, rng, cutoff).values.ravel()
        g = random_band_limited(grid, rng, cutoff).values.ravel()
        psi = np.outer(f, g) + np.outer(g, f)
        num = np.sum(w * np.abs(psi) ** 2)
        c = forward(psi.reshape(grid.shape * 2)).reshape(psi.shape)
        den = v1 * np.sum(weight * np.abs(c) ** 2) * grid.size**2
        worst = max(worst, float(num / den))
    return worst
