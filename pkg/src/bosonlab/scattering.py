"""Zero-energy two-body scattering in d = 3 and the effective coupling of (1/N) V_a.

The reduced pair problem for H = -Lap_1 - Lap_2 + W(x_1 - x_2) at zero
energy is ``-Lap f + (1/2) W f = 0``. The factor 1/2 comes from the
relative-coordinate kinetic energy -2 Lap_r and rescales a0 accordingly.
With u(r) = r f(r) and W = lam V this reads u'' = (lam/2) V(r) u.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from math import pi
from pathlib import Path

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import NumericalError, PreconditionError
from .potential import PotentialProfile, coupling_b

RTOL = 1e-12
# the deviation v = u - r is O(lam r^3), so the absolute floor must sit far below it
ATOL = 1e-24
FIT_POINTS = 32
CSV_COLUMNS = ("N", "a", "N*a0", "eff_coupling", "b", "rel_dev")


@dataclass(frozen=True)
class RadialProblem:
    profile: PotentialProfile
    lam: float = 1.0
    r_max: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise PreconditionError("coupling multiplier must be nonnegative")
        if self.r_max is not None and self.r_max < 4 * self.profile.R:
            raise PreconditionError("r_max must be at least 4R")

    @property
    def end(self) -> float:
        return 4 * self.profile.R if self.r_max is None else self.r_max


@dataclass
class RadialSolution:
    a0: float
    slope: float            # u'(r) for r > R
    fit_residual: float     # max deviation from the linear fit beyond R
    sol: object             # dense output of the deviation v = u - r on [0, R]

    def u(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return r + self.sol(r)[0]


def _rhs(profile: PotentialProfile, lam: float):
    def f(r, y):
        v, dv = y
        return [dv, 0.5 * lam * float(profile(r)) * (r + v)]
    return f


def solve_radial(p: RadialProblem) -> RadialSolution:
    """Integrate u'' = (lam/2) V u, u(0) = 0, u'(0) = 1 in the deviation form v = u - r."""
    prof = p.profile
    R = prof.R
    if p.lam == 0 or prof.v0 == 0:
        zero = lambda r: np.zeros((2,) + np.shape(r))  # noqa: E731
        return RadialSolution(0.0, 1.0, 0.0, zero)
    knots = sorted({0.0, R, *[b for b in prof.breakpoints if 0 < b < R]})
    pieces = []
    y = [0.0, 0.0]
    for lo, hi in zip(knots[:-1], knots[1:]):
        s = solve_ivp(_rhs(prof, p.lam), (lo, hi), y, method="DOP853", rtol=RTOL,
                      atol=ATOL, dense_output=True)
        if not s.success:
            raise NumericalError(f"radial integration failed: {s.message}")
        pieces.append((lo, hi, s.sol))
        y = s.y[:, -1]
    v_R, dv_R = float(y[0]), float(y[1])
    slope = 1.0 + dv_R

    def dense(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty((2, r.size))
        for i, ri in enumerate(r):
            if ri >= R:
                # V = 0 beyond R: u continues linearly
                out[:, i] = [v_R + dv_R * (ri - R), dv_R]
                continue
            for lo, hi, sol in pieces:
                if lo <= ri <= hi:
                    out[:, i] = sol(ri)
                    break
        return out

    # matching u = c (r - a0) at R in deviation form avoids cancellation for small a0
    a0 = (R * dv_R - v_R) / slope
    # beyond R the solution must be a straight line; integrate across the free
    # region and record how far it strays from the matched asymptote
    s = solve_ivp(lambda r, y: [y[1], 0.0], (R, p.end), [R + v_R, slope], method="DOP853",
                  rtol=RTOL, atol=1e-14, dense_output=True)
    rr = np.linspace(R, p.end, FIT_POINTS)
    uu = s.sol(rr)[0]
    resid = float(np.max(np.abs(slope * (rr - a0) - uu)) / max(abs(uu).max(), 1e-300))
    return RadialSolution(float(a0), float(slope), resid, dense)


def scattering_length(p: RadialProblem) -> float:
    """a0 from the linear asymptote u(r) = c (r - a0), r > R."""
    return solve_radial(p).a0


def square_well_length(lam: float, v0: float, R: float) -> float:
    """Closed form R - tanh(kappa R) / kappa, kappa = sqrt(lam v0 / 2)."""
    kappa = np.sqrt(lam * v0 / 2)
    if kappa == 0:
        return 0.0
    return float(R - np.tanh(kappa * R) / kappa)


def born_length(profile: PotentialProfile, lam: float) -> float:
    """First-order term lam * b / (8 pi)."""
    return lam * coupling_b(profile, 3) / (8 * pi)


def effective_coupling(profile: PotentialProfile, lam: float) -> float:
    """int V(s) f(s) ds in R^3 with f = u / (c r) normalized to 1 at infinity.

    By scaling this equals int V_a (1 - w) for W = (1/N) V_a when lam = 1/(N a).
    """
    if profile.v0 == 0:
        return 0.0
    sol = solve_radial(RadialProblem(profile, lam))
    R = profile.R

    def integrand(s):
        return s * float(profile(s)) * float(sol.u(s)[0]) / sol.slope

    pts = [b for b in profile.breakpoints if 0 < b < R]
    val, _ = quad(integrand, 0.0, R, epsabs=0.0, epsrel=1e-11, limit=400, points=pts or None)
    return 4 * pi * val


@dataclass
class FlowRow:
    N: int
    a: float
    N_a0: float
    eff_coupling: float
    b: float

    @property
    def rel_dev(self) -> float:
        """Relative deviation of N a0 from b / (8 pi)."""
        target = self.b / (8 * pi)
        return abs(self.N_a0 - target) / target if target else 0.0

    def as_row(self) -> list:
        return [self.N, self.a, self.N_a0, self.eff_coupling, self.b, self.rel_dev]


def coupling_flow(profile: PotentialProfile, epsilon: float, N_list) -> list[FlowRow]:
    """For each N: a = N^-eps, N a0((1/N) V_a) and int V_a (1 - w).

    Rescaling r = a s turns the pair problem for (1/N) V_a into the unit-range
    problem with lam = 1/(N a), and a0((1/N) V_a) = a * a0(lam).
    """
    if not 0 < epsilon < 1:
        raise PreconditionError("epsilon must lie in (0, 1)")
    N_list = list(N_list)
    if any(n2 <= n1 for n1, n2 in zip(N_list, N_list[1:])) or N_list[0] < 1:
        raise PreconditionError("N_list must be ascending positive integers")
    b = coupling_b(profile, 3)
    rows = []
    for N in N_list:
        a = float(N) ** (-epsilon)
        lam = 1.0 / (N * a)
        a0 = a * scattering_length(RadialProblem(profile, lam))
        rows.append(FlowRow(int(N), a, N * a0, effective_coupling(profile, lam), b))
    return rows


def fit_inverse_na(rows: list[FlowRow]) -> tuple[float, float, float]:
    """Least-squares fit of b - eff_coupling = slope / (N a) + intercept.

    Returns (slope, intercept, standard error of the intercept).
    """
    x = np.array([1.0 / (r.N * r.a) for r in rows])
    y = np.array([r.b - r.eff_coupling for r in rows])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(len(x) - 2, 1)
    s2 = float(res[0]) / dof if res.size else 0.0
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(coef[1]), float(np.sqrt(cov[1, 1]))


def write_flow_csv(rows: list[FlowRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_row()])
    return path
