"""Acceptance criteria G1-G9 at their stated tolerances.

Each test records its sub-checks through the ``criterion`` fixture; the
terminal summary prints one PASS/FAIL line per criterion. Criteria that fail
on this implementation are left failing: see the project notes for the
analysis of each.
"""
import math
import resource
import time

import numpy as np
import pytest

from bosonlab import calibration
from bosonlab.config import ExperimentConfig
from bosonlab.gp import FieldState
from bosonlab.hierarchy import (bbgky_residual, factorized_trajectory, gp_residual,
                                simulate_trajectory, sobsob_bound_check)
from bosonlab.lattice import GridFunction, inverse, make_grid
from bosonlab.manybody import (ManyBodyConfig, build_product_state, default_initial_field,
                               dense_hamiltonian, dense_propagate, distance, energy_moments,
                               evolve, propagate)
from bosonlab.marginals import (FactorizedDensityMatrix, check_invariants, hminus_norm,
                                partial_trace, reduce_family)
from bosonlab.potential import PotentialProfile, coupling_b, kernel_family
from bosonlab.scattering import (RadialProblem, coupling_flow, fit_inverse_na,
                                 scattering_length, square_well_length)
from bosonlab.sweep import emit_plots, run_sweep

# -- pinned tolerances ------------------------------------------------------------------
G1_ERR_TOL = 1e-4
G1_RATIO, G1_RATIO_SLACK = 4.0, 0.10
G1_RUNTIME = 10.0
G2_NORM_TOL = 1e-9
G2_SYM_TOL = 1e-9
G2_ORDER, G2_ORDER_SLACK = 2.0, 0.3
G2_RUNTIME = 120.0
G3_TOL = 1e-9
G3_UNIT_BALL = 1.0 + 1e-12
G4_CONTROL_FACTOR = 10.0
G4_RUNTIME = 120.0
G5_REL_TOL = 1e-3
G5_SHRINK = 3.0
G5_RUNTIME = 300.0
G6_SLACK = 0.10
G6_DROP = 0.7
G6_RUNTIME = 30 * 60.0
G6_MEMORY = 2 * 1024**3
G7_GROWTH = 2.0
G8_WELL_TOL = 1e-8
G8_DEV_TOL = 0.05
G8_INTERCEPT_FRAC = 0.01
G8_RUNTIME = 30.0

# frozen after the first verified sweep (d=1, M=32, eps=0.4, T=0.1, bump)
G6_TRACE_DISTANCE = {2: 0.0018519064294168193, 3: 0.0012959987675414267,
                     4: 0.0010112327377824314, 5: 0.0008165170868533443}
G6_FREEZE_RTOL = 1e-6

BUMP = PotentialProfile()


# -- G1 -------------------------------------------------------------------------------------

def test_g1_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    cfg = ManyBodyConfig(N=2, a=1 / 4, M=16, dt=1e-3)
    psi0 = build_product_state(default_initial_field(cfg.grid), 2)
    exact = dense_propagate(psi0, cfg, 0.5, dense_hamiltonian(cfg))
    errs = {dt: distance(propagate(psi0, ManyBodyConfig(N=2, a=1 / 4, M=16, dt=dt), 0.5), exact)
            for dt in (1e-3, 5e-4)}
    elapsed = time.perf_counter() - t0
    ratio = errs[1e-3] / errs[5e-4]
    ok_err = criterion("G1", "L2 error at dt=1e-3", errs[1e-3] <= G1_ERR_TOL,
                       f"{errs[1e-3]:.3e} <= {G1_ERR_TOL:g}")
    ok_ratio = criterion("G1", "halving ratio", abs(ratio / G1_RATIO - 1) <= G1_RATIO_SLACK,
                         f"{ratio:.3f} vs 4 +/- 10%")
    ok_time = criterion("G1", "runtime", elapsed < G1_RUNTIME, f"{elapsed:.1f}s")
    assert ok_err and ok_time
    assert ok_ratio, f"halving ratio {ratio:.3f} outside 4 +/- 10% (pre-asymptotic, see notes)"


def test_g1_asymptotic_order_diagnostic():
    # not a criterion: the ratio settles at 4 once dt is halved further
    cfg = ManyBodyConfig(N=2, a=1 / 4, M=16)
    psi0 = build_product_state(default_initial_field(cfg.grid), 2)
    exact = dense_propagate(psi0, cfg, 0.5)
    errs = [distance(propagate(psi0, ManyBodyConfig(N=2, a=1 / 4, M=16, dt=dt), 0.5), exact)
            for dt in (1e-3, 5e-4, 2.5e-4, 1.25e-4)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert abs(ratios[-1] - 4) < 0.2
    assert np.all(np.diff(ratios) < 0)


# -- G2 / G3 ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def g2_run():
    t0 = time.perf_counter()
    cfg = ManyBodyConfig.from_epsilon(3, 0.4, M=32, dt=1e-3)
    psi0 = build_product_state(default_initial_field(cfg.grid), 3)
    out = {"norm": 0.0, "sym": 0.0, "families": []}
    for psi in evolve(psi0, cfg, np.linspace(0.0, 1.0, 11)):
        out["norm"] = max(out["norm"], abs(psi.norm() - 1))
        out["sym"] = max(out["sym"], psi.symmetry_residual())
        out["families"].append(reduce_family(psi, 2))
    drifts = {}
    for dt in (1e-3, 5e-4, 2.5e-4):
        c = ManyBodyConfig.from_epsilon(3, 0.4, M=32, dt=dt)
        e0 = energy_moments(psi0, c, 1)[1]
        drifts[dt] = max(abs(energy_moments(s, c, 1)[1] - e0)
                         for s in evolve(psi0, c, np.linspace(0.1, 1.0, 10)))
    out["drifts"] = drifts
    out["elapsed"] = time.perf_counter() - t0
    return out


def test_g2_conservation(g2_run, criterion):
    d = g2_run["drifts"]
    orders = [math.log2(d[1e-3] / d[5e-4]), math.log2(d[5e-4] / d[2.5e-4])]
    checks = [
        criterion("G2", "norm drift", g2_run["norm"] <= G2_NORM_TOL, f"{g2_run['norm']:.1e}"),
        criterion("G2", "symmetry", g2_run["sym"] <= G2_SYM_TOL, f"{g2_run['sym']:.1e}"),
        criterion("G2", "energy drift order",
                  all(abs(o - G2_ORDER) <= G2_ORDER_SLACK for o in orders),
                  ", ".join(f"{o:.2f}" for o in orders)),
        criterion("G2", "runtime", g2_run["elapsed"] < G2_RUNTIME, f"{g2_run['elapsed']:.0f}s"),
    ]
    assert all(checks)


def test_g3_marginal_structure(g2_run, criterion):
    fams = g2_run["families"]
    inv = all(check_invariants(f[k], G3_TOL) for f in fams for k in (1, 2))
    compat = max(f.grid.cell_volume * np.linalg.norm(partial_trace(f[2]).kernel - f[1].kernel)
                 for f in fams)
    ball = max(hminus_norm(f) for f in fams)
    checks = [
        criterion("G3", "hermitian/psd/trace", inv, f"{len(fams)} snapshots x 2 sectors"),
        criterion("G3", "compatibility", compat <= G3_TOL, f"{compat:.1e}"),
        criterion("G3", "unit ball", ball <= G3_UNIT_BALL, f"max {ball:.6f}"),
    ]
    assert all(checks)


# -- G4 ------------------------------------------------------------------------------------

def test_g4_gp_hierarchy_consistency(criterion):
    t0 = time.perf_counter()
    measured = calibration.measure_g4_residual()
    control = calibration.measure_g4_residual(coupling_scale=2.0)
    elapsed = time.perf_counter() - t0
    tol = calibration.TOL_G4
    checks = [
        criterion("G4", "calibration reproduces", measured == pytest.approx(
            calibration.TOL_G4_MEASURED, rel=1e-6), f"{measured:.4e}"),
        criterion("G4", "residual", measured <= tol, f"{measured:.3e} <= tol {tol:.3e}"),
        criterion("G4", "runtime", elapsed < G4_RUNTIME, f"{elapsed:.0f}s"),
    ]
    ok_control = criterion("G4", "2b control", control >= G4_CONTROL_FACTOR * tol,
                           f"{control:.3e} vs {G4_CONTROL_FACTOR * tol:.3e}")
    assert all(checks)
    assert ok_control, "wrong-coupling residual below 10 tol_G4 (see notes)"


# -- G5 -------------------------------------------------------------------------------------

def test_g5_bbgky_residual(criterion):
    # G6 setup at the default snapshot spacing 10 dt, then halved
    t0 = time.perf_counter()
    cfg = ManyBodyConfig.from_epsilon(3, 0.4, M=32, dt=1e-3)
    psi0 = build_product_state(default_initial_field(cfg.grid), 3)
    traj = simulate_trajectory(cfg, psi0, 0.1, 5 * cfg.dt)
    kernels = [J for J in kernel_family(cfg.grid, 8) if J.k == 1]

    def worst(tr):
        reps = [bbgky_residual(tr, J, cfg) for J in kernels]
        return max(r.magnitude for r in reps), max(r.max_term for r in reps)

    coarse, coarse_term = worst(traj.subsample(2))
    fine, _ = worst(traj)
    elapsed = time.perf_counter() - t0
    rel = coarse / coarse_term
    shrink = coarse / fine
    ok_rel = criterion("G5", "relative residual at 10 dt", rel <= G5_REL_TOL,
                       f"{rel:.2e} <= {G5_REL_TOL:g}")
    checks = [
        criterion("G5", "halving shrink", shrink >= G5_SHRINK, f"{shrink:.2f}x"),
        criterion("G5", "runtime", elapsed < G5_RUNTIME, f"{elapsed:.0f}s"),
    ]
    assert all(checks)
    assert ok_rel, f"residual {rel:.2e} of max term (trapezoid floor, see notes)"


# -- G6 / G7 / G9 sweep -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def g6_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("g6")
    cfg = ExperimentConfig(d=1, M=32, N_list=(2, 3, 4, 5), epsilon=0.4, T=0.1, dt=1e-3,
                           beta=1 / 8, eta=None, output_dir=str(out))
    t0 = time.perf_counter()
    rep = run_sweep(cfg)
    elapsed = time.perf_counter() - t0
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    return rep, elapsed, peak


@pytest.mark.slow
def test_g6_mean_field_trend(g6_sweep, criterion):
    rep, elapsed, peak = g6_sweep
    t_end = rep.times[-1]
    td = {N: float(rep.column("trace_distance", N=N, t=t_end)[0]) for N in rep.N_values}
    Ns = sorted(td)
    monotone = all(td[n2] <= td[n1] * (1 + G6_SLACK) for n1, n2 in zip(Ns, Ns[1:]))
    frozen = all(td[N] == pytest.approx(G6_TRACE_DISTANCE[N], rel=G6_FREEZE_RTOL) for N in Ns)
    paths = emit_plots(rep)
    checks = [
        criterion("G6", "non-increasing", monotone, ", ".join(f"{td[N]:.3e}" for N in Ns)),
        criterion("G6", "N=5 vs N=2", td[5] <= G6_DROP * td[2], f"{td[5] / td[2]:.3f} <= 0.7"),
        criterion("G6", "frozen values", frozen, f"rtol {G6_FREEZE_RTOL:g}"),
        criterion("G6", "runtime", elapsed < G6_RUNTIME, f"{elapsed:.0f}s"),
        criterion("G6", "memory", peak < G6_MEMORY, f"peak RSS {peak / 1024**3:.2f} GiB"),
        criterion("G6", "plots", len(paths) == 14, f"{len(paths)} files"),
    ]
    assert all(checks)


@pytest.mark.slow
def test_g7_apriori_shadow(g6_sweep, criterion):
    rep, _, _ = g6_sweep
    growth = max(float(np.max(rep.column("sobolev_k1", N=N) / rep.column("sobolev_k1", N=N)[0]))
                 for N in rep.N_values)
    assert criterion("G7", "Sobolev growth", growth <= G7_GROWTH, f"max ratio {growth:.4f}")


@pytest.mark.slow
def test_g9_gap_within_envelope(g6_sweep, criterion):
    rep, _, _ = g6_sweep
    gaps = [g for d in rep.detail["per_N"] for g in d["gaps"]]
    worst = max(g["ratio"] for g in gaps)
    ok = all(g["gap"] <= calibration.GAP_C * g["envelope"] for g in gaps)
    assert criterion("G9", "gap envelope", ok,
                     f"max gap/envelope {worst:.3e}, C = {calibration.GAP_C:.3e}")


def _held_out_field(grid, seed):
    rng = np.random.default_rng(seed)
    c = np.zeros(grid.shape, dtype=complex)
    c[:3] = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    c[-2:] = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    f = GridFunction(grid, inverse(c))
    f.values /= f.norm()
    return f


def test_g9_sobsob_bound(criterion):
    g = make_grid(1, 32)
    inputs = [FactorizedDensityMatrix(default_initial_field(g), 2)]
    # inputs not used for calibration
    inputs += [FactorizedDensityMatrix(_held_out_field(g, s), 2) for s in range(3)]
    kernels = [J for J in kernel_family(g, 8) if J.k == 1]
    checks = [sobsob_bound_check(J, gamma, beta, beta, C=calibration.SOBSOB_C)
              for beta in (1 / 4, 1 / 8, 1 / 16) for gamma in inputs for J in kernels]
    worst = max(c.ratio for c in checks)
    assert criterion("G9", "sobsob bound", all(c.holds for c in checks),
                     f"max lhs/rhs {worst:.3e}, C = {calibration.SOBSOB_C:.3e}")


# -- G8 -------------------------------------------------------------------------------------

def test_g8_scattering(criterion):
    t0 = time.perf_counter()
    well = PotentialProfile("square_well", 1.0, 0.25)
    well_err = max(abs(scattering_length(RadialProblem(well, lam)) - square_well_length(lam, 1.0, 0.25))
                   for lam in (0.1, 1.0, 10.0, 100.0))
    rows = coupling_flow(BUMP, 0.4, [100, 300, 1000, 3000, 10000])
    dev = {r.N: r.rel_dev for r in rows}
    slope, icpt, err = fit_inverse_na(rows)
    smallest = min(r.b - r.eff_coupling for r in rows)
    x = np.array([1 / (r.N * r.a) for r in rows])
    quad_icpt = np.polyfit(x, [r.b - r.eff_coupling for r in rows], 2)[-1]
    elapsed = time.perf_counter() - t0
    checks = [
        criterion("G8", "square well", well_err <= G8_WELL_TOL, f"{well_err:.1e}"),
        criterion("G8", "N a0 at N=1e4", dev[10000] <= G8_DEV_TOL, f"{dev[10000]:.2e}"),
        # intercept consistent with zero: negligible against the smallest deviation
        # being fitted (the fit residuals are a deterministic O((Na)^-2) curvature,
        # so the standard error is reported but not used as a noise scale)
        criterion("G8", "1/(Na) intercept", abs(icpt) <= G8_INTERCEPT_FRAC * smallest,
                  f"{icpt:.2e} +/- {err:.1e} vs {G8_INTERCEPT_FRAC:g} x {smallest:.2e}, "
                  f"slope {slope:.4e}, quadratic-fit intercept {quad_icpt:.1e}"),
        criterion("G8", "runtime", elapsed < G8_RUNTIME, f"{elapsed:.1f}s"),
    ]
    assert all(checks)
    assert coupling_b(BUMP, 3) == pytest.approx(rows[0].b)
