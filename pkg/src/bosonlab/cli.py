"""Command line entry point ``bosonlab``.

Exit codes: 0 success, 2 precondition refusal, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import NumericalError, PreconditionError

log = logging.getLogger("bosonlab")

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3


def _list_of_ints(text: str) -> tuple[int, ...]:
    return tuple(int(float(x)) for x in text.split(",") if x.strip())


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    g = p.add_argument_group("configuration overrides")
    g.add_argument("--d", type=int)
    g.add_argument("--M", type=int)
    g.add_argument("--N", dest="N_list", type=_list_of_ints, help="particle numbers, e.g. 2,3,4")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--a", type=float)
    g.add_argument("--profile", choices=("bump", "square_well", "tabulated"))
    g.add_argument("--v0", type=float)
    g.add_argument("--R", type=float)
    g.add_argument("--dt", type=float)
    g.add_argument("--T", type=float)
    g.add_argument("--snapshot-spacing", dest="snapshot_spacing", type=float)
    g.add_argument("--k-max", dest="k_max", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--kernel-family-size", dest="kernel_family_size", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--memory-budget", dest="memory_budget", type=int)
    g.add_argument("--output-dir", dest="output_dir")


_CONFIG_KEYS = ("d", "M", "N_list", "epsilon", "a", "profile", "v0", "R", "dt", "T",
                "snapshot_spacing", "k_max", "beta", "eta", "kernel_family_size", "seed",
                "memory_budget", "output_dir")


def _config(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    if overrides.get("a") is not None and overrides.get("epsilon") is None:
        overrides["epsilon"] = None
        cfg = load_config(args.config, **overrides)
        cfg.epsilon = None
    else:
        cfg = load_config(args.config, **overrides)
    return cfg.validate()


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------------------

def cmd_propagate(args) -> int:
    from .manybody import (build_product_state, default_initial_field, energy_moments,
                           load_checkpoint, propagate, save_checkpoint)
    cfg = _config(args)
    out = _outdir(cfg)
    for N in cfg.N_list:
        mb = cfg.manybody(N)
        h = cfg.hash()
        ckpt = out / f"psi_N{N}.bin"
        if args.resume and ckpt.exists():
            psi = load_checkpoint(ckpt, config_hash=h)
        else:
            psi = build_product_state(default_initial_field(cfg.grid), N)
        e0 = energy_moments(psi, mb, 1)[1]
        remaining = cfg.T - psi.time
        if remaining > 1e-12:
            psi = propagate(psi, mb, remaining)
        e1 = energy_moments(psi, mb, 1)[1]
        save_checkpoint(psi, ckpt, h)
        print(f"N={N} t={psi.time:.6g} norm={psi.norm():.15f} "
              f"energy_drift={abs(e1 - e0):.3e} symmetry={psi.symmetry_residual():.3e}")
    return EXIT_OK


def cmd_gp(args) -> int:
    from .gp import FieldState, export_trajectory, gp_energy, gp_trajectory
    from .hierarchy import snapshot_times
    from .manybody import default_initial_field
    from .potential import coupling_b
    cfg = _config(args)
    b = coupling_b(cfg.potential, cfg.d)
    phi0 = FieldState.from_function(default_initial_field(cfg.grid))
    fields = gp_trajectory(phi0, b, snapshot_times(cfg.T, cfg.snapshot_spacing), cfg.dt)
    export_trajectory(fields, _outdir(cfg) / "gp", b, cfg.hash())
    e0, e1 = gp_energy(fields[0], b), gp_energy(fields[-1], b)
    print(f"b={b:.12g} snapshots={len(fields)} mass_error={abs(fields[-1].norm() - 1):.3e} "
          f"energy_drift={abs(e1 - e0):.3e}")
    return EXIT_OK


def cmd_marginals(args) -> int:
    from .manybody import build_product_state, default_initial_field, propagate
    from .marginals import check_invariants, export_kernel, reduce
    cfg = _config(args)
    out = _outdir(cfg)
    bad = False
    for N in cfg.N_list:
        mb = cfg.manybody(N)
        psi = propagate(build_product_state(default_initial_field(cfg.grid), N), mb, cfg.T)
        for k in range(1, min(cfg.k_max, N) + 1):
            g = reduce(psi, k)
            ok = check_invariants(g)
            bad |= not ok
            export_kernel(g, out / f"gamma_N{N}_k{k}.bin", cfg.hash())
            print(f"N={N} k={k} trace={g.trace():.12f} invariants={'ok' if ok else 'FAIL'}")
    if bad:
        raise NumericalError("a reduced density matrix violated its invariants")
    return EXIT_OK


def cmd_residuals(args) -> int:
    from .gp import FieldState
    from .hierarchy import bbgky_residual, factorized_trajectory, gp_residual, simulate_trajectory
    from .manybody import build_product_state, default_initial_field
    from .potential import coupling_b, kernel_family
    cfg = _config(args)
    out = _outdir(cfg)
    b = coupling_b(cfg.potential, cfg.d)
    kernels = [J for J in kernel_family(cfg.grid, cfg.kernel_family_size) if J.k == 1]
    reports = []
    phi0 = default_initial_field(cfg.grid)
    for N in cfg.N_list:
        mb = cfg.manybody(N)
        traj = simulate_trajectory(mb, build_product_state(phi0, N), cfg.T,
                                   cfg.snapshot_spacing, k_max=2)
        for J in kernels:
            reports.append({"source": f"simulation N={N}", "kind": "bbgky",
                            **bbgky_residual(traj, J, mb).as_dict()})
            reports.append({"source": f"simulation N={N}", "kind": "gp",
                            **gp_residual(traj, J, b, cfg.beta, cfg.eta).as_dict()})
    ftraj, _ = factorized_trajectory(FieldState.from_function(phi0), b, cfg.T,
                                     cfg.snapshot_spacing, cfg.dt)
    for J in kernels:
        reports.append({"source": "factorized-GP", "kind": "gp",
                        **gp_residual(ftraj, J, b, cfg.beta, cfg.eta).as_dict()})
    keys = ["source", "kind", "kernel", "k", "residual", "max_term", "dt_snap", "beta", "eta"]
    with (out / "residuals.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("# config_hash", cfg.hash()))
        w.writerow(keys)
        for r in reports:
            w.writerow([r.get(k) for k in keys])
    (out / "residuals.json").write_text(json.dumps(
        {"config_hash": cfg.hash(), "reports": reports}, indent=2, default=str))
    for r in reports:
        print(f"{r['source']:>18} {r['kind']:>5} {r['kernel']:>4} residual={r['residual']:.3e} "
              f"max_term={r['max_term']:.3e}")
    return EXIT_OK


def cmd_scattering(args) -> int:
    from .potential import PotentialProfile
    from .scattering import coupling_flow, fit_inverse_na, write_flow_csv
    profile = PotentialProfile(kind=args.profile, v0=args.v0, R=args.R)
    rows = coupling_flow(profile, args.epsilon, args.N_list)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_flow_csv(rows, out / "scattering.csv")
    for r in rows:
        print(f"N={r.N:>8} a={r.a:.6g} N*a0={r.N_a0:.10g} eff={r.eff_coupling:.10g} "
              f"b={r.b:.10g} rel_dev={r.rel_dev:.3e}")
    if len(rows) >= 3:
        slope, icpt, err = fit_inverse_na(rows)
        print(f"fit b - eff = {slope:.6g}/(N a) + {icpt:.3e} (+/- {err:.1e})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import emit_plots, run_sweep
    cfg = _config(args)
    report = run_sweep(cfg)
    paths = [] if args.no_plots else emit_plots(report)
    print(f"rows={len(report.rows)} csv={report.csv_path} json={report.json_path} "
          f"plots={len(paths)}")
    return EXIT_OK


def cmd_check(args) -> int:
    """Fast invariant suite on a small configuration."""
    from .gp import FieldState, solve_gp
    from .manybody import (ManyBodyConfig, build_product_state, default_initial_field,
                           dense_propagate, distance, propagate)
    from .marginals import check_invariants, hminus_norm, partial_trace, reduce_family
    from .potential import PotentialProfile, coupling_b
    results = {}
    cfg = ManyBodyConfig(N=2, a=0.5, profile=PotentialProfile(), M=8, dt=1e-3)
    psi0 = build_product_state(default_initial_field(cfg.grid), 2)
    psi = propagate(psi0, cfg, 0.1)
    results["oracle_agreement"] = distance(psi, dense_propagate(psi0, cfg, 0.1)) < 1e-4
    results["norm"] = abs(psi.norm() - 1) < 1e-9
    results["symmetry"] = psi.symmetry_residual() < 1e-9
    fam = reduce_family(psi, 2)
    results["marginal_invariants"] = all(check_invariants(g) for g in fam.sectors.values())
    results["compatibility"] = (cfg.grid.cell_volume * np.linalg.norm(
        partial_trace(fam[2]).kernel - fam[1].kernel)) < 1e-9
    results["unit_ball"] = hminus_norm(fam) <= 1 + 1e-12
    phi = solve_gp(FieldState.from_function(default_initial_field(cfg.grid)),
                   coupling_b(PotentialProfile(), 1), 0.1, 1e-3)
    results["gp_mass"] = abs(phi.norm() - 1) < 1e-10
    for name, ok in results.items():
        print(f"{name:>20}: {'pass' if ok else 'FAIL'}")
    if not all(results.values()):
        raise NumericalError("invariant suite failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bosonlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("propagate", cmd_propagate, "propagate product states and write checkpoints"),
        ("gp", cmd_gp, "solve the GP equation and export snapshots"),
        ("marginals", cmd_marginals, "propagate, reduce and export marginals"),
        ("residuals", cmd_residuals, "BBGKY and GP hierarchy residual reports"),
        ("sweep", cmd_sweep, "convergence sweep over N with CSV, JSON and plots"),
    ):
        sp = sub.add_parser(name, help=helptext)
        _add_config_flags(sp)
        sp.set_defaults(func=fn)
        if name == "propagate":
            sp.add_argument("--resume", action="store_true",
                            help="continue from a checkpoint in output_dir")
        if name == "sweep":
            sp.add_argument("--no-plots", action="store_true")
    sp = sub.add_parser("scattering", help="scattering length and effective coupling table")
    sp.add_argument("--epsilon", type=float, default=0.4)
    sp.add_argument("--N", dest="N_list", type=_list_of_ints, default=(100, 1000, 10000))
    sp.add_argument("--profile", default="bump", choices=("bump", "square_well"))
    sp.add_argument("--v0", type=float, default=1.0)
    sp.add_argument("--R", type=float, default=0.25)
    sp.add_argument("--output-dir", dest="output_dir", default="results")
    sp.set_defaults(func=cmd_scattering)
    sp = sub.add_parser("check", help="run the fast invariant suite")
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
