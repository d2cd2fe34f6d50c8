"""Convergence sweeps over N: CSV rows, JSON detail and static plots."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import calibration
from .config import ExperimentConfig
from .errors import NumericalError
from .gp import FieldState, factorized_family, gp_trajectory
from .hierarchy import (bbgky_residual, bbgky_vs_gp_gap, gp_residual,
                        simulate_trajectory, snapshot_times)
from .manybody import build_product_state, default_initial_field
from .marginals import (MarginalFamily, check_invariants, hminus_norm, partial_trace, rho_metric,
                        sobolev_trace_norm, trace_distance)
from .potential import coupling_b, kernel_family

log = logging.getLogger(__name__)

METRICS = ("trace_distance", "sobolev_k1", "sobolev_k2", "hminus_norm", "rho_to_factorized",
           "bbgky_residual_max", "gp_residual_max")


@dataclass
class SweepRow:
    N: int
    epsilon: float
    a: float
    t: float
    trace_distance: float
    sobolev_k1: float
    sobolev_k2: float
    hminus_norm: float
    rho_to_factorized: float
    bbgky_residual_max: float
    gp_residual_max: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericalError(f"non-finite {f.name} at N={self.N}, t={self.t}")


COLUMNS = tuple(f.name for f in fields(SweepRow))


@dataclass
class SweepReport:
    config: ExperimentConfig
    rows: list[SweepRow]
    detail: dict
    csv_path: Path | None = None
    json_path: Path | None = None

    def column(self, name: str, N: int | None = None, t: float | None = None) -> np.ndarray:
        sel = [r for r in self.rows if (N is None or r.N == N)
               and (t is None or abs(r.t - t) < 1e-12)]
        return np.array([getattr(r, name) for r in sel])

    @property
    def times(self) -> list[float]:
        return sorted({r.t for r in self.rows})

    @property
    def N_values(self) -> list[int]:
        return sorted({r.N for r in self.rows})


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _invariants(fam: MarginalFamily) -> dict:
    out = {f"k{k}": bool(check_invariants(g)) for k, g in fam.sectors.items()}
    if 2 in fam.sectors:
        diff = partial_trace(fam[2]).kernel - fam[1].kernel
        out["compatibility"] = float(fam.grid.cell_volume * np.linalg.norm(diff))
    out["hminus"] = hminus_norm(fam)
    return out


def sweep_one(cfg: ExperimentConfig, N: int, kernels) -> tuple[list[SweepRow], dict]:
    """Rows and detail for one particle number."""
    mb = cfg.manybody(N)
    grid = cfg.grid
    phi0 = default_initial_field(grid)
    times = snapshot_times(cfg.T, cfg.snapshot_spacing)
    b = coupling_b(cfg.potential, cfg.d)
    fields_ = gp_trajectory(FieldState.from_function(phi0), b, times, cfg.dt)
    traj = simulate_trajectory(mb, build_product_state(phi0, N), cfg.T, cfg.snapshot_spacing,
                               k_max=2)
    sector1 = [J for J in kernels if J.k == 1]
    rows, inv = [], []
    for i, (t, fam, phi) in enumerate(zip(times, traj.families, fields_)):
        fac = factorized_family(phi, 2)
        sub = traj.upto(i + 1)
        bb = max(bbgky_residual(sub, J, mb).magnitude for J in sector1)
        gr = max(gp_residual(sub, J, b, cfg.beta, cfg.eta).magnitude for J in sector1)
        rows.append(SweepRow(
            # epsilon is undefined when a is given directly; 0 keeps the column finite
            N=N, epsilon=float(cfg.epsilon or 0.0), a=mb.a, t=float(t),
            trace_distance=trace_distance(fam[1], fac[1]),
            sobolev_k1=sobolev_trace_norm(fam[1]),
            sobolev_k2=sobolev_trace_norm(fam[2]),
            hminus_norm=hminus_norm(fam),
            rho_to_factorized=rho_metric(fam, fac, kernels),
            bbgky_residual_max=bb,
            gp_residual_max=gr,
        ))
        inv.append(_invariants(fam))
    gaps = [bbgky_vs_gp_gap(traj, J, mb, b, cfg.beta, None, C=calibration.GAP_C).as_dict()
            for J in sector1]
    detail = {"N": N, "a": mb.a, "b": b, "invariants": inv, "gaps": gaps,
              "sobolev_sup_k2": traj.sobolev_sup(2)}
    return rows, detail


def run_sweep(cfg: ExperimentConfig, write: bool = True) -> SweepReport:
    """Propagate, reduce and compare with the GP flow for every N in the config.

    Rows are flushed to CSV as each N completes, so an abort keeps the
    finished particle numbers.
    """
    cfg.validate()
    kernels = kernel_family(cfg.grid, cfg.kernel_family_size)
    out = Path(cfg.output_dir)
    report = SweepReport(cfg, [], {"config": cfg.as_dict(), "config_hash": cfg.hash(),
                                   "per_N": []})
    fh = writer = None
    if write:
        out.mkdir(parents=True, exist_ok=True)
        report.csv_path = out / "sweep.csv"
        report.json_path = out / "sweep.json"
        fh = report.csv_path.open("w", newline="")
        writer = csv.writer(fh)
        writer.writerow(("# config_hash", cfg.hash()))
        writer.writerow(COLUMNS)
    try:
        for N in cfg.N_list:
            log.info("sweep: N = %d", N)
            rows, detail = sweep_one(cfg, N, kernels)
            report.rows.extend(rows)
            report.detail["per_N"].append(detail)
            if writer is not None:
                for r in rows:
                    writer.writerow([_fmt(v) for v in asdict(r).values()])
                fh.flush()
    except Exception as exc:
        report.detail["aborted"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        if fh is not None:
            fh.close()
            report.json_path.write_text(json.dumps(report.detail, indent=2, default=_json_default))
    return report


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def read_sweep_csv(path: str | Path) -> tuple[str, list[SweepRow]]:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        head = next(reader)
        next(reader)
        rows = [SweepRow(int(r[0]), *map(float, r[1:])) for r in reader]
    return head[1], rows


def emit_plots(report: SweepReport, directory: str | Path | None = None) -> list[Path]:
    """Per metric: value against N at the final time and against t for every N (SVG)."""
    if not report.rows:
        warnings.warn("empty sweep report: no plots written", stacklevel=2)
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory or report.config.output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    t_last = report.times[-1]
    paths = []
    for name in METRICS:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        Ns = report.N_values
        ax.plot(Ns, [report.column(name, N=N, t=t_last)[0] for N in Ns], "o-")
        ax.set_xlabel("N")
        ax.set_ylabel(name)
        ax.set_title(f"{name} at t = {t_last:g}")
        p = directory / f"{name}_vs_N.svg"
        fig.tight_layout()
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)

        fig, ax = plt.subplots(figsize=(5, 3.5))
        for N in Ns:
            ax.plot([r.t for r in report.rows if r.N == N], report.column(name, N=N),
                    label=f"N={N}")
        ax.set_xlabel("t")
        ax.set_ylabel(name)
        ax.legend()
        p = directory / f"{name}_vs_t.svg"
        fig.tight_layout()
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    return paths
