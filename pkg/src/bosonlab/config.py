"""Experiment configuration: flat ``key = value`` files, validation and hashing.

Grammar, one entry per line::

    # comment (also allowed after a value)
    key = value
    N_list = 2, 3, 4        # comma separated lists

Keys are the field names of :class:`ExperimentConfig`. Unknown keys are an
error. Numbers accept Python float syntax (``1e-3``); ``none`` clears an
optional value.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import PreconditionError
from .hierarchy import snapshot_times
from .lattice import make_grid
from .manybody import DEFAULT_MEMORY_BUDGET, ManyBodyConfig
from .potential import Mollifier, PotentialProfile, kernel_family, sample_mollifier


@dataclass
class ExperimentConfig:
    d: int = 1
    M: int = 32
    N_list: tuple[int, ...] = (2, 3)
    epsilon: float | None = 0.4
    a: float | None = None
    profile: str = "bump"
    v0: float = 1.0
    R: float = 0.25
    dt: float = 1e-3
    T: float = 0.1
    snapshot_spacing: float | None = None
    k_max: int = 2
    beta: float = 1 / 8
    eta: float | None = 1 / 8
    kernel_family_size: int = 8
    seed: int = 0
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    output_dir: str = "results"

    def __post_init__(self):
        self.N_list = tuple(int(n) for n in (self.N_list if isinstance(self.N_list, (list, tuple))
                                              else [self.N_list]))
        if self.snapshot_spacing is None:
            self.snapshot_spacing = 10 * self.dt

    # -- derived ----------------------------------------------------------------
    @property
    def potential(self) -> PotentialProfile:
        return PotentialProfile(kind=self.profile, v0=self.v0, R=self.R)

    def range_for(self, N: int) -> float:
        return self.a if self.a is not None else float(N) ** (-self.epsilon)

    def manybody(self, N: int) -> ManyBodyConfig:
        return ManyBodyConfig(N=N, a=self.range_for(N), profile=self.potential, d=self.d,
                              M=self.M, dt=self.dt, memory_budget=self.memory_budget,
                              epsilon=self.epsilon if self.a is None else None)

    @property
    def grid(self):
        return make_grid(self.d, self.M)

    def validate(self) -> "ExperimentConfig":
        """Re-run every module guard before any work starts."""
        grid = self.grid
        if (self.a is None) == (self.epsilon is None):
            raise PreconditionError("give exactly one of epsilon or a")
        if self.epsilon is not None and not 0 < self.epsilon < 0.6:
            warnings.warn(f"epsilon = {self.epsilon} lies outside (0, 3/5)", stacklevel=2)
        if not self.N_list or any(n2 <= n1 for n1, n2 in zip(self.N_list, self.N_list[1:])):
            raise PreconditionError("N_list must be non-empty and ascending")
        if self.T <= 0:
            raise PreconditionError("T must be positive")
        if self.k_max not in (1, 2):
            raise PreconditionError("k_max must be 1 or 2")
        if self.snapshot_spacing < self.dt * (1 - 1e-9):
            raise PreconditionError("snapshot spacing must be at least one time step")
        snapshot_times(self.T, self.snapshot_spacing)
        for N in self.N_list:
            self.manybody(N)
        for width in (self.beta, self.eta):
            if width is not None:
                sample_mollifier(Mollifier(width, self.d), grid)
        kernel_family(grid, self.kernel_family_size)
        return self

    # -- serialization --------------------------------------------------------------
    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical(self) -> str:
        data = self.as_dict()
        data.pop("output_dir")
        data["N_list"] = list(data["N_list"])
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT = {"d", "M", "k_max", "kernel_family_size", "seed", "memory_budget"}
_FLOAT = {"epsilon", "a", "v0", "R", "dt", "T", "snapshot_spacing", "beta", "eta"}
_STR = {"profile", "output_dir"}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key not in _FIELDS:
        raise PreconditionError(f"unknown configuration key {key!r}")
    if raw.lower() == "none":
        return None
    try:
        if key == "N_list":
            return tuple(int(float(x)) for x in raw.split(",") if x.strip())
        if key in _INT:
            return int(float(raw))
        if key in _FLOAT:
            return float(raw)
    except ValueError as exc:
        raise PreconditionError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PreconditionError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "N":
            key = "N_list"
        out[key] = _convert(key, value)
    return out


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Defaults, then the file, then non-None overrides."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "a" in values and values.get("a") is not None and "epsilon" not in values:
        values["epsilon"] = None
    return ExperimentConfig(**values)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.as_dict().items():
        if isinstance(v, (list, tuple)):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
