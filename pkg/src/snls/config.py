"""Run configuration: dataclasses, TOML loading, validation and hashing.

Units: lengths and times are dimensionless (the equation has no physical
scales); `L` is the box side, `dt` the integrator step, `horizon` the time at
which integrals to infinity are truncated.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .field import Field, Grid, load_field
from .noise import SpatialProfile, TemporalProfile, build_model, NoiseModel

STUDIES = ("simulate", "ito-check", "converge", "scatter", "sweep", "transforms", "exponents")


class ConfigError(ValueError):
    pass


@dataclass
class DatumConfig:
    kind: str = "gaussian"          # gaussian | sech | plane_wave | file
    amp: list = field(default_factory=lambda: [1.0, 0.0])
    width: float = 1.0
    momentum: list = field(default_factory=list)
    path: str = ""


@dataclass
class ProblemConfig:
    d: int = 1
    alpha: float = 3.0
    lam: int = -1
    datum: DatumConfig = field(default_factory=DatumConfig)


@dataclass
class GridConfig:
    n: int = 256
    L: float = 40.0


@dataclass
class TimeConfig:
    T: float = 1.0
    dt: float = 1e-3
    stride: int = 1
    horizon: float = 0.0            # 0 means: same as T
    mesh_dt: float = 0.0            # Brownian mesh cell; 0 means: same as dt
    scheme: str = "strang"
    cap: float = 1e6


@dataclass
class ChannelConfig:
    spatial: str = "gaussian_decay"
    amp: list = field(default_factory=lambda: [0.0, 1.0])
    width: float = 1.0
    power: float = 3.0
    temporal: str = "constant"
    c: float = 1.0
    T0: float = 1.0
    rate: float = 1.0


@dataclass
class NoiseConfig:
    channels: list = field(default_factory=list)
    conservative: Optional[bool] = None


@dataclass
class ExperimentConfig:
    windows: int = 4
    ratio: float = 0.5
    T0: float = 0.0                 # 0 means: horizon / 2^(windows/2)
    norm: str = "H1"
    floor: float = 1e-12
    paths: int = 1
    v1_grid: list = field(default_factory=lambda: [0.0, 2.0, 4.0, 8.0])
    theta: float = 0.0              # 0 means: from the exponent table
    levels: int = 3
    which: list = field(default_factory=lambda: ["mass", "hamiltonian", "virial"])
    milstein: bool = False


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    master_seed: int = 0
    output: str = "out"

    # -- derived ---------------------------------------------------------
    @property
    def horizon(self) -> float:
        return self.time.horizon or self.time.T

    @property
    def mesh_dt(self) -> float:
        return self.time.mesh_dt or self.time.dt

    def grid_obj(self) -> Grid:
        return Grid(self.problem.d, self.grid.n, self.grid.L)

    def profiles(self) -> list[tuple[SpatialProfile, TemporalProfile]]:
        out = []
        for ch in self.noise.channels:
            sp = SpatialProfile(ch.spatial, complex(ch.amp[0], ch.amp[1]), ch.width, ch.power)
            tp = TemporalProfile(ch.temporal, ch.c, ch.T0, ch.rate)
            out.append((sp, tp))
        return out

    def model(self, seed: int, profiles=None) -> NoiseModel:
        profiles = self.profiles() if profiles is None else profiles
        H = self.horizon
        cells = int(round(H / self.mesh_dt))
        return build_model(profiles, self.problem.lam, H, cells, seed)

    def datum(self) -> Field:
        return make_datum(self.grid_obj(), self.problem.datum)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Digest of everything that can change a number (the output directory cannot)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def make_datum(grid: Grid, dc: DatumConfig) -> Field:
    amp = complex(dc.amp[0], dc.amp[1])
    k = list(dc.momentum) + [0.0] * (grid.d - len(dc.momentum))
    phase = np.exp(1j * sum(kj * x for kj, x in zip(k, grid.coords)))
    if dc.kind == "gaussian":
        return Field(grid, amp * np.exp(-grid.r2 / (2.0 * dc.width ** 2)) * phase)
    if dc.kind == "sech":
        return Field(grid, amp / np.cosh(np.sqrt(grid.r2) / dc.width) * phase)
    if dc.kind == "plane_wave":
        return Field(grid, amp * phase)
    if dc.kind == "file":
        f = load_field(dc.path)
        if f.grid != grid:
            raise ConfigError("problem.datum.path: stored grid does not match [grid]")
        return f
    raise ConfigError(f"problem.datum.kind: unknown datum {dc.kind!r}")


# ----------------------------------------------------------------- loading

def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in names:
            raise ConfigError(f"{where}.{key}: unknown key")
        f = names[key]
        sub = _nested.get((cls, key))
        if sub is not None:
            if key == "channels":
                if not isinstance(val, list):
                    raise ConfigError(f"{where}.channels: expected an array of tables")
                kwargs[key] = [_build(sub, v, f"{where}.channels[{i}]") for i, v in enumerate(val)]
            else:
                kwargs[key] = _build(sub, val, f"{where}.{key}")
        else:
            kwargs[key] = val
    return cls(**kwargs)


_nested = {
    (RunConfig, "problem"): ProblemConfig,
    (RunConfig, "grid"): GridConfig,
    (RunConfig, "time"): TimeConfig,
    (RunConfig, "noise"): NoiseConfig,
    (RunConfig, "experiment"): ExperimentConfig,
    (ProblemConfig, "datum"): DatumConfig,
    (NoiseConfig, "channels"): ChannelConfig,
}


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config: cannot parse TOML: {e}") from e
    return from_dict(data)


# -------------------------------------------------------------- validation

def _num(v, where, positive=False, integer=False):
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if integer:
        ok = ok and float(v).is_integer()
    if not ok or not math.isfinite(v):
        raise ConfigError(f"{where}: expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}: must be positive, got {v!r}")


def validate(cfg: RunConfig, study: str) -> None:
    """Raise ConfigError naming the offending field."""
    p = cfg.problem
    if study not in STUDIES:
        raise ConfigError(f"study: unknown subcommand {study!r}")
    if p.d not in (1, 2, 3):
        raise ConfigError(f"problem.d: must be 1, 2 or 3, got {p.d!r}")
    _num(p.alpha, "problem.alpha")
    if not p.alpha > 1:
        raise ConfigError(f"problem.alpha: must exceed 1, got {p.alpha!r}")
    if p.lam not in (-1, 0, 1):
        raise ConfigError(f"problem.lam: must be -1, 0 or 1, got {p.lam!r}")
    for key in ("amp",):
        v = getattr(p.datum, key)
        if not (isinstance(v, list) and len(v) == 2):
            raise ConfigError("problem.datum.amp: expected [re, im]")
    n = cfg.grid.n
    if not isinstance(n, int) or n < 8 or n & (n - 1):
        raise ConfigError(f"grid.n: must be a power of two >= 8, got {n!r}")
    _num(cfg.grid.L, "grid.L", positive=True)
    t = cfg.time
    _num(t.T, "time.T", positive=True)
    _num(t.dt, "time.dt", positive=True)
    if not isinstance(t.stride, int) or t.stride < 1:
        raise ConfigError("time.stride: must be a positive integer")
    if t.scheme not in ("strang", "lie"):
        raise ConfigError("time.scheme: must be 'strang' or 'lie'")
    if cfg.horizon < t.T * (1 - 1e-12):
        raise ConfigError("time.horizon: must be >= time.T")
    ratio = cfg.mesh_dt / t.dt
    if ratio < 1 or abs(2 ** round(math.log2(ratio)) - ratio) > 1e-9 * ratio:
        raise ConfigError("time.mesh_dt: must equal time.dt * 2^m")
    cells = cfg.horizon / cfg.mesh_dt
    if abs(cells - round(cells)) > 1e-8 * cells:
        raise ConfigError("time.mesh_dt: must divide the horizon")
    if not isinstance(cfg.master_seed, int) or cfg.master_seed < 0:
        raise ConfigError("master_seed: must be a non-negative integer")
    for i, ch in enumerate(cfg.noise.channels):
        where = f"noise.channels[{i}]"
        if not (isinstance(ch.amp, list) and len(ch.amp) == 2):
            raise ConfigError(f"{where}.amp: expected [re, im]")
        try:
            SpatialProfile(ch.spatial, complex(ch.amp[0], ch.amp[1]), ch.width, ch.power)
        except ValueError as e:
            raise ConfigError(f"{where}.spatial: {e}") from e
        try:
            TemporalProfile(ch.temporal, ch.c, ch.T0, ch.rate)
        except ValueError as e:
            raise ConfigError(f"{where}.temporal: {e}") from e
    if cfg.noise.conservative is not None:
        actual = all(ch.amp[0] == 0 for ch in cfg.noise.channels)
        if actual != cfg.noise.conservative:
            raise ConfigError("noise.conservative: flag disagrees with the channel amplitudes")
    e = cfg.experiment
    if e.norm not in ("H1", "Sigma"):
        raise ConfigError("experiment.norm: must be 'H1' or 'Sigma'")
    if not isinstance(e.windows, int) or e.windows < 1:
        raise ConfigError("experiment.windows: must be a positive integer")
    if not 0 < e.ratio < 1:
        raise ConfigError("experiment.ratio: must lie in (0, 1)")
    if not isinstance(e.paths, int) or e.paths < 1:
        raise ConfigError("experiment.paths: must be a positive integer")
    if not isinstance(e.levels, int) or e.levels < 2:
        raise ConfigError("experiment.levels: must be an integer >= 2")
    from .functionals import WHICH
    for w in e.which:
        if w not in WHICH:
            raise ConfigError(f"experiment.which: unknown functional {w!r}")
    if study == "scatter":
        for i, (sp, tp) in enumerate(cfg.profiles()):
            tail = tp.tail_l2sq(cfg.horizon)
            if tail > 1e-8:
                raise ConfigError(
                    f"noise.channels[{i}].temporal: neglected tail {tail:.2e} beyond the horizon exceeds 1e-8")
    if study == "sweep":
        if not cfg.noise.channels:
            raise ConfigError("noise.channels: the sweep needs at least one channel")
        for i, (sp, tp) in enumerate(cfg.profiles()):
            if not sp.is_constant:
                raise ConfigError(f"noise.channels[{i}].spatial: the sweep needs constant profiles")
            if tp.kind != "constant":
                raise ConfigError(f"noise.channels[{i}].temporal: the sweep needs g bounded below (constant)")
        if not e.v1_grid:
            raise ConfigError("experiment.v1_grid: must not be empty")
