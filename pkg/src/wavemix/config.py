"""Experiment configuration: YAML file to validated dataclasses."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

EXPERIMENT_KINDS = (
    "duality",
    "covariance",
    "limit",
    "kirchhoff",
    "huygens",
    "dispersion",
    "reconstruction",
    "moments",
    "clt",
    "characteristic",
    "counterexample",
    "fdtd",
    "decay",
    "scattering",
    "variable-clt",
)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass
class GridConfig:
    n: int = 3
    N: int = 64
    L: float = 64.0


@dataclass
class MeasureConfig:
    kind: str = "moving-average"  # or "gaussian-spectral"
    a: float = 1.0
    profile: str = "bump"
    noise: str = "rademacher"
    cross_correlation: float = 0.0
    weights: tuple = (1.0, 1.0)
    density: str = "ma"  # gaussian-spectral only: "ma" or "limit"


@dataclass
class TestFunctionConfig:
    __test__ = False

    profile: str = "mollifier"  # or "polynomial"
    radius: float = 3.0
    power: int = 10
    center: tuple | None = None
    weights: tuple = (0.0, 1.0)
    pad_cells: int = 0
    normalize: bool = False


@dataclass
class ScheduleConfig:
    delta: float = 0.5
    c_d: float = 1.0
    c_rho: float = 1.0


@dataclass
class MediumConfig:
    amplitude: float = 0.0
    radius: float = 4.0
    center: tuple | None = None
    a0_amplitude: float = 0.0


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    members: int = 1
    grid: GridConfig = field(default_factory=GridConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    test_function: TestFunctionConfig = field(default_factory=TestFunctionConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    medium: MediumConfig = field(default_factory=MediumConfig)
    params: dict = field(default_factory=dict)
    output: str = "results"

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


_SECTIONS = {
    "grid": GridConfig,
    "measure": MeasureConfig,
    "test_function": TestFunctionConfig,
    "schedule": ScheduleConfig,
    "medium": MediumConfig,
}


def _section(name: str, cls, raw: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be a mapping")
    known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    vals = {}
    for k, v in raw.items():
        vals[k] = tuple(v) if isinstance(v, list) else v
    return cls(**vals)


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    top = {"experiment", "seed", "members", "params", "output", *_SECTIONS}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    if "experiment" not in raw:
        raise ConfigError("experiment", "missing")
    if "seed" not in raw or raw["seed"] is None:
        raise ConfigError("seed", "missing; runs must be seeded explicitly")
    kw = {k: _section(k, cls, raw.get(k)) for k, cls in _SECTIONS.items()}
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params", "must be a mapping")
    cfg = ExperimentConfig(
        experiment=raw["experiment"],
        seed=raw["seed"],
        members=raw.get("members", 1),
        params=params,
        output=raw.get("output", "results"),
        **kw,
    )
    check(cfg)
    return cfg


def load(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"{path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML ({exc})") from None
    return from_dict(raw)


def check(cfg: ExperimentConfig) -> None:
    """Type and range checks that need no numerics."""
    if cfg.experiment not in EXPERIMENT_KINDS:
        raise ConfigError("experiment", f"unknown kind {cfg.experiment!r}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    if not isinstance(cfg.members, int) or cfg.members < 1:
        raise ConfigError("members", "must be an integer >= 1")
    g = cfg.grid
    if not isinstance(g.n, int) or g.n < 3 or g.n % 2 == 0:
        raise ConfigError("grid.n", "must be an odd integer >= 3")
    if not isinstance(g.N, int) or g.N < 4 or g.N % 2:
        raise ConfigError("grid.N", "must be an even integer >= 4")
    if not g.L > 0:
        raise ConfigError("grid.L", "must be positive")
    m = cfg.measure
    if m.kind not in ("moving-average", "gaussian-spectral"):
        raise ConfigError("measure.kind", f"unknown measure {m.kind!r}")
    if m.profile not in ("bump", "box", "delta"):
        raise ConfigError("measure.profile", f"unknown kernel profile {m.profile!r}")
    if m.noise not in ("gaussian", "rademacher", "uniform"):
        raise ConfigError("measure.noise", f"unknown noise law {m.noise!r}")
    if m.profile != "delta" and not 0 < m.a < g.L / 4:
        raise ConfigError("measure.a", f"kernel radius must lie in (0, L/4) = (0, {g.L / 4:g})")
    if not -1 <= m.cross_correlation <= 1:
        raise ConfigError("measure.cross_correlation", "must lie in [-1, 1]")
    if m.density not in ("ma", "limit"):
        raise ConfigError("measure.density", "must be 'ma' or 'limit'")
    tf = cfg.test_function
    if tf.profile not in ("mollifier", "polynomial"):
        raise ConfigError("test_function.profile", f"unknown profile {tf.profile!r}")
    r_bar = tf.radius + tf.pad_cells * g.L / g.N
    if not 0 < r_bar < g.L / 2:
        raise ConfigError("test_function.radius", f"support radius {r_bar:g} must lie in (0, L/2)")
    if tf.center is not None and len(tf.center) != g.n:
        raise ConfigError("test_function.center", f"needs {g.n} components")
    if len(tf.weights) != 2:
        raise ConfigError("test_function.weights", "needs two component weights")
    s = cfg.schedule
    if not 0 < s.delta < 1:
        raise ConfigError("schedule.delta", "must lie in (0, 1)")
    if s.c_d <= 0 or s.c_rho < 0:
        raise ConfigError("schedule.c_d", "schedule constants must be positive")
    md = cfg.medium
    if md.amplitude != 0 and not 0 < md.radius < g.L / 4:
        raise ConfigError("medium.radius", f"perturbation radius must lie below L/4 = {g.L / 4:g}")
    if md.a0_amplitude < 0:
        raise ConfigError("medium.a0_amplitude", "must be nonnegative")
    if md.center is not None and len(md.center) != g.n:
        raise ConfigError("medium.center", f"needs {g.n} components")
