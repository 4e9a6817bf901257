"""Benchmark run configuration read from YAML.

A config is a key tree with the sections ``geometry``, ``physics``,
``time``, ``protocol``, ``parameters``, ``greedy`` and ``output`` plus a
top-level ``seed``.  Every section is checked against its schema before
any computation; unknown keys and wrongly typed values are rejected.
Relative operator paths are resolved against the directory of the config
file; the output directory is relative to the working directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .assembly import assemble_operators, build_block_mesh, load_operators
from .errors import ValidationError
from .fom import StimulusProtocol, build_fom
from .greedy import GreedyConfig, TrainingSets, parameter_grid
from .reaction import APParameters

__all__ = [
    "GeometryConfig",
    "PhysicsConfig",
    "TimeConfig",
    "ParameterConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
    "shipped_config",
    "SHIPPED_CONFIGS",
]

SHIPPED_CONFIGS = ("planar_block", "scroll_block", "external_template")


@dataclass
class GeometryConfig:
    kind: str = "block"
    cells: list = field(default_factory=lambda: [31, 31, 2])
    lengths: list = field(default_factory=lambda: [31.0, 31.0, 2.0])
    s2_box: list = field(default_factory=lambda: [[0.0, 0.5], [0.0, 0.5]])
    operators: str = ""

    def check(self):
        if self.kind not in ("block", "external"):
            raise ValidationError(f"geometry.kind must be 'block' or 'external', got {self.kind!r}")
        if self.kind == "external" and not self.operators:
            raise ValidationError("geometry.operators is required when geometry.kind is 'external'")
        if len(self.cells) != 3 or any(int(c) != c or c < 1 for c in self.cells):
            raise ValidationError("geometry.cells must be three positive integers")
        if len(self.lengths) != 3 or any(not v > 0 for v in self.lengths):
            raise ValidationError("geometry.lengths must be three positive numbers")
        if len(self.s2_box) != 2 or any(len(r) != 2 for r in self.s2_box):
            raise ValidationError("geometry.s2_box must be [[x0, x1], [y0, y1]]")


@dataclass
class PhysicsConfig:
    d_iso: float = 1.0
    flux_direction: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    model: dict = field(default_factory=dict)

    def check(self):
        if not self.d_iso > 0:
            raise ValidationError("physics.d_iso must be positive")
        if len(self.flux_direction) != 3:
            raise ValidationError("physics.flux_direction must have three components")
        known = {f.name for f in dataclasses.fields(APParameters)}
        bad = sorted(set(self.model) - known)
        if bad:
            raise ValidationError(f"unknown key(s) in physics.model: {', '.join(bad)}")
        for k, v in self.model.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ValidationError(f"physics.model.{k} must be a number")


@dataclass
class TimeConfig:
    dt: float = 2.0
    n_steps: int = 400

    def check(self):
        if not self.dt > 0:
            raise ValidationError("time.dt must be positive")
        if self.n_steps < 0:
            raise ValidationError("time.n_steps must be non-negative")


@dataclass
class ParameterConfig:
    names: list = field(default_factory=lambda: ["gamma"])
    lower: list = field(default_factory=lambda: [0.0005])
    upper: list = field(default_factory=lambda: [0.01])
    counts: list = field(default_factory=lambda: [100])
    train_fraction: float = 0.8
    coarse_fraction: float = 0.3
    default: list = field(default_factory=lambda: [0.005])

    def check(self):
        d = len(self.names)
        if tuple(self.names) not in (("gamma",), ("gamma", "t_s")):
            raise ValidationError("parameters.names must be [gamma] or [gamma, t_s]")
        for key in ("lower", "upper", "counts", "default"):
            if len(getattr(self, key)) != d:
                raise ValidationError(f"parameters.{key} must have {d} entries")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValidationError("parameters.lower must not exceed parameters.upper")
        if any(int(c) != c or c < 1 for c in self.counts):
            raise ValidationError("parameters.counts must be positive integers")
        for key in ("train_fraction", "coarse_fraction"):
            if not 0 < getattr(self, key) <= 1:
                raise ValidationError(f"parameters.{key} must lie in (0, 1]")


@dataclass
class OutputConfig:
    directory: str = "out"


_SECTIONS = {
    "geometry": GeometryConfig,
    "physics": PhysicsConfig,
    "time": TimeConfig,
    "parameters": ParameterConfig,
    "output": OutputConfig,
    "protocol": StimulusProtocol,
    "greedy": GreedyConfig,
}


def _coerce(value, default, where):
    """Check ``value`` against the type of the schema default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ValidationError(f"{where} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValidationError(f"{where} must be a list, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ValidationError(f"{where} must be a mapping, got {value!r}")
        return dict(value)
    return value


def _section(cls, data, name):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(f"section {name!r} must be a mapping")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    bad = sorted(set(data) - known)
    if bad:
        raise ValidationError(f"unknown key(s) in {name}: {', '.join(bad)}")
    kwargs = {k: _coerce(v, getattr(defaults, k), f"{name}.{k}") for k, v in data.items()}
    try:
        obj = cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"invalid {name} section: {exc}") from exc
    if hasattr(obj, "check"):
        obj.check()
    return obj


@dataclass
class RunConfig:
    """Validated run description; see the module docstring for the layout."""

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    protocol: StimulusProtocol = field(default_factory=StimulusProtocol)
    parameters: ParameterConfig = field(default_factory=ParameterConfig)
    greedy: GreedyConfig = field(default_factory=GreedyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    @classmethod
    def from_dict(cls, data, base_dir=None):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ValidationError("config root must be a mapping")
        bad = sorted(set(data) - set(_SECTIONS) - {"seed"})
        if bad:
            raise ValidationError(f"unknown top-level key(s): {', '.join(bad)}")
        seed = _coerce(data.get("seed", 0), 0, "seed")
        if isinstance(data.get("greedy"), dict) and "seed" in data["greedy"]:
            raise ValidationError("greedy.seed is not a config key; set the top-level seed")
        sections = {name: _section(c, data.get(name), name) for name, c in _SECTIONS.items()}
        sections["greedy"] = dataclasses.replace(sections["greedy"], seed=seed)
        cfg = cls(**sections, seed=seed, base_dir=Path(base_dir) if base_dir else Path.cwd())
        cfg.check()
        return cfg

    def check(self):
        two = len(self.parameters.names) == 2
        if two != (self.protocol.kind == "s1s2-scroll"):
            raise ValidationError("the s1s2-scroll protocol needs parameters [gamma, t_s]; other protocols [gamma]")

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name in _SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        del out["greedy"]["seed"]
        if self.geometry.kind == "external":
            # absolute, so the dumped config reloads from any directory
            out["geometry"]["operators"] = str(self.resolve(self.geometry.operators).resolve())
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_overrides(self, seed=None, out=None, threads=None):
        cfg = dataclasses.replace(self)
        if seed is not None:
            cfg.seed = int(seed)
            cfg.greedy = dataclasses.replace(cfg.greedy, seed=int(seed))
        if out is not None:
            cfg.output = OutputConfig(directory=str(out))
        if threads is not None:
            cfg.greedy = dataclasses.replace(cfg.greedy, threads=int(threads))
        return cfg

    # builders

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return Path(self.output.directory)

    def model_parameters(self) -> APParameters:
        base = APParameters(**self.physics.model)
        return base.with_parameter(self.parameters.default)

    def operators(self):
        g = self.geometry
        if g.kind == "external":
            return load_operators(self.resolve(g.operators))
        box = tuple(tuple(float(v) for v in r) for r in g.s2_box)
        mesh = build_block_mesh(*[int(c) for c in g.cells], lengths=tuple(g.lengths), s2_box=box)
        return assemble_operators(mesh, self.physics.d_iso, tuple(self.physics.flux_direction))

    def system(self, ops=None):
        ops = ops if ops is not None else self.operators()
        return build_fom(ops, self.model_parameters(), self.time.dt, self.time.n_steps, self.protocol)

    def samples(self) -> np.ndarray:
        p = self.parameters
        return parameter_grid(p.lower, p.upper, p.counts)

    def training_sets(self) -> TrainingSets:
        p = self.parameters
        return TrainingSets.build(self.samples(), p.train_fraction, p.coarse_fraction, seed=self.seed,
                                  names=tuple(p.names))

    def greedy_config(self) -> GreedyConfig:
        return self.greedy


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from exc
    return RunConfig.from_dict(data, base_dir=path.parent)


def shipped_config(name) -> Path:
    """Path of a config file shipped with the package."""
    if name not in SHIPPED_CONFIGS:
        raise ValidationError(f"unknown shipped config {name!r}; choose from {SHIPPED_CONFIGS}")
    return Path(__file__).parent / "configs" / f"{name}.yaml"
