"""Experiment configuration: TOML files, dotted overrides, and sweep axes."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib as tomli
except ImportError:  # python < 3.11
    import tomli

from ..engine import SimConfig
from ..errors import ConfigError
from ..pipeline import RealWorldConfig
from ..rankers import POLICY_NAMES, WEIGHT_FAMILIES

RETENTION_VARIANTS = ("boosted", "cluster_binned")


@dataclass
class WorldSection:
    n_x: int = 1000
    n_y: int = 1000
    d: int = 10
    kappa: float = 0.5
    noise_delta: float = 0.0
    drift: bool = False
    drift_slope: float = 0.5


@dataclass
class ModelSection:
    retention_model: str = "boosted"
    n_train: int = 5000
    trees: int = 200
    depth: int = 6
    rate: float = 0.05
    clusters: int = 5


@dataclass
class RunSection:
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    workers: int = 1
    output: str = "results"
    optimal_budget: int = 1_000_000


@dataclass
class ExperimentConfig:
    world: WorldSection = field(default_factory=WorldSection)
    protocol: SimConfig = field(default_factory=SimConfig)
    model: ModelSection = field(default_factory=ModelSection)
    policies: list[str] = field(default_factory=lambda: ["max_match", "uniform", "fairco", "mret", "mret_best"])
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> None:
        w = self.world
        if w.n_x < 1 or w.n_y < 1 or w.d < 1:
            raise ConfigError("world.n_x, world.n_y and world.d must be >= 1")
        if not 0.0 <= w.kappa <= 1.0:
            raise ConfigError(f"world.kappa must lie in [0, 1], got {w.kappa}")
        if w.noise_delta < 0:
            raise ConfigError("world.noise_delta must be >= 0")
        self.protocol.validate()
        if self.model.retention_model not in RETENTION_VARIANTS:
            raise ConfigError(f"model.retention_model must be one of {RETENTION_VARIANTS}")
        if self.model.n_train < 1:
            raise ConfigError("model.n_train must be >= 1")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        for p in self.policies:
            if p not in POLICY_NAMES:
                raise ConfigError(f"unknown policy {p!r}; expected one of {POLICY_NAMES}")
        if len(set(self.policies)) != len(self.policies):
            raise ConfigError("policies must be distinct")
        if not self.run.seeds:
            raise ConfigError("at least one seed is required")
        for s in self.run.seeds:
            if not 0 <= int(s) < 2**64:
                raise ConfigError(f"seed {s} is not a 64-bit unsigned integer")
        if self.run.workers < 1:
            raise ConfigError("run.workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def copy(self) -> ExperimentConfig:
        return copy.deepcopy(self)


_SECTIONS = {"world": WorldSection, "protocol": SimConfig, "model": ModelSection, "run": RunSection}


def config_from_dict(doc: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in doc.items():
        if key == "policies":
            names = value.get("names") if isinstance(value, dict) else value
            cfg.policies = list(names)
            if isinstance(value, dict) and "fairco_lambda" in value:
                cfg.protocol.fairco_lambda = float(value["fairco_lambda"])
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section [{key}]")
        section = getattr(cfg, key)
        for name, v in value.items():
            set_value(section, key, name, v)
    cfg.validate()
    return cfg


def set_value(section, section_name: str, name: str, value) -> None:
    fields = {f.name: f for f in dataclasses.fields(section)}
    if name not in fields:
        raise ConfigError(f"unknown key {section_name}.{name}")
    current = getattr(section, name)
    if isinstance(current, bool):
        if isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        value = bool(value)
    elif isinstance(current, int) and not isinstance(current, bool):
        value = int(value)
    elif isinstance(current, float):
        value = float(value)
    elif isinstance(current, list):
        if isinstance(value, str):
            value = [int(v) for v in value.split(",") if v.strip()]
        value = list(value)
    setattr(section, name, value)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__package__).joinpath("presets").iterdir() if p.name.endswith(".toml"))


def load_preset(name: str) -> ExperimentConfig:
    path = resources.files(__package__).joinpath("presets", f"{name}.toml")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    with path.open("rb") as fh:
        return config_from_dict(tomli.load(fh))


def resolve_config(spec: str | None) -> ExperimentConfig:
    """A file path, a preset name, or ``None`` for built-in defaults."""
    if spec is None:
        return ExperimentConfig()
    if Path(spec).is_file():
        return load_config(spec)
    return load_preset(spec)


def apply_override(cfg: ExperimentConfig, dotted: str, value) -> None:
    if dotted in ("policies", "policies.names"):
        cfg.policies = value.split(",") if isinstance(value, str) else list(value)
        return
    if "." not in dotted:
        raise ConfigError(f"override key must look like section.key, got {dotted!r}")
    section_name, name = dotted.split(".", 1)
    if section_name not in _SECTIONS:
        raise ConfigError(f"unknown config section {section_name!r}")
    set_value(getattr(cfg, section_name), section_name, name, value)


# sweep axis -> function applying one value
def _set_nxy(cfg, v):
    cfg.world.n_x = int(v)
    cfg.world.n_y = int(v)


SWEEP_AXES = {
    "T": lambda c, v: setattr(c.protocol, "T", int(v)),
    "kappa": lambda c, v: setattr(c.world, "kappa", float(v)),
    "n_xy": _set_nxy,
    "lambda": lambda c, v: setattr(c.protocol, "fairco_lambda", float(v)),
    "delta": lambda c, v: setattr(c.world, "noise_delta", float(v)),
    "n_train": lambda c, v: setattr(c.model, "n_train", int(v)),
    "rho": lambda c, v: setattr(c.protocol, "rho", float(v)),
    "weight_family": lambda c, v: setattr(c.protocol, "weight_family", str(v)),
    "drift": lambda c, v: setattr(c.world, "drift", str(v).lower() in ("1", "true", "on", "yes")),
}


def with_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    out = cfg.copy()
    SWEEP_AXES[axis](out, value)
    if axis == "weight_family" and out.protocol.weight_family not in WEIGHT_FAMILIES:
        raise ConfigError(f"unknown weight family {value!r}")
    out.validate()
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of everything that affects simulated values (not seeds, workers or paths)."""
    doc = cfg.to_dict()
    doc["run"] = {"optimal_budget": cfg.run.optimal_budget}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def realworld_from_dict(doc: dict):
    """``[realworld]`` keys map onto the stand-in protocol config, ``[protocol]`` onto its simulation."""
    cfg = RealWorldConfig()
    for key, value in doc.items():
        if key == "realworld":
            for name, v in value.items():
                if name == "policies":
                    cfg.policies = tuple(v)
                else:
                    set_value(cfg, "realworld", name, v)
        elif key == "protocol":
            for name, v in value.items():
                set_value(cfg.sim, "protocol", name, v)
        elif key != "run":
            raise ConfigError(f"unknown config section [{key}] for the real-world protocol")
    cfg.validate()
    return cfg


def resolve_realworld(spec: str | None):
    if spec is None:
        return RealWorldConfig(), {}
    if Path(spec).is_file():
        with open(spec, "rb") as fh:
            doc = tomli.load(fh)
    else:
        path = resources.files(__package__).joinpath("presets", f"{spec}.toml")
        if not path.is_file():
            raise ConfigError(f"unknown preset {spec!r}; available: {', '.join(preset_names())}")
        with path.open("rb") as fh:
            doc = tomli.load(fh)
    return realworld_from_dict(doc), doc.get("run", {})
