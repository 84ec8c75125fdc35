"""Run configuration files.

A run is fully described by one TOML or JSON document plus nothing else; the
CLI echoes the effective config into the output directory so results are
reproducible from that file alone. Unknown keys anywhere are rejected, so a
typo fails fast instead of silently training with a default.

Schema (all keys optional, defaults in parentheses):

  seed             integer (0)
  output_dir       string ("out")
  provider_command string or null (null = no generative prior)

  [filters]        gamma (0.3), epsilon (0.1), scale_aware_3d (true),
                   scale_aware_2d (true), enable_3d (true), enable_2d (true)
  [weights]        distillation (1.0), texture (1.0), structure (1.0),
                   ssim_mix (0.5)
  [schedule]       stages = [[max_scale, iterations], ...]
                   ([[2, 2000], [4, 2000], [8, 2000]])
  [prior]          start_timestep (250), lr_timestep (200),
                   fixed_render_timestep (null = sample uniformly),
                   weighting ("constant"), weight_scale (1.0)
  [train]          warmup_iterations (500), rate_refresh_interval (100),
                   structure_from_live (false), background ([0, 0, 0]),
                   holdout_camera (null = last camera when there are >= 2)
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

try:  # tomllib landed in 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import ConfigError
from .filters import FilterConfig
from .losses import LossWeights
from .prior import PriorConfig
from .trainer import ProgressiveSchedule, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    provider_command: str | None = None
    filters: FilterConfig = field(default_factory=FilterConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: ProgressiveSchedule = field(default_factory=ProgressiveSchedule)
    prior: PriorConfig = field(default_factory=PriorConfig)
    warmup_iterations: int = 500
    rate_refresh_interval: int = 100
    structure_from_live: bool = False
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    holdout_camera: int | None = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            schedule=self.schedule,
            weights=self.weights,
            filters=self.filters,
            prior=self.prior,
            seed=self.seed,
            warmup_iterations=self.warmup_iterations,
            structure_from_live=self.structure_from_live,
            holdout_camera=self.holdout_camera,
            rate_refresh_interval=self.rate_refresh_interval,
            background=self.background,
        )


def _take_section(data: dict, name: str) -> dict:
    section = data.pop(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table/object, got {type(section).__name__}")
    return section


def _build(cls, section: dict, name: str, **overrides):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{name}]: {sorted(unknown)}; allowed: {sorted(allowed)}"
        )
    try:
        return cls(**{**section, **overrides})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid [{name}] config: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a parsed document, rejecting unknown keys."""
    data = dict(data)
    filters = _build(FilterConfig, _take_section(data, "filters"), "filters")
    weights = _build(LossWeights, _take_section(data, "weights"), "weights")

    sched_section = _take_section(data, "schedule")
    stages = sched_section.pop("stages", None)
    if sched_section:
        raise ConfigError(f"unknown key(s) in [schedule]: {sorted(sched_section)}; allowed: ['stages']")
    if stages is None:
        schedule = ProgressiveSchedule()
    else:
        try:
            schedule = ProgressiveSchedule(
                stages=tuple((float(s), int(n)) for s, n in stages)
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid [schedule] stages: {exc}") from exc

    prior_section = _take_section(data, "prior")
    prior = _build(PriorConfig, prior_section, "prior")

    train_section = _take_section(data, "train")
    if "background" in train_section:
        bg = train_section["background"]
        if not (isinstance(bg, (list, tuple)) and len(bg) == 3):
            raise ConfigError(f"[train] background must be three numbers, got {bg!r}")
        train_section["background"] = tuple(float(v) for v in bg)
    allowed_train = {
        "warmup_iterations",
        "rate_refresh_interval",
        "structure_from_live",
        "background",
        "holdout_camera",
    }
    unknown = set(train_section) - allowed_train
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [train]: {sorted(unknown)}; allowed: {sorted(allowed_train)}"
        )

    top = {"seed", "output_dir", "provider_command"}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}; allowed: {sorted(top)}")

    try:
        return RunConfig(
            seed=int(data.get("seed", 0)),
            output_dir=str(data.get("output_dir", "out")),
            provider_command=data.get("provider_command"),
            filters=filters,
            weights=weights,
            schedule=schedule,
            prior=prior,
            **train_section,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> RunConfig:
    """Load a .toml or .json run config."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    suffix = p.suffix.lower()
    try:
        if suffix == ".toml":
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
        elif suffix == ".json":
            with open(p, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        else:
            raise ConfigError(f"config must be .toml or .json, got {p.name!r}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"could not parse {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a table/object, got {type(data).__name__}")
    return config_from_dict(data)


def config_to_dict(config: RunConfig) -> dict:
    """The full effective config, defaults included, as a plain document."""
    return {
        "seed": config.seed,
        "output_dir": config.output_dir,
        "provider_command": config.provider_command,
        "filters": dataclasses.asdict(config.filters),
        "weights": dataclasses.asdict(config.weights),
        "schedule": {"stages": [[s, n] for s, n in config.schedule.stages]},
        "prior": dataclasses.asdict(config.prior),
        "train": {
            "warmup_iterations": config.warmup_iterations,
            "rate_refresh_interval": config.rate_refresh_interval,
            "structure_from_live": config.structure_from_live,
            "background": list(config.background),
            "holdout_camera": config.holdout_camera,
        },
    }


def echo_config(config: RunConfig, directory) -> str:
    """Write the effective config as JSON into the output directory."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
