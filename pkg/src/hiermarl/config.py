"""Experiment configuration: a plain-text file with nested sections.

The format is INI-style (configparser) with dotted section names as the
nesting convention::

    [experiment]
    system = 3ppo
    env = spread
    n_agents = 4
    total_steps = 300000
    eval_every = 10000
    eval_episodes = 10
    trace = off            ; off | first_seed | all

    [env]                  ; optional physics overrides
    damping = 0.75

    [ppo]                  ; optional hyperparameter overrides, all levels
    learning_rate = 0.001

    [ppo.level1]           ; per-level override (wins over [ppo])
    clip_coef = 0.1

    [mappo]
    buffer_size = 10000

    [ae]
    learning_rate = 0.001

Every system ships with its published defaults; a config file only has to
name the system and environment.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

KNOWN_SYSTEMS = (
    "2ppo",
    "3ppo",
    "3ppo-comm",
    "mappo-ppo",
    "2mappo-ppo",
    "ippo",
    "mappo",
    "ppo-joint",
    "heuristic",
)

_EXPERIMENT_KEYS = {
    "system": str,
    "env": str,
    "n_agents": int,
    "total_steps": int,
    "eval_every": int,
    "eval_episodes": int,
    "trace": str,
}

TRACE_MODES = ("off", "first_seed", "all")


@dataclass
class ExperimentConfig:
    system: str
    env: str
    n_agents: int = 4
    total_steps: int = 2_000_000
    eval_every: int = 10_000
    eval_episodes: int = 10
    trace: str = "off"
    env_overrides: dict = field(default_factory=dict)
    ppo_overrides: dict = field(default_factory=dict)  # key None = all levels
    mappo_overrides: dict = field(default_factory=dict)
    ae_overrides: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    def validate(self) -> "ExperimentConfig":
        if self.system not in KNOWN_SYSTEMS:
            raise ConfigError(
                f"unknown system {self.system!r}; expected one of {KNOWN_SYSTEMS}"
            )
        if self.env not in ("spread", "balance"):
            raise ConfigError(f"unknown environment {self.env!r}")
        if self.trace not in TRACE_MODES:
            raise ConfigError(f"trace must be one of {TRACE_MODES}")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.total_steps < 1 or self.eval_every < 1 or self.eval_episodes < 0:
            raise ConfigError("step/eval counts must be positive")
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        return self


def _coerce(value: str):
    text = value.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")

    kwargs: dict = {}
    for key, raw in parser["experiment"].items():
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key {key!r} in [experiment]")
        caster = _EXPERIMENT_KEYS[key]
        try:
            kwargs[key] = caster(raw) if caster is not str else raw.strip().lower()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    for required in ("system", "env"):
        if required not in kwargs:
            raise ConfigError(f"[experiment] must set {required}")

    cfg = ExperimentConfig(**kwargs)
    for section in parser.sections():
        if section == "experiment":
            continue
        values = {k: _coerce(v) for k, v in parser[section].items()}
        if section == "env":
            cfg.env_overrides.update(values)
        elif section == "ppo":
            cfg.ppo_overrides.setdefault(None, {}).update(values)
        elif section.startswith("ppo.level"):
            try:
                level = int(section.removeprefix("ppo.level"))
            except ValueError:
                raise ConfigError(f"bad section name {section!r}") from None
            cfg.ppo_overrides.setdefault(level, {}).update(values)
        elif section == "mappo":
            cfg.mappo_overrides.update(values)
        elif section == "ae":
            cfg.ae_overrides.update(values)
        else:
            raise ConfigError(f"unknown section [{section}]")
    return cfg.validate()
