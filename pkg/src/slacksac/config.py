"""Run configuration: INI files, flag overrides, and condition presets.

A run is described by an INI file with [run], [agent], [env], [attack],
and [eval] sections; every key has a default so the empty config is valid.
Command-line flags override file values. The condition preset fixes the
entropy mode and lower bound as a function of the action dimension:

    conventional              entropy pinned to H* = -|A|, no slack
    slack_hstar_negA          slack mode, H* = -|A|
    slack_hstar_Hbar_minus_2A slack mode, H* = |A| (ln 2 - 2)
    custom                    entropy_mode and h_star taken from the config
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass

from .agent import MODE_CONVENTIONAL, MODE_SLACK, AgentConfig
from .envs import ENV_BUILDERS, AttackConfig
from .nn import ConfigurationError

CONDITIONS = (
    "conventional",
    "slack_hstar_negA",
    "slack_hstar_Hbar_minus_2A",
    "custom",
)
DEFAULT_OUT_ENV = "SLACKSAC_OUT"


@dataclass
class RunConfig:
    """Everything needed to reproduce a training run."""

    env: str = "point_mass"
    condition: str = "conventional"
    episodes: int = 300
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    out_dir: str = ""
    checkpoint_every: int = 100
    dump_buffer: bool = True
    # agent hyperparameters
    gamma: float = 0.99
    tau: float = 5e-3
    batch_max: int = 256
    buffer_max: int = 102_400
    hidden: tuple[int, ...] = (100, 100)
    learning_rate: float = 3e-4
    alpha_learning_rate: float = 3e-4
    alpha_init: float = 1.0
    policy_kind: str = "student_t"
    epsilon: float | None = None
    # only read when condition = custom
    custom_h_star: float | None = None
    custom_entropy_mode: str = MODE_SLACK
    # evaluation attack
    attack_probability: float = 0.2
    attack_amplitude: float = 0.2
    eval_episodes: int = 100
    eval_deterministic: bool = True

    def __post_init__(self):
        if self.env not in ENV_BUILDERS:
            raise ConfigurationError(
                f"unknown env {self.env!r}; choices: {sorted(ENV_BUILDERS)}"
            )
        if self.condition not in CONDITIONS:
            raise ConfigurationError(
                f"unknown condition {self.condition!r}; choices: {CONDITIONS}"
            )
        if self.episodes < 1:
            raise ConfigurationError("episodes must be >= 1")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")
        if self.eval_episodes < 0:
            raise ConfigurationError("eval episodes must be >= 0")
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ConfigurationError("attack probability outside [0,1]")
        if self.condition == "custom" and self.custom_h_star is None:
            raise ConfigurationError("condition custom requires h_star")
        if not self.out_dir:
            self.out_dir = os.environ.get(DEFAULT_OUT_ENV, "runs")


def resolve_condition(condition: str, action_dim: int, config: RunConfig):
    """Map a condition preset to (entropy_mode, h_star) for a given |A|."""
    a = float(action_dim)
    if condition == "conventional":
        return MODE_CONVENTIONAL, -a
    if condition == "slack_hstar_negA":
        return MODE_SLACK, -a
    if condition == "slack_hstar_Hbar_minus_2A":
        return MODE_SLACK, a * (math.log(2.0) - 2.0)
    return config.custom_entropy_mode, float(config.custom_h_star)


def agent_config(config: RunConfig, action_dim: int, seed: int) -> AgentConfig:
    mode, h_star = resolve_condition(config.condition, action_dim, config)
    return AgentConfig(
        h_star=h_star,
        gamma=config.gamma,
        tau=config.tau,
        batch_max=config.batch_max,
        buffer_max=config.buffer_max,
        entropy_mode=mode,
        seed=seed,
        hidden=config.hidden,
        learning_rate=config.learning_rate,
        alpha_learning_rate=config.alpha_learning_rate,
        alpha_init=config.alpha_init,
        policy_kind=config.policy_kind,
        epsilon=config.epsilon,
    )


def attack_config(config: RunConfig, rng_seed: int = 0) -> AttackConfig:
    return AttackConfig(
        probability=config.attack_probability,
        rng_seed=rng_seed,
        amplitude=config.attack_amplitude,
    )


# INI (section, key) -> RunConfig field and parser.

def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _opt_float(text: str):
    return None if text.strip() == "" else float(text)


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SCHEMA = {
    ("run", "env"): ("env", str),
    ("run", "condition"): ("condition", str),
    ("run", "episodes"): ("episodes", int),
    ("run", "seeds"): ("seeds", _ints),
    ("run", "out_dir"): ("out_dir", str),
    ("run", "checkpoint_every"): ("checkpoint_every", int),
    ("run", "dump_buffer"): ("dump_buffer", _bool),
    ("agent", "gamma"): ("gamma", float),
    ("agent", "tau"): ("tau", float),
    ("agent", "batch_max"): ("batch_max", int),
    ("agent", "buffer_max"): ("buffer_max", int),
    ("agent", "hidden"): ("hidden", _ints),
    ("agent", "learning_rate"): ("learning_rate", float),
    ("agent", "alpha_learning_rate"): ("alpha_learning_rate", float),
    ("agent", "alpha_init"): ("alpha_init", float),
    ("agent", "policy_kind"): ("policy_kind", str),
    ("agent", "epsilon"): ("epsilon", _opt_float),
    ("agent", "h_star"): ("custom_h_star", _opt_float),
    ("agent", "entropy_mode"): ("custom_entropy_mode", str),
    ("attack", "probability"): ("attack_probability", float),
    ("attack", "amplitude"): ("attack_amplitude", float),
    ("eval", "episodes"): ("eval_episodes", int),
    ("eval", "deterministic"): ("eval_deterministic", _bool),
}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional INI file plus override fields.

    Unknown sections or keys are rejected so typos fail loudly.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            for key, text in parser.items(section):
                if (section, key) not in _SCHEMA:
                    raise ConfigurationError(
                        f"unknown config key [{section}] {key} in {path}"
                    )
                name, parse = _SCHEMA[(section, key)]
                try:
                    values[name] = parse(text)
                except ValueError as exc:
                    raise ConfigurationError(
                        f"bad value for [{section}] {key} in {path}: {exc}"
                    ) from exc
    if overrides:
        for name, value in overrides.items():
            if value is not None:
                values[name] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(f"bad config field: {exc}") from exc


def write_config_snapshot(path, config: RunConfig) -> None:
    """Persist the fully resolved config next to the run artifacts."""
    parser = configparser.ConfigParser()
    by_section: dict[str, dict[str, str]] = {}
    reverse = {name: (section, key) for (section, key), (name, _) in _SCHEMA.items()}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        section, key = reverse[f.name]
        if isinstance(value, tuple):
            text = " ".join(str(v) for v in value)
        elif value is None:
            text = ""
        else:
            text = str(value)
        by_section.setdefault(section, {})[key] = text
    for section in ("run", "agent", "attack", "eval"):
        parser[section] = by_section.get(section, {})
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
