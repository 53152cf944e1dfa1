"""Episode-driven training loop with CSV metrics logging.

Each episode: roll out sampled actions into the replay buffer, then run one
replay epoch of updates. One metrics row is appended per episode. Metric
values are deterministic given config and seed, so metrics.csv is
byte-identical across reruns; wall-clock times are not, so they go to a
separate timing.csv with the same episode keys.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from .agent import Agent
from .checkpoint import save_agent
from .config import RunConfig, agent_config, write_config_snapshot
from .envs import make_env
from .nn import ConfigurationError
from .replay import ReplayBuffer, Transition

METRICS_SCHEMA = "# schema: slacksac/metrics/v1"
TIMING_SCHEMA = "# schema: slacksac/timing/v1"
METRICS_COLUMNS = (
    "episode",
    "return",
    "mean_log_pi",
    "alpha",
    "mean_delta",
    "branch1_fraction",
    "mean_action_l2",
)
CHECKPOINT_NAME = "checkpoint.ckpt"


@dataclass
class MetricsRow:
    episode: int
    episode_return: float
    mean_log_pi: float
    alpha: float
    mean_delta: float
    branch1_fraction: float
    mean_action_l2: float
    wall_time_s: float

    def csv_values(self):
        return [
            self.episode,
            repr(self.episode_return),
            repr(self.mean_log_pi),
            repr(self.alpha),
            repr(self.mean_delta),
            repr(self.branch1_fraction),
            repr(self.mean_action_l2),
        ]


def rollout_episode(env, agent: Agent, buffer: ReplayBuffer, rng: np.random.Generator):
    """One sampled-action episode pushed into the buffer.

    Returns (episode_return, mean_action_l2).
    """
    state = env.reset(int(rng.integers(2**31 - 1)))
    ep_return = 0.0
    norms = []
    for _ in range(env.spec.episode_length):
        sampled = agent.act(state, rng)
        action = sampled.action
        next_state, reward, done, truncated = env.step(action)
        buffer.push(
            Transition(state, action, next_state, reward, float(done), float(truncated))
        )
        ep_return += reward
        norms.append(float(np.linalg.norm(action)))
        state = next_state
        if done or truncated:
            break
    return ep_return, float(np.mean(norms))


def train_run(config: RunConfig, seed: int, out_dir) -> list[MetricsRow]:
    """Train one (config, seed) run, writing all artifacts into out_dir."""
    env = make_env(config.env)
    agent = Agent(
        env.spec.state_dim, env.spec.action_dim, agent_config(config, env.spec.action_dim, seed)
    )
    buffer = ReplayBuffer(env.spec.state_dim, env.spec.action_dim, config.buffer_max)
    rng = np.random.default_rng(seed)

    os.makedirs(out_dir, exist_ok=True)
    write_config_snapshot(os.path.join(out_dir, "config.ini"), config)
    checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
    rows: list[MetricsRow] = []
    with (
        open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="") as mf,
        open(os.path.join(out_dir, "timing.csv"), "w", encoding="utf-8", newline="") as tf,
    ):
        metrics = csv.writer(mf)
        timing = csv.writer(tf)
        mf.write(METRICS_SCHEMA + "\n")
        metrics.writerow(METRICS_COLUMNS)
        tf.write(TIMING_SCHEMA + "\n")
        timing.writerow(["episode", "wall_time_s"])
        for episode in range(config.episodes):
            started = time.perf_counter()
            ep_return, mean_norm = rollout_episode(env, agent, buffer, rng)
            stats = agent.train_on_episode_end(buffer, rng)
            row = MetricsRow(
                episode=episode,
                episode_return=ep_return,
                mean_log_pi=stats.mean_log_pi,
                alpha=stats.alpha,
                mean_delta=stats.mean_delta,
                branch1_fraction=stats.branch1_fraction,
                mean_action_l2=mean_norm,
                wall_time_s=time.perf_counter() - started,
            )
            rows.append(row)
            metrics.writerow(row.csv_values())
            timing.writerow([row.episode, repr(row.wall_time_s)])
            last = episode == config.episodes - 1
            if (episode + 1) % config.checkpoint_every == 0 or last:
                save_agent(
                    checkpoint_path,
                    agent,
                    buffer=buffer if config.dump_buffer else None,
                    rng=rng,
                    extra_meta={
                        "episode": episode + 1,
                        "env": config.env,
                        "condition": config.condition,
                        "seed": seed,
                    },
                )
    return rows


def read_metrics_csv(path, timing_path=None) -> list[MetricsRow]:
    """Load metrics rows; wall times are joined from the sidecar if given."""
    times: dict[int, float] = {}
    if timing_path is not None:
        with open(timing_path, encoding="utf-8", newline="") as fh:
            header = fh.readline().strip()
            if header != TIMING_SCHEMA:
                raise ConfigurationError(f"unexpected timing schema line {header!r}")
            for row in csv.DictReader(fh):
                times[int(row["episode"])] = float(row["wall_time_s"])
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        if header != METRICS_SCHEMA:
            raise ConfigurationError(f"unexpected metrics schema line {header!r} in {path}")
        for row in csv.DictReader(fh):
            episode = int(row["episode"])
            rows.append(
                MetricsRow(
                    episode=episode,
                    episode_return=float(row["return"]),
                    mean_log_pi=float(row["mean_log_pi"]),
                    alpha=float(row["alpha"]),
                    mean_delta=float(row["mean_delta"]),
                    branch1_fraction=float(row["branch1_fraction"]),
                    mean_action_l2=float(row["mean_action_l2"]),
                    wall_time_s=times.get(episode, float("nan")),
                )
            )
    return rows
