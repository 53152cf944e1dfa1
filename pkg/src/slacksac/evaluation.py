"""Evaluation episodes under attack and their aggregation.

run_eval rolls a trained policy through episodes behind the attack wrapper
and records, per episode: the return, the mean L2 norm and log-density of
the policy's intended actions (pre-attack, since the attack is exogenous),
and how many steps were attacked. summarize groups records by condition and
reports mean, population SD, median, and quartiles per metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from .envs import AttackConfig, AttackWrapper
from .nn import ConfigurationError
from .policy import draw_noise, log_prob, sample_reparam, squash
from .stats import summarize_values

METRIC_NAMES = ("episode_return", "mean_action_l2", "mean_log_pi", "attack_count")


@dataclass
class EvalRecord:
    episode_return: float
    mean_action_l2: float
    mean_log_pi: float
    attack_count: int
    episode_index: int
    condition_tag: str


def run_eval(
    policy,
    env,
    attack: AttackConfig,
    n_episodes: int,
    deterministic: bool,
    base_seed: int = 0,
    condition_tag: str = "",
    sample_seed: int = 0,
    trace_path=None,
) -> list[EvalRecord]:
    """Evaluate a policy for n_episodes under random action replacement.

    Episode i resets the environment with base_seed + i. The policy acts by
    its distribution mode when deterministic, else by sampling with a
    dedicated generator. Optionally appends per-step trace rows to
    trace_path as CSV.
    """
    wrapped = AttackWrapper(env, attack)
    rng = np.random.default_rng(sample_seed)
    records = []
    trace_file = open(trace_path, "w", encoding="utf-8", newline="") if trace_path else None
    try:
        writer = None
        if trace_file is not None:
            writer = csv.writer(trace_file)
            trace_file.write("# schema: slacksac/trace/v1\n")
            writer.writerow(
                ["episode", "t"]
                + [f"s{i}" for i in range(env.spec.state_dim)]
                + [f"a{i}" for i in range(env.spec.action_dim)]
                + ["reward", "attacked"]
            )
        for episode in range(n_episodes):
            state = wrapped.reset(base_seed + episode)
            ep_return = 0.0
            norms = []
            log_pis = []
            attack_count = 0
            for t in range(env.spec.episode_length):
                head, _ = policy.policy_head(state)
                if deterministic:
                    u = head.location
                else:
                    u = sample_reparam(head, draw_noise(rng, head.dof)).pre_squash
                action = squash(u)[0]
                log_pis.append(float(log_prob(head, u)[0]))
                norms.append(float(np.linalg.norm(action)))
                next_state, reward, done, truncated, attacked = wrapped.step(action)
                ep_return += reward
                attack_count += int(attacked)
                if writer is not None:
                    writer.writerow(
                        [episode, t]
                        + [repr(v) for v in state]
                        + [repr(v) for v in action]
                        + [repr(reward), int(attacked)]
                    )
                state = next_state
                if done or truncated:
                    break
            records.append(
                EvalRecord(
                    episode_return=float(ep_return),
                    mean_action_l2=float(np.mean(norms)),
                    mean_log_pi=float(np.mean(log_pis)),
                    attack_count=attack_count,
                    episode_index=episode,
                    condition_tag=condition_tag,
                )
            )
    finally:
        if trace_file is not None:
            trace_file.close()
    return records


def summarize(records: list[EvalRecord], quantiles=(0.25, 0.5, 0.75)) -> dict:
    """Per-condition, per-metric summary table as nested dicts."""
    if not records:
        raise ConfigurationError("cannot summarize zero evaluation records")
    by_condition: dict[str, list[EvalRecord]] = {}
    for r in records:
        by_condition.setdefault(r.condition_tag, []).append(r)
    out = {}
    for tag, group in by_condition.items():
        out[tag] = {
            metric: summarize_values([getattr(r, metric) for r in group], quantiles)
            for metric in METRIC_NAMES
        }
    return out


def metric_values(records: list[EvalRecord], metric: str) -> np.ndarray:
    if metric not in METRIC_NAMES:
        raise ConfigurationError(f"unknown metric {metric!r}; choices: {METRIC_NAMES}")
    return np.array([getattr(r, metric) for r in records], dtype=np.float64)


def retained_return_ratio(unattacked_mean: float, attacked_mean: float) -> float:
    """Attack degradation as a retained-performance ratio, orientation-safe.

    attacked/unattacked reads as "fraction of performance kept" only when
    returns are positive; with negative returns the fraction flips, so the
    ratio is inverted there. Higher is always better. Near-zero baselines
    give nan.
    """
    if abs(unattacked_mean) < 1e-12 or abs(attacked_mean) < 1e-12:
        return float("nan")
    if unattacked_mean > 0.0:
        return attacked_mean / unattacked_mean
    return unattacked_mean / attacked_mean


def write_eval_csv(path, records: list[EvalRecord]) -> None:
    """One record per row with a versioned schema comment."""
    cols = [f.name for f in fields(EvalRecord)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# schema: slacksac/eval/v1\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in records:
            writer.writerow([getattr(r, c) for c in cols])


def read_eval_csv(path) -> list[EvalRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        if header != "# schema: slacksac/eval/v1":
            raise ConfigurationError(f"unexpected eval schema line {header!r} in {path}")
        reader = csv.DictReader(fh)
        records = []
        for row in reader:
            records.append(
                EvalRecord(
                    episode_return=float(row["episode_return"]),
                    mean_action_l2=float(row["mean_action_l2"]),
                    mean_log_pi=float(row["mean_log_pi"]),
                    attack_count=int(row["attack_count"]),
                    episode_index=int(row["episode_index"]),
                    condition_tag=row["condition_tag"],
                )
            )
    return records
