"""Soft actor-critic engine with optional entropy slack.

Twin critics regress onto the soft Bellman target
y = r + (1 - done) * gamma * (min Q_bar(s', a') - alpha * ln pi(a'|s')),
the actor descends mean(-min Q(s, a) + alpha * ln pi(a|s)) through the
reparameterized sample, and the temperature alpha = exp(alpha_tilde) follows
mirror descent on the entropy constraint. In slack mode the constraint
target is H* + Delta(s) with Delta from the slack network.

Per mini-batch the update order is: critic, actor, temperature, slack,
target soft update. The temperature and slack steps reuse the actor's
sampled log-densities as constants; the temperature reads Delta before the
slack step, and the slack step sees the already-updated alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    ConfigurationError,
    Mlp,
    OptimizerState,
    optimizer_step,
)
from .policy import (
    SampledAction,
    draw_noise,
    head_backward,
    head_from_raw,
    log_prob_partials,
    mode_action,
    sample_reparam,
    squash_deriv,
)
from .replay import DEFAULT_BATCH_MAX, DEFAULT_CAPACITY, Batch, ReplayBuffer
from .slack import CONTINUOUS, SlackConfig, SlackNet, slack_update

MODE_CONVENTIONAL = "conventional"
MODE_SLACK = "slack"


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters of one training run."""

    h_star: float
    gamma: float = 0.99
    tau: float = 5e-3
    batch_max: int = DEFAULT_BATCH_MAX
    buffer_max: int = DEFAULT_CAPACITY
    entropy_mode: str = MODE_CONVENTIONAL
    seed: int = 0
    hidden: tuple[int, ...] = (100, 100)
    learning_rate: float = 3e-4
    alpha_learning_rate: float = 3e-4
    alpha_init: float = 1.0
    policy_kind: str = "student_t"  # or "gaussian" (ablation)
    epsilon: float | None = None  # slack band width, default 0.1 * action_dim

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma {self.gamma} outside [0,1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError(f"tau {self.tau} outside (0,1]")
        if self.batch_max < 1 or self.buffer_max < 1:
            raise ConfigurationError("batch_max and buffer_max must be positive")
        if self.entropy_mode not in (MODE_CONVENTIONAL, MODE_SLACK):
            raise ConfigurationError(f"unknown entropy mode {self.entropy_mode!r}")
        if self.policy_kind not in ("student_t", "gaussian"):
            raise ConfigurationError(f"unknown policy kind {self.policy_kind!r}")
        if self.alpha_init <= 0.0:
            raise ConfigurationError("alpha_init must be positive")


class TemperatureState:
    """Mirror-descent temperature: alpha = exp(alpha_tilde) stays positive."""

    def __init__(self, alpha_init: float, learning_rate: float):
        self.alpha_tilde = float(np.log(alpha_init))
        self.alpha = float(alpha_init)
        self.learning_rate = float(learning_rate)

    def update(self, g: float) -> None:
        if not np.isfinite(g):
            raise ConfigurationError("non-finite temperature gradient")
        self.alpha_tilde -= self.learning_rate * float(g)
        self.alpha = float(np.exp(self.alpha_tilde))


def alpha_gradient(log_pis, h_star: float, deltas=None) -> float:
    """Gradient of the temperature objective: mean of -(ln pi + H* + Delta)."""
    log_pis = np.asarray(log_pis, dtype=np.float64)
    if deltas is None:
        deltas = 0.0
    return float(np.mean(-(log_pis + h_star + np.asarray(deltas, dtype=np.float64))))


def td_target(rewards, dones, q_min_next, log_pi_next, gamma: float, alpha: float):
    """Soft Bellman target; the done flag cuts the bootstrap term."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    return rewards + (1.0 - dones) * gamma * (
        np.asarray(q_min_next, dtype=np.float64) - alpha * np.asarray(log_pi_next, dtype=np.float64)
    )


class CriticPair:
    """Online twin critics with frozen-copy targets."""

    def __init__(self, input_dim: int, hidden: tuple[int, ...], seeds, learning_rate: float):
        sizes = [input_dim, *hidden, 1]
        self.q1 = Mlp(sizes, int(seeds[0]))
        self.q2 = Mlp(sizes, int(seeds[1]))
        self.q1_target = Mlp(sizes, int(seeds[0]))
        self.q2_target = Mlp(sizes, int(seeds[1]))
        self.q1_target.params.copy_values_from(self.q1.params)
        self.q2_target.params.copy_values_from(self.q2.params)
        self.q1_opt = OptimizerState.for_params(self.q1.params, learning_rate)
        self.q2_opt = OptimizerState.for_params(self.q2.params, learning_rate)

    def min_target(self, inputs) -> np.ndarray:
        return np.minimum(
            self.q1_target.forward(inputs)[:, 0], self.q2_target.forward(inputs)[:, 0]
        )

    def soft_update(self, tau: float) -> None:
        """Polyak step theta_bar <- (1 - tau) theta_bar + tau theta."""
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for o_layer, t_layer in zip(online.params.layers, target.params.layers):
                for attr in ("weight", "bias", "gain"):
                    t = getattr(t_layer, attr)
                    t *= 1.0 - tau
                    t += tau * getattr(o_layer, attr)


@dataclass
class UpdateStats:
    """Per-epoch means reported by train_on_episode_end."""

    n_batches: int = 0
    critic_loss: float = 0.0
    actor_loss: float = 0.0
    mean_log_pi: float = 0.0
    alpha: float = 0.0
    mean_delta: float = 0.0
    branch1_fraction: float = 0.0


class Agent:
    """One training run's mutable state and update rules."""

    def __init__(self, state_dim: int, action_dim: int, config: AgentConfig):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.config = config
        seeds = np.random.SeedSequence(config.seed).generate_state(4)
        self.actor = Mlp([state_dim, *config.hidden, 3 * action_dim], int(seeds[0]))
        self.actor_opt = OptimizerState.for_params(self.actor.params, config.learning_rate)
        self.critics = CriticPair(
            state_dim + action_dim, config.hidden, seeds[1:3], config.learning_rate
        )
        self.temperature = TemperatureState(config.alpha_init, config.alpha_learning_rate)
        self.gaussian = config.policy_kind == "gaussian"
        if config.entropy_mode == MODE_SLACK:
            self.slack_config = SlackConfig.create(
                CONTINUOUS, action_dim, config.h_star, config.epsilon
            )
            self.slack_net = SlackNet(
                state_dim, config.hidden, int(seeds[3]), config.learning_rate
            )
        else:
            self.slack_config = None
            self.slack_net = None
        self.empty_epoch_count = 0

    def make_buffer(self) -> ReplayBuffer:
        return ReplayBuffer(self.state_dim, self.action_dim, self.config.buffer_max)

    def policy_head(self, states):
        """Forward the actor trunk; returns (head, raw) with the tape recorded."""
        raw = self.actor.forward(np.atleast_2d(np.asarray(states, dtype=np.float64)))
        return head_from_raw(raw, gaussian=self.gaussian), raw

    def act(self, state, rng: np.random.Generator) -> SampledAction:
        """Sample one action for rollouts."""
        head, _ = self.policy_head(state)
        sampled = sample_reparam(head, draw_noise(rng, head.dof))
        return SampledAction(
            pre_squash=sampled.pre_squash[0],
            action=sampled.action[0],
            log_prob=float(sampled.log_prob[0]),
        )

    def act_mode(self, state) -> np.ndarray:
        """Deterministic (distribution mode) action for evaluation."""
        head, _ = self.policy_head(state)
        return mode_action(head)[0]

    def deltas_for(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if self.slack_net is None:
            return np.zeros(states.shape[0])
        return self.slack_net.delta(states, self.slack_config)

    def td_targets(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        """Gradient-free regression targets from the target critics."""
        head, _ = self.policy_head(batch.next_states)
        sampled = sample_reparam(head, draw_noise(rng, head.dof))
        inputs = np.concatenate([batch.next_states, sampled.action], axis=1)
        q_min = self.critics.min_target(inputs)
        return td_target(
            batch.rewards, batch.dones, q_min, sampled.log_prob,
            self.config.gamma, self.temperature.alpha,
        )

    def critic_loss_and_grads(self, batch: Batch, y) -> float:
        """Loss mean 1/2 (y - Q1)^2 + 1/2 (y - Q2)^2 with grads in q1/q2.

        y is data here: it contributes no gradient of its own.
        """
        inputs = np.concatenate([batch.states, batch.actions], axis=1)
        n = len(batch)
        loss = 0.0
        for net in (self.critics.q1, self.critics.q2):
            q = net.forward(inputs)[:, 0]
            loss += float(np.mean(0.5 * (y - q) ** 2))
            net.zero_grads()
            net.backward(((q - y) / n)[:, None])
        return loss

    def critic_step(self, batch: Batch, rng: np.random.Generator) -> float:
        """One gradient step of both critics toward the soft Bellman target."""
        y = self.td_targets(batch, rng)
        loss = self.critic_loss_and_grads(batch, y)
        optimizer_step(self.critics.q1_opt, self.critics.q1.params, self.critics.q1.grads)
        optimizer_step(self.critics.q2_opt, self.critics.q2.params, self.critics.q2.grads)
        return loss

    def actor_loss_and_grads(self, batch: Batch, noise=None, rng=None):
        """Loss mean(-min Q(s, a) + alpha ln pi(a|s)) with grads in the actor.

        Critic parameters receive no gradient; the action path runs through
        the analytic chain of the squashed Student-t with the noise held as
        data. Returns (loss, per-sample log-densities, noise used).
        """
        states = batch.states
        n = states.shape[0]
        alpha = self.temperature.alpha
        head, raw = self.policy_head(states)
        if noise is None:
            noise = draw_noise(rng, head.dof)
        u_sample = sample_reparam(head, noise)
        inputs = np.concatenate([states, u_sample.action], axis=1)
        q1 = self.critics.q1.forward(inputs)[:, 0]
        q2 = self.critics.q2.forward(inputs)[:, 0]
        loss = float(np.mean(-np.minimum(q1, q2) + alpha * u_sample.log_prob))

        pick_q1 = (q1 <= q2).astype(np.float64)
        d_in = self.critics.q1.backward((-pick_q1 / n)[:, None], accumulate=False)
        d_in = d_in + self.critics.q2.backward((-(1.0 - pick_q1) / n)[:, None], accumulate=False)
        d_action = d_in[:, self.state_dim :]

        u = u_sample.pre_squash
        z = (u - head.location) / head.scale
        d_u_p, d_mu_p, d_sigma_p, d_nu_p = log_prob_partials(head, u)
        aw = alpha / n
        du_total = d_action * squash_deriv(u) + aw * d_u_p
        d_mu = du_total + aw * d_mu_p
        d_sigma = du_total * z + aw * d_sigma_p
        d_nu = aw * d_nu_p
        d_raw = head_backward(raw, d_mu, d_sigma, d_nu)

        # policy_head's forward tape is still current for these states
        self.actor.zero_grads()
        self.actor.backward(d_raw)
        return loss, u_sample.log_prob, noise

    def actor_step(self, batch: Batch, rng: np.random.Generator):
        """One policy gradient step; returns the loss and detached log-densities."""
        loss, log_pis, _ = self.actor_loss_and_grads(batch, rng=rng)
        optimizer_step(self.actor_opt, self.actor.params, self.actor.grads)
        return loss, log_pis

    def alpha_step(self, log_pis, deltas) -> float:
        g = alpha_gradient(log_pis, self.config.h_star, deltas)
        self.temperature.update(g)
        return g

    def train_on_episode_end(self, buffer: ReplayBuffer, rng: np.random.Generator) -> UpdateStats:
        """Run one replay epoch (half the buffer) of full update cycles."""
        batches = buffer.sample_epoch(self.config.batch_max, rng)
        if not batches:
            self.empty_epoch_count += 1
            return UpdateStats(alpha=self.temperature.alpha)
        totals = UpdateStats(n_batches=len(batches))
        for batch in batches:
            critic_loss = self.critic_step(batch, rng)
            actor_loss, log_pis = self.actor_step(batch, rng)
            deltas = self.deltas_for(batch.states)
            self.alpha_step(log_pis, deltas)
            if self.slack_net is not None:
                sstats = slack_update(
                    self.slack_net, batch.states, log_pis,
                    self.temperature.alpha, self.slack_config,
                )
            else:
                sstats = {"mean_delta": 0.0, "branch1_fraction": 0.0}
            self.critics.soft_update(self.config.tau)
            totals.critic_loss += critic_loss
            totals.actor_loss += actor_loss
            totals.mean_log_pi += float(np.mean(log_pis))
            totals.alpha += self.temperature.alpha
            totals.mean_delta += sstats["mean_delta"]
            totals.branch1_fraction += sstats["branch1_fraction"]
        k = totals.n_batches
        totals.critic_loss /= k
        totals.actor_loss /= k
        totals.mean_log_pi /= k
        totals.alpha /= k
        totals.mean_delta /= k
        totals.branch1_fraction /= k
        return totals

    # -- checkpoint plumbing ------------------------------------------------

    def named_parameter_groups(self):
        """(prefix, Mlp, OptimizerState) triples for every trainable network."""
        groups = [
            ("actor", self.actor, self.actor_opt),
            ("q1", self.critics.q1, self.critics.q1_opt),
            ("q2", self.critics.q2, self.critics.q2_opt),
        ]
        if self.slack_net is not None:
            groups.append(("slack", self.slack_net.net, self.slack_net.opt))
        return groups

    def state_arrays(self) -> dict:
        """Live references to every float64 array of the agent state."""
        out = {}
        for prefix, net, opt in self.named_parameter_groups():
            for name, arr in net.params.named_arrays():
                out[f"{prefix}/{name}"] = arr
            for name, arr in opt.named_arrays():
                out[f"{prefix}/opt/{name}"] = arr
        for name, arr in self.critics.q1_target.params.named_arrays():
            out[f"q1_target/{name}"] = arr
        for name, arr in self.critics.q2_target.params.named_arrays():
            out[f"q2_target/{name}"] = arr
        return out

    def state_meta(self) -> dict:
        meta = {
            "alpha_tilde": self.temperature.alpha_tilde,
            "empty_epoch_count": self.empty_epoch_count,
        }
        for prefix, _, opt in self.named_parameter_groups():
            meta[f"{prefix}/step_count"] = opt.step_count
            meta[f"{prefix}/skipped_updates"] = opt.skipped_updates
        return meta

    def restore_meta(self, meta: dict) -> None:
        self.temperature.alpha_tilde = float(meta["alpha_tilde"])
        self.temperature.alpha = float(np.exp(self.temperature.alpha_tilde))
        self.empty_epoch_count = int(meta["empty_epoch_count"])
        for prefix, _, opt in self.named_parameter_groups():
            opt.step_count = int(meta[f"{prefix}/step_count"])
            opt.skipped_updates = int(meta[f"{prefix}/skipped_updates"])
