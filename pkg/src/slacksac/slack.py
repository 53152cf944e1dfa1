"""State-dependent slack on the policy-entropy lower bound.

The entropy constraint H(pi) >= H* is recast as the equality
H(pi) = H* + Delta(s) with a learned slack Delta(s) in [0, Delta_bar].
A small network outputs a real d(s); the bounded slack is
Delta = Delta_bar * squareplus_sigmoid(d). Training minimizes an
epsilon-insensitive switching loss on the residual
e = ln pi + H* + Delta: outside the band the loss restores |e| toward the
band, inside it a weak alpha-weighted pull shrinks Delta toward zero. The
gradient is taken with respect to Delta and applied to d directly (mirror
descent), which keeps the step size alive in the sigmoid tails. The stable
rest point is e = -epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError, Mlp, OptimizerState, optimizer_step, squareplus_sigmoid

CONTINUOUS = "continuous"
DISCRETE = "discrete"


def delta_upper_bound(kind: str, size: int, h_star: float) -> float:
    """Largest admissible slack: max-entropy of a uniform policy minus H*.

    Continuous actions on (-1,1)^size have max entropy size*ln2; a discrete
    set of `size` actions has max entropy ln(size).
    """
    if size < 1:
        raise ConfigurationError(f"action size must be >= 1, got {size}")
    if kind == CONTINUOUS:
        bound = size * np.log(2.0) - h_star
    elif kind == DISCRETE:
        bound = np.log(float(size)) - h_star
    else:
        raise ConfigurationError(f"unknown action space kind {kind!r}")
    if bound < 0.0:
        raise ConfigurationError(
            f"h_star={h_star} exceeds the maximal entropy; slack bound would be {bound}"
        )
    return float(bound)


def map_to_delta(d, delta_bar: float):
    """Bounded slack Delta = Delta_bar * squareplus_sigmoid(d) in [0, Delta_bar]."""
    if delta_bar < 0.0:
        raise ConfigurationError("delta_bar must be non-negative")
    return delta_bar * squareplus_sigmoid(d)


def constraint_residual(log_pi, h_star: float, delta):
    """Residual e = ln pi + H* + Delta of the slack equality constraint."""
    return np.asarray(log_pi, dtype=np.float64) + h_star + np.asarray(delta, dtype=np.float64)


def slack_loss_direct(log_pi, h_star: float, delta, alpha: float, epsilon: float):
    """Switching loss on Delta: |e| outside the band, alpha*Delta inside (|e| <= epsilon)."""
    e = constraint_residual(log_pi, h_star, delta)
    return np.where(np.abs(e) > epsilon, np.abs(e), alpha * np.asarray(delta, dtype=np.float64))


def slack_loss_mirror(log_pi, h_star: float, delta, alpha: float, epsilon: float, d):
    """Mirror form of the switching loss, linear in the raw output d.

    Its d-gradient is sign(e) outside the band and alpha inside, so the step
    does not vanish where the sigmoid saturates.
    """
    e = constraint_residual(log_pi, h_star, delta)
    d = np.asarray(d, dtype=np.float64)
    return np.where(np.abs(e) > epsilon, np.sign(e) * d, alpha * d)


def mirror_gradient(e, alpha: float, epsilon: float):
    """d-gradient of slack_loss_mirror: sign(e) if |e| > epsilon else alpha."""
    e = np.asarray(e, dtype=np.float64)
    return np.where(np.abs(e) > epsilon, np.sign(e), alpha)


@dataclass(frozen=True)
class SlackConfig:
    """Frozen slack hyperparameters; build via SlackConfig.create."""

    action_space_kind: str
    action_dim_or_count: int
    h_star: float
    epsilon: float
    delta_bar: float

    @classmethod
    def create(
        cls,
        kind: str,
        size: int,
        h_star: float,
        epsilon: float | None = None,
    ) -> "SlackConfig":
        if epsilon is None:
            epsilon = 0.1 * size
        if epsilon < 0.0:
            raise ConfigurationError("epsilon must be non-negative")
        return cls(
            action_space_kind=kind,
            action_dim_or_count=int(size),
            h_star=float(h_star),
            epsilon=float(epsilon),
            delta_bar=delta_upper_bound(kind, size, h_star),
        )


class SlackNet:
    """Network d(s) with its optimizer; output layer starts at zero.

    Zero output weights put d(s) = 0 everywhere, so training starts from
    Delta = Delta_bar / 2, the midpoint of the feasible interval.
    """

    def __init__(
        self,
        state_dim: int,
        hidden: tuple[int, ...],
        seed: int,
        learning_rate: float = 3e-4,
    ):
        self.net = Mlp([state_dim, *hidden, 1], seed)
        self.net.params.layers[-1].weight[...] = 0.0
        self.net.params.layers[-1].bias[...] = 0.0
        self.opt = OptimizerState.for_params(self.net.params, learning_rate=learning_rate)

    def raw(self, states) -> np.ndarray:
        """d(s) for a batch of states, shape (batch,)."""
        out = self.net.forward(np.atleast_2d(np.asarray(states, dtype=np.float64)))
        return out[:, 0]

    def delta(self, states, config: SlackConfig) -> np.ndarray:
        return map_to_delta(self.raw(states), config.delta_bar)


def slack_update(
    net: SlackNet,
    states,
    log_pis,
    alpha: float,
    config: SlackConfig,
) -> dict:
    """One mirror-descent step of the slack network on a batch.

    log_pis must come from current-policy samples and carry no gradient.
    Returns batch diagnostics; an empty batch is a no-op.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    log_pis = np.asarray(log_pis, dtype=np.float64).reshape(-1)
    if log_pis.size == 0:
        return {"mean_delta": 0.0, "mean_residual": 0.0, "branch1_fraction": 0.0}
    if states.shape[0] != log_pis.size:
        raise ConfigurationError("states and log_pis lengths differ")
    d = net.net.forward(states)
    delta = map_to_delta(d[:, 0], config.delta_bar)
    e = constraint_residual(log_pis, config.h_star, delta)
    g = mirror_gradient(e, alpha, config.epsilon) / log_pis.size
    net.net.zero_grads()
    net.net.backward(g[:, None])
    optimizer_step(net.opt, net.net.params, net.net.grads)
    return {
        "mean_delta": float(np.mean(delta)),
        "mean_residual": float(np.mean(e)),
        "branch1_fraction": float(np.mean(np.abs(e) > config.epsilon)),
    }
