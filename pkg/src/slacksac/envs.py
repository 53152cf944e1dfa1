"""Desk-scale continuous-control environments and the attack wrapper.

All environments share one interface: reset(seed) -> state and
step(action) -> (next_state, reward, done, truncated). Actions live in
[-1,1]^dim; out-of-box components are clamped and counted. Dynamics use
semi-implicit Euler at a fixed dt and are deterministic given the reset
seed and the action sequence. None of the tasks has a failure state, so
done never fires; episodes end by truncation at episode_length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError
from .policy import squash


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    episode_length: int
    dt: float


class _EnvBase:
    spec: EnvSpec

    def __init__(self):
        self.clamp_count = 0
        self._t_step = 0

    def _take_action(self, action) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.spec.action_dim,):
            raise ConfigurationError(
                f"action shape {action.shape} != ({self.spec.action_dim},)"
            )
        if not np.all(np.isfinite(action)):
            raise ConfigurationError("action contains non-finite values")
        clipped = np.clip(action, -1.0, 1.0)
        if np.any(clipped != action):
            self.clamp_count += 1
        return clipped

    def _advance_clock(self) -> bool:
        self._t_step += 1
        return self._t_step >= self.spec.episode_length


class PointMass(_EnvBase):
    """Damped unit mass on a plane pushed toward the origin.

    State (px, py, vx, vy). Force is f_max * action, damping coefficient c.
    Reward -(||p||^2 + 0.01 ||a||^2). Starts at rest with p ~ U(-1,1)^2.
    """

    def __init__(self, episode_length: int = 200, dt: float = 0.05,
                 f_max: float = 2.0, damping: float = 1.0, mass: float = 1.0):
        super().__init__()
        self.spec = EnvSpec("point_mass", 4, 2, episode_length, dt)
        self.f_max = f_max
        self.damping = damping
        self.mass = mass
        self.p = np.zeros(2)
        self.v = np.zeros(2)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.p = rng.uniform(-1.0, 1.0, size=2)
        self.v = np.zeros(2)
        self._t_step = 0
        return self._state()

    def _state(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])

    def step(self, action):
        a = self._take_action(action)
        force = self.f_max * a
        self.v = self.v + (force - self.damping * self.v) / self.mass * self.spec.dt
        self.p = self.p + self.v * self.spec.dt
        reward = -(float(self.p @ self.p) + 0.01 * float(a @ a))
        return self._state(), reward, 0.0, float(self._advance_clock())


class Pendulum(_EnvBase):
    """Torque-limited swing-up of a uniform rod, angle measured from upright.

    State (cos th, sin th, th_dot). Dynamics th_ddot = (3g / 2l) sin th
    + 3 tau / (m l^2) with tau = tau_max * action; th_dot clipped to +-8.
    Reward -(wrap(th)^2 + 0.1 th_dot^2 + 0.001 tau^2).
    """

    def __init__(self, episode_length: int = 200, dt: float = 0.05,
                 tau_max: float = 2.0, mass: float = 1.0, length: float = 1.0,
                 gravity: float = 10.0, speed_limit: float = 8.0):
        super().__init__()
        self.spec = EnvSpec("pendulum", 3, 1, episode_length, dt)
        self.tau_max = tau_max
        self.mass = mass
        self.length = length
        self.gravity = gravity
        self.speed_limit = speed_limit
        self.theta = 0.0
        self.theta_dot = 0.0

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.theta = float(rng.uniform(-np.pi, np.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))
        self._t_step = 0
        return self._state()

    def _state(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])

    def energy(self) -> float:
        """Rod kinetic + potential energy about the pivot (diagnostics)."""
        inertia = self.mass * self.length**2 / 3.0
        kinetic = 0.5 * inertia * self.theta_dot**2
        potential = self.mass * self.gravity * (self.length / 2.0) * np.cos(self.theta)
        return float(kinetic + potential)

    def step(self, action):
        a = self._take_action(action)
        tau = self.tau_max * float(a[0])
        accel = (
            1.5 * self.gravity / self.length * np.sin(self.theta)
            + 3.0 * tau / (self.mass * self.length**2)
        )
        self.theta_dot = float(
            np.clip(self.theta_dot + accel * self.spec.dt, -self.speed_limit, self.speed_limit)
        )
        self.theta = self.theta + self.theta_dot * self.spec.dt
        wrapped = (self.theta + np.pi) % (2.0 * np.pi) - np.pi
        reward = -(wrapped**2 + 0.1 * self.theta_dot**2 + 0.001 * tau**2)
        return self._state(), float(reward), 0.0, float(self._advance_clock())


class ImpedanceTrack(_EnvBase):
    """Variable-impedance tracking of a sinusoidal target on two axes.

    The agent does not push the mass directly; it adjusts per-axis spring
    stiffness k_p in [0,100] and damping k_d in [0,10] in +-5%-of-max
    increments (action = (dk_p_x, dk_p_y, dk_d_x, dk_d_y) scaled by 5 and
    0.5). The spring-damper produces effort
    tau = k_p (p_tar - p) + k_d (v_tar - v) on a unit mass. Reward
    exp(-sum|tau_i|) - 1{tracking error > 0.05 m}. The target is
    p_tar_i(t) = sign_i * A_i * sin(omega_i * pi * t) from the origin, with
    A ~ U(0.05, 0.15) and omega ~ U(0.1, 0.9) drawn at reset.

    State (14): p, v, p_tar, v_tar, tau, k_p/100, k_d/10.
    """

    ERROR_TOLERANCE = 0.05
    KP_MAX = 100.0
    KD_MAX = 10.0

    def __init__(self, episode_length: int = 500, dt: float = 0.02,
                 amplitude_range: tuple[float, float] = (0.05, 0.15),
                 frequency_range: tuple[float, float] = (0.1, 0.9),
                 kp_init: float = 30.0, kd_init: float = 3.0, mass: float = 1.0):
        super().__init__()
        self.spec = EnvSpec("impedance_track", 14, 4, episode_length, dt)
        self.amplitude_range = amplitude_range
        self.frequency_range = frequency_range
        self.kp_init = kp_init
        self.kd_init = kd_init
        self.mass = mass
        self.p = np.zeros(2)
        self.v = np.zeros(2)
        self.kp = np.full(2, kp_init)
        self.kd = np.full(2, kd_init)
        self.tau = np.zeros(2)
        self.amp = np.zeros(2)
        self.omega = np.zeros(2)
        self.sign = np.ones(2)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.amp = rng.uniform(*self.amplitude_range, size=2)
        self.omega = rng.uniform(*self.frequency_range, size=2)
        self.sign = np.where(rng.uniform(size=2) < 0.5, -1.0, 1.0)
        self.p = np.zeros(2)
        self.v = np.zeros(2)
        self.kp = np.full(2, self.kp_init)
        self.kd = np.full(2, self.kd_init)
        self.tau = np.zeros(2)
        self._t_step = 0
        return self._state()

    def target(self, t: float):
        """Target position and velocity at time t seconds."""
        phase = self.omega * np.pi * t
        p_tar = self.sign * self.amp * np.sin(phase)
        v_tar = self.sign * self.amp * self.omega * np.pi * np.cos(phase)
        return p_tar, v_tar

    def _state(self) -> np.ndarray:
        p_tar, v_tar = self.target(self._t_step * self.spec.dt)
        return np.concatenate(
            [self.p, self.v, p_tar, v_tar, self.tau, self.kp / self.KP_MAX, self.kd / self.KD_MAX]
        )

    @staticmethod
    def reward_from(efforts: np.ndarray, tracking_error: float) -> float:
        """exp(-sum|tau_i|) minus 1 when the error leaves the tolerance band."""
        bonus = float(np.exp(-np.sum(np.abs(efforts))))
        return bonus - float(tracking_error > ImpedanceTrack.ERROR_TOLERANCE)

    def step(self, action):
        a = self._take_action(action)
        # +-5% of each gain's maximum per step
        self.kp = np.clip(self.kp + 0.05 * self.KP_MAX * a[0:2], 0.0, self.KP_MAX)
        self.kd = np.clip(self.kd + 0.05 * self.KD_MAX * a[2:4], 0.0, self.KD_MAX)
        p_tar, v_tar = self.target(self._t_step * self.spec.dt)
        self.tau = self.kp * (p_tar - self.p) + self.kd * (v_tar - self.v)
        self.v = self.v + self.tau / self.mass * self.spec.dt
        self.p = self.p + self.v * self.spec.dt
        truncated = self._advance_clock()
        p_tar_next, _ = self.target(self._t_step * self.spec.dt)
        error = float(np.linalg.norm(p_tar_next - self.p))
        reward = self.reward_from(self.tau, error)
        return self._state(), reward, 0.0, float(truncated)


@dataclass(frozen=True)
class AttackConfig:
    """Random action-replacement attack: probability per step, fixed 0.2 amplitude."""

    probability: float
    rng_seed: int = 0
    amplitude: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError(f"attack probability {self.probability} outside [0,1]")


class AttackWrapper:
    """Replaces the whole action with bounded noise at random steps.

    With the configured probability, independently per step, the action
    becomes amplitude * squash(z) with z standard normal per dimension, so
    every replacement lies strictly inside (-amplitude, amplitude)^dim.
    step() additionally reports whether the replacement fired.
    """

    def __init__(self, env, config: AttackConfig):
        self.env = env
        self.config = config
        self._rng = np.random.default_rng(config.rng_seed)

    @property
    def spec(self) -> EnvSpec:
        return self.env.spec

    def reset(self, seed: int) -> np.ndarray:
        return self.env.reset(seed)

    def step(self, action):
        attacked = bool(self._rng.uniform() < self.config.probability)
        if attacked:
            z = self._rng.standard_normal(self.env.spec.action_dim)
            action = self.config.amplitude * squash(z)
        next_state, reward, done, truncated = self.env.step(action)
        return next_state, reward, done, truncated, attacked


ENV_BUILDERS = {
    "point_mass": PointMass,
    "pendulum": Pendulum,
    "impedance_track": ImpedanceTrack,
}


def make_env(name: str, **overrides):
    """Build a named environment, forwarding keyword overrides."""
    try:
        builder = ENV_BUILDERS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown env {name!r}; choices: {sorted(ENV_BUILDERS)}"
        ) from None
    return builder(**overrides)
