"""Tests for the built-in environments and the attack wrapper.

Oracles: energy conservation for the pendulum integrator, a critically
damped linear system for the impedance dynamics, and binomial bounds for
the attack rate.
"""

import numpy as np
import pytest

from slacksac.envs import (
    AttackConfig,
    AttackWrapper,
    EnvSpec,
    ImpedanceTrack,
    Pendulum,
    PointMass,
    make_env,
)
from slacksac.nn import ConfigurationError


def rollout(env, seed, actions):
    states = [env.reset(seed)]
    rewards = []
    for a in actions:
        s, r, done, trunc = env.step(a)
        states.append(s)
        rewards.append(r)
    return np.array(states), np.array(rewards)


@pytest.mark.parametrize("name", ["point_mass", "pendulum", "impedance_track"])
class TestCommonInterface:
    def test_reset_deterministic(self, name):
        env = make_env(name)
        a = env.reset(seed=123)
        b = env.reset(seed=123)
        assert np.array_equal(a, b)
        assert a.shape == (env.spec.state_dim,)

    def test_trajectory_deterministic_and_finite(self, name):
        env1, env2 = make_env(name), make_env(name)
        rng = np.random.default_rng(0)
        actions = rng.uniform(-1.0, 1.0, size=(50, env1.spec.action_dim))
        s1, r1 = rollout(env1, 7, actions)
        s2, r2 = rollout(env2, 7, actions)
        assert np.array_equal(s1, s2)
        assert np.array_equal(r1, r2)
        assert np.all(np.isfinite(s1)) and np.all(np.isfinite(r1))

    def test_truncates_exactly_at_episode_length(self, name):
        env = make_env(name, episode_length=5)
        env.reset(seed=0)
        flags = [env.step(np.zeros(env.spec.action_dim))[2:] for _ in range(5)]
        dones = [f[0] for f in flags]
        truncs = [f[1] for f in flags]
        assert dones == [0.0] * 5
        assert truncs == [0.0, 0.0, 0.0, 0.0, 1.0]

    def test_clamp_counter(self, name):
        env = make_env(name)
        env.reset(seed=0)
        env.step(np.zeros(env.spec.action_dim))
        assert env.clamp_count == 0
        env.step(np.full(env.spec.action_dim, 1.5))
        assert env.clamp_count == 1

    def test_clamped_equals_explicit_clip(self, name):
        env1, env2 = make_env(name), make_env(name)
        env1.reset(seed=3)
        env2.reset(seed=3)
        big = np.full(env1.spec.action_dim, 2.0)
        s1 = env1.step(big)[0]
        s2 = env2.step(np.ones(env2.spec.action_dim))[0]
        assert np.array_equal(s1, s2)

    def test_bad_actions_rejected(self, name):
        env = make_env(name)
        env.reset(seed=0)
        with pytest.raises(ConfigurationError):
            env.step(np.zeros(env.spec.action_dim + 1))
        with pytest.raises(ConfigurationError):
            env.step(np.full(env.spec.action_dim, np.nan))


class TestPointMass:
    def test_init_distribution(self):
        env = PointMass()
        ps = np.array([env.reset(seed=s)[:2] for s in range(10**4)])
        vs = np.array([env.reset(seed=s)[2:] for s in range(100)])
        assert np.all(np.abs(ps) < 1.0)
        assert np.all(vs == 0.0)
        # both tails of the init box actually visited
        assert ps.min() < -0.99 and ps.max() > 0.99

    def test_zero_action_from_rest_is_fixed_point(self):
        env = PointMass()
        s0 = env.reset(seed=5)
        for _ in range(10):
            s, r, _, _ = env.step(np.zeros(2))
        assert np.array_equal(s, s0)

    def test_reward_formula(self):
        env = PointMass()
        env.reset(seed=1)
        env.p = np.array([0.6, -0.8])
        env.v = np.zeros(2)
        a = np.array([0.3, 0.4])
        _, r, _, _ = env.step(a)
        # positions move first, then reward uses the new position
        want = -(float(env.p @ env.p) + 0.01 * 0.25)
        assert r == pytest.approx(want, abs=1e-12)

    def test_force_moves_mass(self):
        env = PointMass()
        env.reset(seed=2)
        env.p = np.zeros(2)
        env.v = np.zeros(2)
        s, _, _, _ = env.step(np.array([1.0, 0.0]))
        # v = f_max * dt = 0.1, p = v * dt = 0.005
        assert s[2] == pytest.approx(0.1, abs=1e-12)
        assert s[0] == pytest.approx(0.005, abs=1e-12)


class TestPendulum:
    def test_energy_conserved_without_torque(self):
        env = Pendulum(episode_length=1000, dt=0.005)
        env.reset(seed=0)
        env.theta, env.theta_dot = np.pi - 0.1, 0.0
        e0 = env.energy()
        for _ in range(200):
            env.step(np.array([0.0]))
            assert abs(env.energy() - e0) < 1e-3

    def test_state_layout(self):
        env = Pendulum()
        env.reset(seed=0)
        env.theta, env.theta_dot = 0.3, -0.5
        s = env._state()
        np.testing.assert_allclose(s, [np.cos(0.3), np.sin(0.3), -0.5], atol=1e-15)

    def test_reward_at_upright_rest(self):
        env = Pendulum()
        env.reset(seed=0)
        env.theta, env.theta_dot = 0.0, 0.0
        _, r, _, _ = env.step(np.array([0.0]))
        assert r == pytest.approx(0.0, abs=1e-12)  # upright is an unstable fixed point

    def test_angle_wrap_in_reward(self):
        env1, env2 = Pendulum(), Pendulum()
        for e in (env1, env2):
            e.reset(seed=0)
            e.theta_dot = 0.0
        env1.theta = 0.1
        env2.theta = 0.1 + 2.0 * np.pi
        r1 = env1.step(np.array([0.0]))[1]
        r2 = env2.step(np.array([0.0]))[1]
        assert r1 == pytest.approx(r2, abs=1e-9)

    def test_speed_limit(self):
        env = Pendulum()
        env.reset(seed=0)
        env.theta, env.theta_dot = np.pi / 2.0, 7.9
        for _ in range(50):
            env.step(np.array([1.0]))
            assert abs(env.theta_dot) <= 8.0

    def test_init_ranges(self):
        env = Pendulum()
        thetas, vels = [], []
        for s in range(500):
            env.reset(seed=s)
            thetas.append(env.theta)
            vels.append(env.theta_dot)
        assert np.all(np.abs(thetas) <= np.pi)
        assert np.all(np.abs(vels) <= 1.0)


class TestImpedance:
    def test_reset_on_target(self):
        env = ImpedanceTrack()
        s = env.reset(seed=9)
        p, p_tar = s[0:2], s[4:6]
        assert np.array_equal(p, np.zeros(2))
        assert np.array_equal(p_tar, np.zeros(2))

    def test_target_formula(self):
        env = ImpedanceTrack()
        env.reset(seed=0)
        env.amp = np.array([0.1, 0.1])
        env.omega = np.array([0.5, 0.5])
        env.sign = np.array([1.0, 1.0])
        p0, _ = env.target(0.0)
        np.testing.assert_allclose(p0, 0.0, atol=1e-15)
        p_half, _ = env.target(1.0 / 0.5)  # half period: sin(pi) = 0
        np.testing.assert_allclose(p_half, 0.0, atol=1e-12)
        p1, v1 = env.target(1.0)
        np.testing.assert_allclose(p1, [0.1, 0.1], atol=1e-12)
        np.testing.assert_allclose(v1, 0.0, atol=1e-12)  # cos(pi/2) = 0

    def test_reward_values(self):
        assert ImpedanceTrack.reward_from(np.zeros(2), 0.01) == pytest.approx(1.0)
        assert ImpedanceTrack.reward_from(np.zeros(2), 0.06) == pytest.approx(0.0)
        assert ImpedanceTrack.reward_from(np.array([0.6, 0.4]), 0.06) == pytest.approx(
            np.exp(-1.0) - 1.0, abs=1e-12
        )
        assert ImpedanceTrack.reward_from(np.array([-0.6, 0.4]), 0.0) == pytest.approx(
            np.exp(-1.0), abs=1e-12
        )

    def test_gain_increments_and_clamps(self):
        env = ImpedanceTrack()
        env.reset(seed=0)
        env.kp = np.array([50.0, 99.0])
        env.kd = np.array([3.0, 9.9])
        env.step(np.array([1.0, 1.0, -1.0, 1.0]))
        np.testing.assert_allclose(env.kp, [55.0, 100.0], atol=1e-12)
        np.testing.assert_allclose(env.kd, [2.5, 10.0], atol=1e-12)
        env.step(np.zeros(4))
        np.testing.assert_allclose(env.kp, [55.0, 100.0], atol=1e-12)

    def test_gains_stay_in_boxes(self):
        env = ImpedanceTrack()
        env.reset(seed=1)
        rng = np.random.default_rng(2)
        for _ in range(200):
            env.step(rng.uniform(-1.0, 1.0, size=4))
            assert np.all((env.kp >= 0.0) & (env.kp <= 100.0))
            assert np.all((env.kd >= 0.0) & (env.kd <= 10.0))

    def test_critically_damped_error_monotone(self):
        # frozen target at origin; kp=25, kd=10 = 2 sqrt(kp m): critical damping
        env = ImpedanceTrack(amplitude_range=(0.0, 0.0))
        env.reset(seed=0)
        env.p = np.array([0.1, -0.08])
        env.kp = np.full(2, 25.0)
        env.kd = np.full(2, 10.0)
        errors = [float(np.linalg.norm(env.p))]
        for _ in range(300):
            env.step(np.zeros(4))
            errors.append(float(np.linalg.norm(env.p)))
        assert np.all(np.diff(errors) <= 1e-15)
        assert errors[-1] < 1e-8

    def test_state_layout(self):
        env = ImpedanceTrack()
        s = env.reset(seed=3)
        assert s.shape == (14,)
        np.testing.assert_allclose(s[10:12], env.kp / 100.0, atol=1e-15)
        np.testing.assert_allclose(s[12:14], env.kd / 10.0, atol=1e-15)

    def test_reward_range(self):
        env = ImpedanceTrack()
        env.reset(seed=4)
        rng = np.random.default_rng(5)
        for _ in range(500):
            _, r, _, _ = env.step(rng.uniform(-1.0, 1.0, size=4))
            assert -1.0 < r <= 1.0


class SpyEnv:
    """Records the actions it receives; used to observe attack replacements."""

    def __init__(self, action_dim=3):
        self.spec = EnvSpec("spy", 1, action_dim, 10**9, 1.0)
        self.seen = []

    def reset(self, seed):
        return np.zeros(1)

    def step(self, action):
        self.seen.append(np.array(action, dtype=np.float64))
        return np.zeros(1), 0.0, 0.0, 0.0


class TestAttackWrapper:
    def test_passthrough_at_zero_probability(self):
        spy = SpyEnv()
        wrapped = AttackWrapper(spy, AttackConfig(probability=0.0, rng_seed=0))
        wrapped.reset(seed=0)
        sent = np.array([0.9, -0.4, 0.1])
        for _ in range(50):
            *_, attacked = wrapped.step(sent)
            assert not attacked
        assert all(np.array_equal(a, sent) for a in spy.seen)

    def test_always_attacked_replacements_bounded(self):
        spy = SpyEnv()
        wrapped = AttackWrapper(spy, AttackConfig(probability=1.0, rng_seed=1))
        wrapped.reset(seed=0)
        sent = np.ones(3)
        for _ in range(500):
            *_, attacked = wrapped.step(sent)
            assert attacked
        seen = np.array(spy.seen)
        assert np.all(np.abs(seen) < 0.2)
        assert not np.any(np.all(seen == sent, axis=1))

    def test_attack_rate_binomial_bound(self):
        spy = SpyEnv(action_dim=1)
        p = 0.2
        wrapped = AttackWrapper(spy, AttackConfig(probability=p, rng_seed=2))
        wrapped.reset(seed=0)
        n = 10**5
        hits = sum(wrapped.step(np.zeros(1))[-1] for _ in range(n))
        bound = 3.0 * np.sqrt(p * (1.0 - p) / n)
        assert abs(hits / n - p) < bound

    def test_bad_probability_rejected(self):
        with pytest.raises(ConfigurationError):
            AttackConfig(probability=1.5, rng_seed=0)

    def test_wrapper_forwards_env_results(self):
        env = PointMass()
        wrapped = AttackWrapper(env, AttackConfig(probability=0.0, rng_seed=3))
        s0 = wrapped.reset(seed=11)
        env2 = PointMass()
        s0b = env2.reset(seed=11)
        assert np.array_equal(s0, s0b)
        a = np.array([0.5, -0.5])
        s1, r1, d1, t1, attacked = wrapped.step(a)
        s1b, r1b, d1b, t1b = env2.step(a)
        assert np.array_equal(s1, s1b) and r1 == r1b and d1 == d1b and t1 == t1b


class TestFactory:
    def test_unknown_name(self):
        with pytest.raises(ConfigurationError):
            make_env("cartpole")

    def test_overrides_forwarded(self):
        env = make_env("point_mass", episode_length=7, dt=0.1)
        assert env.spec.episode_length == 7
        assert env.spec.dt == 0.1
