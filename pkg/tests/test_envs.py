import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from oracles import binomial_3sigma
from sqtlab.envs import (
    CONTINUOUS_ENVS,
    Pendulum,
    PointMass,
    TabularMDP,
    env_reset,
    env_step,
    make_chain_mdp,
    make_env,
    make_maximization_bias_mdp,
    make_random_mdp,
    mdp_sample_step,
    wrap_angle,
)
from sqtlab.errors import ConfigError, InvalidActionError, InvalidStateError
from sqtlab.numerics import make_rng
from sqtlab.tabular import value_iteration


def rollout(env, seed, steps):
    """Trace of (obs, reward, done) under a seeded random policy."""
    rng = make_rng(seed)
    trace = [env_reset(env, rng)]
    for _ in range(steps):
        s, r, done = env_step(env, rng.uniform(env.action_low, env.action_high))
        trace.append((s, r, done))
        if done:
            trace.append(env_reset(env, rng))
    return trace


class TestReset:
    def test_point_mass_seeded_reset(self):
        a = env_reset(PointMass(), make_rng(0))
        b = env_reset(PointMass(), make_rng(0))
        assert_array_equal(a, b)
        assert np.all(np.abs(a[:2]) <= 1.0)
        assert_array_equal(a[2:], 0.0)

    def test_pendulum_reset_ranges(self):
        env = Pendulum()
        rng = make_rng(0)
        thetas, speeds = [], []
        for _ in range(1000):
            obs = env_reset(env, rng)
            thetas.append(env.theta)
            speeds.append(env.theta_dot)
            assert_allclose(obs, [math.cos(env.theta), math.sin(env.theta), env.theta_dot])
        assert -math.pi <= min(thetas) and max(thetas) <= math.pi
        assert -1.0 <= min(speeds) and max(speeds) <= 1.0
        # the draws cover the documented ranges
        assert max(thetas) - min(thetas) > 6.0
        assert max(speeds) - min(speeds) > 1.9

    @pytest.mark.parametrize("env_id", sorted(CONTINUOUS_ENVS))
    def test_reset_zeroes_counter(self, env_id):
        env = make_env(env_id)
        rng = make_rng(1)
        env_reset(env, rng)
        for _ in range(5):
            env_step(env, np.zeros(env.action_dim))
        env_reset(env, rng)
        assert env.steps == 0

    def test_unknown_env(self):
        with pytest.raises(ConfigError):
            make_env("humanoid")


class TestPointMass:
    def test_goal_is_absorbing_success(self):
        env = PointMass()
        env.reset(make_rng(0))
        env.set_state([0.0, 0.0], [0.0, 0.0])
        _, r, done = env_step(env, [0.0, 0.0])
        assert r == 0.0
        assert done and env.terminated

    def test_frozen_off_goal(self):
        env = PointMass()
        env.reset(make_rng(0))
        env.set_state([1.0, 0.0], [0.0, 0.0])
        s, r, done = env_step(env, [0.0, 0.0])
        assert_array_equal(s, [1.0, 0.0, 0.0, 0.0])
        assert r == -1.0
        assert not done

    def test_dynamics_by_hand(self):
        env = PointMass()
        env.reset(make_rng(0))
        env.set_state([0.5, -0.5], [1.0, 0.4])
        s, r, _ = env_step(env, [1.0, -0.5])
        pos = np.array([0.5 + 0.05, -0.5 + 0.02])
        assert_allclose(s, [*pos, 1.05, 0.4 - 0.025], rtol=0, atol=1e-15)
        assert_allclose(r, -np.linalg.norm(pos) - 0.01 * 1.25, rtol=0, atol=1e-15)

    def test_wall_stops_motion(self):
        env = PointMass()
        env.reset(make_rng(0))
        env.set_state([1.99, 0.0], [1.0, 0.0])
        s, _, _ = env_step(env, [1.0, 0.0])
        assert_array_equal(s[[0, 2]], [2.0, 0.0])

    def test_truncation_at_horizon(self):
        env = PointMass()
        env.reset(make_rng(0))
        env.set_state([1.0, 1.0], [0.0, 0.0])
        for t in range(200):
            _, _, done = env_step(env, [0.0, 0.0])
            assert done == (t == 199)
        assert not env.terminated

    def test_out_of_box_action_is_clipped(self):
        env_a, env_b = PointMass(), PointMass()
        for env in (env_a, env_b):
            env.reset(make_rng(0))
        sa, ra, _ = env_step(env_a, [5.0, -7.0])
        sb, rb, _ = env_step(env_b, [1.0, -1.0])
        assert_array_equal(sa, sb)
        assert ra == rb

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_action(self, bad):
        env = PointMass()
        env.reset(make_rng(0))
        with pytest.raises(InvalidActionError):
            env_step(env, [bad, 0.0])


class TestPendulum:
    def test_hanging_reward(self):
        env = Pendulum()
        env.reset(make_rng(0))
        env.set_state(math.pi, 0.0)
        _, r, done = env_step(env, [0.0])
        assert r == pytest.approx(-(math.pi**2), abs=1e-12)
        assert r == pytest.approx(-9.8696, abs=1e-4)
        assert not done

    def test_upright_is_equilibrium(self):
        env = Pendulum()
        env.reset(make_rng(0))
        env.set_state(0.0, 0.0)
        s, r, _ = env_step(env, [0.0])
        assert r == 0.0
        assert_array_equal(s, [1.0, 0.0, 0.0])

    def test_one_step_by_hand(self):
        env = Pendulum()
        env.reset(make_rng(0))
        th, thdot, u = 0.7, -0.3, 1.5
        env.set_state(th, thdot)
        s, r, _ = env_step(env, [u])
        new_dot = thdot + (15.0 * math.sin(th) + 3.0 * u) * 0.05
        new_th = th + new_dot * 0.05
        assert_allclose(s, [math.cos(new_th), math.sin(new_th), new_dot], rtol=0, atol=1e-15)
        assert r == pytest.approx(-(th**2 + 0.1 * thdot**2 + 0.001 * u**2), abs=1e-15)

    def test_speed_limit(self):
        env = Pendulum()
        env.reset(make_rng(0))
        env.set_state(math.pi / 2, 7.9)
        s, _, _ = env_step(env, [2.0])
        assert s[2] == 8.0

    def test_never_terminates_early(self):
        env = Pendulum()
        env.reset(make_rng(0))
        dones = [env_step(env, [2.0])[2] for _ in range(200)]
        assert not any(dones[:-1]) and dones[-1]
        assert not env.terminated

    @pytest.mark.parametrize(
        "theta, wrapped", [(0.0, 0.0), (math.pi, -math.pi), (3 * math.pi / 2, -math.pi / 2), (-7.0, -7.0 + 2 * math.pi)]
    )
    def test_wrap_angle(self, theta, wrapped):
        assert wrap_angle(theta) == pytest.approx(wrapped, abs=1e-12)


class TestInvariants:
    @pytest.mark.parametrize("env_id", sorted(CONTINUOUS_ENVS))
    def test_seeded_trace_is_reproducible(self, env_id):
        a = rollout(make_env(env_id), 3, 500)
        b = rollout(make_env(env_id), 3, 500)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            if isinstance(x, tuple):
                assert_array_equal(x[0], y[0])
                assert x[1:] == y[1:]
            else:
                assert_array_equal(x, y)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_point_mass_reward_bounds(self, seed):
        bound = math.sqrt(2) * 2.0 + 0.01 * 2.0
        for item in rollout(PointMass(), seed, 300):
            if isinstance(item, tuple):
                assert -bound <= item[1] <= 0.0
                assert np.all(np.isfinite(item[0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_pendulum_reward_bounds(self, seed):
        bound = math.pi**2 + 0.1 * 64 + 0.001 * 4
        for item in rollout(Pendulum(), seed, 300):
            if isinstance(item, tuple):
                assert -bound <= item[1] <= 0.0


class TestMaxBiasMdp:
    def test_rows_are_distributions(self):
        mdp = make_maximization_bias_mdp(8, -0.1, 1.0)
        assert_allclose(mdp.transition.sum(axis=2), 1.0, rtol=0, atol=1e-12)

    def test_optimal_values(self):
        q = value_iteration(make_maximization_bias_mdp(8, -0.1, 1.0, gamma=1.0))
        assert q.values[0, 0] == pytest.approx(-0.1, abs=1e-12)
        assert q.values[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_discounted_optimal_value(self):
        q = value_iteration(make_maximization_bias_mdp(4, -0.5, 1.0, gamma=0.9))
        assert q.values[0, 0] == pytest.approx(-0.45, abs=1e-12)

    @pytest.mark.parametrize("kwargs", [{"n_arms": 1}, {"sigma": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            make_maximization_bias_mdp(**kwargs)

    def test_random_mdp_rows(self):
        mdp = make_random_mdp(make_rng(0), 6, 3)
        assert_allclose(mdp.transition.sum(axis=2), 1.0, rtol=0, atol=1e-12)

    def test_bad_rows_rejected(self):
        P = np.array([[[0.5, 0.6]], [[0.0, 1.0]]])
        with pytest.raises(ConfigError):
            TabularMDP(P, 0.0, 0.0, 0.9, [False, True])

    def test_bad_gamma_rejected(self):
        P = np.array([[[0.0, 1.0]], [[0.0, 1.0]]])
        with pytest.raises(ConfigError):
            TabularMDP(P, 0.0, 0.0, 1.5, [False, True])


class TestSampleStep:
    def test_deterministic_successor(self):
        mdp = make_chain_mdp(3)
        rng = make_rng(0)
        for _ in range(20):
            assert mdp_sample_step(mdp, 1, 0, rng) == (2, 1.0)

    def test_zero_std_reward_is_exact(self):
        mdp = make_maximization_bias_mdp(8, -0.1, 0.0)
        rng = make_rng(0)
        for a in range(8):
            s_next, r = mdp_sample_step(mdp, 1, a, rng)
            assert (s_next, r) == (2, -0.1)

    def test_transition_frequencies(self):
        mdp = make_random_mdp(make_rng(0), 4, 2)
        rng = make_rng(1)
        n = 100_000
        counts = np.zeros(4, dtype=int)
        for _ in range(n):
            counts[mdp_sample_step(mdp, 2, 1, rng)[0]] += 1
        for k in range(4):
            assert binomial_3sigma(counts[k], n, mdp.transition[2, 1, k])

    def test_reward_moments(self):
        mdp = make_maximization_bias_mdp(8, -0.1, 1.0)
        rng = make_rng(2)
        rewards = np.array([mdp_sample_step(mdp, 1, 3, rng)[1] for _ in range(20_000)])
        assert abs(rewards.mean() + 0.1) < 3 / math.sqrt(20_000)
        assert rewards.std() == pytest.approx(1.0, abs=0.03)

    def test_terminal_state_rejected(self):
        mdp = make_maximization_bias_mdp()
        with pytest.raises(InvalidStateError):
            mdp_sample_step(mdp, 2, 0, make_rng(0))

    def test_invalid_action_rejected(self):
        mdp = make_maximization_bias_mdp()
        with pytest.raises(IndexError):
            mdp_sample_step(mdp, 0, 5, make_rng(0))
