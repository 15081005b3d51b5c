"""
Episodic environment and reward tests.
"""
import pytest
import numpy as np
import jax
from jax import numpy as jnp
jax.config.update("jax_enable_x64", True)

from uwarm_py.dynamics import ArmModel, Degradation
from uwarm_py.environment import (
    RewardParams, validate_reward_params, reward, in_bounds, sample_goal,
    normalize_state, AgentState, ArmEnv)
from uwarm_py.errors import ConfigError, EpisodeFinishedError


def test_reward_values():
    """
    Zero at the goal, the Gaussian value one sigma away, the penalty outside.
    """
    params = RewardParams()
    q_req = jnp.array([2.64, 0.26, -1.47, 0.82])
    assert reward(params, q_req, q_req) == 0.0
    d = jnp.array([0.6, 0.8, 0.0, 0.0]) * params.sigma
    assert abs(reward(params, q_req + d, q_req) - (-1. + np.exp(-0.5))) < 1e-12
    assert reward(params, jnp.array([3.2, 0., 0., 0.]), q_req) == -10.0
    # bounds are strict
    assert reward(params, jnp.array([3.0, 0., 0., 0.]), q_req) == -10.0
    assert reward(params, q_req + 10., q_req) == -10.0


def test_reward_range_and_monotone():
    """
    In bounds the reward lies in (-1, 0] and decreases with the error norm.
    """
    params = RewardParams()
    q_req = jnp.zeros(4)
    np.random.seed(1)
    direction = np.random.randn(4)
    direction /= np.linalg.norm(direction)
    r_prev = 0.0
    for dist in np.linspace(0., 0.1, 50):
        r = reward(params, q_req + dist*direction, q_req)
        assert -1. <= r <= 0.
        assert r <= r_prev + 1e-15
        r_prev = r


def test_reward_per_joint():
    params = RewardParams(aggregate="per_joint")
    q_req = jnp.zeros(4)
    q = jnp.array([params.sigma, 0., 0., 0.])
    expected = -1. + 0.25*(np.exp(-0.5) + 3.)
    assert abs(reward(params, q, q_req) - expected) < 1e-12


def test_reward_joint_permutation():
    """
    Relabeling the joints of both q and q_req leaves the reward unchanged.
    """
    np.random.seed(5)
    q_req = jnp.asarray(np.random.uniform(-2., 2., 4))
    for aggregate in ("norm", "per_joint"):
        params = RewardParams(aggregate=aggregate)
        for _ in range(20):
            q = q_req + jnp.asarray(np.random.normal(0., 0.02, 4))
            perm = np.random.permutation(4)
            r = reward(params, q, q_req)
            r_perm = reward(params, q[perm], q_req[perm])
            assert abs(r - r_perm) < 1e-14


def test_validate_reward_params():
    with pytest.raises(ConfigError, match="reward.sigma"):
        validate_reward_params(RewardParams(sigma=0.0))
    with pytest.raises(ConfigError, match="reward.violation_penalty"):
        validate_reward_params(RewardParams(violation_penalty=-0.5))
    with pytest.raises(ConfigError, match="reward.aggregate"):
        validate_reward_params(RewardParams(aggregate="sum"))


def test_sample_goal_bounds_and_mean():
    """
    Goals stay inside the margin reduced box, the sample mean is near the midpoint.
    """
    model = ArmModel()
    keys = jax.random.split(jax.random.PRNGKey(3), 100_000)
    goals = np.asarray(jax.vmap(lambda k: sample_goal(model, k, 0.05))(keys))
    assert np.all(goals >= -2.95) and np.all(goals <= 2.95)
    mean = goals.mean(axis=0)
    print("goal sample mean: %s" % mean)
    # midpoint is 0, interval half width 2.95
    assert np.all(np.abs(mean) < 0.02*2.95)
    again = np.asarray(sample_goal(model, keys[0], 0.05))
    assert np.all(again == goals[0])


def test_normalize_state():
    model = ArmModel()
    s = AgentState(jnp.array([-3., 0., 3., 1.5]), jnp.array([8., -4., 0., 0.]), jnp.zeros(4))
    x = np.asarray(normalize_state(model, s))
    assert np.allclose(x[:4], [-1., 0., 1., 0.5])
    assert np.allclose(x[4:8], [1., -0.5, 0., 0.])
    assert np.allclose(x[8:], 0.)


def test_env_episode_length():
    """
    A zero torque episode in bounds runs to the step limit and logs every step.
    """
    model = ArmModel()
    env = ArmEnv(model, episode_seconds=1.0, seed=0)
    obs = env.reset(goal=[0.1, 0.2, 0.3, 0.4])
    assert np.all(np.asarray(obs.q_req) == np.array([0.1, 0.2, 0.3, 0.4]))
    n = 0
    while not env.terminal:
        obs, r, done = env.step(jnp.zeros(4))
        n += 1
        assert -1. <= r <= 0.
    assert n == 20 == env.n_steps
    assert not env.violated
    with pytest.raises(EpisodeFinishedError):
        env.step(jnp.zeros(4))
    log = env.episode_log()
    assert len(log) == 20
    assert np.allclose(log.t, 0.05*np.arange(20))
    # rows hold pre step states, the reached state closes the last interval
    assert abs(log.t[-1] + log.dt - float(env.state.t)) < 1e-12
    assert abs(log.duration - 1.0) < 1e-12
    assert np.all(log.q[0] == 0.)
    assert np.allclose(log.torque_limits, model.torque_limits)


def test_env_violation_terminates():
    """
    Leaving the reward bounds ends the episode with the penalty.
    """
    model = ArmModel()
    params = RewardParams.for_model(model, x_min=[-0.1]*4, x_max=[0.1]*4)
    env = ArmEnv(model, reward_params=params, seed=0)
    env.reset(goal=jnp.zeros(4))
    rewards = []
    while not env.terminal:
        _, r, _ = env.step(jnp.array([1., 0., 0., 0.]))
        rewards.append(r)
    print("violation after %d steps" % len(rewards))
    assert env.violated
    assert rewards[-1] == -10.0
    assert all(r >= -1. for r in rewards[:-1])
    assert env.episode_log().violated


def test_env_action_scaling_and_clip():
    """
    Actions are clipped to [-1, 1] and scaled by the nominal limits.
    """
    model = ArmModel()
    deg = Degradation(jnp.ones(4), jnp.ones(4), jnp.array([0.25, 1., 1., 1.]))
    env = ArmEnv(model, deg, seed=0)
    env.reset(goal=jnp.zeros(4))
    env.step(jnp.array([5., -0.5, 0.25, 0.]))
    log = env.episode_log()
    assert np.allclose(log.tau_applied[0], [2.5, -4.0, 1.0, 0.0])
    assert np.allclose(log.torque_limits, [2.5, 8.0, 4.0, 2.0])


def test_env_reproducible():
    """
    Same seeds, same goals and the same noisy observations.
    """
    model = ArmModel()
    deg = Degradation(jnp.ones(4), jnp.ones(4), jnp.ones(4), 0.001, 0.01, 5)
    runs = []
    for _ in range(2):
        env = ArmEnv(model, deg, seed=11)
        obs = env.reset()
        obs2, _, _ = env.step(jnp.full(4, 0.1))
        runs.append(np.concatenate([np.asarray(obs.flat()), np.asarray(obs2.flat())]))
    assert np.all(runs[0] == runs[1])
    assert np.all(np.abs(runs[0][8:12]) <= 2.95)


def test_in_bounds():
    params = RewardParams()
    assert bool(in_bounds(params, jnp.zeros(4)))
    assert not bool(in_bounds(params, jnp.array([0., -3., 0., 0.])))
