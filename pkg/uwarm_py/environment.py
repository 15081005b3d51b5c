##############################################################################
# Copyright© 2025 UT-Battelle, LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################
"""
The arm as an episodic reinforcement learning task.

The agent sees the 12 dimensional state (q_obs, q'_obs, q_req) built from
noisy sensor readings and commands normalized torques in [-1, 1].  The
reward is a Gaussian of the joint error evaluated on the true, pre clamp
positions:

.. code-block::

    r = -1 + exp(-1/2 (|q - q_req| / sigma)^2)   if x_min < q < x_max
    r = violation_penalty                         otherwise

A bound violation ends the episode, as does reaching the horizon.
"""
import logging

import numpy as np
import jax
import jax.numpy as jnp
import equinox as eqx

from uwarm_py.dynamics import (ArmModel, JointState, Degradation,
                               apply_degradation, step_detailed, observe)
from uwarm_py.metrics import EpisodeLog
from uwarm_py.errors import ConfigError, EpisodeFinishedError

logger = logging.getLogger(__name__)


def _vec(x):
    return jnp.asarray(x, dtype=jnp.float64)


class RewardParams(eqx.Module):
    sigma: float = eqx.field(static=True, default=0.018)
    violation_penalty: float = eqx.field(static=True, default=-10.0)
    x_min: jax.Array = eqx.field(converter=_vec, default_factory=lambda: -3.0*np.ones(4))
    x_max: jax.Array = eqx.field(converter=_vec, default_factory=lambda: 3.0*np.ones(4))
    # "norm": one Gaussian of the error norm, "per_joint": mean of per joint Gaussians
    aggregate: str = eqx.field(static=True, default="norm")

    @classmethod
    def for_model(cls, model: ArmModel, **kwargs):
        """Reward bounds equal to the joint limits of model."""
        return cls(kwargs.get("sigma", 0.018),
                   kwargs.get("violation_penalty", -10.0),
                   kwargs.get("x_min", model.position_min),
                   kwargs.get("x_max", model.position_max),
                   kwargs.get("aggregate", "norm"))


def validate_reward_params(params: RewardParams) -> RewardParams:
    if not params.sigma > 0:
        raise ConfigError("reward.sigma: must be > 0")
    if not params.violation_penalty < -1:
        raise ConfigError("reward.violation_penalty: must be < -1")
    if params.aggregate not in ("norm", "per_joint"):
        raise ConfigError(f"reward.aggregate: unknown rule {params.aggregate!r}")
    if np.any(np.asarray(params.x_min) >= np.asarray(params.x_max)):
        raise ConfigError("reward.x_min: must be below reward.x_max")
    return params


def in_bounds(params: RewardParams, q) -> jax.Array:
    """Strictly inside (x_min, x_max), all joints."""
    q = _vec(q)
    return jnp.all((q > params.x_min) & (q < params.x_max))


@eqx.filter_jit
def _reward_kernel(params: RewardParams, q, q_req):
    logger.debug("jit-compiling reward kernel")
    e = (q - q_req) / params.sigma
    if params.aggregate == "per_joint":
        r = -1. + jnp.mean(jnp.exp(-0.5*e**2))
    else:
        r = -1. + jnp.exp(-0.5*jnp.sum(e**2))
    return jnp.where(in_bounds(params, q), r, params.violation_penalty)


def reward(params: RewardParams, q, q_req) -> float:
    """
    Constraint aware Gaussian tracking reward, in (-1, 0] inside the bounds.
    """
    return float(_reward_kernel(params, _vec(q), _vec(q_req)))


class AgentState(eqx.Module):
    q_obs: jax.Array = eqx.field(converter=_vec)
    qdot_obs: jax.Array = eqx.field(converter=_vec)
    q_req: jax.Array = eqx.field(converter=_vec)

    def flat(self) -> jax.Array:
        return jnp.concatenate([self.q_obs, self.qdot_obs, self.q_req])


def normalize_state(model: ArmModel, state: AgentState) -> jax.Array:
    """
    Positions and goals mapped from the joint range to [-1, 1], velocities
    divided by velocity_limit.
    """
    lo, hi = model.position_min, model.position_max
    scale = lambda q: 2.*(q - lo)/(hi - lo) - 1.
    return jnp.concatenate([scale(state.q_obs),
                            state.qdot_obs / model.velocity_limit,
                            scale(state.q_req)])


class Transition(eqx.Module):
    """
    Replay record on normalized states.  With a leading batch axis the
    same type holds a minibatch.
    """
    state: jax.Array
    action: jax.Array
    reward: jax.Array
    next_state: jax.Array
    terminal: jax.Array


def sample_goal(model: ArmModel, key: jax.Array, margin: float=0.05) -> jax.Array:
    """
    Uniform goal inside [position_min + margin, position_max - margin].
    """
    return jax.random.uniform(key, (model.n_joints,),
                              minval=model.position_min + margin,
                              maxval=model.position_max - margin)


class ArmEnv:
    """
    Episodic wrapper of the simulator.

    The plant is the nominal model with the degradation applied.  Sensor
    noise is drawn from a key seeded with degradation.rng_seed, random goals
    from a key seeded with seed.
    """
    def __init__(self, model: ArmModel, degradation: Degradation=None,
                 reward_params: RewardParams=None, **kwargs):
        self.nominal = model
        self.degradation = Degradation.none(model.n_joints) if degradation is None else degradation
        self.plant = apply_degradation(model, self.degradation)
        self.reward_params = RewardParams.for_model(model) if reward_params is None else reward_params
        self.dt = float(kwargs.get("dt_control", 0.05))
        self.physics_dt = float(kwargs.get("physics_dt", 0.005))
        self.episode_seconds = float(kwargs.get("episode_seconds", 20.0))
        self.max_steps = int(round(self.episode_seconds / self.dt))
        self.goal_margin = float(kwargs.get("goal_margin", 0.05))
        home = kwargs.get("home_pose", None)
        self.home_pose = jnp.zeros(model.n_joints) if home is None else _vec(home)
        self._goal_key = jax.random.PRNGKey(int(kwargs.get("seed", 0)))
        self._sensor_key = jax.random.PRNGKey(int(self.degradation.rng_seed))
        self.state = None
        self.goal = None
        self.n_steps = 0
        self.terminal = True
        self._rows = None
        self.violated = False

    def _observe(self) -> AgentState:
        self._sensor_key, sub = jax.random.split(self._sensor_key)
        q_obs, qdot_obs = observe(self.state, self.degradation, sub)
        return AgentState(q_obs, qdot_obs, self.goal)

    def sample_goal(self) -> jax.Array:
        self._goal_key, sub = jax.random.split(self._goal_key)
        return sample_goal(self.nominal, sub, self.goal_margin)

    def reset(self, goal=None) -> AgentState:
        """
        Arm at the home pose at rest, clock at zero.  A random goal is drawn
        when goal is None.
        """
        self.goal = self.sample_goal() if goal is None else _vec(goal)
        self.state = JointState.at_rest(self.home_pose)
        self.n_steps = 0
        self.terminal = False
        self._rows = {"t": [], "q": [], "qdot": [], "tau": [], "reward": []}
        self.violated = False
        self.obs = self._observe()
        return self.obs

    def step(self, action):
        """
        Apply a normalized torque for one control interval.

        Returns:
            (AgentState, reward, terminal)
        """
        if self.terminal:
            raise EpisodeFinishedError()
        tau_cmd = jnp.clip(_vec(action), -1., 1.) * self.nominal.torque_limits
        res = step_detailed(self.plant, self.degradation, self.state, tau_cmd,
                            self.dt, self.physics_dt)
        r = reward(self.reward_params, res.q_preclamp, self.goal)
        violated = not bool(in_bounds(self.reward_params, res.q_preclamp))

        rows = self._rows
        rows["t"].append(float(self.state.t))
        rows["q"].append(np.asarray(self.state.q))
        rows["qdot"].append(np.asarray(self.state.qdot))
        rows["tau"].append(np.asarray(res.tau_applied))
        rows["reward"].append(r)

        self.state = res.state
        self.n_steps += 1
        self.violated = self.violated or violated
        self.terminal = violated or self.n_steps >= self.max_steps
        self.obs = self._observe()
        return self.obs, r, self.terminal

    def normalize(self, agent_state: AgentState) -> jax.Array:
        return normalize_state(self.nominal, agent_state)

    def episode_log(self, diagnostics: dict=None) -> EpisodeLog:
        """
        Log of the current episode, one row per completed control step.
        """
        rows = self._rows or {"t": [], "q": [], "qdot": [], "tau": [], "reward": []}
        n = self.nominal.n_joints
        return EpisodeLog(
            dt=self.dt,
            t=np.asarray(rows["t"]),
            q=np.asarray(rows["q"]).reshape(-1, n),
            qdot=np.asarray(rows["qdot"]).reshape(-1, n),
            tau_applied=np.asarray(rows["tau"]).reshape(-1, n),
            q_req=np.asarray(self.goal),
            reward=np.asarray(rows["reward"]),
            violated=self.violated if self._rows else False,
            torque_limits=np.asarray(self.plant.torque_limits * self.degradation.torque_scale),
            diagnostics={} if diagnostics is None else dict(diagnostics))
