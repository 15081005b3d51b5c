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
Deep deterministic policy gradient learning rules and the agent around them.

Critic (TD regression on the target networks):

.. code-block::

    y_i = r_i + gamma Q'(s'_i, pi'(s'_i))     (y_i = r_i on terminal transitions)
    L   = 1/B sum_i (y_i - Q(s_i, a_i))^2

Actor (deterministic policy gradient, chained through dQ/da):

.. code-block::

    grad_theta J = 1/B sum_i dpi/dtheta(s_i) dQ/da(s_i, pi(s_i))

Targets track the online networks by theta' <- tau theta + (1 - tau) theta'.
"""
from dataclasses import dataclass, asdict
import logging

import numpy as np
import jax
import jax.numpy as jnp
import equinox as eqx
from jax import lax

from uwarm_py.mlp import (MlpParams, MlpGrads, init_mlp, forward, critic_input,
                          _forward, _backprop, _adam, _soft_update)
from uwarm_py.environment import Transition
from uwarm_py.errors import ConfigError, InsufficientDataError, TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DdpgHyper:
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    lr_decay: float = 0.96
    lr_decay_steps: int = 100_000
    gamma: float = 0.99
    tau: float = 0.001
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_fraction: float = 0.8
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    buffer_capacity: int = 1_000_000
    warmup: int = 1000
    actor_hidden: tuple = (400, 300)
    critic_hidden: tuple = (400, 300)
    leaky_slope: float = 0.01
    final_scale: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def as_dict(self) -> dict:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d


def validate_hyper(hyper: DdpgHyper) -> DdpgHyper:
    if not 0 < hyper.tau < 1:
        raise ConfigError("ddpg.tau: must be in (0, 1)")
    if not 0 < hyper.gamma < 1:
        raise ConfigError("ddpg.gamma: must be in (0, 1)")
    if hyper.batch_size < 1:
        raise ConfigError("ddpg.batch_size: must be >= 1")
    if not (hyper.lr_actor > 0 and hyper.lr_critic > 0):
        raise ConfigError("ddpg.lr_actor: learning rates must be > 0")
    if not 0 < hyper.lr_decay <= 1 or hyper.lr_decay_steps < 1:
        raise ConfigError("ddpg.lr_decay: must be in (0, 1] with lr_decay_steps >= 1")
    if not 0 <= hyper.eps_end <= hyper.eps_start <= 1:
        raise ConfigError("ddpg.eps_start: need 0 <= eps_end <= eps_start <= 1")
    if not 0 < hyper.eps_decay_fraction <= 1:
        raise ConfigError("ddpg.eps_decay_fraction: must be in (0, 1]")
    if hyper.buffer_capacity < hyper.batch_size:
        raise ConfigError("ddpg.buffer_capacity: smaller than the batch size")
    if not (hyper.ou_theta > 0 and hyper.ou_sigma >= 0):
        raise ConfigError("ddpg.ou_theta: must be > 0 and ou_sigma >= 0")
    return hyper


def lr_schedule(hyper: DdpgHyper, step_count: int):
    """
    Learning rates after step_count training steps, decayed by lr_decay
    every lr_decay_steps.
    """
    factor = hyper.lr_decay ** (int(step_count) // hyper.lr_decay_steps)
    return hyper.lr_actor * factor, hyper.lr_critic * factor


def epsilon_schedule(hyper: DdpgHyper, epoch: int, n_epochs: int) -> float:
    """
    Linear from eps_start to eps_end over the first eps_decay_fraction of
    the epochs, constant after.
    """
    horizon = hyper.eps_decay_fraction * n_epochs
    frac = 1.0 if horizon <= 0 else min(1.0, epoch / horizon)
    return hyper.eps_start + (hyper.eps_end - hyper.eps_start) * frac


class DdpgNets(eqx.Module):
    actor: MlpParams
    critic: MlpParams
    actor_target: MlpParams
    critic_target: MlpParams


def init_nets(key: jax.Array, n_state: int, n_action: int, hyper: DdpgHyper) -> DdpgNets:
    """
    Online networks and their targets (direct copies).
    """
    ka, kc = jax.random.split(key)
    kw = {"leaky_slope": hyper.leaky_slope, "final_scale": hyper.final_scale}
    actor = init_mlp(ka, (n_state, *hyper.actor_hidden, n_action), "tanh", **kw)
    critic = init_mlp(kc, (n_state + n_action, *hyper.critic_hidden, 1), "linear", **kw)
    return DdpgNets(actor, critic, actor, critic)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def _td_targets(nets: DdpgNets, batch: Transition, gamma):
    a2 = _forward(nets.actor_target, batch.next_state)[0]
    q2 = _forward(nets.critic_target, critic_input(batch.next_state, a2))[0][..., 0]
    return jnp.where(batch.terminal, batch.reward, batch.reward + gamma*q2)


def _critic_grads(nets: DdpgNets, batch: Transition, gamma):
    y = _td_targets(nets, batch, gamma)
    x = critic_input(batch.state, batch.action)
    q = _forward(nets.critic, x)[0][..., 0]
    diff = q - y
    loss = jnp.mean(diff**2)
    upstream = (2. / diff.shape[0]) * diff[:, None]
    grads, _ = _backprop(nets.critic, x, upstream)
    return loss, grads


def _actor_grads(nets: DdpgNets, states):
    """Gradient of the mean critic value wrt the actor parameters (ascent)."""
    a = _forward(nets.actor, states)[0]
    x = critic_input(states, a)
    q = _forward(nets.critic, x)[0][..., 0]
    upstream = jnp.full((q.shape[0], 1), 1. / q.shape[0])
    _, dx = _backprop(nets.critic, x, upstream)
    dq_da = dx[..., states.shape[-1]:]
    grads, _ = _backprop(nets.actor, states, dq_da)
    return jnp.mean(q), grads


def _neg(grads: MlpGrads) -> MlpGrads:
    return jax.tree_util.tree_map(lambda g: -g, grads)


def _critic_update(nets, batch, gamma, lr, adam):
    loss, grads = _critic_grads(nets, batch, gamma)
    critic = _adam(nets.critic, grads, lr, *adam)
    return eqx.tree_at(lambda n: n.critic, nets, critic), loss


def _actor_update(nets, batch, lr, adam):
    mean_q, grads = _actor_grads(nets, batch.state)
    actor = _adam(nets.actor, _neg(grads), lr, *adam)
    return eqx.tree_at(lambda n: n.actor, nets, actor), mean_q


def _targets_update(nets, tau):
    return eqx.tree_at(
        lambda n: (n.actor_target, n.critic_target), nets,
        (_soft_update(nets.actor_target, nets.actor, tau),
         _soft_update(nets.critic_target, nets.critic, tau)))


@eqx.filter_jit
def _critic_update_kernel(nets, batch, gamma, lr, adam):
    logger.debug("jit-compiling critic update kernel")
    return _critic_update(nets, batch, gamma, lr, adam)


@eqx.filter_jit
def _actor_update_kernel(nets, batch, lr, adam):
    logger.debug("jit-compiling actor update kernel")
    return _actor_update(nets, batch, lr, adam)


@eqx.filter_jit
def _targets_update_kernel(nets, tau):
    logger.debug("jit-compiling target update kernel")
    return _targets_update(nets, tau)


@eqx.filter_jit
def _ddpg_update_kernel(nets, batch, gamma, tau, lr_actor, lr_critic, adam):
    logger.debug("jit-compiling ddpg update kernel")
    nets, loss = _critic_update(nets, batch, gamma, lr_critic, adam)
    nets, mean_q = _actor_update(nets, batch, lr_actor, adam)
    return _targets_update(nets, tau), loss, mean_q


@eqx.filter_jit
def _actor_grads_kernel(nets, states):
    return _actor_grads(nets, states)


@eqx.filter_jit
def _critic_grads_kernel(nets, batch, gamma):
    return _critic_grads(nets, batch, gamma)


# ---------------------------------------------------------------------------
# learning rules
# ---------------------------------------------------------------------------

def _adam_args(hyper: DdpgHyper):
    return (jnp.asarray(hyper.adam_beta1), jnp.asarray(hyper.adam_beta2),
            jnp.asarray(hyper.adam_eps))


def _finite_or_raise(value, what: str) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise TrainingDivergedError(f"training diverged: non-finite {what}")
    return value


def td_targets(nets: DdpgNets, batch: Transition, gamma: float) -> jax.Array:
    return _td_targets(nets, batch, jnp.asarray(gamma))


def critic_gradients(nets: DdpgNets, batch: Transition, gamma: float):
    """(TD loss, critic gradients) without updating anything."""
    return _critic_grads_kernel(nets, batch, jnp.asarray(gamma))


def actor_gradients(nets: DdpgNets, states):
    """(mean Q, gradient of mean Q wrt the actor parameters)."""
    return _actor_grads_kernel(nets, jnp.asarray(states, dtype=jnp.float64))


def critic_update(nets: DdpgNets, batch: Transition, hyper: DdpgHyper, lr: float=None):
    """
    One Adam step of the critic on the TD loss.  Only the online critic
    changes.

    Returns:
        (nets, TD loss before the step)
    """
    lr = hyper.lr_critic if lr is None else lr
    nets, loss = _critic_update_kernel(nets, batch, jnp.asarray(hyper.gamma),
                                       jnp.asarray(lr), _adam_args(hyper))
    return nets, _finite_or_raise(loss, "TD loss")


def actor_update(nets: DdpgNets, batch: Transition, hyper: DdpgHyper, lr: float=None):
    """
    One Adam ascent step of the actor on the mean critic value.  Only the
    online actor changes.

    Returns:
        (nets, mean Q before the step)
    """
    lr = hyper.lr_actor if lr is None else lr
    nets, mean_q = _actor_update_kernel(nets, batch, jnp.asarray(lr), _adam_args(hyper))
    return nets, _finite_or_raise(mean_q, "mean Q")


def soft_update_targets(nets: DdpgNets, tau: float) -> DdpgNets:
    return _targets_update_kernel(nets, jnp.asarray(tau))


def ddpg_update(nets: DdpgNets, batch: Transition, hyper: DdpgHyper,
                lr_actor: float=None, lr_critic: float=None):
    """
    Critic update, actor update on the updated critic, then both soft
    target updates, in one compiled kernel.

    Returns:
        (nets, TD loss, mean Q)
    """
    lr_actor = hyper.lr_actor if lr_actor is None else lr_actor
    lr_critic = hyper.lr_critic if lr_critic is None else lr_critic
    nets, loss, mean_q = _ddpg_update_kernel(
            nets, batch, jnp.asarray(hyper.gamma), jnp.asarray(hyper.tau),
            jnp.asarray(lr_actor), jnp.asarray(lr_critic), _adam_args(hyper))
    return nets, _finite_or_raise(loss, "TD loss"), _finite_or_raise(mean_q, "mean Q")


# ---------------------------------------------------------------------------
# exploration noise
# ---------------------------------------------------------------------------

class OuNoise(eqx.Module):
    """
    Ornstein-Uhlenbeck process x <- x + theta (mu - x) dt + sigma sqrt(dt) N(0, I)
    """
    mu: jax.Array
    x: jax.Array
    theta: float = eqx.field(static=True, default=0.15)
    sigma: float = eqx.field(static=True, default=0.2)

    @classmethod
    def create(cls, dim: int, theta: float=0.15, sigma: float=0.2, mu=None):
        mu = jnp.zeros(dim) if mu is None else jnp.asarray(mu, dtype=jnp.float64)
        return cls(mu, mu, theta, sigma)

    def reset(self):
        return eqx.tree_at(lambda n: n.x, self, self.mu)


def _ou_update(noise: OuNoise, dt, key):
    dw = jax.random.normal(key, noise.x.shape)
    return noise.x + noise.theta*(noise.mu - noise.x)*dt + noise.sigma*jnp.sqrt(dt)*dw


@eqx.filter_jit
def _ou_kernel(noise: OuNoise, dt, key):
    x = _ou_update(noise, dt, key)
    return eqx.tree_at(lambda n: n.x, noise, x), x


def ou_sample(noise: OuNoise, dt: float, key: jax.Array):
    """
    Advance the process by dt.

    Returns:
        (noise with the new state, new state)
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return _ou_kernel(noise, jnp.asarray(dt), key)


@eqx.filter_jit
def _ou_path_kernel(noise: OuNoise, dt, keys):
    logger.debug("jit-compiling ou path kernel")

    def body(x, key):
        x = _ou_update(eqx.tree_at(lambda n: n.x, noise, x), dt, key)
        return x, x
    x, xs = lax.scan(body, noise.x, keys)
    return eqx.tree_at(lambda n: n.x, noise, x), xs


def ou_path(noise: OuNoise, dt: float, key: jax.Array, n_steps: int):
    """
    n_steps consecutive samples, shape (n_steps, dim).
    """
    return _ou_path_kernel(noise, jnp.asarray(dt), jax.random.split(key, n_steps))


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """
    FIFO ring of transitions in preallocated host arrays, uniform sampling
    with replacement.
    """
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.state = np.zeros((self.capacity, state_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.reward = np.zeros(self.capacity)
        self.next_state = np.zeros((self.capacity, state_dim))
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition):
        """Store one transition, overwriting the oldest at capacity."""
        i = self.ptr
        self.state[i] = np.asarray(tr.state)
        self.action[i] = np.asarray(tr.action)
        self.reward[i] = float(tr.reward)
        self.next_state[i] = np.asarray(tr.next_state)
        self.terminal[i] = bool(tr.terminal)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, key: jax.Array, n: int) -> np.ndarray:
        """n uniform draws with replacement over the stored slots."""
        if self.size < 1 or n < 1:
            raise InsufficientDataError(
                f"insufficient data: {self.size} stored, {n} requested")
        return np.asarray(jax.random.randint(key, (n,), 0, self.size))

    def sample(self, key: jax.Array, batch_size: int=64) -> Transition:
        # a minibatch needs batch_size stored transitions
        if self.size < batch_size:
            raise InsufficientDataError(
                f"insufficient data: {self.size} stored, {batch_size} requested")
        idx = self.sample_indices(key, batch_size)
        return Transition(
            jnp.asarray(self.state[idx]), jnp.asarray(self.action[idx]),
            jnp.asarray(self.reward[idx]), jnp.asarray(self.next_state[idx]),
            jnp.asarray(self.terminal[idx]))


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------

class DdpgAgent:
    """
    Networks, exploration noise and replay of one training run.  All
    randomness comes from the integer seed.
    """
    def __init__(self, hyper: DdpgHyper, n_state: int=12, n_action: int=4, **kwargs):
        self.hyper = validate_hyper(hyper)
        self.n_state, self.n_action = n_state, n_action
        self.dt = float(kwargs.get("dt", 0.05))
        key = jax.random.PRNGKey(int(kwargs.get("seed", 0)))
        k_init, self._noise_key, self._sample_key = jax.random.split(key, 3)
        nets = kwargs.get("nets", None)
        self.nets = init_nets(k_init, n_state, n_action, hyper) if nets is None else nets
        self.noise = OuNoise.create(n_action, hyper.ou_theta, hyper.ou_sigma)
        self.buffer = ReplayBuffer(hyper.buffer_capacity, n_state, n_action)
        self.train_steps = int(kwargs.get("train_steps", 0))

    @property
    def warm(self) -> bool:
        return self.buffer.size >= max(self.hyper.warmup, self.hyper.batch_size)

    def reset_noise(self):
        self.noise = self.noise.reset()

    def act(self, state, epsilon: float=0.0, explore: bool=True) -> jax.Array:
        """
        clip(pi(s) + epsilon*OU, -1, 1) when exploring, pi(s) otherwise.
        """
        if not 0. <= epsilon <= 1.:
            raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
        a = forward(self.nets.actor, state)
        if not explore:
            return a
        self._noise_key, sub = jax.random.split(self._noise_key)
        self.noise, x = ou_sample(self.noise, self.dt, sub)
        if epsilon == 0.:
            return a
        return jnp.clip(a + epsilon*x, -1., 1.)

    def observe(self, tr: Transition):
        self.buffer.push(tr)

    def train_step(self):
        """
        One critic, actor and target update on a replay minibatch.

        Returns:
            (TD loss, mean Q), or None while the buffer is warming up
        """
        if not self.warm:
            return None
        lr_a, lr_c = lr_schedule(self.hyper, self.train_steps)
        self._sample_key, sub = jax.random.split(self._sample_key)
        batch = self.buffer.sample(sub, self.hyper.batch_size)
        self.nets, loss, mean_q = ddpg_update(self.nets, batch, self.hyper, lr_a, lr_c)
        self.train_steps += 1
        return loss, mean_q
