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
Fully connected networks with hand written reverse mode differentiation.

Hidden layers use LeakyReLU, the output layer is tanh (actor) or linear
(critic).  Weights are stored (n_in, n_out) so a batch of inputs of shape
(..., n_in) maps to (..., n_out).  Gradients of a scalar loss L are
obtained from the upstream gradient dL/d(output) by :func:`backprop`;
``jax.grad`` is only used as a test oracle.
"""
import logging

import numpy as np
import jax
import jax.numpy as jnp
import equinox as eqx

from uwarm_py.errors import DimensionError, NumericError

logger = logging.getLogger(__name__)


class MlpParams(eqx.Module):
    """
    Layer weights and biases with their Adam moment accumulators.
    """
    weights: tuple
    biases: tuple
    m_w: tuple
    m_b: tuple
    v_w: tuple
    v_b: tuple
    step_count: jax.Array
    layer_sizes: tuple = eqx.field(static=True)
    out_activation: str = eqx.field(static=True)
    leaky_slope: float = eqx.field(static=True)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


class MlpGrads(eqx.Module):
    weights: tuple
    biases: tuple


def init_mlp(key: jax.Array, layer_sizes, out_activation: str="linear", **kwargs) -> MlpParams:
    """
    Hidden layers uniform in +-1/sqrt(fan_in), output layer uniform in
    +-final_scale.  Adam moments start at zero.

    Args:
        key: jax random key
        layer_sizes: (n_in, hidden..., n_out)
        out_activation: "tanh" or "linear"
        leaky_slope: LeakyReLU negative slope, default 0.01
        final_scale: output layer init range, default 3e-3
    """
    if out_activation not in ("tanh", "linear"):
        raise ValueError(f"unknown output activation {out_activation!r}")
    layer_sizes = tuple(int(s) for s in layer_sizes)
    final_scale = kwargs.get("final_scale", 3e-3)
    keys = jax.random.split(key, 2*(len(layer_sizes) - 1))
    weights, biases = [], []
    for l, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        last = l == len(layer_sizes) - 2
        lim = final_scale if last else 1. / np.sqrt(n_in)
        weights.append(jax.random.uniform(keys[2*l], (n_in, n_out), minval=-lim, maxval=lim))
        biases.append(jax.random.uniform(keys[2*l+1], (n_out,), minval=-lim, maxval=lim))
    zeros = lambda ts: tuple(jnp.zeros_like(t) for t in ts)
    return MlpParams(
        tuple(weights), tuple(biases),
        zeros(weights), zeros(biases), zeros(weights), zeros(biases),
        jnp.asarray(0, dtype=jnp.int64), layer_sizes, out_activation,
        float(kwargs.get("leaky_slope", 0.01)))


def zeros_like_mlp(params: MlpParams) -> MlpParams:
    """Same layout, every weight and bias zero."""
    return eqx.tree_at(lambda p: (p.weights, p.biases), params,
                       (tuple(jnp.zeros_like(w) for w in params.weights),
                        tuple(jnp.zeros_like(b) for b in params.biases)))


def _leaky(z, slope):
    return jnp.where(z > 0, z, slope*z)


def _dleaky(z, slope):
    return jnp.where(z > 0, 1., slope)


def _forward(params: MlpParams, x):
    """Returns the output and the layer inputs h_l and pre activations z_l."""
    hs, zs = [x], []
    h = x
    for l in range(params.n_layers):
        z = h @ params.weights[l] + params.biases[l]
        zs.append(z)
        if l < params.n_layers - 1:
            h = _leaky(z, params.leaky_slope)
        elif params.out_activation == "tanh":
            h = jnp.tanh(z)
        else:
            h = z
        hs.append(h)
    return h, hs, zs


@eqx.filter_jit
def _forward_kernel(params: MlpParams, x):
    logger.debug("jit-compiling mlp forward kernel")
    return _forward(params, x)[0]


def _backprop(params: MlpParams, x, upstream):
    out, hs, zs = _forward(params, x)
    if params.out_activation == "tanh":
        delta = upstream * (1. - out**2)
    else:
        delta = upstream
    dws, dbs = [], []
    for l in reversed(range(params.n_layers)):
        # sum over any leading batch axes
        d2 = delta.reshape(-1, delta.shape[-1])
        dws.append(hs[l].reshape(-1, hs[l].shape[-1]).T @ d2)
        dbs.append(d2.sum(axis=0))
        dh = delta @ params.weights[l].T
        if l > 0:
            delta = dh * _dleaky(zs[l-1], params.leaky_slope)
    return MlpGrads(tuple(reversed(dws)), tuple(reversed(dbs))), dh


@eqx.filter_jit
def _backprop_kernel(params: MlpParams, x, upstream):
    logger.debug("jit-compiling mlp backprop kernel")
    return _backprop(params, x, upstream)


def _check_input(params: MlpParams, x, n: int):
    if x.ndim < 1 or x.shape[-1] != n:
        raise DimensionError(f"dimension error: expected last axis {n}, got shape {x.shape}")


def forward(params: MlpParams, x) -> jax.Array:
    x = jnp.asarray(x, dtype=jnp.float64)
    _check_input(params, x, params.n_in)
    return _forward_kernel(params, x)


def forward_actor(params: MlpParams, state) -> jax.Array:
    """
    Policy output in (-1, 1) for a normalized state of shape (..., n_in).
    """
    return forward(params, state)


def critic_input(state, action) -> jax.Array:
    return jnp.concatenate([jnp.asarray(state, dtype=jnp.float64),
                            jnp.asarray(action, dtype=jnp.float64)], axis=-1)


def forward_critic(params: MlpParams, state, action) -> jax.Array:
    """
    Q(s, a), the state and action are concatenated at the input layer.
    """
    state, action = jnp.asarray(state), jnp.asarray(action)
    if state.shape[:-1] != action.shape[:-1]:
        raise DimensionError(f"dimension error: state {state.shape} vs action {action.shape}")
    return forward(params, critic_input(state, action))[..., 0]


def backprop(params: MlpParams, x, upstream):
    """
    Reverse mode pass for L with dL/d(output) = upstream.

    Args:
        params: network
        x: input, shape (..., n_in)
        upstream: gradient wrt the network output, shape (..., n_out)

    Returns:
        (MlpGrads, dL/dx)
    """
    x = jnp.asarray(x, dtype=jnp.float64)
    upstream = jnp.asarray(upstream, dtype=jnp.float64)
    _check_input(params, x, params.n_in)
    if upstream.shape != x.shape[:-1] + (params.n_out,):
        raise DimensionError(f"dimension error: upstream shape {upstream.shape}")
    if not np.all(np.isfinite(np.asarray(upstream))):
        raise NumericError()
    return _backprop_kernel(params, x, upstream)


def _adam(params: MlpParams, grads: MlpGrads, lr, beta1, beta2, eps) -> MlpParams:
    t = params.step_count + 1
    c1 = 1. - beta1**t
    c2 = 1. - beta2**t

    def upd(p, g, m, v):
        m = beta1*m + (1. - beta1)*g
        v = beta2*v + (1. - beta2)*g**2
        p = p - lr * (m / c1) / (jnp.sqrt(v / c2) + eps)
        return p, m, v

    w = [upd(*a) for a in zip(params.weights, grads.weights, params.m_w, params.v_w)]
    b = [upd(*a) for a in zip(params.biases, grads.biases, params.m_b, params.v_b)]
    unzip = lambda res, i: tuple(r[i] for r in res)
    return eqx.tree_at(
        lambda p: (p.weights, p.biases, p.m_w, p.m_b, p.v_w, p.v_b, p.step_count),
        params,
        (unzip(w, 0), unzip(b, 0), unzip(w, 1), unzip(b, 1), unzip(w, 2), unzip(b, 2), t))


@eqx.filter_jit
def _adam_kernel(params, grads, lr, beta1, beta2, eps):
    logger.debug("jit-compiling adam kernel")
    return _adam(params, grads, lr, beta1, beta2, eps)


def adam_step(params: MlpParams, grads: MlpGrads, lr: float,
              beta1: float=0.9, beta2: float=0.999, eps: float=1e-8) -> MlpParams:
    """
    Bias corrected Adam descent step, increments step_count.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return _adam_kernel(params, grads, jnp.asarray(lr), jnp.asarray(beta1),
                        jnp.asarray(beta2), jnp.asarray(eps))


def _soft_update(target: MlpParams, online: MlpParams, tau) -> MlpParams:
    mix = lambda t, o: tau*o + (1. - tau)*t
    return eqx.tree_at(
        lambda p: (p.weights, p.biases), target,
        (tuple(map(mix, target.weights, online.weights)),
         tuple(map(mix, target.biases, online.biases))))


@eqx.filter_jit
def _soft_update_kernel(target, online, tau):
    logger.debug("jit-compiling soft update kernel")
    return _soft_update(target, online, tau)


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """
    target <- tau*online + (1 - tau)*target on weights and biases.
    """
    if target.layer_sizes != online.layer_sizes:
        raise DimensionError(
            f"dimension error: {target.layer_sizes} vs {online.layer_sizes}")
    return _soft_update_kernel(target, online, jnp.asarray(tau))


def all_finite(params: MlpParams) -> bool:
    return all(bool(jnp.all(jnp.isfinite(a)))
               for a in (*params.weights, *params.biases))
