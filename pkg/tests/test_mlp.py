"""
Hand written network tests: forward pass, backprop against finite
differences, Adam and soft target updates.
"""
import pytest
import numpy as np
import jax
from jax import numpy as jnp
from jax.flatten_util import ravel_pytree
import equinox as eqx
jax.config.update("jax_enable_x64", True)

from uwarm_py.mlp import (
    init_mlp, zeros_like_mlp, forward, forward_actor, forward_critic, backprop,
    adam_step, soft_update, all_finite, MlpGrads, _forward)
from uwarm_py.errors import DimensionError, NumericError


def _flat_loss(params, x, upstream):
    """Scalar loss sum(upstream * net(x)) as a function of the flat parameters."""
    flat, unravel = ravel_pytree((params.weights, params.biases))

    @jax.jit
    def loss(v):
        w, b = unravel(v)
        p = eqx.tree_at(lambda p: (p.weights, p.biases), params, (w, b))
        return jnp.sum(upstream * _forward(p, x)[0])
    return flat, loss


def _fd_grad(loss, flat, eps=1e-6):
    eye = jnp.eye(flat.shape[0])
    return jax.vmap(lambda e: (loss(flat + eps*e) - loss(flat - eps*e)) / (2*eps))(eye)


def test_init_ranges():
    """
    Hidden layers within +-1/sqrt(fan_in), output layer within +-3e-3.
    """
    p = init_mlp(jax.random.PRNGKey(0), (12, 40, 30, 4), "tanh")
    assert np.max(np.abs(np.asarray(p.weights[0]))) <= 1./np.sqrt(12)
    assert np.max(np.abs(np.asarray(p.weights[1]))) <= 1./np.sqrt(40)
    assert np.max(np.abs(np.asarray(p.weights[2]))) <= 3e-3
    assert np.max(np.abs(np.asarray(p.biases[2]))) <= 3e-3
    assert p.n_in == 12 and p.n_out == 4 and p.n_layers == 3
    assert int(p.step_count) == 0


def test_actor_output_range():
    """
    Actor outputs stay in [-1, 1] for any input, large inputs included.
    """
    np.random.seed(0)
    p = init_mlp(jax.random.PRNGKey(1), (12, 16, 16, 4), "tanh", final_scale=1.0)
    x = 100.*np.random.randn(500, 12)
    a = np.asarray(forward_actor(p, x))
    assert a.shape == (500, 4)
    assert np.all(np.abs(a) <= 1.)


def test_zero_network():
    p = zeros_like_mlp(init_mlp(jax.random.PRNGKey(2), (16, 8, 1)))
    q = forward_critic(p, jnp.ones((3, 12)), jnp.ones((3, 4)))
    assert q.shape == (3,)
    assert np.all(np.asarray(q) == 0.)


@pytest.mark.parametrize("out_activation", ["tanh", "linear"])
def test_backprop_vs_finite_difference(out_activation):
    """
    Parameter and input gradients of random networks match central
    finite differences.
    """
    np.random.seed(4)
    for trial in range(10):
        key = jax.random.PRNGKey(trial)
        p = init_mlp(key, (5, 7, 6, 3), out_activation, final_scale=0.5)
        x = jnp.asarray(np.random.randn(8, 5))
        up = jnp.asarray(np.random.randn(8, 3))
        grads, dx = backprop(p, x, up)
        g = ravel_pytree((grads.weights, grads.biases))[0]
        flat, loss = _flat_loss(p, x, up)
        g_fd = _fd_grad(loss, flat)
        rel = float(jnp.linalg.norm(g - g_fd) / jnp.linalg.norm(g_fd))
        # input gradient
        xloss = jax.jit(lambda xx: jnp.sum(up * _forward(p, xx)[0]))
        eye = jnp.eye(x.size).reshape(-1, *x.shape)
        dx_fd = jax.vmap(lambda e: (xloss(x + 1e-6*e) - xloss(x - 1e-6*e)) / 2e-6)(eye)
        rel_x = float(jnp.linalg.norm(dx.ravel() - dx_fd) / jnp.linalg.norm(dx_fd))
        print("%s trial %d: param grad rel err %0.4e, input grad rel err %0.4e"
              % (out_activation, trial, rel, rel_x))
        assert rel < 1e-5
        assert rel_x < 1e-5


def test_critic_action_gradient():
    """
    dQ/da from the input gradient matches finite differences in the action.
    """
    np.random.seed(5)
    p = init_mlp(jax.random.PRNGKey(3), (16, 10, 10, 1), "linear", final_scale=0.5)
    s = jnp.asarray(np.random.randn(12))
    a = jnp.asarray(np.random.uniform(-1, 1, 4))
    _, dx = backprop(p, jnp.concatenate([s, a]), jnp.ones(1))
    dq_da = np.asarray(dx[12:])
    h = 1e-6
    fd = np.array([(float(forward_critic(p, s, a + h*e)) - float(forward_critic(p, s, a - h*e))) / (2*h)
                   for e in np.eye(4)])
    rel = np.linalg.norm(dq_da - fd) / np.linalg.norm(fd)
    print("dQ/da rel err: %0.4e" % rel)
    assert rel < 1e-5
    # continuity in the action
    assert abs(float(forward_critic(p, s, a)) - float(forward_critic(p, s, a + 1e-6))) < 1e-4


def test_backprop_errors():
    p = init_mlp(jax.random.PRNGKey(0), (4, 3, 2))
    with pytest.raises(DimensionError):
        backprop(p, jnp.ones((2, 5)), jnp.ones((2, 2)))
    with pytest.raises(DimensionError):
        backprop(p, jnp.ones((2, 4)), jnp.ones((2, 3)))
    with pytest.raises(NumericError):
        backprop(p, jnp.ones((2, 4)), jnp.full((2, 2), jnp.nan))
    with pytest.raises(DimensionError):
        forward(p, jnp.ones(3))


def test_adam_matches_reference():
    """
    Three Adam steps against a plain numpy implementation.
    """
    np.random.seed(6)
    p = init_mlp(jax.random.PRNGKey(7), (3, 4, 2))
    w = [np.asarray(a) for a in p.weights]
    m = [np.zeros_like(a) for a in w]
    v = [np.zeros_like(a) for a in w]
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    for t in range(1, 4):
        gw = [np.random.randn(*a.shape) for a in w]
        gb = [np.random.randn(*np.asarray(b).shape) for b in p.biases]
        p = adam_step(p, MlpGrads(tuple(map(jnp.asarray, gw)), tuple(map(jnp.asarray, gb))), lr)
        for l in range(len(w)):
            m[l] = b1*m[l] + (1 - b1)*gw[l]
            v[l] = b2*v[l] + (1 - b2)*gw[l]**2
            w[l] = w[l] - lr*(m[l]/(1 - b1**t)) / (np.sqrt(v[l]/(1 - b2**t)) + eps)
    assert int(p.step_count) == 3
    for l in range(len(w)):
        assert np.allclose(np.asarray(p.weights[l]), w[l], rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        adam_step(p, MlpGrads(p.weights, p.biases), 0.0)


def test_soft_update():
    """
    tau = 0 keeps the target, tau = 1 copies the online network, small tau mixes.
    """
    t = init_mlp(jax.random.PRNGKey(8), (6, 5, 2))
    o = init_mlp(jax.random.PRNGKey(9), (6, 5, 2))
    same = soft_update(t, o, 0.0)
    copy = soft_update(t, o, 1.0)
    mixed = soft_update(t, o, 0.001)
    for l in range(t.n_layers):
        assert np.all(np.asarray(same.weights[l]) == np.asarray(t.weights[l]))
        assert np.all(np.asarray(copy.weights[l]) == np.asarray(o.weights[l]))
        expected = 0.001*np.asarray(o.biases[l]) + 0.999*np.asarray(t.biases[l])
        assert np.allclose(np.asarray(mixed.biases[l]), expected, rtol=1e-14, atol=1e-16)
    with pytest.raises(DimensionError):
        soft_update(t, init_mlp(jax.random.PRNGKey(0), (6, 4, 2)), 0.5)
    assert all_finite(mixed)
