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
Receding horizon baseline on the nominal arm model.

At each control step the flow map is linearized about the current state
and the previous input, x' ~ A x + B tau + c, and the tracking cost

.. code-block::

    J = sum_{k=0}^{N} |x_ref - x_k|_Q^2 + sum_{k=0}^{N-1} |tau_k - tau_{k-1}|_R^2

(tau_{-1} = u_prev) is minimized over the torque sequence subject to
|tau| <= torque_limits.  The condensed QP is solved by a Jacobi scaled,
monotone accelerated projected gradient method; the box constraints are
met exactly by the projection.
"""
from dataclasses import dataclass
import logging

import numpy as np
import jax
import jax.numpy as jnp
import equinox as eqx
from jax import lax

from uwarm_py.ode_sys import ControlSys
from uwarm_py.ode_explicit import rk4_substeps
from uwarm_py.dynamics import ArmModel, ArmSys, JointState, substep_count
from uwarm_py.errors import ConfigError, InvalidStateError, LinearizationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    q_weight: tuple = (50., 50., 50., 50., 1., 1., 1., 1.)
    r_weight: tuple = (0.01, 0.01, 0.01, 0.01)
    max_iters: int = 300
    step_tolerance: float = 1e-6
    dt: float = 0.05
    physics_dt: float = 0.005
    fd_eps: float = 1e-6

    @property
    def n_substeps(self) -> int:
        return substep_count(self.dt, self.physics_dt)

    def as_dict(self) -> dict:
        return {"horizon": self.horizon, "q_weight": list(self.q_weight),
                "r_weight": list(self.r_weight), "max_iters": self.max_iters,
                "step_tolerance": self.step_tolerance, "dt": self.dt,
                "physics_dt": self.physics_dt, "fd_eps": self.fd_eps}


def validate_mpc_config(config: MpcConfig, n_state: int=8, n_input: int=4) -> MpcConfig:
    if config.horizon < 1:
        raise ConfigError("mpc.horizon: must be >= 1")
    q, r = np.asarray(config.q_weight), np.asarray(config.r_weight)
    if q.shape != (n_state,) or r.shape != (n_input,):
        raise ConfigError(f"mpc.q_weight: expected {n_state} entries and r_weight {n_input}")
    if np.any(q < 0) or np.any(r < 0):
        raise ConfigError("mpc.q_weight: weights must be >= 0")
    if not np.any(q > 0):
        raise ConfigError("mpc.q_weight: at least one weight must be > 0")
    if config.max_iters < 1 or not config.step_tolerance > 0:
        raise ConfigError("mpc.max_iters: must be >= 1 with step_tolerance > 0")
    if not (config.dt > 0 and config.physics_dt > 0 and config.fd_eps > 0):
        raise ConfigError("mpc.dt: dt, physics_dt and fd_eps must be > 0")
    return config


@dataclass
class MpcSolution:
    """
    Open loop torque sequence, one row per horizon step, and solver
    diagnostics.
    """
    tau_seq: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_history: np.ndarray


@dataclass
class CondensedQp:
    """
    J(U) = 1/2 U^T H U + f^T U + const over the stacked inputs U.
    """
    H: np.ndarray
    f: np.ndarray
    const: float
    u_max: np.ndarray

    def cost(self, u) -> float:
        u = np.asarray(u).reshape(-1)
        return float(0.5*u @ self.H @ u + self.f @ u + self.const)


def _as_sys(model) -> ControlSys:
    return ArmSys(model) if isinstance(model, ArmModel) else model


def _state_vec(state) -> jax.Array:
    x = state.x if isinstance(state, JointState) else jnp.asarray(state, dtype=jnp.float64)
    if not np.all(np.isfinite(np.asarray(x))):
        raise InvalidStateError()
    return x


@eqx.filter_jit
def _linearize_kernel(sys: ControlSys, x, u, dt, n_substeps: int, eps):
    logger.debug("jit-compiling linearization kernel")
    f = lambda xx, uu: rk4_substeps(sys, 0.0, xx, dt, n_substeps, u=uu)
    dfx = jax.vmap(lambda d: (f(x + d, u) - f(x - d, u)) / (2*eps))(eps*jnp.eye(x.shape[0]))
    dfu = jax.vmap(lambda d: (f(x, u + d) - f(x, u - d)) / (2*eps))(eps*jnp.eye(u.shape[0]))
    a, b = dfx.T, dfu.T
    c = f(x, u) - a @ x - b @ u
    return a, b, c


def linearize(model, state, tau, dt: float, n_substeps: int=10, eps: float=1e-6):
    """
    Discrete affine model x' ~ A x + B tau + c of the unclamped RK4 flow,
    by central finite differences about (state, tau).

    Args:
        model: ArmModel or any ControlSys
        state: JointState or state vector
        tau: input about which to linearize
        dt: step size
        n_substeps: RK4 substeps of the flow
        eps: finite difference step
    """
    sys = _as_sys(model)
    x = _state_vec(state)
    u = jnp.asarray(tau, dtype=jnp.float64)
    a, b, c = _linearize_kernel(sys, x, u, jnp.asarray(dt), int(n_substeps), jnp.asarray(eps))
    if not all(np.all(np.isfinite(np.asarray(m))) for m in (a, b, c)):
        raise LinearizationError()
    return a, b, c


def condense(config: MpcConfig, a, b, c, x0, x_ref, u_prev, u_max) -> CondensedQp:
    """
    Stack the horizon: X = Phi x0 + Gamma U + psi, and collect the
    quadratic form of the cost in U.
    """
    a, b, c = np.asarray(a), np.asarray(b), np.asarray(c)
    x0, x_ref, u_prev = np.asarray(x0), np.asarray(x_ref), np.asarray(u_prev)
    nx, nu, n = a.shape[0], b.shape[1], config.horizon
    phi = np.zeros((n*nx, nx))
    gam = np.zeros((n*nx, n*nu))
    psi = np.zeros(n*nx)
    ak, pk = np.eye(nx), np.zeros(nx)
    for k in range(n):
        # row block k holds x_{k+1}
        pk = a @ pk + c
        ak = a @ ak
        phi[k*nx:(k+1)*nx] = ak
        psi[k*nx:(k+1)*nx] = pk
        for j in range(k + 1):
            gam[k*nx:(k+1)*nx, j*nu:(j+1)*nu] = np.linalg.matrix_power(a, k - j) @ b
    qbar = np.tile(np.asarray(config.q_weight, dtype=np.float64), n)
    rbar = np.tile(np.asarray(config.r_weight, dtype=np.float64), n)
    dmat = np.eye(n*nu) - np.eye(n*nu, k=-nu)
    d = np.zeros(n*nu)
    d[:nu] = u_prev
    r0 = phi @ x0 + psi - np.tile(x_ref, n)
    e0 = x_ref - x0
    h = 2.*(gam.T @ (qbar[:, None]*gam) + dmat.T @ (rbar[:, None]*dmat))
    f = 2.*(gam.T @ (qbar*r0) - dmat.T @ (rbar*d))
    const = float(r0 @ (qbar*r0) + d @ (rbar*d) + e0 @ (np.asarray(config.q_weight)*e0))
    return CondensedQp(0.5*(h + h.T), f, const, np.tile(np.asarray(u_max, dtype=np.float64), n))


@eqx.filter_jit
def _qp_kernel(h, f, const, u_max, u0, tol, max_iters: int):
    logger.debug("jit-compiling projected gradient kernel")
    p = jnp.diag(h)
    p = jnp.where(p > 0, p, 1.)
    s = 1. / jnp.sqrt(p)
    lip = jnp.linalg.eigvalsh(s[:, None]*h*s[None, :])[-1]
    lip = jnp.where(lip > 0, lip, 1.)
    cost = lambda u: 0.5*u @ h @ u + f @ u + const
    proj = lambda u: jnp.clip(u, -u_max, u_max)

    x0 = proj(u0)
    j0 = cost(x0)
    hist = jnp.full(max_iters + 1, jnp.nan).at[0].set(j0)

    def cond(carry):
        i, _, _, _, _, _, done = carry
        return (i < max_iters) & ~done

    def body(carry):
        i, x, y, t, jx, hist, _ = carry
        z = proj(y - (h @ y + f) / (lip*p))
        jz = cost(z)
        # keep the better of the new trial point and the incumbent
        accept = jz <= jx
        x_new = jnp.where(accept, z, x)
        j_new = jnp.where(accept, jz, jx)
        t_new = 0.5*(1. + jnp.sqrt(1. + 4.*t**2))
        y_new = x_new + (t/t_new)*(z - x_new) + ((t - 1.)/t_new)*(x_new - x)
        done = jnp.max(jnp.abs(z - y)) < tol
        return i + 1, x_new, y_new, t_new, j_new, hist.at[i+1].set(j_new), done

    init = (0, x0, x0, jnp.asarray(1.), j0, hist, jnp.asarray(False))
    i, x, _, _, jx, hist, done = lax.while_loop(cond, body, init)
    return x, jx, i, done, hist


def solve_qp(qp: CondensedQp, u0, config: MpcConfig):
    """
    Minimize the condensed cost over the box |U| <= u_max from u0.

    Returns:
        (U, cost, iterations, converged, cost history)
    """
    u, j, it, done, hist = _qp_kernel(
            jnp.asarray(qp.H), jnp.asarray(qp.f), jnp.asarray(qp.const),
            jnp.asarray(qp.u_max), jnp.asarray(u0, dtype=jnp.float64),
            jnp.asarray(config.step_tolerance), int(config.max_iters))
    it = int(it)
    return np.asarray(u), float(j), it, bool(done), np.asarray(hist)[:it+1]


def _full_ref(x_ref, nx: int) -> np.ndarray:
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x_ref.shape[0] == nx // 2:
        # position reference, zero velocity
        x_ref = np.concatenate([x_ref, np.zeros(nx // 2)])
    if x_ref.shape != (nx,):
        raise ValueError(f"x_ref has shape {x_ref.shape}, expected ({nx},) or ({nx//2},)")
    return x_ref


def solve_horizon(config: MpcConfig, model, state, x_ref, u_prev) -> MpcSolution:
    """
    Optimal open loop torque sequence over the horizon, warm started from
    u_prev held constant.  Hitting max_iters returns the best iterate with
    converged = False.

    Args:
        config: MPC settings
        model: nominal ArmModel or any ControlSys
        state: current JointState or state vector
        x_ref: position reference (zero velocity) or full state reference
        u_prev: input applied over the previous interval
    """
    sys = _as_sys(model)
    x0 = _state_vec(state)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    a, b, c = linearize(sys, x0, u_prev, config.dt, config.n_substeps, config.fd_eps)
    x_ref = _full_ref(x_ref, a.shape[0])
    qp = condense(config, a, b, c, x0, x_ref, u_prev, np.asarray(sys.input_limits()))
    u, j, it, done, hist = solve_qp(qp, np.tile(u_prev, config.horizon), config)
    if not done:
        logger.debug(f"mpc solver stopped at max_iters={config.max_iters}, cost {j:0.6e}")
    return MpcSolution(u.reshape(config.horizon, -1), j, it, done, hist)


def mpc_step(config: MpcConfig, model, state, x_ref, u_prev) -> np.ndarray:
    """
    First move of :func:`solve_horizon`.
    """
    return solve_horizon(config, model, state, x_ref, u_prev).tau_seq[0]


class MpcController:
    """
    Closed loop MPC acting on the agent state of :class:`ArmEnv`.  Returns
    torques normalized by the nominal torque limits and records per step
    solver diagnostics.
    """
    def __init__(self, model: ArmModel, config: MpcConfig=None):
        self.model = model
        self.config = MpcConfig() if config is None else config
        self.reset()

    def reset(self):
        self.u_prev = np.zeros(self.model.n_joints)
        self.diagnostics = {"iterations": [], "cost": [], "converged": []}

    def act(self, agent_state) -> np.ndarray:
        state = JointState(agent_state.q_obs, agent_state.qdot_obs)
        sol = solve_horizon(self.config, self.model, state, agent_state.q_req, self.u_prev)
        tau = sol.tau_seq[0]
        self.u_prev = tau
        self.diagnostics["iterations"].append(sol.iterations)
        self.diagnostics["cost"].append(sol.cost)
        self.diagnostics["converged"].append(sol.converged)
        return np.clip(tau / np.asarray(self.model.torque_limits), -1., 1.)
