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
Joint space dynamics of a planar 4 link underwater manipulator.

Lagrangian rigid body chain with per link added mass, buoyancy reduced
gravity and linear plus quadratic hydrodynamic joint damping:

.. code-block::

    M(q) q'' + C(q, q') q' + g(q) + D_l q' + D_q q'|q'| = tau

Joint i rotates link i relative to link i-1, link angles are the cumulative
sums of the joint angles.  The chain moves in a vertical plane so joint 1
carries the full gravity load.

Numerical kernels are jitted and branch free, the public wrappers check
their preconditions and raise the errors of :mod:`uwarm_py.errors`.
"""
from dataclasses import dataclass
import logging

import numpy as np
import jax
import jax.numpy as jnp
import equinox as eqx
from jax import lax

from uwarm_py.ode_sys import ControlSys
from uwarm_py.ode_explicit import rk4_step, rk4_substeps
from uwarm_py.errors import ConfigError, InvalidStateError, DynamicsDivergedError

logger = logging.getLogger(__name__)


# plausible defaults consistent with a 2 kg payload arm, not measured values
ARM_DEFAULTS = {
    "link_masses": [0.8, 0.6, 0.5, 0.6],
    "link_lengths": [0.20, 0.15, 0.15, 0.12],
    "link_com_offsets": [0.10, 0.075, 0.075, 0.06],
    "gravity_accel": 2.0,
    "added_mass_factor": [1.5, 1.4, 1.4, 1.3],
    "damping_linear": [0.5, 0.4, 0.2, 0.1],
    "damping_quadratic": [0.1, 0.08, 0.05, 0.04],
    "torque_limits": [10.0, 8.0, 4.0, 2.0],
    "position_min": [-3.0, -3.0, -3.0, -3.0],
    "position_max": [3.0, 3.0, 3.0, 3.0],
    "velocity_limit": [8.0, 8.0, 8.0, 8.0],
}


def _vec(x):
    return jnp.asarray(x, dtype=jnp.float64)


class ArmModel(eqx.Module):
    """
    Physical parameters of the arm, SI units.  Vectors hold one entry per
    joint, gravity_accel is the effective (buoyancy reduced) acceleration.
    """
    link_masses: jax.Array
    link_lengths: jax.Array
    link_com_offsets: jax.Array
    gravity_accel: jax.Array
    added_mass_factor: jax.Array
    damping_linear: jax.Array
    damping_quadratic: jax.Array
    torque_limits: jax.Array
    position_min: jax.Array
    position_max: jax.Array
    velocity_limit: jax.Array
    n_joints: int = eqx.field(static=True)

    def __init__(self, **kwargs):
        for key in ARM_DEFAULTS.keys():
            setattr(self, key, _vec(kwargs.get(key, ARM_DEFAULTS[key])))
        self.n_joints = int(self.link_masses.shape[0])

    def as_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ARM_DEFAULTS.keys()}


def validate_arm_model(model: ArmModel) -> ArmModel:
    """
    Check the parameter invariants, raise ConfigError naming the first
    offending key.
    """
    n = model.n_joints
    for key in ARM_DEFAULTS.keys():
        v = np.asarray(getattr(model, key))
        if key == "gravity_accel":
            if v.shape != ():
                raise ConfigError(f"arm.{key}: expected a scalar")
        elif v.shape != (n,):
            raise ConfigError(f"arm.{key}: expected {n} entries, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigError(f"arm.{key}: non-finite entry")
    for key in ("link_masses", "link_lengths", "link_com_offsets",
                "damping_linear", "damping_quadratic"):
        if np.any(np.asarray(getattr(model, key)) < 0):
            raise ConfigError(f"arm.{key}: entries must be >= 0")
    if np.any(np.asarray(model.added_mass_factor) < 1):
        raise ConfigError("arm.added_mass_factor: entries must be >= 1")
    if np.any(np.asarray(model.torque_limits) <= 0):
        raise ConfigError("arm.torque_limits: entries must be > 0")
    if np.any(np.asarray(model.velocity_limit) <= 0):
        raise ConfigError("arm.velocity_limit: entries must be > 0")
    if np.any(np.asarray(model.position_min) >= np.asarray(model.position_max)):
        raise ConfigError("arm.position_min: must be below arm.position_max")
    return model


class JointState(eqx.Module):
    """
    Joint positions [rad], velocities [rad/s] and time [s].
    """
    q: jax.Array = eqx.field(converter=_vec)
    qdot: jax.Array = eqx.field(converter=_vec)
    t: jax.Array = eqx.field(converter=_vec, default=0.0)

    @classmethod
    def at_rest(cls, q, t=0.0):
        q = _vec(q)
        return cls(q, jnp.zeros_like(q), t)

    @property
    def x(self) -> jax.Array:
        return jnp.concatenate([self.q, self.qdot])


class Degradation(eqx.Module):
    """
    Plant perturbation overlay: mass, damping and torque scales per joint
    and the sensor noise levels.
    """
    mass_scale: jax.Array = eqx.field(converter=_vec)
    damping_scale: jax.Array = eqx.field(converter=_vec)
    torque_scale: jax.Array = eqx.field(converter=_vec)
    sensor_pos_sigma: float = eqx.field(static=True, default=0.0)
    sensor_vel_sigma: float = eqx.field(static=True, default=0.0)
    rng_seed: int = eqx.field(static=True, default=0)

    @classmethod
    def none(cls, n_joints: int=4, rng_seed: int=0):
        ones = jnp.ones(n_joints)
        return cls(ones, ones, ones, 0.0, 0.0, rng_seed)

    def as_dict(self) -> dict:
        return {
            "mass_scale": np.asarray(self.mass_scale).tolist(),
            "damping_scale": np.asarray(self.damping_scale).tolist(),
            "torque_scale": np.asarray(self.torque_scale).tolist(),
            "sensor_pos_sigma": float(self.sensor_pos_sigma),
            "sensor_vel_sigma": float(self.sensor_vel_sigma),
            "rng_seed": int(self.rng_seed),
        }


def validate_degradation(deg: Degradation, n_joints: int=4) -> Degradation:
    for key in ("mass_scale", "damping_scale", "torque_scale"):
        v = np.asarray(getattr(deg, key))
        if v.shape != (n_joints,):
            raise ConfigError(f"degradation.{key}: expected {n_joints} entries")
        if not np.all(v > 0):
            raise ConfigError(f"degradation.{key}: scales must be > 0")
    for key in ("sensor_pos_sigma", "sensor_vel_sigma"):
        if not getattr(deg, key) >= 0:
            raise ConfigError(f"degradation.{key}: must be >= 0")
    return deg


@dataclass
class ArmStepResult:
    """
    Result of one control step of the simulator
    """
    state: JointState
    # joint positions before clamping, frozen at the first substep that left the bounds
    q_preclamp: jax.Array
    tau_applied: jax.Array
    violated: bool


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def _com_positions(model: ArmModel, q: jax.Array):
    phi = jnp.cumsum(q)
    cphi, sphi = jnp.cos(phi), jnp.sin(phi)
    zero = jnp.zeros(1)
    jx = jnp.concatenate([zero, jnp.cumsum(model.link_lengths*cphi)[:-1]])
    jy = jnp.concatenate([zero, jnp.cumsum(model.link_lengths*sphi)[:-1]])
    return jx + model.link_com_offsets*cphi, jy + model.link_com_offsets*sphi


def _rod_inertia(model: ArmModel) -> jax.Array:
    return model.link_masses * model.link_lengths**2 / 12.


def _mass_matrix(model: ArmModel, q: jax.Array) -> jax.Array:
    jx, jy = jax.jacfwd(lambda qq: _com_positions(model, qq))(q)
    n = model.n_joints
    # link angular rate is the sum of the joint rates up to that link
    s = jnp.tril(jnp.ones((n, n)))
    wm = model.added_mass_factor * model.link_masses
    wi = model.added_mass_factor * _rod_inertia(model)
    m = jx.T @ (wm[:, None]*jx) + jy.T @ (wm[:, None]*jy) + s.T @ (wi[:, None]*s)
    return 0.5*(m + m.T)


def _kinetic_energy(model: ArmModel, q: jax.Array, qdot: jax.Array) -> jax.Array:
    _, (vx, vy) = jax.jvp(lambda qq: _com_positions(model, qq), (q,), (qdot,))
    omega = jnp.cumsum(qdot)
    a = model.added_mass_factor
    return 0.5*jnp.sum(a*(model.link_masses*(vx**2 + vy**2) + _rod_inertia(model)*omega**2))


def _potential_energy(model: ArmModel, q: jax.Array) -> jax.Array:
    _, py = _com_positions(model, q)
    return model.gravity_accel * jnp.sum(model.link_masses * py)


def _gravity_torques(model: ArmModel, q: jax.Array) -> jax.Array:
    return jax.grad(lambda qq: _potential_energy(model, qq))(q)


def _coriolis(model: ArmModel, q: jax.Array, qdot: jax.Array) -> jax.Array:
    # C(q, q')q' = M'(q)q' - 1/2 d/dq (q'^T M(q) q')
    _, mdot = jax.jvp(lambda qq: _mass_matrix(model, qq), (q,), (qdot,))
    dquad = jax.grad(lambda qq: qdot @ _mass_matrix(model, qq) @ qdot)(q)
    return mdot @ qdot - 0.5*dquad


def _bias_forces(model: ArmModel, q: jax.Array, qdot: jax.Array) -> jax.Array:
    damping = model.damping_linear*qdot + model.damping_quadratic*qdot*jnp.abs(qdot)
    return _coriolis(model, q, qdot) + _gravity_torques(model, q) + damping


def _forward_dynamics(model: ArmModel, q, qdot, tau) -> jax.Array:
    m = _mass_matrix(model, q)
    return jax.scipy.linalg.solve(m, tau - _bias_forces(model, q, qdot), assume_a="pos")


class ArmSys(ControlSys):
    """
    The arm as a controlled ODE system, x = (q, q'), u = tau.
    """
    model: ArmModel

    def __init__(self, model: ArmModel):
        self.model = model

    @property
    def n_state(self) -> int:
        return 2*self.model.n_joints

    @property
    def n_input(self) -> int:
        return self.model.n_joints

    def input_limits(self) -> jax.Array:
        return self.model.torque_limits

    def _frhs(self, t, x, u=None, **kwargs):
        n = self.model.n_joints
        q, qdot = x[:n], x[n:]
        if u is None:
            u = jnp.zeros(n)
        return jnp.concatenate([qdot, _forward_dynamics(self.model, q, qdot, u)])


@eqx.filter_jit
def _step_kernel(model: ArmModel, torque_scale, x, tau_cmd, dt, n_substeps: int):
    logger.debug("jit-compiling arm step kernel")
    n = model.n_joints
    lim = model.torque_limits * torque_scale
    tau = jnp.clip(tau_cmd, -lim, lim)
    sys = ArmSys(model)
    h = dt / n_substeps

    def body(i, carry):
        xi, q_pre, violated = carry
        x_raw = rk4_step(sys, i*h, xi, h, u=tau)
        q_raw, qdot_raw = x_raw[:n], x_raw[n:]
        out = (q_raw < model.position_min) | (q_raw > model.position_max)
        q_pre = jnp.where(violated, q_pre, q_raw)
        violated = violated | jnp.any(out)
        # inelastic stop at the joint limits
        q = jnp.clip(q_raw, model.position_min, model.position_max)
        qdot = jnp.where(out, 0.0, qdot_raw)
        qdot = jnp.clip(qdot, -model.velocity_limit, model.velocity_limit)
        return jnp.concatenate([q, qdot]), q_pre, violated

    init = (x, x[:n], jnp.asarray(False))
    x_new, q_pre, violated = lax.fori_loop(0, n_substeps, body, init)
    return x_new, q_pre, violated, tau


@eqx.filter_jit
def _flow_kernel(sys: ControlSys, x, u, dt, n_substeps: int):
    logger.debug("jit-compiling flow kernel")
    return rk4_substeps(sys, 0.0, x, dt, n_substeps, u=u)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a))):
            raise InvalidStateError()


def substep_count(dt_control: float, physics_dt: float) -> int:
    return max(1, int(round(dt_control / physics_dt)))


def mass_matrix(model: ArmModel, q) -> jax.Array:
    """
    Symmetric positive definite joint space inertia, added mass included.
    """
    _check_finite(q)
    return _mass_matrix(model, _vec(q))


def bias_forces(model: ArmModel, state: JointState) -> jax.Array:
    """
    Coriolis, centrifugal, gravity and damping torques.  The forward
    dynamics read q'' = M^-1 (tau - bias).
    """
    _check_finite(state.q, state.qdot)
    return _bias_forces(model, state.q, state.qdot)


def kinetic_energy(model: ArmModel, q, qdot) -> jax.Array:
    return _kinetic_energy(model, _vec(q), _vec(qdot))


def potential_energy(model: ArmModel, q) -> jax.Array:
    return _potential_energy(model, _vec(q))


def gravity_torques(model: ArmModel, q) -> jax.Array:
    _check_finite(q)
    return _gravity_torques(model, _vec(q))


def flow(model, x, tau, dt: float, n_substeps: int=10) -> jax.Array:
    """
    Unclamped RK4 flow map of x = (q, q') under a constant input.

    Args:
        model: ArmModel or any ControlSys
        x: start state
        tau: input held over the step
        dt: step size
        n_substeps: RK4 substeps
    """
    sys = ArmSys(model) if isinstance(model, ArmModel) else model
    return _flow_kernel(sys, _vec(x), _vec(tau), dt, int(n_substeps))


def step_detailed(model: ArmModel, degradation: Degradation, state: JointState,
                  tau_cmd, dt_control: float, physics_dt: float=0.005) -> ArmStepResult:
    """
    Advance the arm by one control interval.

    Saturates the command to +-torque_limits*torque_scale, integrates with
    fixed RK4 substeps, clamps positions to the joint limits (zeroing the
    velocity of a joint at its stop) and velocities to velocity_limit.

    Args:
        model: plant parameters (already degraded if required)
        degradation: supplies the torque scale
        state: current state
        tau_cmd: commanded torque [N m]
        dt_control: control interval [s]
        physics_dt: RK4 substep [s]
    """
    if not dt_control > 0:
        raise ValueError(f"dt_control must be positive, got {dt_control}")
    _check_finite(state.q, state.qdot)
    tau_cmd = _vec(tau_cmd)
    if not np.all(np.isfinite(np.asarray(tau_cmd))):
        raise InvalidStateError("invalid state: non-finite torque command")
    n_sub = substep_count(dt_control, physics_dt)
    x_new, q_pre, violated, tau = _step_kernel(
            model, degradation.torque_scale, state.x, tau_cmd, float(dt_control), n_sub)
    if not np.all(np.isfinite(np.asarray(x_new))):
        raise DynamicsDivergedError()
    n = model.n_joints
    new_state = JointState(x_new[:n], x_new[n:], state.t + dt_control)
    return ArmStepResult(new_state, q_pre, tau, bool(violated))


def step(model: ArmModel, degradation: Degradation, state: JointState,
         tau_cmd, dt_control: float, physics_dt: float=0.005) -> JointState:
    return step_detailed(model, degradation, state, tau_cmd, dt_control, physics_dt).state


@eqx.filter_jit
def _observe_kernel(q, qdot, pos_sigma, vel_sigma, key):
    kq, kv = jax.random.split(key)
    return (q + pos_sigma*jax.random.normal(kq, q.shape),
            qdot + vel_sigma*jax.random.normal(kv, qdot.shape))


def observe(state: JointState, degradation: Degradation, key: jax.Array):
    """
    Noisy sensor reading (q + e_q, q' + e_v) with zero mean Gaussian noise.
    The state is not modified.
    """
    return _observe_kernel(state.q, state.qdot,
                           jnp.asarray(degradation.sensor_pos_sigma),
                           jnp.asarray(degradation.sensor_vel_sigma), key)


def apply_degradation(model: ArmModel, degradation: Degradation) -> ArmModel:
    """
    Copy of model with link masses and damping coefficients scaled.
    """
    return eqx.tree_at(
        lambda m: (m.link_masses, m.damping_linear, m.damping_quadratic),
        model,
        (model.link_masses * degradation.mass_scale,
         model.damping_linear * degradation.damping_scale,
         model.damping_quadratic * degradation.damping_scale))


def random_degradation(n_joints: int, seed: int, spread: float=0.1, **kwargs) -> Degradation:
    """
    Multiplicative U(1 - spread, 1 + spread) mass and damping scales,
    reproducible from seed.

    Args:
        n_joints: number of joints
        seed: integer seed, also used as the sensor noise seed
        spread: half width of the uniform scale distribution
        torque_scale: optional torque scales, default ones
        sensor_pos_sigma: position noise [rad], default 0.001
        sensor_vel_sigma: velocity noise [rad/s], default 0.01
    """
    km, kd = jax.random.split(jax.random.PRNGKey(seed))
    lo, hi = 1. - spread, 1. + spread
    mass_scale = jax.random.uniform(km, (n_joints,), minval=lo, maxval=hi)
    damping_scale = jax.random.uniform(kd, (n_joints,), minval=lo, maxval=hi)
    torque_scale = kwargs.get("torque_scale", jnp.ones(n_joints))
    return Degradation(
        mass_scale, damping_scale, torque_scale,
        float(kwargs.get("sensor_pos_sigma", 0.001)),
        float(kwargs.get("sensor_vel_sigma", 0.01)),
        int(kwargs.get("rng_seed", seed)))
