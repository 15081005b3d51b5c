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
Double integrator x = (p, v), p'' = u, with |u| <= u_max.

The RK4 flow of this system is exact, so its discrete matrices

.. code-block::

    A = [[I, dt I], [0, I]],   B = [[dt^2/2 I], [dt I]]

serve as a reference for the linearization and the MPC solver.
Running this file drives the system to a setpoint with the MPC.
"""
import numpy as np
import jax
import jax.numpy as jnp
import equinox as eqx

from uwarm_py.ode_sys import ControlSys
from uwarm_py.mpc import MpcConfig, solve_horizon
from uwarm_py.dynamics import flow

try:
    import matplotlib.pyplot as plt
    HAS_MATPLOTLIB = True
except ImportError:
    HAS_MATPLOTLIB = False


class DoubleIntegratorSys(ControlSys):
    u_max: jax.Array
    n_axes: int = eqx.field(static=True)

    def __init__(self, **kwargs):
        self.n_axes = kwargs.get("n_axes", 1)
        self.u_max = jnp.asarray(kwargs.get("u_max", 1e3)) * jnp.ones(self.n_axes)

    @property
    def n_state(self) -> int:
        return 2*self.n_axes

    @property
    def n_input(self) -> int:
        return self.n_axes

    def input_limits(self):
        return self.u_max

    @jax.jit
    def _frhs(self, t, x, u=None, **kwargs):
        if u is None:
            u = jnp.zeros(self.n_axes)
        return jnp.concatenate([x[self.n_axes:], u])


def exact_discretization(n_axes: int, dt: float):
    eye = np.eye(n_axes)
    zero = np.zeros((n_axes, n_axes))
    a = np.block([[eye, dt*eye], [zero, eye]])
    b = np.vstack([0.5*dt**2*eye, dt*eye])
    return a, b


def main(n_axes=1, n_steps=60, **kwargs):
    sys = DoubleIntegratorSys(n_axes=n_axes, u_max=kwargs.get("u_max", 2.0))
    conf = MpcConfig(horizon=kwargs.get("horizon", 10),
                     q_weight=(10.,)*n_axes + (1.,)*n_axes,
                     r_weight=(0.1,)*n_axes, max_iters=2000, dt=0.1, physics_dt=0.1)
    x = np.zeros(2*n_axes)
    x_ref = np.concatenate([np.ones(n_axes), np.zeros(n_axes)])
    u_prev = np.zeros(n_axes)
    traj = [x]
    for k in range(n_steps):
        sol = solve_horizon(conf, sys, x, x_ref, u_prev)
        u_prev = sol.tau_seq[0]
        x = np.asarray(flow(sys, x, u_prev, conf.dt, 1))
        traj.append(x)
        print("step %d, x: %s, u: %s, iters: %d" % (k, np.array2string(x, precision=4),
              np.array2string(u_prev, precision=4), sol.iterations))
    traj = np.asarray(traj)
    if HAS_MATPLOTLIB:
        t = conf.dt*np.arange(traj.shape[0])
        plt.figure()
        for i in range(n_axes):
            plt.plot(t, traj[:, i], label=f"p{i+1}")
        plt.axhline(1.0, ls="--", c="k")
        plt.xlabel("time [s]")
        plt.legend()
        plt.grid(ls="--")
        plt.savefig("double_integrator_mpc.png")
        plt.close()
    return traj


if __name__ == "__main__":
    import argparse
    parser = argparse.ArgumentParser()
    parser.add_argument("-n_axes", type=int, default=1)
    parser.add_argument("-n_steps", type=int, default=60)
    parser.add_argument("-horizon", type=int, default=10)
    args = parser.parse_args()
    main(args.n_axes, args.n_steps, horizon=args.horizon)
