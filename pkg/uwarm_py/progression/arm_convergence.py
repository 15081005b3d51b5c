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
Convergence of the arm simulator in the RK4 substep size.

A fixed open loop torque profile, held over each 0.05 s control interval,
drives the damped arm with gravity for 20 s.  Endpoints for a sweep of
substep sizes are compared against a fine reference and the observed
order is fitted.  A second study tracks the energy drift of the undamped,
gravity free arm.
"""
import numpy as np
import scipy as sp
import jax
import jax.numpy as jnp

from uwarm_py.ode_explicit import integrate
from uwarm_py.dynamics import ArmModel, ArmSys, kinetic_energy

try:
    import matplotlib.pyplot as plt
    HAS_MATPLOTLIB = True
except ImportError:
    HAS_MATPLOTLIB = False


def torque_profile(model: ArmModel, amp: float=0.2):
    """Smooth open loop torques, a fraction amp of the limits."""
    lim = model.torque_limits
    phase = jnp.arange(model.n_joints)
    return lambda t: {"u": amp*lim*jnp.sin(0.5*t + phase)}


def endpoint(model: ArmModel, n_substeps: int, tf: float=20.0, dt: float=0.05):
    nsteps = int(round(tf/dt))
    y0 = jnp.zeros(2*model.n_joints)
    res = integrate(ArmSys(model), y0, 0.0, dt, nsteps, n_substeps, torque_profile(model))
    return res.y_res[-1]


def substep_sweep(model: ArmModel=None, substeps=(2, 4, 8, 16), ref_substeps: int=128):
    """
    Endpoint error in joint positions against a fine reference.

    Returns:
        array of (substep size, max abs error), estimated order
    """
    model = ArmModel() if model is None else model
    n = model.n_joints
    y_ref = endpoint(model, ref_substeps)
    err = []
    for ns in substeps:
        y = endpoint(model, ns)
        e = float(np.max(np.abs(y[:n] - y_ref[:n])))
        print("substeps: %d, h: %0.4e, max endpoint err: %0.4e" % (ns, 0.05/ns, e))
        err.append([0.05/ns, e])
    err = np.asarray(err)
    trendf = lambda x, s, b: s*np.log(x) + b
    popt, _ = sp.optimize.curve_fit(trendf, err[:, 0], np.log(err[:, 1]), p0=[4.0, 1.0])
    print("Est conv order: %0.4e" % popt[0])
    return err, popt[0]


def energy_drift(n_substeps: int=10, tf: float=20.0, dt: float=0.05):
    """
    Relative kinetic energy drift of the undamped arm without gravity.
    """
    model = ArmModel(gravity_accel=0.0, damping_linear=[0.]*4, damping_quadratic=[0.]*4)
    n = model.n_joints
    y0 = jnp.concatenate([jnp.zeros(n), jnp.array([0.5, -0.3, 0.2, 0.1])])
    res = integrate(ArmSys(model), y0, 0.0, dt, int(round(tf/dt)), n_substeps)
    energy = np.array([float(kinetic_energy(model, y[:n], y[n:])) for y in res.y_res])
    drift = np.max(np.abs(energy - energy[0])) / energy[0]
    print("relative energy drift over %0.1f s: %0.4e" % (tf, drift))
    return res.t_res, energy, drift


def main():
    err, order = substep_sweep()
    t, energy, drift = energy_drift()
    if HAS_MATPLOTLIB:
        plt.figure()
        plt.loglog(err[:, 0], err[:, 1], "o-", label=f"order {order:0.2f}")
        plt.xlabel(r"RK4 substep, $h$ [s]")
        plt.ylabel("max endpoint error [rad]")
        plt.grid(ls="--")
        plt.legend()
        plt.tight_layout()
        plt.savefig("arm_substep_conv.png")
        plt.close()

        plt.figure()
        plt.plot(t, energy / energy[0] - 1.)
        plt.xlabel("time [s]")
        plt.ylabel("relative energy drift")
        plt.grid(ls="--")
        plt.tight_layout()
        plt.savefig("arm_energy_drift.png")
        plt.close()


if __name__ == "__main__":
    jax.config.update("jax_enable_x64", True)
    main()
