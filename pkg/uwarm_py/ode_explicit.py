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
Fixed step explicit integration of controlled ODE systems.
"""
from dataclasses import dataclass
import logging
import time

import numpy as np
import jax
import jax.numpy as jnp
from jax import lax

from uwarm_py.ode_sys import OdeSys

logger = logging.getLogger(__name__)


@dataclass
class IntegrateResult:
    """
    Storage for fixed step integration results
    """
    t: np.ndarray
    y: np.ndarray

    @property
    def t_res(self):
        return self.t

    @property
    def y_res(self):
        return self.y


def rk4_step(sys: OdeSys, t, yt: jax.Array, dt, **frhs_kwargs) -> jax.Array:
    """
    Classic RK4 update of the system over one step dt.
    """
    f1 = sys.frhs(t,      yt, **frhs_kwargs)
    f2 = sys.frhs(t+dt/2, yt + f1*dt/2, **frhs_kwargs)
    f3 = sys.frhs(t+dt/2, yt + f2*dt/2, **frhs_kwargs)
    f4 = sys.frhs(t+dt,   yt + f3*dt, **frhs_kwargs)
    return yt + dt * (f1 + 2*f2 + 2*f3 + f4) / 6


def rk4_substeps(sys: OdeSys, t, yt: jax.Array, dt, n_substeps: int, **frhs_kwargs) -> jax.Array:
    """
    Advance by dt with n_substeps equal RK4 substeps.
    The frhs kwargs (e.g. the control input) are held constant.

    Args:
        sys: ode system
        t: start time
        yt: start state
        dt: total step size
        n_substeps: number of RK4 substeps, static
    """
    h = dt / n_substeps

    def body(i, y):
        return rk4_step(sys, t + i*h, y, h, **frhs_kwargs)
    return lax.fori_loop(0, n_substeps, body, yt)


def integrate(ode_sys: OdeSys, y0, t0: float, dt: float, nsteps: int,
              n_substeps: int=1, frhs_kwargs_fn=None) -> IntegrateResult:
    """
    Integrate the system with RK4 over nsteps steps of size dt.

    Args:
        ode_sys: ode system
        y0: initial state
        t0: initial time
        dt: step size
        nsteps: number of steps
        n_substeps: RK4 substeps per step
        frhs_kwargs_fn: optional callable (t) -> dict of frhs kwargs
            held constant over each step (open loop input profile)
    """
    tic = time.perf_counter()

    @jax.jit
    def _step_jit(t, y, kw):
        logger.debug("jit-compiling rk4 kernel")
        return rk4_substeps(ode_sys, t, y, dt, n_substeps, **kw)

    t_res, y_res = [t0,], [jnp.asarray(y0),]
    for i in range(nsteps):
        t = t0 + i*dt
        kw = frhs_kwargs_fn(t) if callable(frhs_kwargs_fn) else {}
        y_res.append(_step_jit(t, y_res[-1], kw))
        t_res.append(t0 + (i+1)*dt)
    y_res[-1].block_until_ready()
    toc = time.perf_counter()
    logger.info(f"Integrated system with rk4 in {toc - tic:0.4f} seconds")
    return IntegrateResult(np.asarray(t_res), np.asarray(jnp.stack(y_res)))
