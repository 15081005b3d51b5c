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
Controlled systems of ODEs.

.. code-block::

    dx/dt = F(t, x, u),   |u_i| <= u_max_i

The input u is held constant over an integration step and reaches the rhs
as the ``u`` keyword.  Systems are equinox modules so they pass through
jit and vmap as pytrees.
"""
from abc import abstractmethod
import jax
import equinox as eqx


class OdeSys(eqx.Module):
    """
    Autonomous or time dependent rhs, subclasses implement ``_frhs``.
    """
    def frhs(self, t: float, x: jax.Array, **kwargs) -> jax.Array:
        """
        Evaluate dx/dt at (t, x).  Keyword arguments (the input ``u``) are
        passed through to ``_frhs``.
        """
        return self._frhs(t, x, **kwargs)

    def fjac(self, t: float, x: jax.Array, **kwargs) -> jax.Array:
        """
        State Jacobian dF/dx at (t, x), forward mode.
        """
        return jax.jacfwd(lambda xx: self._frhs(t, xx, **kwargs))(x)

    @abstractmethod
    def _frhs(self, t: float, x: jax.Array, **kwargs) -> jax.Array:
        raise NotImplementedError


class ControlSys(OdeSys):
    """
    ODE system driven by a box limited input.
    """

    @property
    @abstractmethod
    def n_state(self) -> int:
        raise NotImplementedError

    @property
    @abstractmethod
    def n_input(self) -> int:
        raise NotImplementedError

    @abstractmethod
    def input_limits(self) -> jax.Array:
        """
        Symmetric input bounds u_max, shape (n_input,)
        """
        raise NotImplementedError

    def ujac(self, t: float, x: jax.Array, u: jax.Array) -> jax.Array:
        """
        Input Jacobian dF/du at (t, x, u), shape (n_state, n_input).
        """
        return jax.jacfwd(lambda uu: self._frhs(t, x, u=uu))(u)

    @abstractmethod
    def _frhs(self, t: float, x: jax.Array, u: jax.Array=None, **kwargs) -> jax.Array:
        raise NotImplementedError
