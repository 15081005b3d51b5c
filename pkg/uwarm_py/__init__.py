"""
Underwater arm control: simulator, DDPG agent, MPC baseline and metrics.
"""
import jax

# gradient checks and byte exact checkpoints assume 64 bit floats
jax.config.update("jax_enable_x64", True)
