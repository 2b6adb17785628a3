"""xLSTM-PINN: memory-gated representation networks for physics-informed learning."""

import jax

# Fourth-order coordinate derivatives are unusable in float32.
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
