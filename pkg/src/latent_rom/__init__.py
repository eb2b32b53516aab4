"""Non-intrusive latent-space reduced-order modelling with uncertainty-driven sampling.

Submodules: ``linalg`` (Cholesky helpers), ``nn`` (MLP autoencoder and Adam),
``fom`` (1D viscous Burgers solver), ``sindy`` (latent linear dynamics),
``gp`` (per-coefficient Gaussian processes), ``rom`` (ensemble prediction),
``trainer`` (joint training and greedy acquisition), ``storage``, ``config``
and ``cli``.
"""

from .errors import (AcquisitionError, ConfigError, DivergenceError, LatentROMError, NumericError,
                     ShapeError, StateError, StorageError)

__version__ = "0.1.0"

__all__ = ["AcquisitionError", "ConfigError", "DivergenceError", "LatentROMError", "NumericError",
           "ShapeError", "StateError", "StorageError", "__version__"]
