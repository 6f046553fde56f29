"""Calibrating approximate solvers against an exact one with Bayesian kernel regression."""
import os as _os

# A single worker pool implementation that is always available; avoids the
# version check warning when an old TBB is installed system-wide.
if "NUMBA_THREADING_LAYER" not in _os.environ:
    import numba as _numba

    _numba.config.THREADING_LAYER = "workqueue"

from .model import Hyperparameters, KernelExpansion, MinMaxRescaler, TrainingSet  # noqa: E402
from .rjmcmc import MoveConfig  # noqa: E402

__version__ = "0.1.0"

__all__ = ["Hyperparameters", "KernelExpansion", "MinMaxRescaler", "TrainingSet", "MoveConfig",
           "__version__"]
