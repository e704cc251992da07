"""Traffic speed estimation at sensor-free road segments.

Builds directed sensor graphs from travel distances, propagates sparse
speed observations to unobserved segments by minimizing directed
Dirichlet energy, and trains a graph auto-encoder whose latent space is
extended to unobserved nodes by the same propagation mechanism with
physics-guided bidirectional diffusion.
"""

import os as _os

# Cap BLAS parallelism before numpy is first imported anywhere in the
# package; only effective when dirinet is the first heavy import of the
# process (true for the CLI entry point).
_threads = _os.environ.get("DIRINET_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

__version__ = "0.1.0"

from .backend import BACKEND  # noqa: E402
from .errors import (  # noqa: E402
    CheckpointError,
    DirinetError,
    InputError,
    ProtocolError,
)

__all__ = [
    "BACKEND",
    "CheckpointError",
    "DirinetError",
    "InputError",
    "ProtocolError",
    "__version__",
]
