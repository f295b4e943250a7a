"""fedcorrect: a desk-scale federated-learning simulator built around
user-correction data, compressed model payloads, partial-layer training, and
weighted client aggregation."""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
