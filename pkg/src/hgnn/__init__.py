"""Self-tuning GNN hypermodels for outcome prediction on event-sequence logs.

Pipeline: encode event logs as temporally weighted chain graphs, assemble any
of the 4 architectures x 6 message-passing operators from a sampled
configuration, and search the hyperparameter space with a TPE sampler plus
median pruning and early stopping.
"""

__version__ = "0.1.0"

from .kernels import backend_name
from .tensor import Tensor

__all__ = ["Tensor", "backend_name", "__version__"]
