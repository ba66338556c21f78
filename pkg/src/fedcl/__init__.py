"""FedCL: multi-phase curriculum federated learning, with FedAvg/FedProx baselines."""
from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
