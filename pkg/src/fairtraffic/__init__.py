"""Privacy-preserving federated traffic prediction with fairness-aware routing.

Desk-scale, fully deterministic given a seed. Subpackages map to the
pipeline stages: ``network`` (graph and ingestion), ``metrics``
(fairness measures), ``gnn`` (the travel-time predictor), ``privacy``
(differential-privacy machinery), ``federated`` (round orchestration and
communication accounting), ``routing`` (multi-objective assignment),
``sim`` (the scenario driver), and ``cli``.
"""

from . import federated, fixtures, gnn, metrics, network, privacy, routing, sim
from .errors import FairTrafficError

__version__ = "0.1.0"

__all__ = [
    "FairTrafficError",
    "federated",
    "fixtures",
    "gnn",
    "metrics",
    "network",
    "privacy",
    "routing",
    "sim",
    "__version__",
]
