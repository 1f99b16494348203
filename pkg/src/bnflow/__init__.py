"""Training dynamics of batch-normalized two-layer networks.

Submodules: ``data_model`` (data, activations, losses), ``geometry`` (the
Sigma-ellipsoid and its metric), ``dynamics`` (flows, integrators, gradient
descent), ``meanfield`` (empirical measures, W2, particle limit),
``verify`` (invariant suites), ``experiments`` and ``cli``.
"""
from .data_model import DataDistribution, generate_gaussian, get_activation, get_loss, load_csv
from .dynamics import Ensemble, equivalence_report, integrate, rhs
from .geometry import ManifoldMetric, manifold_gradient, metric_matrix
from .meanfield import EmpiricalMeasure, particle_limit_study, w2_empirical

__version__ = "0.1.0"

__all__ = [
    "DataDistribution",
    "EmpiricalMeasure",
    "Ensemble",
    "ManifoldMetric",
    "equivalence_report",
    "generate_gaussian",
    "get_activation",
    "get_loss",
    "integrate",
    "load_csv",
    "manifold_gradient",
    "metric_matrix",
    "particle_limit_study",
    "rhs",
    "w2_empirical",
]
