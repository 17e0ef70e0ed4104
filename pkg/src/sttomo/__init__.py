"""Desk-scale numerics for travel-time tomography in stationary spacetimes."""
from .kernels import BACKEND
from .metric import (BumpMetric, Minkowski, ProductMetric, SpatialDomain, pullback_metric, random_bump_diffeo,
                     random_bump_metric)
from .flow import PhaseState, propagate
from .boundary_data import scattering_relation, time_separation
from .straighten import build_straightening, special_form_residual, tensor_difference
from .identity import identity_records
from .fourier import contraction_diagnostic, transform_A
from .riemannian import direction_set, riemannian_pipeline

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BumpMetric", "Minkowski", "PhaseState", "ProductMetric", "SpatialDomain",
    "build_straightening", "contraction_diagnostic", "direction_set", "identity_records", "propagate",
    "pullback_metric", "random_bump_diffeo", "random_bump_metric", "riemannian_pipeline",
    "scattering_relation", "special_form_residual", "tensor_difference", "time_separation", "transform_A",
    "__version__",
]
