"""Hierarchical binomial-logit small-area model."""

from .icar import build_icar_precision, component_constraints, icar_structure
from .laplace import fit_laplace
from .layout import LatentField, LatentLayout, grad_log_posterior, log_unnormalized_posterior
from .posterior import FittedPosterior, predict_cells, probability_moments, sample_latent
from .spec import GammaPrior, ModelSpec

__all__ = [
    "FittedPosterior",
    "GammaPrior",
    "LatentField",
    "LatentLayout",
    "ModelSpec",
    "build_icar_precision",
    "component_constraints",
    "fit_laplace",
    "grad_log_posterior",
    "icar_structure",
    "log_unnormalized_posterior",
    "predict_cells",
    "probability_moments",
    "sample_latent",
]
