"""Bayesian sample size determination for hierarchical small-area prevalence estimates."""

from .designsim import MetricsTable, Scenario, direct_variance, efficiency_ratio, rseb, run_scenario
from .estimators import DirectEstimator, HierarchicalSAE, SampleSizeSearch
from .exceptions import ConfigError, DataError, InfeasibleIntervalError, NumericalFailure, SaeSsdError
from .model import FittedPosterior, GammaPrior, ModelSpec, fit_laplace, predict_cells, sample_latent
from .model.mcmc import ChainConfig, fit_mcmc
from .planning import DesignEffect, ess_to_actual, fraction_to_ess
from .population import (
    AdjacencyGraph,
    CovariateMatrix,
    Population,
    lattice_graph,
    load_adjacency,
    load_covariates,
    load_population,
    scale_covariates,
    synth_population,
)
from .reliability import eligibility, loss_count, loss_weighted, rse, suppression_report
from .sampling import SampleRealization, draw_sample, replicate_seed
from .ssd import SsdConfig, SsdTrace, evaluate_fraction, k_max, run_ssd

__version__ = "0.1.0"
