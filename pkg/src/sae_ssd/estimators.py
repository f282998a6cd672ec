"""Estimator-style wrappers over the model fit and the sample size search.

The classes follow the scikit-learn conventions (constructor stores
parameters untouched, ``fit`` returns ``self``, fitted state ends in an
underscore) so ``get_params``/``set_params``/``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .designsim import direct_estimate
from .exceptions import DataError
from .model.laplace import fit_laplace
from .model.mcmc import ChainConfig, fit_mcmc
from .model.spec import CONVOLUTION_PRIOR, ModelSpec
from .planning import DesignEffect, ess_to_actual
from .sampling import SampleRealization
from .ssd import SsdConfig, run_ssd


def _as_sample(sample, population=None):
    if isinstance(sample, SampleRealization):
        out = sample
    elif isinstance(sample, tuple) and len(sample) == 2:
        n, y = sample
        out = SampleRealization(np.nan, np.asarray(n), np.asarray(y))
    else:
        raise DataError("sample must be a SampleRealization or a (n, y) tuple")
    if population is not None:
        out.check_against(population)
    return out


class HierarchicalSAE(BaseEstimator):
    """Binomial-logit small area model for a (groups x areas) table.

    Parameters
    ----------
    include_covariates, include_spatial, include_exchangeable : bool
        Which predictor components to include.
    hyperprior_upsilon, hyperprior_nu : GammaPrior or (shape, rate)
        Precision priors; ``hyperprior_nu=None`` picks the default that
        matches the structure.
    shared_covariate_effects : bool
        One coefficient vector for all groups instead of one per group.
    grid : {'adaptive', 'prior'}
        Hyperparameter integration grid of the Laplace fit.
    method : {'laplace', 'mcmc'}
    chain_config : ChainConfig, optional
        Only used with ``method='mcmc'``.
    """

    def __init__(
        self,
        include_covariates=True,
        include_spatial=True,
        include_exchangeable=True,
        hyperprior_upsilon=CONVOLUTION_PRIOR,
        hyperprior_nu=None,
        fixed_effect_prior_sd=10.0,
        intercept_prior_sd=10.0,
        shared_covariate_effects=False,
        grid="adaptive",
        method="laplace",
        chain_config=None,
    ):
        self.include_covariates = include_covariates
        self.include_spatial = include_spatial
        self.include_exchangeable = include_exchangeable
        self.hyperprior_upsilon = hyperprior_upsilon
        self.hyperprior_nu = hyperprior_nu
        self.fixed_effect_prior_sd = fixed_effect_prior_sd
        self.intercept_prior_sd = intercept_prior_sd
        self.shared_covariate_effects = shared_covariate_effects
        self.grid = grid
        self.method = method
        self.chain_config = chain_config

    @classmethod
    def for_scenario(cls, scenario, **params):
        spec = ModelSpec.for_scenario(scenario)
        base = dict(include_covariates=spec.include_covariates, include_spatial=spec.include_spatial,
                    include_exchangeable=spec.include_exchangeable)
        return cls(**{**base, **params})

    def model_spec(self):
        return ModelSpec(
            include_covariates=self.include_covariates,
            include_spatial=self.include_spatial,
            include_exchangeable=self.include_exchangeable,
            hyperprior_upsilon=self.hyperprior_upsilon,
            hyperprior_nu=self.hyperprior_nu,
            fixed_effect_prior_sd=self.fixed_effect_prior_sd,
            intercept_prior_sd=self.intercept_prior_sd,
            shared_covariate_effects=self.shared_covariate_effects,
            grid=self.grid,
        )

    def fit(self, sample, population=None, covariates=None, graph=None):
        """Fit to ``sample`` (a SampleRealization or an ``(n, y)`` pair)."""
        if self.method not in ("laplace", "mcmc"):
            raise ValueError(f"method must be 'laplace' or 'mcmc', got {self.method!r}")
        spec = self.model_spec()
        data = _as_sample(sample, population)
        if self.method == "laplace":
            post = fit_laplace(spec, data, population, covariates, graph)
        else:
            post = fit_mcmc(spec, data, population, covariates, graph, self.chain_config or ChainConfig())
        self.posterior_ = post
        self.n_groups_, self.n_areas_ = data.n.shape
        self.converged_ = post.converged
        return self

    def predict(self):
        """Posterior mean prevalence per cell, shape ``(J, D)``."""
        check_is_fitted(self, "posterior_")
        return np.asarray(self.posterior_.cell_mean)

    def predict_var(self):
        check_is_fitted(self, "posterior_")
        return np.asarray(self.posterior_.cell_var)

    def rse(self):
        check_is_fitted(self, "posterior_")
        return np.asarray(self.posterior_.rse)


class DirectEstimator(BaseEstimator):
    """Sample proportion per cell; cells with no sample are NaN."""

    def fit(self, sample, population=None):
        data = _as_sample(sample, population)
        est = direct_estimate(data)
        self.cell_mean_, self.cell_var_ = est.cell_mean, est.cell_var
        return self

    def predict(self):
        check_is_fitted(self, "cell_mean_")
        return self.cell_mean_

    def predict_var(self):
        check_is_fitted(self, "cell_var_")
        return self.cell_var_

    def rse(self):
        check_is_fitted(self, "cell_mean_")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.cell_mean_ > 0, np.sqrt(self.cell_var_) / self.cell_mean_, np.inf)


class SampleSizeSearch(BaseEstimator):
    """Bisection search for the smallest reliable sampling fraction.

    ``fit(population, covariates, graph)`` runs the search and exposes
    ``trace_``, ``recommended_fraction_``, ``recommended_ess_`` and, for
    each entry of ``deffs``, ``actual_sizes_``.
    """

    def __init__(self, f_a=0.01, f_b=0.04, h=0.01, L=100, kappa=0.0, gamma=0.01, loss_kind="count",
                 use_estimated_eligibility=True, pilot_fraction=0.01, master_seed=0, scenario="S4", deffs=(),
                 n_jobs=1):
        self.f_a = f_a
        self.f_b = f_b
        self.h = h
        self.L = L
        self.kappa = kappa
        self.gamma = gamma
        self.loss_kind = loss_kind
        self.use_estimated_eligibility = use_estimated_eligibility
        self.pilot_fraction = pilot_fraction
        self.master_seed = master_seed
        self.scenario = scenario
        self.deffs = deffs
        self.n_jobs = n_jobs

    def config(self):
        return SsdConfig(f_a=self.f_a, f_b=self.f_b, h=self.h, L=self.L, kappa=self.kappa, gamma=self.gamma,
                         loss_kind=self.loss_kind, use_estimated_eligibility=self.use_estimated_eligibility,
                         master_seed=self.master_seed, pilot_fraction=self.pilot_fraction)

    def fit(self, population, covariates=None, graph=None, evaluate=None):
        spec = self.scenario if isinstance(self.scenario, ModelSpec) else ModelSpec.for_scenario(self.scenario)
        trace = run_ssd(population, covariates, graph, spec, self.config(), evaluate=evaluate, n_jobs=self.n_jobs)
        self.trace_ = trace
        self.solution_interval_ = trace.solution_interval
        self.recommended_fraction_ = trace.recommended_fraction
        self.recommended_ess_ = trace.recommended_ess
        deffs = [d if isinstance(d, DesignEffect) else DesignEffect(float(d)) for d in self.deffs]
        self.actual_sizes_ = {d.deff: ess_to_actual(trace.recommended_ess, d) for d in deffs}
        return self

    def predict(self):
        check_is_fitted(self, "trace_")
        return self.recommended_fraction_

