"""Model structure and prior settings."""

from dataclasses import dataclass, replace

import numpy as np
from scipy import special, stats

from ..exceptions import ConfigError


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) prior on a precision."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ConfigError(f"Gamma prior needs shape > 0 and rate > 0, got ({self.shape}, {self.rate})")

    def logpdf(self, tau):
        a, b = self.shape, self.rate
        return a * np.log(b) - special.gammaln(a) + (a - 1) * np.log(tau) - b * tau

    def ppf(self, q):
        return stats.gamma.ppf(q, self.shape, scale=1.0 / self.rate)

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def var(self):
        return self.shape / self.rate**2

    @classmethod
    def parse(cls, value):
        if isinstance(value, GammaPrior):
            return value
        if isinstance(value, str):
            value = [float(v) for v in value.replace("(", "").replace(")", "").split(",")]
        shape, rate = value
        return cls(float(shape), float(rate))


CONVOLUTION_PRIOR = GammaPrior(0.5, 0.1)
UNSTRUCTURED_ONLY_PRIOR = GammaPrior(1.0, 0.1)

SCENARIO_STRUCTURES = {
    "S2": dict(include_covariates=False, include_spatial=False, include_exchangeable=True),
    "S3": dict(include_covariates=True, include_spatial=False, include_exchangeable=True),
    "S4": dict(include_covariates=True, include_spatial=True, include_exchangeable=True),
}


@dataclass(frozen=True)
class ModelSpec:
    """Structure of the binomial-logit predictor and its priors.

    The linear predictor for group ``j`` in area ``d`` is::

        theta_jd = b0 + b1_j + X_d b2_j + u_d + v_jd

    with ``b1_1 = 0``, ``u`` an intrinsic CAR effect under per-component
    sum-to-zero constraints and ``v`` exchangeable Gaussian noise.

    ``hyperprior_nu=None`` resolves to Gamma(0.5, 0.1) when the spatial
    effect is present and Gamma(1, 0.1) when it is not.
    """

    include_covariates: bool = True
    include_spatial: bool = True
    include_exchangeable: bool = True
    hyperprior_upsilon: GammaPrior = CONVOLUTION_PRIOR
    hyperprior_nu: GammaPrior = None
    fixed_effect_prior_sd: float = 10.0
    intercept_prior_sd: float = 10.0
    shared_covariate_effects: bool = False
    grid: str = "adaptive"
    grid_points: int = 7
    newton_tol: float = 1e-8
    max_newton_iter: int = 200

    def __post_init__(self):
        object.__setattr__(self, "hyperprior_upsilon", GammaPrior.parse(self.hyperprior_upsilon))
        if self.hyperprior_nu is not None:
            object.__setattr__(self, "hyperprior_nu", GammaPrior.parse(self.hyperprior_nu))
        if not (self.fixed_effect_prior_sd > 0 and self.intercept_prior_sd > 0):
            raise ConfigError("fixed-effect prior SDs must be positive")
        if self.grid not in ("adaptive", "prior"):
            raise ConfigError(f"grid must be 'adaptive' or 'prior', got {self.grid!r}")
        if self.grid_points < 1:
            raise ConfigError("grid_points must be >= 1")

    @property
    def nu_prior(self):
        if self.hyperprior_nu is not None:
            return self.hyperprior_nu
        return CONVOLUTION_PRIOR if self.include_spatial else UNSTRUCTURED_ONLY_PRIOR

    @property
    def n_hyper(self):
        return int(self.include_spatial) + int(self.include_exchangeable)

    @classmethod
    def for_scenario(cls, scenario, **overrides):
        try:
            base = SCENARIO_STRUCTURES[str(scenario).upper()]
        except KeyError:
            raise ConfigError(f"no model structure for scenario {scenario!r}") from None
        return cls(**{**base, **overrides})

    def with_(self, **changes):
        return replace(self, **changes)
