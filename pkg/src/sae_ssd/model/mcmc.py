"""Metropolis-within-Gibbs sampler for the same hierarchical model.

Serves as an independent reference for the Laplace engine on small
problems. It shares only the design layout with the approximation.

Blocks per sweep:

* fixed effects, one coordinate at a time, adaptive random walk;
* spatial effect through an unconstrained auxiliary vector ``u`` whose
  per-component projection is the constrained effect; the component means
  of ``u`` carry a standard normal prior so the target is proper, and they
  do not enter the likelihood;
* exchangeable effects, all cells at once, each with an independent
  Metropolis-Hastings step using a one-step Newton Gaussian proposal;
* both precisions from their conjugate Gamma full conditionals.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..sampling import replicate_seed
from .layout import LatentLayout
from .posterior import FittedPosterior

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 2
    n_iter: int = 10000
    burn_in: int = 3000
    thin: int = 5
    seed: int = 0
    adapt_every: int = 50
    rhat_threshold: float = 1.1


def _loglik(theta, y, n):
    return y * theta - n * np.logaddexp(0.0, theta)


class _Chain:
    def __init__(self, layout, y, n, rng):
        self.lay, self.y, self.n, self.rng = layout, y, n, rng
        spec = layout.spec
        self.spec = spec
        nf = layout.sl_u.start
        B = layout.B.toarray()
        self.Bf = B[:, :nf]
        self.prec_f = layout.fixed_precision
        self.beta = np.zeros(nf)
        self.beta[0] = np.log((y.sum() + 0.5) / (n.sum() - y.sum() + 0.5)) + 0.1 * rng.standard_normal()
        D, ncell = layout.D, layout.n_cells
        self.area = np.arange(ncell) % D
        if spec.include_spatial:
            self.R = layout.R.toarray()
            self.A = layout.A_u
            self.P = np.eye(D) - self.A.T @ self.A  # projection onto the constraint set
            self.u = 0.1 * rng.standard_normal(D)
            self.tau_u = spec.hyperprior_upsilon.mean
        else:
            self.u = np.zeros(D)
            self.tau_u = np.nan
        self.nu = np.zeros(ncell)
        self.tau_n = spec.nu_prior.mean if spec.include_exchangeable else np.nan
        self.log_step_f = np.full(nf, np.log(0.1))
        self.log_step_u = np.full(D, np.log(0.3))
        self.acc_f = np.zeros(nf)
        self.acc_u = np.zeros(D)
        self.acc_nu = 0.0
        self.eta_f = self.Bf @ self.beta
        self.ups = self._upsilon()
        self.theta = self._theta()

    def _upsilon(self):
        return self.P @ self.u if self.spec.include_spatial else np.zeros(self.lay.D)

    def _theta(self):
        return self.eta_f + self.ups[self.area] + self.nu

    def update_fixed(self):
        y, n, rng = self.y, self.n, self.rng
        ll = _loglik(self.theta, y, n).sum()
        for k in range(self.beta.size):
            delta = np.exp(self.log_step_f[k]) * rng.standard_normal()
            col = self.Bf[:, k]
            th_new = self.theta + delta * col
            ll_new = _loglik(th_new, y, n).sum()
            b = self.beta[k]
            dprior = -0.5 * self.prec_f[k] * ((b + delta) ** 2 - b**2)
            if np.log(rng.uniform()) < ll_new - ll + dprior:
                self.beta[k] += delta
                self.theta = th_new
                ll = ll_new
                self.acc_f[k] += 1
        self.eta_f = self.Bf @ self.beta
        self.theta = self._theta()

    def update_spatial(self):
        if not self.spec.include_spatial:
            return
        y, n, rng, tau = self.y, self.n, self.rng, self.tau_u
        ll = _loglik(self.theta, y, n).sum()
        Ru = self.R @ self.u
        Au = self.A @ self.u
        for d in range(self.lay.D):
            delta = np.exp(self.log_step_u[d]) * rng.standard_normal()
            dups = delta * self.P[:, d]
            th_new = self.theta + dups[self.area]
            ll_new = _loglik(th_new, y, n).sum()
            dicar = -0.5 * tau * (2 * delta * Ru[d] + delta**2 * self.R[d, d])
            Au_new = Au + delta * self.A[:, d]
            daux = -0.5 * (Au_new @ Au_new - Au @ Au)
            if np.log(rng.uniform()) < ll_new - ll + dicar + daux:
                self.u[d] += delta
                Ru += delta * self.R[:, d]
                Au = Au_new
                self.theta = th_new
                ll = ll_new
                self.acc_u[d] += 1
        self.ups = self._upsilon()
        self.theta = self._theta()

    def update_nu(self):
        if not self.spec.include_exchangeable:
            return
        y, n, rng, tau = self.y, self.n, self.rng, self.tau_n
        rest = self.theta - self.nu

        def target_and_proposal(v):
            p = expit(rest + v)
            g = y - n * p - tau * v
            h = n * p * (1 - p) + tau
            logt = y * v - n * np.logaddexp(0.0, rest + v) - 0.5 * tau * v**2
            return logt, v + g / h, h

        lt0, m0, h0 = target_and_proposal(self.nu)
        prop = m0 + rng.standard_normal(self.nu.size) / np.sqrt(h0)
        lt1, m1, h1 = target_and_proposal(prop)
        log_q_fwd = 0.5 * np.log(h0) - 0.5 * h0 * (prop - m0) ** 2
        log_q_rev = 0.5 * np.log(h1) - 0.5 * h1 * (self.nu - m1) ** 2
        accept = np.log(rng.uniform(size=self.nu.size)) < (lt1 - lt0 + log_q_rev - log_q_fwd)
        self.nu = np.where(accept, prop, self.nu)
        self.acc_nu += accept.mean()
        self.theta = rest + self.nu

    def update_precisions(self):
        rng, spec = self.rng, self.spec
        if spec.include_spatial:
            a, b = spec.hyperprior_upsilon.shape, spec.hyperprior_upsilon.rate
            ups = self.ups
            self.tau_u = rng.gamma(a + 0.5 * self.lay.icar_rank, 1.0 / (b + 0.5 * ups @ self.R @ ups))
        if spec.include_exchangeable:
            a, b = spec.nu_prior.shape, spec.nu_prior.rate
            self.tau_n = rng.gamma(a + 0.5 * self.nu.size, 1.0 / (b + 0.5 * self.nu @ self.nu))

    def adapt(self, window):
        target = 0.44
        for acc, logs in ((self.acc_f, self.log_step_f), (self.acc_u, self.log_step_u)):
            rate = acc / window
            logs += np.where(rate > target, 1.0, -1.0) * min(0.5, 5.0 / np.sqrt(window))
            acc[:] = 0

    def field_vector(self):
        return np.concatenate([self.beta, self.ups if self.spec.include_spatial else [], self.nu])


def _split_rhat(draws):
    """Split R-hat over the leading (chain, draw) axes of ``draws``."""
    m, n = draws.shape[:2]
    half = n // 2
    if half < 2:
        return np.full(draws.shape[2:], np.nan)
    parts = np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)
    chain_means = parts.mean(axis=1)
    chain_vars = parts.var(axis=1, ddof=1)
    W = chain_vars.mean(axis=0)
    Bv = half * chain_means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * W + Bv / half
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(np.where(W > 0, var_plus / W, 1.0))


def _run_chain(layout, y, n, config, c):
    rng = replicate_seed(config.seed, c)
    ch = _Chain(layout, y, n, rng)
    thetas, taus, fields = [], [], []
    window = 0
    for it in range(config.n_iter):
        ch.update_fixed()
        ch.update_spatial()
        ch.update_nu()
        ch.update_precisions()
        window += 1
        if it < config.burn_in and window == config.adapt_every:
            ch.adapt(window)
            window = 0
        if it == config.burn_in:
            ch.acc_f[:] = 0
            ch.acc_u[:] = 0
            ch.acc_nu = 0.0
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            thetas.append(ch.theta.copy())
            taus.append((ch.tau_u, ch.tau_n))
            fields.append(ch.field_vector())
    kept = config.n_iter - config.burn_in
    acc = dict(
        fixed=(ch.acc_f / max(kept, 1)).tolist(),
        spatial_mean=float(np.mean(ch.acc_u) / max(kept, 1)) if layout.spec.include_spatial else None,
        exchangeable=float(ch.acc_nu / max(kept, 1)),
    )
    return np.array(thetas), np.array(taus), np.array(fields), acc


def fit_mcmc(spec, data, pop=None, X=None, graph=None, chain_config=None):
    """Sample the posterior and summarize it in the Laplace result shape.

    ``diagnostics`` carries split R-hat maxima, Monte Carlo standard errors
    of the cell means and the retained precision draws. An R-hat above
    ``chain_config.rhat_threshold`` sets ``status='rhat_warning'``.
    """
    config = chain_config or ChainConfig()
    if pop is not None:
        data.check_against(pop)
    J, D = np.asarray(data.n).shape
    layout = LatentLayout(spec, J, D, X, graph)
    y = np.asarray(data.y, dtype=float).ravel()
    n = np.asarray(data.n, dtype=float).ravel()
    runs = [_run_chain(layout, y, n, config, c) for c in range(config.n_chains)]
    thetas = np.stack([r[0] for r in runs])  # (chains, draws, cells)
    taus = np.stack([r[1] for r in runs])
    fields = np.stack([r[2] for r in runs])
    p = expit(thetas)
    flat_p = p.reshape(-1, p.shape[-1])
    flat_t = thetas.reshape(-1, thetas.shape[-1])
    monitored = np.concatenate([p, np.log(np.where(np.isnan(taus), 1.0, taus))], axis=2)
    rhat = _split_rhat(monitored)
    rhat_max = float(np.nanmax(rhat))
    ess = _ess(p)
    mcse = flat_p.std(axis=0, ddof=1) / np.sqrt(ess)
    status = "ok" if rhat_max <= config.rhat_threshold else "rhat_warning"
    if status != "ok":
        logger.warning("MCMC: max split R-hat %.3f exceeds %.2f", rhat_max, config.rhat_threshold)

    mean_field = fields.reshape(-1, fields.shape[-1]).mean(axis=0)
    x = np.zeros(layout.dim)
    nf = layout.sl_u.start
    x[:nf] = mean_field[:nf]
    k = nf
    if spec.include_spatial:
        x[layout.sl_u] = mean_field[k : k + D]
        k += D
    if layout.n_nu:
        x[layout.p_c :] = mean_field[k:]
    shape = (J, D)
    return FittedPosterior(
        cell_mean=flat_p.mean(axis=0).reshape(shape),
        cell_var=flat_p.var(axis=0, ddof=1).reshape(shape),
        theta_mean=flat_t.mean(axis=0).reshape(shape),
        theta_var=flat_t.var(axis=0, ddof=1).reshape(shape),
        latent_mode=layout.unpack(x),
        latent_precision=None,
        hyper_grid=np.zeros((0, 3)),
        diagnostics=dict(
            converged=status == "ok",
            status=status,
            rhat_max=rhat_max,
            cell_mean_mcse=mcse.reshape(shape),
            ess_min=float(ess.min()),
            tau_samples=taus.reshape(-1, 2),
            acceptance=[r[3] for r in runs],
        ),
        method="mcmc",
    )


def _ess(draws):
    """Crude effective sample size per column from lag autocorrelations."""
    m, n, k = draws.shape
    x = draws - draws.mean(axis=1, keepdims=True)
    var = (x**2).mean(axis=(0, 1))
    var = np.where(var > 0, var, 1.0)
    rho_sum = np.zeros(k)
    active = np.ones(k, dtype=bool)
    for lag in range(1, min(n - 1, 200)):
        rho = (x[:, lag:] * x[:, :-lag]).mean(axis=(0, 1)) / var
        active &= rho > 0.05
        if not active.any():
            break
        rho_sum += np.where(active, rho, 0.0)
    return m * n / (1 + 2 * rho_sum)
