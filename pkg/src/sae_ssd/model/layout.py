"""Latent vector layout, design matrix and the joint log posterior.

The latent vector is packed as ``[x_c, v]`` where ``x_c`` holds the
intercept, group contrasts, covariate coefficients and the spatial effect,
and ``v`` holds the exchangeable cell effects in cell order.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..exceptions import ConfigError, DataError
from .icar import component_constraints, icar_structure

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class LatentField:
    """Unpacked latent effects on the log-odds scale."""

    beta0: float
    beta1: np.ndarray  # (J,), beta1[0] == 0
    beta2: np.ndarray  # (J, K) or (K,) when shared
    upsilon: np.ndarray  # (D,)
    nu: np.ndarray  # (J, D)

    def theta(self, X=None):
        J, D = self.nu.shape
        eta = self.beta0 + self.beta1[:, None] + self.upsilon[None, :] + self.nu
        if X is not None and self.beta2.size:
            X = np.asarray(getattr(X, "X", X), dtype=float)
            b2 = self.beta2 if self.beta2.ndim == 2 else np.broadcast_to(self.beta2, (J, self.beta2.size))
            eta = eta + b2 @ X.T
        return eta


class LatentLayout:
    """Index map and sparse design for one (spec, population shape) pair."""

    def __init__(self, spec, J, D, X=None, graph=None):
        self.spec, self.J, self.D = spec, int(J), int(D)
        if spec.include_covariates:
            if X is None:
                raise ConfigError("model includes covariates but none were supplied")
            X = np.asarray(getattr(X, "X", X), dtype=float)
            if X.shape[0] != D:
                raise DataError(f"covariates have {X.shape[0]} rows, expected {D}")
            self.X = X
        else:
            self.X = np.zeros((D, 0))
        self.K = self.X.shape[1]
        if spec.include_spatial:
            if graph is None:
                raise ConfigError("model includes the spatial effect but no adjacency graph was supplied")
            if graph.D != D:
                raise DataError(f"graph has {graph.D} areas, expected {D}")
            self.R = icar_structure(graph)
            self.A_u = component_constraints(graph)
        else:
            self.R = sparse.csr_matrix((0, 0))
            self.A_u = np.zeros((0, 0))

        k = 1
        self.sl_b0 = slice(0, 1)
        self.sl_b1 = slice(k, k + J - 1)
        k += J - 1
        n_b2 = self.K if spec.shared_covariate_effects else J * self.K
        self.sl_b2 = slice(k, k + n_b2)
        k += n_b2
        n_u = D if spec.include_spatial else 0
        self.sl_u = slice(k, k + n_u)
        k += n_u
        self.p_c = k
        self.n_cells = J * D
        self.n_nu = self.n_cells if spec.include_exchangeable else 0
        self.dim = self.p_c + self.n_nu
        self.n_constraints = self.A_u.shape[0]
        self.B = self._design()
        # constraint rows over x_c
        self.A = np.zeros((self.n_constraints, self.p_c))
        if self.n_constraints:
            self.A[:, self.sl_u] = self.A_u
        prior_sd = np.full(self.sl_u.start, spec.fixed_effect_prior_sd)
        prior_sd[0] = spec.intercept_prior_sd
        self.fixed_precision = 1.0 / prior_sd**2

    def _design(self):
        J, D, K = self.J, self.D, self.K
        j, d = np.divmod(np.arange(self.n_cells), D)
        rows, cols, vals = [np.arange(self.n_cells)], [np.zeros(self.n_cells, int)], [np.ones(self.n_cells)]
        m = j > 0
        rows.append(np.flatnonzero(m))
        cols.append(self.sl_b1.start + j[m] - 1)
        vals.append(np.ones(m.sum()))
        for k in range(K):
            rows.append(np.arange(self.n_cells))
            if self.spec.shared_covariate_effects:
                cols.append(np.full(self.n_cells, self.sl_b2.start + k))
            else:
                cols.append(self.sl_b2.start + j * K + k)
            vals.append(self.X[d, k])
        if self.spec.include_spatial:
            rows.append(np.arange(self.n_cells))
            cols.append(self.sl_u.start + d)
            vals.append(np.ones(self.n_cells))
        B = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_cells, self.p_c),
        )
        return B

    # -- packing ---------------------------------------------------------

    def pack(self, field):
        x = np.zeros(self.dim)
        x[0] = field.beta0
        x[self.sl_b1] = np.asarray(field.beta1)[1:]
        x[self.sl_b2] = np.asarray(field.beta2).ravel()
        x[self.sl_u] = np.asarray(field.upsilon)[: self.sl_u.stop - self.sl_u.start]
        if self.n_nu:
            x[self.p_c :] = np.asarray(field.nu).ravel()
        return x

    def unpack(self, x):
        J, D, K = self.J, self.D, self.K
        b2 = x[self.sl_b2]
        b2 = b2.copy() if self.spec.shared_covariate_effects else b2.reshape(J, K).copy()
        u = x[self.sl_u].copy() if self.spec.include_spatial else np.zeros(D)
        nu = x[self.p_c :].reshape(J, D).copy() if self.n_nu else np.zeros((J, D))
        return LatentField(float(x[0]), np.concatenate([[0.0], x[self.sl_b1]]), b2, u, nu)

    def theta(self, x):
        eta = self.B @ x[: self.p_c]
        if self.n_nu:
            eta = eta + x[self.p_c :]
        return eta

    # -- prior pieces ----------------------------------------------------

    def prior_precision_c(self, tau_u, augment=True):
        """Dense prior precision of ``x_c``.

        With ``augment`` the spatial block becomes ``tau_u (R + A'A)``, which
        is positive definite and agrees with ``tau_u R`` on the constraint
        set.
        """
        P = np.zeros((self.p_c, self.p_c))
        idx = np.arange(self.sl_u.start)
        P[idx, idx] = self.fixed_precision
        if self.spec.include_spatial:
            Ru = self.R.toarray()
            if augment:
                Ru = Ru + self.A_u.T @ self.A_u
            P[self.sl_u, self.sl_u] = tau_u * Ru
        return P

    @property
    def icar_rank(self):
        return self.D - self.n_constraints if self.spec.include_spatial else 0


def _taus(spec, tau):
    tau_u, tau_n = tau
    return (float(tau_u) if spec.include_spatial else np.nan, float(tau_n) if spec.include_exchangeable else np.nan)


def log_likelihood(theta, y, n):
    """``sum(y * theta - n * log(1 + exp(theta)))``; n=0 cells add nothing."""
    return float(np.sum(y * theta - n * np.logaddexp(0.0, theta)))


def log_prior_latent(layout, x, tau_u, tau_n):
    """Normalized Gaussian / ICAR log prior of the latent vector."""
    spec = layout.spec
    xf = x[: layout.sl_u.start]
    prec = layout.fixed_precision
    lp = 0.5 * np.sum(np.log(prec) - LOG_2PI - prec * xf**2)
    if spec.include_spatial:
        u = x[layout.sl_u]
        r = layout.icar_rank
        lp += 0.5 * r * (np.log(tau_u) - LOG_2PI) - 0.5 * tau_u * float(u @ (layout.R @ u))
    if spec.include_exchangeable:
        v = x[layout.p_c :]
        lp += 0.5 * v.size * (np.log(tau_n) - LOG_2PI) - 0.5 * tau_n * float(v @ v)
    return float(lp)


def log_prior_hyper(spec, tau_u, tau_n):
    lp = 0.0
    if spec.include_spatial:
        lp += spec.hyperprior_upsilon.logpdf(tau_u)
    if spec.include_exchangeable:
        lp += spec.nu_prior.logpdf(tau_n)
    return float(lp)


def _resolve(spec, data, X, graph, layout):
    n = np.asarray(data.n, dtype=float).ravel()
    y = np.asarray(data.y, dtype=float).ravel()
    if layout is None:
        J, D = np.asarray(data.n).shape
        layout = LatentLayout(spec, J, D, X, graph)
    return layout, y, n


def log_unnormalized_posterior(spec, field, tau, data, X=None, graph=None, layout=None):
    """Joint log density of (latent field, precisions) and the data.

    Binomial coefficients are dropped; Gaussian normalizing constants and
    the Gamma hyperprior densities are kept, so the value responds to
    the precisions exactly as the joint density does.
    """
    layout, y, n = _resolve(spec, data, X, graph, layout)
    x = layout.pack(field) if isinstance(field, LatentField) else np.asarray(field, dtype=float)
    tau_u, tau_n = _taus(spec, tau)
    return (
        log_likelihood(layout.theta(x), y, n)
        + log_prior_latent(layout, x, tau_u, tau_n)
        + log_prior_hyper(spec, tau_u, tau_n)
    )


def grad_log_posterior(spec, field, tau, data, X=None, graph=None, layout=None):
    """Gradient of :func:`log_unnormalized_posterior` in the packed latent vector."""
    layout, y, n = _resolve(spec, data, X, graph, layout)
    x = layout.pack(field) if isinstance(field, LatentField) else np.asarray(field, dtype=float)
    tau_u, tau_n = _taus(spec, tau)
    p = 1.0 / (1.0 + np.exp(-layout.theta(x)))
    resid = y - n * p
    g = np.empty(layout.dim)
    g[: layout.p_c] = layout.B.T @ resid
    g[: layout.sl_u.start] -= layout.fixed_precision * x[: layout.sl_u.start]
    if spec.include_spatial:
        g[layout.sl_u] -= tau_u * (layout.R @ x[layout.sl_u])
    if layout.n_nu:
        g[layout.p_c :] = resid - tau_n * x[layout.p_c :]
    return g
