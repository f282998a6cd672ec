"""Laplace approximation with numerical integration over the precisions.

For fixed precisions the latent field is fitted by constrained Newton
iterations; the negative Hessian at the mode gives a Gaussian
approximation. The exchangeable effects enter the Hessian as a diagonal
block, so every linear solve reduces to a dense Cholesky factorization of
the Schur complement over the (intercept, contrasts, covariate
coefficients, spatial effect) block. Sum-to-zero constraints on the
spatial effect are enforced by conditioning by kriging.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.special import expit

from ..exceptions import NumericalFailure
from .layout import LOG_2PI, LatentLayout, log_likelihood, log_prior_hyper, log_prior_latent
from .posterior import FittedPosterior, probability_moments

logger = logging.getLogger(__name__)

LOG_TAU_BOUNDS = (np.log(1e-4), np.log(1e5))
PRIOR_GRID_QUANTILES = (0.005, 0.995)
MIN_KEPT_WEIGHT = 1e-12


@dataclass
class ConditionalGaussian:
    """Gaussian approximation of the latent field at fixed precisions."""

    layout: object
    tau_u: float
    tau_n: float
    x: np.ndarray
    W: np.ndarray
    chol: np.ndarray
    Dn: np.ndarray
    U_c: np.ndarray
    U_n: np.ndarray
    AU: np.ndarray
    log_marginal: float
    converged: bool
    n_iter: int
    objective_trace: list
    theta_mean: np.ndarray = None
    theta_var: np.ndarray = None
    log_weight: float = 0.0

    @property
    def has_nu(self):
        return self.Dn is not None

    def draw_theta(self, rng):
        lay = self.layout
        z_c = linalg.solve_triangular(self.chol, rng.standard_normal(lay.p_c), lower=True, trans="T")
        Bz = lay.B @ z_c
        z_n = None
        if self.has_nu:
            z_n = -(self.W / self.Dn) * Bz + rng.standard_normal(lay.n_cells) / np.sqrt(self.Dn)
        if lay.n_constraints:
            corr = np.linalg.solve(self.AU, lay.A @ z_c)
            z_c = z_c - self.U_c @ corr
            Bz = lay.B @ z_c
            if self.has_nu:
                z_n = z_n - self.U_n @ corr
        return self.theta_mean + Bz + (z_n if self.has_nu else 0.0)

    def precision(self):
        """Sparse negative Hessian over the full packed latent vector."""
        lay = self.layout
        Pc = sparse.csr_matrix(lay.prior_precision_c(self.tau_u))
        BtWB = lay.B.T @ sparse.diags(self.W) @ lay.B
        if not self.has_nu:
            return (Pc + BtWB).tocsr()
        top = sparse.hstack([Pc + BtWB, lay.B.T @ sparse.diags(self.W)])
        bottom = sparse.hstack([sparse.diags(self.W) @ lay.B, sparse.diags(self.Dn)])
        return sparse.vstack([top, bottom]).tocsr()


class _Solver:
    """Block solves with the Hessian ``[[Pc + B'WB, B'W], [WB, tau_n + W]]``."""

    def __init__(self, layout, Pc, W, tau_n):
        self.lay = layout
        self.W = W
        B = layout.B
        if layout.n_nu:
            self.Dn = tau_n + W
            self.r = tau_n / self.Dn
            wr = W * self.r
        else:
            self.Dn = None
            self.r = np.ones_like(W)
            wr = W
        S = Pc + (B.T @ B.multiply(wr[:, None])).toarray()
        self.L = linalg.cholesky(S, lower=True)

    def solve(self, rc, rn):
        lay, W = self.lay, self.W
        if self.Dn is None:
            return linalg.cho_solve((self.L, True), rc), None
        wd = W / self.Dn
        t = rc - lay.B.T @ (wd[:, None] * rn if rn.ndim == 2 else wd * rn)
        sc = linalg.cho_solve((self.L, True), t)
        Bsc = lay.B @ sc
        if sc.ndim == 2:
            sn = (rn - W[:, None] * Bsc) / self.Dn[:, None]
        else:
            sn = (rn - W * Bsc) / self.Dn
        return sc, sn

    def constraint_factors(self):
        lay = self.lay
        if not lay.n_constraints:
            return None, None, None
        zeros = np.zeros((lay.n_cells, lay.n_constraints))
        U_c, U_n = self.solve(lay.A.T.copy(), zeros)
        return U_c, U_n, lay.A @ U_c

    def logdet(self):
        ld = 2.0 * np.sum(np.log(np.diag(self.L)))
        if self.Dn is not None:
            ld += np.sum(np.log(self.Dn))
        return ld


def _objective(layout, Pc, x, y, n, tau_n):
    xc = x[: layout.p_c]
    val = log_likelihood(layout.theta(x), y, n) - 0.5 * xc @ Pc @ xc
    if layout.n_nu:
        v = x[layout.p_c :]
        val -= 0.5 * tau_n * v @ v
    return float(val)


def fit_conditional(layout, y, n, tau_u, tau_n, x0=None, tol=1e-8, max_iter=200):
    """Constrained Newton fit of the latent mode at fixed precisions."""
    Pc = layout.prior_precision_c(tau_u, augment=True)
    x = np.zeros(layout.dim) if x0 is None else np.array(x0, dtype=float)
    if x0 is None:
        x[0] = np.log((y.sum() + 0.5) / (n.sum() - y.sum() + 0.5))
    obj = _objective(layout, Pc, x, y, n, tau_n)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(layout.theta(x))
        W = n * p * (1 - p)
        resid = y - n * p
        g_c = layout.B.T @ resid - Pc @ x[: layout.p_c]
        g_n = resid - tau_n * x[layout.p_c :] if layout.n_nu else None
        solver = _Solver(layout, Pc, W, tau_n)
        d_c, d_n = solver.solve(g_c, g_n)
        if layout.n_constraints:
            U_c, U_n, AU = solver.constraint_factors()
            corr = np.linalg.solve(AU, layout.A @ (x[: layout.p_c] + d_c))
            d_c = d_c - U_c @ corr
            if layout.n_nu:
                d_n = d_n - U_n @ corr
        step = d_c if d_n is None else np.concatenate([d_c, d_n])
        t = 1.0
        accepted = False
        while True:
            cand = x + t * step
            cand_obj = _objective(layout, Pc, cand, y, n, tau_n)
            norm = t * np.linalg.norm(step)
            if cand_obj > obj:
                accepted = True
                break
            if norm < tol:
                break
            t *= 0.5
        if accepted:
            x, obj = cand, cand_obj
            trace.append(obj)
        if norm < tol:
            converged = True
            break

    p = expit(layout.theta(x))
    W = n * p * (1 - p)
    solver = _Solver(layout, Pc, W, tau_n)
    U_c, U_n, AU = solver.constraint_factors()
    if layout.n_constraints:
        # final kriging correction removes rounding drift off the constraint set
        resid_c = layout.A @ x[: layout.p_c]
        if np.max(np.abs(resid_c)) > 0:
            corr = np.linalg.solve(AU, resid_c)
            x[: layout.p_c] -= U_c @ corr
            if layout.n_nu:
                x[layout.p_c :] -= U_n @ corr

    lp_joint = (
        log_likelihood(layout.theta(x), y, n)
        + log_prior_latent(layout, x, tau_u, tau_n)
        + log_prior_hyper(layout.spec, tau_u, tau_n)
    )
    log_pi_g = 0.5 * solver.logdet() - 0.5 * (layout.dim - layout.n_constraints) * LOG_2PI
    if layout.n_constraints:
        log_pi_g += 0.5 * np.linalg.slogdet(AU)[1]
    cg = ConditionalGaussian(
        layout=layout,
        tau_u=tau_u,
        tau_n=tau_n,
        x=x,
        W=W,
        chol=solver.L,
        Dn=solver.Dn,
        U_c=U_c,
        U_n=U_n,
        AU=AU,
        log_marginal=float(lp_joint - log_pi_g),
        converged=converged,
        n_iter=it,
        objective_trace=trace,
    )
    cg.theta_mean = layout.theta(x)
    cg.theta_var = _theta_variance(layout, solver, U_c, U_n, AU)
    return cg


def _theta_variance(layout, solver, U_c, U_n, AU):
    M = layout.B.multiply(solver.r[:, None]).T.toarray()
    V = linalg.solve_triangular(solver.L, M, lower=True)
    var = np.sum(V**2, axis=0)
    if solver.Dn is not None:
        var += 1.0 / solver.Dn
    if layout.n_constraints:
        TU = layout.B @ U_c
        if U_n is not None:
            TU = TU + U_n
        var -= np.sum((TU @ np.linalg.inv(AU)) * TU, axis=1)
    return np.maximum(var, 0.0)


class _HyperSurface:
    """Log posterior of log-precisions, caching conditional fits."""

    def __init__(self, layout, y, n):
        self.layout, self.y, self.n = layout, y, n
        spec = layout.spec
        self.names = [k for k, on in (("u", spec.include_spatial), ("n", spec.include_exchangeable)) if on]
        self.cache = {}
        self._warm = None

    def taus(self, log_tau):
        vals = dict(zip(self.names, np.exp(np.asarray(log_tau, dtype=float))))
        return vals.get("u", np.nan), vals.get("n", np.nan)

    def fit(self, log_tau):
        key = tuple(np.round(np.asarray(log_tau, dtype=float), 12))
        if key in self.cache:
            return self.cache[key]
        tau_u, tau_n = self.taus(log_tau)
        spec = self.layout.spec
        cg = fit_conditional(
            self.layout, self.y, self.n, tau_u, tau_n, x0=self._warm, tol=spec.newton_tol, max_iter=spec.max_newton_iter
        )
        if cg.converged:
            self._warm = cg.x
        self.cache[key] = cg
        return cg

    def log_density(self, log_tau):
        """Log posterior density of the log-precisions (Jacobian included)."""
        cg = self.fit(log_tau)
        return cg.log_marginal + float(np.sum(log_tau))


def _adaptive_grid(surface, spec):
    """Grid in standardized coordinates around the mode of the log-precision posterior."""
    k = len(surface.names)
    priors = {"u": spec.hyperprior_upsilon, "n": spec.nu_prior}
    start = np.array([np.log(priors[nm].mean) for nm in surface.names])

    def neg(z):
        try:
            val = surface.log_density(z)
        except (np.linalg.LinAlgError, FloatingPointError):
            return 1e300
        return -val if np.isfinite(val) else 1e300

    res = optimize.minimize(neg, start, method="L-BFGS-B", bounds=[LOG_TAU_BOUNDS] * k, options=dict(eps=1e-5))
    mode = res.x
    H = _hessian(surface.log_density, mode, step=0.05)
    evals, evecs = np.linalg.eigh(-H)
    evals = np.maximum(evals, 1.0 / 9.0)
    sd = 1.0 / np.sqrt(evals)
    n_pts = spec.grid_points
    z1 = np.linspace(-3.0, 3.0, n_pts) if n_pts > 1 else np.zeros(1)
    pts = []
    for z in itertools.product(z1, repeat=k):
        pts.append(np.clip(mode + evecs @ (sd * np.asarray(z)), *LOG_TAU_BOUNDS))
    info = dict(hyper_mode=np.exp(mode), hyper_sd_log=sd, optimizer_success=bool(res.success), optimizer_nfev=int(res.nfev))
    return pts, info


def _prior_grid(surface, spec):
    priors = {"u": spec.hyperprior_upsilon, "n": spec.nu_prior}
    k = len(surface.names)
    n_pts = spec.grid_points if k > 1 else max(spec.grid_points - 2, 1)
    axes = []
    for nm in surface.names:
        lo, hi = priors[nm].ppf(PRIOR_GRID_QUANTILES)
        axes.append(np.linspace(np.log(lo), np.log(hi), n_pts))
    return [np.array(p) for p in itertools.product(*axes)], {}


def _hessian(f, x0, step):
    k = x0.size
    H = np.zeros((k, k))
    f0 = f(x0)
    E = np.eye(k) * step
    for i in range(k):
        H[i, i] = (f(x0 + E[i]) - 2 * f0 + f(x0 - E[i])) / step**2
        for j in range(i + 1, k):
            H[i, j] = H[j, i] = (
                f(x0 + E[i] + E[j]) - f(x0 + E[i] - E[j]) - f(x0 - E[i] + E[j]) + f(x0 - E[i] - E[j])
            ) / (4 * step**2)
    return H


def fit_laplace(spec, data, pop=None, X=None, graph=None, layout=None):
    """Approximate the posterior of every cell prevalence.

    Parameters
    ----------
    spec : ModelSpec
    data : SampleRealization
        Sample sizes and outcome counts, shape ``(J, D)``.
    pop : Population, optional
        Used only to check alignment with ``data``.
    X : CovariateMatrix or array, optional
    graph : AdjacencyGraph, optional
    layout : LatentLayout, optional
        Reuse a prebuilt layout when fitting many samples of one population.

    Returns
    -------
    FittedPosterior
        ``diagnostics['converged']`` is False when any retained grid point
        failed to reach the Newton tolerance.
    """
    if pop is not None:
        data.check_against(pop)
    J, D = np.asarray(data.n).shape
    if layout is None:
        layout = LatentLayout(spec, J, D, X, graph)
    y = np.asarray(data.y, dtype=float).ravel()
    n = np.asarray(data.n, dtype=float).ravel()
    surface = _HyperSurface(layout, y, n)

    if not surface.names:
        points, info = [np.zeros(0)], {}
    elif spec.grid == "prior":
        points, info = _prior_grid(surface, spec)
    else:
        points, info = _adaptive_grid(surface, spec)

    fits, logd = [], []
    for pt in points:
        cg = surface.fit(pt)
        fits.append(cg)
        logd.append(cg.log_marginal + float(np.sum(pt)))
    logd = np.array(logd)
    if not np.all(np.isfinite(logd)):
        raise NumericalFailure("non-finite hyperparameter log density", dict(points=points))
    lw = logd - np.logaddexp.reduce(logd)
    for cg, w in zip(fits, lw):
        cg.log_weight = float(w)
    keep = [cg for cg, w in zip(fits, lw) if np.exp(w) >= MIN_KEPT_WEIGHT]
    klw = np.array([cg.log_weight for cg in keep])
    klw -= np.logaddexp.reduce(klw)
    for cg, w in zip(keep, klw):
        cg.log_weight = float(w)

    m = np.stack([cg.theta_mean for cg in keep])
    v = np.stack([cg.theta_var for cg in keep])
    w = np.exp(klw)
    theta_mean = w @ m
    theta_var = w @ (v + m**2) - theta_mean**2
    p_mean, p_var = probability_moments(m, v, klw)

    best = keep[int(np.argmax(klw))]
    hyper_grid = np.array([[cg.tau_u, cg.tau_n, w] for cg, w in zip(fits, lw)]).reshape(-1, 3)
    converged = all(cg.converged for cg in keep)
    diagnostics = dict(
        converged=converged,
        status="ok" if converged else "newton_not_converged",
        newton_iterations=[cg.n_iter for cg in fits],
        n_grid=len(fits),
        n_kept=len(keep),
        n_conditional_fits=len(surface.cache),
        **info,
    )
    if not converged:
        logger.warning("Laplace fit: %d grid point(s) did not converge", sum(not cg.converged for cg in keep))
    shape = (J, D)
    return FittedPosterior(
        cell_mean=p_mean.reshape(shape),
        cell_var=p_var.reshape(shape),
        theta_mean=theta_mean.reshape(shape),
        theta_var=np.maximum(theta_var, 0.0).reshape(shape),
        latent_mode=layout.unpack(best.x),
        latent_precision=best.precision(),
        hyper_grid=hyper_grid,
        diagnostics=diagnostics,
        method="laplace",
        components=tuple(keep),
    )
