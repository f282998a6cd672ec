"""Fitted posterior container, probability-scale moments and latent draws."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

GH_NODES, GH_WEIGHTS = np.polynomial.hermite.hermgauss(15)


def probability_moments(theta_mean, theta_var, log_weights=None):
    """Mean and variance of ``expit(theta)`` under a Gaussian mixture.

    ``theta_mean`` and ``theta_var`` have shape ``(G, cells)`` (or
    ``(cells,)`` for a single component); components are mixed with
    ``exp(log_weights)``. Each component is integrated with 15-point
    Gauss-Hermite quadrature.
    """
    m = np.atleast_2d(np.asarray(theta_mean, dtype=float))
    v = np.atleast_2d(np.asarray(theta_var, dtype=float))
    G = m.shape[0]
    w = np.ones(G) / G if log_weights is None else np.exp(np.asarray(log_weights) - np.logaddexp.reduce(log_weights))
    s = np.sqrt(2.0 * np.maximum(v, 0.0))
    pts = expit(m[..., None] + s[..., None] * GH_NODES)  # (G, cells, 15)
    gw = GH_WEIGHTS / np.sqrt(np.pi)
    e1 = np.einsum("g,gck,k->c", w, pts, gw)
    e2 = np.einsum("g,gck,k->c", w, pts**2, gw)
    return e1, np.maximum(e2 - e1**2, 0.0)


@dataclass(frozen=True)
class FittedPosterior:
    """Posterior summaries for every cell plus what is needed to redraw.

    ``cell_mean``/``cell_var`` are probability-scale moments with shape
    ``(J, D)``; ``theta_mean``/``theta_var`` are the log-odds mixture
    moments. ``hyper_grid`` rows are ``(tau_upsilon, tau_nu, log_weight)``
    with NaN for precisions absent from the model.
    """

    cell_mean: np.ndarray
    cell_var: np.ndarray
    theta_mean: np.ndarray
    theta_var: np.ndarray
    latent_mode: object
    latent_precision: object
    hyper_grid: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    method: str = "laplace"
    components: tuple = ()

    @property
    def converged(self):
        return bool(self.diagnostics.get("converged", True))

    @property
    def cell_sd(self):
        return np.sqrt(self.cell_var)

    @property
    def rse(self):
        return np.sqrt(self.cell_var) / self.cell_mean

    @property
    def log_weights(self):
        return self.hyper_grid[:, 2]


def predict_cells(post):
    """Probability-scale ``(mean, var)`` arrays of shape ``(J, D)``."""
    return post.cell_mean, post.cell_var


def sample_latent(post, rng, size=None):
    """Draw ``theta*`` (log-odds, shape ``(J, D)``) from the joint posterior.

    A hyperparameter grid point is picked by weight, then the latent field
    is drawn jointly from that point's constrained Gaussian. With ``size``
    an array of shape ``(size, J, D)`` is returned.
    """
    if not post.components:
        raise ValueError(f"posterior from method {post.method!r} carries no joint Gaussian components")
    lw = np.array([c.log_weight for c in post.components])
    w = np.exp(lw - np.logaddexp.reduce(lw))
    shape = post.cell_mean.shape
    if size is None:
        k = rng.choice(len(w), p=w)
        return post.components[k].draw_theta(rng).reshape(shape)
    ks = rng.choice(len(w), p=w, size=size)
    return np.stack([post.components[k].draw_theta(rng).reshape(shape) for k in ks])
