"""Cell reliability, eligibility for the reliability standard, suppression loss."""

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

RSE_THRESHOLD = 0.2
ELIGIBILITY_SHARE = 0.03


def rse(mean, var):
    """Relative standard error ``sqrt(var) / mean``.

    Works elementwise on arrays. A cell is suppressed only when its RSE is
    strictly above the threshold.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(mean <= 0):
        raise DataError("RSE needs a positive estimate")
    if np.any(var < 0):
        raise DataError("variance must be non-negative")
    out = np.sqrt(var) / mean
    return float(out) if out.ndim == 0 else out


def eligibility(pop, estimated_share=None, use_estimate=False, threshold=ELIGIBILITY_SHARE):
    """Mask of cells the reliability standard applies to.

    With ``use_estimate=False`` the true share ``Y_jd / N_d`` is used;
    otherwise ``estimated_share`` (already divided by ``N_d``). The
    threshold is inclusive.
    """
    if use_estimate:
        if estimated_share is None:
            raise DataError("estimated_share is required when use_estimate=True")
        share = np.asarray(estimated_share, dtype=float)
        if share.shape != pop.N.shape:
            raise DataError(f"estimated_share has shape {share.shape}, expected {pop.N.shape}")
    else:
        share = pop.area_share()
    return share >= threshold


def estimated_share(pop, p_hat):
    """Predicted cell headcount share ``p_hat * N_jd / N_d``."""
    return np.asarray(p_hat, dtype=float) * pop.N / pop.N_area[None, :]


def suppressed(rse_values, eligible, threshold=RSE_THRESHOLD):
    return np.asarray(eligible, dtype=bool) & (np.asarray(rse_values) > threshold)


def loss_weighted(rse_values, eligible, pop, threshold=RSE_THRESHOLD):
    """Population-weighted suppression loss in [0, 1].

    Each suppressed eligible cell contributes its headcount ``N_jd``; the
    sum is divided by the grand total ``N``.
    """
    s = suppressed(rse_values, eligible, threshold)
    return float(pop.N[s].sum() / pop.total)


def loss_count(rse_values, eligible, threshold=RSE_THRESHOLD):
    """Number of suppressed eligible cells."""
    return int(suppressed(rse_values, eligible, threshold).sum())


def loss_proportion(rse_values, eligible, threshold=RSE_THRESHOLD):
    """Suppressed share of eligible cells (0 when nothing is eligible)."""
    n_elig = int(np.asarray(eligible, dtype=bool).sum())
    return loss_count(rse_values, eligible, threshold) / n_elig if n_elig else 0.0


def compute_loss(kind, rse_values, eligible, pop, threshold=RSE_THRESHOLD):
    if kind == "weighted":
        return loss_weighted(rse_values, eligible, pop, threshold)
    if kind == "count":
        return float(loss_count(rse_values, eligible, threshold))
    if kind == "proportion":
        return loss_proportion(rse_values, eligible, threshold)
    raise ValueError(f"unknown loss kind {kind!r}")


@dataclass(frozen=True)
class LossReport:
    rse: np.ndarray
    eligible_true: np.ndarray
    eligible_est: np.ndarray
    loss_true: float
    loss_est: float
    suppressed_cells: tuple
    post_mean: np.ndarray = None


def suppression_report(pop, post_mean, post_var, true_share=None, loss_kind="count", threshold=RSE_THRESHOLD):
    """Evaluate both loss variants for one fitted sample.

    ``true_share`` overrides the census share ``Y_jd / N_d`` for the true
    eligibility mask (used when the truth is a simulated field).
    """
    r = rse(post_mean, post_var)
    if true_share is None:
        el_true = eligibility(pop)
    else:
        el_true = eligibility(pop, true_share, use_estimate=True)
    el_est = eligibility(pop, estimated_share(pop, post_mean), use_estimate=True)
    cells = tuple((int(j), int(d)) for j, d in np.argwhere(suppressed(r, el_est, threshold)))
    return LossReport(
        rse=r,
        eligible_true=el_true,
        eligible_est=el_est,
        loss_true=compute_loss(loss_kind, r, el_true, pop, threshold),
        loss_est=compute_loss(loss_kind, r, el_est, pop, threshold),
        suppressed_cells=cells,
        post_mean=np.asarray(post_mean),
    )


def write_suppression_report(report, pop, path, header_comment=None, threshold=RSE_THRESHOLD):
    """CSV ``group_id,area_id,post_mean,rse,eligible,suppressed`` (estimated eligibility)."""
    sup = suppressed(report.rse, report.eligible_est, threshold)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "area_id", "post_mean", "rse", "eligible", "suppressed"])
        for j, g in enumerate(pop.group_labels):
            for d, a in enumerate(pop.area_ids):
                w.writerow(
                    [g, a, f"{report.post_mean[j, d]:.10g}", f"{report.rse[j, d]:.10g}",
                     int(report.eligible_est[j, d]), int(sup[j, d])]
                )
