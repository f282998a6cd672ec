"""Design-based simulation: repeated samples from the true population.

Unlike the search, nothing here assumes the model is true. Each
replication samples the census table, estimates every cell under a
scenario and is scored against the true prevalence.
"""

import csv
import logging
import warnings
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .exceptions import ConfigError, NumericalFailure
from .model.spec import ModelSpec
from .reliability import RSE_THRESHOLD, eligibility, estimated_share
from .sampling import draw_sample, replicate_seed
from .ssd import LaplaceEngine

logger = logging.getLogger(__name__)

SIM_KEY = 2
METRICS = ("rmse", "bias", "arb", "rse", "rseb")

Estimate = namedtuple("Estimate", "cell_mean cell_var converged")


@dataclass(frozen=True)
class Scenario:
    id: str
    estimator: str
    model_spec: ModelSpec = None

    def __post_init__(self):
        if self.estimator not in ("direct", "hierarchical"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "hierarchical" and self.model_spec is None:
            raise ConfigError(f"scenario {self.id} needs a model spec")

    @classmethod
    def from_id(cls, sid, **spec_overrides):
        sid = str(sid).upper()
        if sid == "S1":
            return cls("S1", "direct")
        return cls(sid, "hierarchical", ModelSpec.for_scenario(sid, **spec_overrides))


def _nanmean(a, axis=None):
    # all-missing slices are expected (e.g. cells never sampled) and yield NaN
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(a, axis=axis)


def _nanstd(a, axis=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanstd(a, axis=axis, ddof=1)


def direct_variance(Ybar, f, N_jd):
    """Variance of the sample proportion, ``Ybar (1 - Ybar) / (f N_jd)``."""
    Ybar = np.asarray(Ybar, dtype=float)
    fn = f * np.asarray(N_jd, dtype=float)
    if np.any(fn <= 0):
        raise ConfigError("f * N_jd must be positive")
    out = Ybar * (1.0 - Ybar) / fn
    return float(out) if out.ndim == 0 else out


def direct_rse(Ybar, f, N_jd):
    """Theoretical RSE of the sample proportion; ``inf`` for ``Ybar`` in {0, 1}.

    The infinite value is a sentinel so degenerate cells always count as
    suppressed.
    """
    Ybar = np.asarray(Ybar, dtype=float)
    var = direct_variance(Ybar, f, N_jd)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where((Ybar <= 0) | (Ybar >= 1), np.inf, np.sqrt(var) / np.where(Ybar > 0, Ybar, 1.0))
    return float(out) if out.ndim == 0 else out


def rseb(estimated_rse_per_rep, true_rse):
    """Mean relative deviation of estimated RSEs from the true RSE (NaN if undefined)."""
    est = np.asarray(estimated_rse_per_rep, dtype=float)
    true_rse = np.asarray(true_rse, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = (est - true_rse) / true_rse
        out = _nanmean(np.where(true_rse > 0, rel, np.nan), axis=0)
    return float(out) if np.ndim(out) == 0 else out


def direct_estimate(sample):
    n = sample.n.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n > 0, sample.y / n, np.nan)
        var = np.where(n > 0, p * (1 - p) / n, np.nan)
    return Estimate(p, var, True)


@dataclass
class MetricsTable:
    """Accuracy metrics per cell and aggregated per group.

    ``per_cell`` maps metric name to a ``(J, D)`` array with NaN marking a
    missing value; ``per_group`` maps metric name to a length ``J + 1``
    array whose last entry aggregates all groups.
    """

    scenario: str
    f: float
    B: int
    per_cell: dict
    per_group: dict
    loss_summary: dict
    diagnostics: dict = field(default_factory=dict)
    group_labels: tuple = ()
    area_ids: tuple = ()


def _replication(pop, scenario, f, key, master_seed, engine):
    rng = replicate_seed(master_seed, *key)
    sample = draw_sample(pop, f, rng, seed=key)
    if scenario.estimator == "direct":
        est = direct_estimate(sample)
    else:
        try:
            est = engine(sample)
        except (np.linalg.LinAlgError, NumericalFailure):
            return None, None, "error"
        if not getattr(est, "converged", True):
            return None, None, "not_converged"
    return np.asarray(est.cell_mean, dtype=float), np.asarray(est.cell_var, dtype=float), "ok"


def run_scenario(pop, X, graph, scenario, f, B=400, master_seed=0, *, engine=None, n_jobs=1, weighted=False,
                 max_fail_fraction=0.05):
    """Simulate ``B`` samples at fraction ``f`` and score one scenario.

    Samples depend only on ``(master_seed, f, b)``, so every scenario is
    scored on the same samples. ``engine`` maps a SampleRealization to an
    object with ``cell_mean``, ``cell_var`` and ``converged``; it defaults
    to the Laplace fit of the scenario's model.
    """
    if isinstance(scenario, str):
        scenario = Scenario.from_id(scenario)
    if scenario.estimator == "hierarchical" and engine is None:
        engine = LaplaceEngine(scenario.model_spec, X, graph)
    fkey = int(round(f * 1e9))
    keys = [(SIM_KEY, fkey, b) for b in range(B)]
    if n_jobs == 1:
        reps = [_replication(pop, scenario, f, k, master_seed, engine) for k in keys]
    else:
        reps = Parallel(n_jobs=n_jobs)(delayed(_replication)(pop, scenario, f, k, master_seed, engine) for k in keys)
    failed = sum(r[2] != "ok" for r in reps)
    if failed and failed / B >= max_fail_fraction:
        raise NumericalFailure(f"{failed} of {B} fits failed in scenario {scenario.id} at f={f:g}")
    shape = pop.N.shape
    E = np.stack([r[0] if r[2] == "ok" else np.full(shape, np.nan) for r in reps])
    V = np.stack([r[1] if r[2] == "ok" else np.full(shape, np.nan) for r in reps])
    table = metrics_from_estimates(pop, E, V, f, scenario.id, weighted=weighted)
    table.diagnostics["n_failed"] = failed
    return table


def metrics_from_estimates(pop, E, V, f, scenario_id="", weighted=False):
    """Score stacked estimates ``E`` and variances ``V`` of shape ``(B, J, D)``."""
    E = np.asarray(E, dtype=float)
    V = np.asarray(V, dtype=float)
    B = E.shape[0]
    truth = pop.prevalence
    pos = truth > 0
    direct = scenario_id == "S1"
    err = E - truth
    valid = ~np.isnan(E)
    n_valid = valid.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mse = _nanmean(err**2, axis=0)
        rmse = np.sqrt(mse)
        bias = _nanmean(err, axis=0)
        arb = np.where(pos, _nanmean(np.abs(err), axis=0) / truth, np.nan)
        rse_cell = np.where(pos, rmse / truth, np.nan)
        rse_hat = np.where(valid & (E > 0), np.sqrt(V) / E, np.nan)
        rseb_cell = rseb(rse_hat, np.where(pos, rse_cell, 0.0))
        sq = err**2
        mse_se = _nanstd(sq, axis=0) / np.sqrt(np.maximum(n_valid, 1))
        rse_mcse = np.where(pos, mse_se / (2 * rmse) / truth, np.nan)
    per_cell = dict(rmse=rmse, bias=bias, arb=arb, rse=rse_cell, rseb=rseb_cell, rse_mcse=rse_mcse,
                    n_missing=B - n_valid)
    el_true = eligibility(pop)
    if direct:
        per_cell["bias"] = np.full_like(bias, np.nan)
        per_cell["arb"] = np.full_like(arb, np.nan)
        per_cell["rseb"] = np.full_like(rseb_cell, np.nan)
        per_cell["rmse_theory"] = np.sqrt(direct_variance(truth, f, pop.N))
        per_cell["rse_theory"] = direct_rse(truth, f, pop.N)
        sup = (per_cell["rse_theory"] > RSE_THRESHOLD)[None] & el_true[None]
        loss_true_rep = sup
        loss_est_rep = None
    else:
        with np.errstate(invalid="ignore"):
            el_est = np.stack([eligibility(pop, estimated_share(pop, e), use_estimate=True) for e in np.nan_to_num(E)])
            over = np.nan_to_num(rse_hat, nan=np.inf) > RSE_THRESHOLD
        loss_true_rep = over & el_true[None]
        loss_est_rep = over & el_est
    per_group, loss_summary = _aggregate(pop, per_cell, loss_true_rep, el_true, loss_est_rep,
                                         el_est if not direct else None, weighted)
    diagnostics = dict(n_zero_truth=int((~pos).sum()), n_missing_total=int((B - n_valid).sum()))
    return MetricsTable(scenario_id, float(f), B, per_cell, per_group, loss_summary, diagnostics,
                        pop.group_labels, pop.area_ids)


def _group_mean(a, w):
    J = a.shape[0]
    out = np.empty(J + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        for j in range(J):
            m = ~np.isnan(a[j])
            out[j] = np.sum(a[j][m] * w[j][m]) / np.sum(w[j][m]) if m.any() else np.nan
        m = ~np.isnan(a)
        out[J] = np.sum(a[m] * w[m]) / np.sum(w[m]) if m.any() else np.nan
    return out


def _loss_by_group(sup, eligible):
    """Per-replication suppressed share of eligible cells, by group and overall."""
    J = sup.shape[1]
    eligible = np.broadcast_to(eligible, sup.shape)
    out = np.zeros((sup.shape[0], J + 1))
    for j in range(J):
        ne = eligible[:, j].sum(axis=1)
        out[:, j] = np.where(ne > 0, sup[:, j].sum(axis=1) / np.maximum(ne, 1), 0.0)
    ne = eligible.sum(axis=(1, 2))
    out[:, J] = np.where(ne > 0, sup.sum(axis=(1, 2)) / np.maximum(ne, 1), 0.0)
    return out


def _aggregate(pop, per_cell, sup_true, el_true, sup_est, el_est, weighted):
    w = pop.N.astype(float) if weighted else np.ones(pop.N.shape)
    per_group = {m: _group_mean(per_cell[m], w) for m in per_cell if m != "n_missing"}
    lt = _loss_by_group(sup_true, el_true)
    per_group["loss_true"] = lt.mean(axis=0)
    summary = dict(loss_true=float(lt[:, -1].mean()))
    if sup_est is not None:
        le = _loss_by_group(sup_est, el_est)
        per_group["risk_true"] = (lt > 0).mean(axis=0)
        per_group["loss_est"] = le.mean(axis=0)
        per_group["risk_est"] = (le > 0).mean(axis=0)
        summary.update(
            risk_true=float((lt[:, -1] > 0).mean()),
            loss_est=float(le[:, -1].mean()),
            risk_est=float((le[:, -1] > 0).mean()),
        )
    else:
        J = pop.J
        per_group["risk_true"] = per_group["loss_est"] = per_group["risk_est"] = np.full(J + 1, np.nan)
        summary.update(risk_true=np.nan, loss_est=np.nan, risk_est=np.nan)
    return per_group, summary


def efficiency_ratio(table_a, table_b):
    """RMSE of ``table_a`` over RMSE of ``table_b`` per cell and per group."""
    a, b = table_a.per_cell["rmse"], table_b.per_cell["rmse"]
    if a.shape != b.shape:
        raise ConfigError("metric tables are not aligned")
    with np.errstate(divide="ignore", invalid="ignore"):
        cell = np.where(b > 0, a / b, np.nan)
        ga, gb = table_a.per_group["rmse"], table_b.per_group["rmse"]
        group = np.where(gb > 0, ga / gb, np.nan)
    return dict(per_cell=cell, per_group=group[:-1], overall=float(group[-1]))


# ---------------------------------------------------------------------------
# Export


def _fmt(x):
    return "NA" if x is None or not np.isfinite(x) else f"{x:.10g}"


def write_cell_metrics(table, path, header_comment=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", *(["area_id"]), *METRICS])
        for j, g in enumerate(table.group_labels):
            for d, a in enumerate(table.area_ids):
                w.writerow([g, a, *(_fmt(table.per_cell[m][j, d]) for m in METRICS)])


GROUP_COLUMNS = ("rmse", "bias", "arb", "rse", "rseb", "loss_true", "risk_true", "loss_est", "risk_est")


def write_group_summary(table, path, header_comment=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", *GROUP_COLUMNS])
        labels = [*table.group_labels, "all"]
        for j, g in enumerate(labels):
            w.writerow([g, *(_fmt(table.per_group[c][j]) for c in GROUP_COLUMNS)])


def format_group_summary(table):
    """Plain-text table in the layout of the per-group results."""
    labels = [*table.group_labels, "all"]
    head = f"{table.scenario} f={table.f:g} B={table.B}\n" + "group".ljust(10) + "".join(c.rjust(10) for c in GROUP_COLUMNS)
    rows = []
    for j, g in enumerate(labels):
        vals = []
        for c in GROUP_COLUMNS:
            v = table.per_group[c][j]
            vals.append(("---" if not np.isfinite(v) else f"{v:.4f}").rjust(10))
        rows.append(str(g).ljust(10) + "".join(vals))
    return "\n".join([head, *rows])
