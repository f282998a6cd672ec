"""Binary-search sample size determination.

At each candidate sampling fraction the suppression loss is simulated
``L`` times: draw a latent truth from the design posterior, draw a sample
at that fraction, refit the model and count unreliable eligible cells.
The risk ``Pr(loss > kappa)`` decides which half of the interval to keep.
"""

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .exceptions import ConfigError, InfeasibleIntervalError, NumericalFailure
from .model.laplace import fit_laplace
from .model.layout import LatentLayout
from .model.posterior import sample_latent
from .planning import fraction_to_ess
from .reliability import suppression_report
from .sampling import SampleRealization, draw_outcomes, draw_sample, draw_sample_sizes, replicate_seed

logger = logging.getLogger(__name__)

# spawn-key namespaces under the master seed
PILOT_KEY = 0
EVAL_KEY = 1

TRACE_COLUMNS = ("step", "f_k", "mean_loss_true", "mean_loss_est", "risk_true", "risk_est", "interval_lo", "interval_hi")


@dataclass(frozen=True)
class SsdConfig:
    f_a: float = 0.01
    f_b: float = 0.04
    h: float = 0.01
    L: int = 100
    kappa: float = 0.0
    gamma: float = 0.01
    loss_kind: str = "count"
    use_estimated_eligibility: bool = True
    master_seed: int = 0
    pilot_fraction: float = 0.01
    max_fail_fraction: float = 0.05

    def __post_init__(self):
        if not (0 < self.f_a < self.f_b <= 1):
            raise ConfigError(f"need 0 < f_a < f_b <= 1, got f_a={self.f_a}, f_b={self.f_b}")
        if not (0 < self.h < self.f_b - self.f_a):
            raise ConfigError(f"need 0 < h < f_b - f_a = {self.f_b - self.f_a:g}, got h={self.h}")
        if not (0 < self.gamma < 1):
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if isinstance(self.L, bool) or int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"L must be a positive integer, got {self.L}")
        if self.kappa < 0:
            raise ConfigError("kappa must be non-negative")
        if self.loss_kind not in ("weighted", "count", "proportion"):
            raise ConfigError(f"loss_kind must be weighted, count or proportion, got {self.loss_kind!r}")
        if not (0 < self.pilot_fraction <= 1):
            raise ConfigError("pilot_fraction must lie in (0, 1]")
        if math.floor(math.log10(self.L)) < math.floor(math.log10(1.0 / self.gamma)):
            warnings.warn(
                f"L below gamma^-1 order of magnitude (L={self.L}, 1/gamma={1 / self.gamma:g}); "
                "risk estimates will be too coarse",
                UserWarning,
                stacklevel=3,
            )

    def with_interval(self, lo, hi, h=None):
        """Config for restarting the search on a previous solution interval."""
        return replace(self, f_a=lo, f_b=hi, h=self.h if h is None else h)


@dataclass
class SsdStep:
    k: int
    f_k: float
    mean_loss_true: float
    mean_loss_est: float
    risk_true: float
    risk_est: float
    interval_after: tuple = None
    per_replication: list = field(default_factory=list)
    n_failed: int = 0

    def risk(self, use_estimate=True):
        return self.risk_est if use_estimate else self.risk_true


@dataclass
class SsdTrace:
    steps: list
    solution_interval: tuple
    recommended_fraction: float
    recommended_ess: int
    short_circuit: bool = False

    @property
    def midpoint_steps(self):
        return [s for s in self.steps if s.k > 0]


def k_max(f_a, f_b, h):
    """Smallest integer strictly greater than ``(f_b - f_a) / (2 h)``.

    Since ``2**k > 2 k`` for ``k >= 1``, halving ``k_max`` times always
    leaves an interval narrower than ``h``.
    """
    if not (h > 0 and f_b > f_a):
        raise ConfigError("need h > 0 and f_b > f_a")
    # rounding guards ratios that are integers up to floating error
    return math.floor(round((f_b - f_a) / (2.0 * h), 9)) + 1


def risk_decision(risk, gamma):
    """``'shrink-down'`` (candidate becomes the upper bound) iff ``risk <= gamma``."""
    if not (0 <= risk <= 1 and 0 <= gamma <= 1):
        raise ValueError("risk and gamma must lie in [0, 1]")
    return "shrink-down" if risk <= gamma else "shrink-up"


class LaplaceEngine:
    """Picklable model-fitting callable used inside replications."""

    def __init__(self, spec, X=None, graph=None):
        self.spec, self.X, self.graph = spec, X, graph
        self._layout = None

    def __call__(self, sample):
        if self._layout is None:
            J, D = sample.n.shape
            self._layout = LatentLayout(self.spec, J, D, self.X, self.graph)
        return fit_laplace(self.spec, sample, layout=self._layout)

    def __getstate__(self):
        return dict(spec=self.spec, X=self.X, graph=self.graph, _layout=None)


def _replicate(f_k, design_posterior, pop, engine, config, key):
    rng = replicate_seed(config.master_seed, *key)
    theta = sample_latent(design_posterior, rng)
    p_true = expit(theta)
    n = draw_sample_sizes(pop, f_k, rng)
    y = draw_outcomes(n, p_true, rng)
    sample = SampleRealization(f_k, n, y, key)
    try:
        post = engine(sample)
    except (np.linalg.LinAlgError, NumericalFailure) as exc:
        return (np.nan, np.nan, f"error: {exc}")
    if not getattr(post, "converged", True):
        return (np.nan, np.nan, "not_converged")
    report = suppression_report(
        pop, post.cell_mean, post.cell_var, true_share=p_true * pop.N / pop.N_area[None, :], loss_kind=config.loss_kind
    )
    return (report.loss_true, report.loss_est, "ok")


def summarize_replications(k, f_k, results, config):
    """Aggregate per-replication losses into a step; failed fits are excluded."""
    ok = [r for r in results if r[2] == "ok"]
    n_failed = len(results) - len(ok)
    if n_failed and n_failed / len(results) >= config.max_fail_fraction:
        raise NumericalFailure(
            f"{n_failed} of {len(results)} replications failed at f={f_k:g}",
            dict(f_k=f_k, statuses=[r[2] for r in results]),
        )
    lt = np.array([r[0] for r in ok], dtype=float)
    le = np.array([r[1] for r in ok], dtype=float)
    return SsdStep(
        k=k,
        f_k=float(f_k),
        mean_loss_true=float(lt.mean()),
        mean_loss_est=float(le.mean()),
        risk_true=float(np.mean(lt > config.kappa)),
        risk_est=float(np.mean(le > config.kappa)),
        per_replication=list(results),
        n_failed=n_failed,
    )


def evaluate_fraction(f_k, design_posterior, pop, X, graph, spec, config, step_key=0, k=0, engine=None, n_jobs=1):
    """Monte Carlo loss and risk at one candidate fraction."""
    engine = engine or LaplaceEngine(spec, X, graph)
    keys = [(EVAL_KEY, step_key, l) for l in range(config.L)]
    if n_jobs == 1:
        results = [_replicate(f_k, design_posterior, pop, engine, config, key) for key in keys]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_replicate)(f_k, design_posterior, pop, engine, config, key) for key in keys
        )
    return summarize_replications(k, f_k, results, config)


def fit_design_posterior(pop, X, graph, spec, config):
    """Fit the model to a simulated pilot sample drawn from the population."""
    rng = replicate_seed(config.master_seed, PILOT_KEY)
    pilot = draw_sample(pop, config.pilot_fraction, rng, seed=(PILOT_KEY,))
    post = fit_laplace(spec, pilot, pop, X, graph)
    if not post.converged:
        raise NumericalFailure("pilot fit did not converge", post.diagnostics)
    return post


def binary_search(evaluate, config, total=None):
    """Interval halving driven by ``evaluate(f, step_key, k) -> SsdStep``.

    ``step_key`` numbers evaluations in order (0 and 1 are the interval
    ends); ``k`` is the halving step (0 for the ends).
    """
    lo, hi = config.f_a, config.f_b
    use_est = config.use_estimated_eligibility
    step_a = evaluate(lo, 0, 0)
    step_b = evaluate(hi, 1, 0)
    steps = [step_a, step_b]
    if step_b.risk(use_est) > config.gamma:
        raise InfeasibleIntervalError(
            f"interval infeasible: raise f_b (risk {step_b.risk(use_est):g} > gamma {config.gamma:g} at f_b={hi:g})"
        )
    if step_a.risk(use_est) <= config.gamma:
        warnings.warn(f"risk at f_a={lo:g} already within gamma; returning f_a", UserWarning, stacklevel=2)
        return SsdTrace(steps, (lo, lo), lo, fraction_to_ess(lo, total) if total else None, short_circuit=True)
    for k in range(1, k_max(lo, hi, config.h) + 1):
        f_k = 0.5 * (lo + hi)
        step = evaluate(f_k, k + 1, k)
        if risk_decision(step.risk(use_est), config.gamma) == "shrink-down":
            hi = f_k
        else:
            lo = f_k
        step.interval_after = (lo, hi)
        steps.append(step)
        logger.info("step %d: f=%.6f risk=%.4f -> [%.6f, %.6f]", k, f_k, step.risk(use_est), lo, hi)
    return SsdTrace(steps, (lo, hi), hi, fraction_to_ess(hi, total) if total else None)


def run_ssd(pop, X, graph, spec, config, pilot_fraction=None, *, evaluate=None, engine=None, n_jobs=1,
            design_posterior=None):
    """Run the full search.

    Without ``evaluate`` the design posterior is fitted to a simulated
    pilot sample (``pilot_fraction`` overrides ``config.pilot_fraction``)
    and each candidate fraction is evaluated by :func:`evaluate_fraction`.
    """
    if pilot_fraction is not None:
        config = replace(config, pilot_fraction=pilot_fraction)
    if evaluate is None:
        design = design_posterior or fit_design_posterior(pop, X, graph, spec, config)
        engine = engine or LaplaceEngine(spec, X, graph)

        def evaluate(f, step_key, k):
            return evaluate_fraction(f, design, pop, X, graph, spec, config, step_key, k, engine=engine, n_jobs=n_jobs)

    return binary_search(evaluate, config, total=pop.total if pop is not None else None)


# ---------------------------------------------------------------------------
# Export


def _fmt(x):
    if x is None:
        return ""
    return f"{x:.10g}"


def write_trace_csv(trace, path, header_comment=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for s in trace.steps:
            lo, hi = s.interval_after if s.interval_after else (None, None)
            w.writerow([s.k, _fmt(s.f_k), _fmt(s.mean_loss_true), _fmt(s.mean_loss_est),
                        _fmt(s.risk_true), _fmt(s.risk_est), _fmt(lo), _fmt(hi)])


def trace_summary(trace, config, deffs=(), extra=None):
    from .planning import ess_to_actual

    summary = dict(
        recommended_fraction=trace.recommended_fraction,
        ess=trace.recommended_ess,
        solution_interval=list(trace.solution_interval),
        n_midpoint_steps=len(trace.midpoint_steps),
        short_circuit=trace.short_circuit,
        actual_sizes=[
            dict(deff=float(getattr(d, "deff", d)), n=ess_to_actual(trace.recommended_ess, d))
            for d in deffs
        ] if trace.recommended_ess else [],
        config=asdict(config),
    )
    if extra:
        summary.update(extra)
    return summary


def write_summary_json(summary, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
