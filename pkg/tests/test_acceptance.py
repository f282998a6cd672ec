"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines
inline; a summary section is also printed at the end of any pytest run.
"""

import time
import warnings

import numpy as np
import pytest
from scipy import integrate
from scipy.special import expit, logit

from conftest import record_criterion
from sae_ssd.cli import main
from sae_ssd.designsim import metrics_from_estimates, run_scenario
from sae_ssd.model import (
    LatentLayout,
    ModelSpec,
    fit_laplace,
    grad_log_posterior,
    icar_structure,
    log_unnormalized_posterior,
)
from sae_ssd.model.mcmc import ChainConfig, fit_mcmc
from sae_ssd.population import AdjacencyGraph, Population, synth_population
from sae_ssd.sampling import SampleRealization, draw_sample, replicate_seed
from sae_ssd.ssd import SsdConfig, SsdStep, evaluate_fraction, fit_design_posterior, k_max, run_ssd

pytestmark = pytest.mark.slow


def test_criterion_01_conjugate_single_cell():
    y, n, sd = 30, 100, 100.0
    spec = ModelSpec(include_covariates=False, include_spatial=False, include_exchangeable=False,
                     intercept_prior_sd=sd)
    b0 = logit(y / n)

    def dens(b):
        return np.exp(y * (b - b0) - n * (np.logaddexp(0, b) - np.logaddexp(0, b0)) - 0.5 * (b / sd) ** 2)

    z = integrate.quad(dens, -15, 15, points=[b0])[0]
    m1 = integrate.quad(lambda b: expit(b) * dens(b), -15, 15, points=[b0])[0] / z
    m2 = integrate.quad(lambda b: expit(b) ** 2 * dens(b), -15, 15, points=[b0])[0] / z
    exact_sd = np.sqrt(m2 - m1**2)
    t0 = time.perf_counter()
    post = fit_laplace(spec, SampleRealization(0.1, np.array([[n]]), np.array([[y]])))
    elapsed = time.perf_counter() - t0
    dm = abs(post.cell_mean[0, 0] - m1)
    dsd = abs(post.cell_sd[0, 0] / exact_sd - 1)
    ok = dm < 0.01 and dsd < 0.10 and elapsed < 1.0
    record_criterion(1, ok, f"|mean diff|={dm:.4f} (<0.01), SD rel err={dsd:.3%} (<10%), {elapsed:.3f}s (<1s)")
    assert ok


def test_criterion_02_laplace_matches_mcmc():
    pop, X, g = synth_population(20, 2, seed=1)
    sample = draw_sample(pop, 0.05, replicate_seed(1, 0))
    spec = ModelSpec.for_scenario("S4")
    t0 = time.perf_counter()
    la = fit_laplace(spec, sample, pop, X, g)
    mc = fit_mcmc(spec, sample, pop, X, g, ChainConfig(n_chains=2, n_iter=20000, burn_in=4000, thin=4, seed=3))
    elapsed = time.perf_counter() - t0
    dm = np.abs(la.cell_mean - mc.cell_mean)
    rs = np.abs(la.cell_sd / mc.cell_sd - 1)
    frac = float(np.mean((dm < 0.01) & (rs < 0.15)))
    ok = frac >= 0.95 and elapsed < 300 and mc.diagnostics["rhat_max"] < 1.1
    record_criterion(2, ok, f"{frac:.1%} of cells agree (>=95%), max R-hat {mc.diagnostics['rhat_max']:.3f}, "
                            f"{elapsed:.0f}s (<300s)")
    assert ok


def test_criterion_03_gradient():
    pop, X, g = synth_population(15, 3, seed=2)
    spec = ModelSpec.for_scenario("S4")
    data = draw_sample(pop, 0.05, replicate_seed(2, 1))
    lay = LatentLayout(spec, pop.J, pop.D, X, g)
    rng = np.random.default_rng(17)
    worst = 0.0
    h = 1e-5
    for _ in range(10):
        x = rng.normal(scale=0.5, size=lay.dim)
        tau = tuple(np.exp(rng.uniform(-1, 3, size=2)))
        grad = grad_log_posterior(spec, x, tau, data, layout=lay)
        num = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            num[i] = (log_unnormalized_posterior(spec, x + e, tau, data, layout=lay)
                      - log_unnormalized_posterior(spec, x - e, tau, data, layout=lay)) / (2 * h)
        worst = max(worst, np.linalg.norm(grad - num) / np.linalg.norm(num))
    ok = worst < 1e-5
    record_criterion(3, ok, f"max relative gradient error over 10 points = {worst:.2e} (<1e-5)")
    assert ok


def test_criterion_04_icar_structure():
    pop, X, g = synth_population(20, 2, seed=4)
    R = icar_structure(g).toarray()
    rows = float(np.max(np.abs(R.sum(axis=1))))
    cyc = AdjacencyGraph(tuple("abcd"), np.array([[0, 1], [1, 2], [2, 3], [3, 0]]))
    ev = np.linalg.eigvalsh(icar_structure(cyc).toarray())
    ev_err = float(np.max(np.abs(ev - [0, 2, 2, 4])))
    post = fit_laplace(ModelSpec.for_scenario("S4"), draw_sample(pop, 0.05, replicate_seed(4)), pop, X, g)
    sums = [abs(c.x[c.layout.sl_u].sum()) for c in post.components]
    ok = rows == 0 and ev_err < 1e-10 and max(sums) < 1e-8
    record_criterion(4, ok, f"row sums {rows:g}, 4-cycle eigenvalue error {ev_err:.1e}, "
                            f"max |sum upsilon| {max(sums):.1e}")
    assert ok


def test_criterion_05_binary_search_stub():
    f_star = 0.027
    calls = []

    def evaluate(f, step_key, k):
        calls.append(f)
        v = float(f < f_star)
        return SsdStep(k, f, v, v, v, v)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = SsdConfig(f_a=0.01, f_b=0.04, h=0.00375, L=100)
    trace = run_ssd(None, None, None, None, cfg, evaluate=evaluate)
    lo, hi = trace.solution_interval
    km = k_max(0.01, 0.04, 0.00375)
    n_mid = len(trace.midpoint_steps)
    ok = lo <= f_star <= hi and hi - f_star < cfg.h and n_mid == km == 5 and len(calls) == 2 + km
    record_criterion(5, ok, f"interval [{lo:.6g}, {hi:.6g}] contains {f_star}, upper-bound gap {hi - f_star:.6g} "
                            f"(<h), {n_mid} midpoint evaluations = k_max {km}")
    assert ok


def test_criterion_06_loss_monotone_in_fraction():
    pop, X, g = synth_population(50, 3, seed=6)
    spec = ModelSpec.for_scenario("S4")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = SsdConfig(L=50, gamma=0.05, master_seed=6)
    t0 = time.perf_counter()
    design = fit_design_posterior(pop, X, g, spec, cfg)
    fracs = (0.01, 0.02, 0.04, 0.08)
    means, ses = [], []
    for i, f in enumerate(fracs):
        step = evaluate_fraction(f, design, pop, X, g, spec, cfg, step_key=i)
        le = np.array([r[1] for r in step.per_replication if r[2] == "ok"])
        means.append(le.mean())
        ses.append(le.std(ddof=1) / np.sqrt(le.size))
    elapsed = time.perf_counter() - t0
    ok_steps = [means[i + 1] <= means[i] + np.hypot(ses[i], ses[i + 1]) for i in range(len(fracs) - 1)]
    ok = all(ok_steps) and elapsed < 600
    detail = ", ".join(f"f={f:g}: {m:.2f}±{s:.2f}" for f, m, s in zip(fracs, means, ses))
    record_criterion(6, ok, f"mean estimated loss {detail}; {elapsed:.0f}s (<600s)")
    assert ok


def test_criterion_07_metric_hand_example():
    pop = Population(np.array([[10]]), np.array([[3]]), ("a",), ("g",))
    E = np.array([0.2, 0.4]).reshape(2, 1, 1)
    sd = np.array([0.03, 0.05]).reshape(2, 1, 1)
    t = metrics_from_estimates(pop, E, sd**2, 0.1, "S2")
    true_rse = 0.1 / 0.3
    want_rseb = np.mean((sd.ravel() / E.ravel() - true_rse) / true_rse)
    errs = [
        abs(t.per_cell["bias"][0, 0] - 0.0),
        abs(t.per_cell["rmse"][0, 0] - 0.1),
        abs(t.per_cell["arb"][0, 0] - 1 / 3),
        abs(t.per_cell["rseb"][0, 0] - want_rseb),
    ]
    ok = max(errs) < 1e-12
    record_criterion(7, ok, f"bias/RMSE/ARB/RSEB max abs error {max(errs):.1e} (<1e-12)")
    assert ok


def test_criterion_08_direct_rse_theory():
    pop, X, g = synth_population(30, 3, seed=8, headcount_range=(5000, 20000))
    f = 0.02
    t = run_scenario(pop, X, g, "S1", f, B=400, master_seed=8)
    emp, theory, se = t.per_cell["rse"], t.per_cell["rse_theory"], t.per_cell["rse_mcse"]
    within = np.abs(emp - theory) <= 3 * se
    frac = float(np.mean(within))
    ok = frac >= 0.95
    record_criterion(8, ok, f"{frac:.1%} of cells within 3 MC SE of theory (>=95%), B=400")
    assert ok


def test_criterion_09_efficiency_ordering():
    pop, X, g = synth_population(50, 3, seed=9)
    rmse = {}
    for sid in ("S1", "S2", "S3", "S4"):
        t = run_scenario(pop, X, g, sid, 0.02, B=40, master_seed=9)
        rmse[sid] = float(t.per_group["rmse"][-1])
    ok = rmse["S1"] > rmse["S2"] > rmse["S3"] >= rmse["S4"]
    record_criterion(9, ok, "mean RMSE " + " > ".join(f"{k} {v:.4f}" for k, v in rmse.items()))
    assert ok


def test_criterion_10_cli_determinism(tmp_path, capsys):
    b = tmp_path / "bundle"
    assert main(["synth", "--out", str(b), "--areas", "12", "--groups", "2", "--seed", "10"]) == 0
    cfg = str(b / "config.ini")
    common = ["--set", "model.scenario=S2", "--set", "sim.B=5", "--set", "sim.scenarios=S1,S2",
              "--set", "ssd.f_a=0.05", "--set", "ssd.f_b=0.9", "--set", "ssd.h=0.3", "--set", "ssd.L=4",
              "--set", "ssd.gamma=0.5", "--set", "ssd.loss_kind=proportion"]
    outs = []
    for rep in range(2):
        out = tmp_path / f"run{rep}"
        for cmd in ("fit", "ssd", "simulate"):
            assert main([cmd, "--config", cfg, "--out", str(out), "--jobs", str(rep + 1), *common]) == 0
        outs.append(out)
    capsys.readouterr()
    names = sorted(p.name for p in outs[0].iterdir())
    same = [(outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names]
    ok = all(same) and len(names) >= 8
    record_criterion(10, ok, f"{sum(same)}/{len(names)} output files byte-identical across reruns")
    assert ok


def test_criterion_11_end_to_end_ssd():
    pop, X, g = synth_population(50, 3, seed=11, headcount_range=(1000, 5000), prevalence_profile=[0.1, 0.2, 0.3])
    spec = ModelSpec.for_scenario("S4")
    cfg = SsdConfig(f_a=0.02, f_b=0.14, h=0.02, L=50, kappa=0.0, gamma=0.05, master_seed=11)
    t0 = time.perf_counter()
    trace = run_ssd(pop, X, g, spec, cfg)
    elapsed = time.perf_counter() - t0
    width0 = cfg.f_b - cfg.f_a
    halving = all(
        abs((s.interval_after[1] - s.interval_after[0]) - width0 * 2.0**-s.k) < 1e-12 for s in trace.midpoint_steps
    )
    lo, hi = trace.solution_interval
    ok = halving and hi - lo < cfg.h and elapsed < 900 and len(trace.midpoint_steps) == k_max(0.02, 0.14, 0.02)
    rows = "; ".join(f"f={s.f_k:.4g} risk={s.risk_est:.2f}" for s in trace.steps)
    record_criterion(11, ok, f"[{lo:.4g}, {hi:.4g}] width {hi - lo:.4g} (<h=0.02), {rows}; {elapsed:.0f}s (<900s)")
    assert ok
