"""Command-line entry point: ``sae-ssd {validate,fit,ssd,simulate,synth}``.

Runs are driven by an INI file with sections ``[paths]``, ``[model]``,
``[ssd]``, ``[sim]`` and ``[run]``; relative paths resolve against the
config file's directory. Command-line flags override file values.

Exit codes: 0 ok, 1 data error, 2 usage or configuration error,
3 numerical failure.
"""

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

from .designsim import Scenario, format_group_summary, run_scenario, write_cell_metrics, write_group_summary
from .exceptions import ConfigError, DataError, NumericalFailure
from .model.laplace import fit_laplace
from .model.mcmc import ChainConfig, fit_mcmc
from .model.spec import ModelSpec
from .planning import DesignEffect, ess_to_actual
from .population import (
    load_adjacency,
    load_covariates,
    load_population,
    scale_covariates,
    synth_population,
    write_adjacency,
    write_covariates,
    write_population,
)
from .reliability import eligibility, suppression_report, write_suppression_report
from .sampling import draw_sample, load_sample, replicate_seed, write_sample
from .ssd import PILOT_KEY, SsdConfig, SsdStep, binary_search, k_max, run_ssd, trace_summary, write_summary_json, \
    write_trace_csv

logger = logging.getLogger("sae_ssd")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
MAX_VIOLATIONS = 20


def default_jobs():
    return max(1, (os.cpu_count() or 1) - 1)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _floats(v):
    return tuple(float(x) for x in str(v).replace(";", ",").split(",") if x.strip())


@dataclass
class RunConfig:
    paths: dict
    model: ModelSpec
    method: str
    chain: ChainConfig
    ssd: SsdConfig
    deffs: tuple
    stub_threshold: float
    scenarios: tuple
    fractions: tuple
    B: int
    weighted: bool
    master_seed: int
    jobs: int
    digest: str = ""
    raw: dict = field(default_factory=dict)

    def header(self):
        return f"sae-ssd config_sha256={self.digest} master_seed={self.master_seed}"


_MODEL_KEYS = {f.name for f in fields(ModelSpec)}
_SSD_KEYS = {f.name for f in fields(SsdConfig)} - {"master_seed"}
# keys that never change results, so they stay out of the config digest
_VOLATILE = {("run", "jobs"), ("paths", "output")}


def _parse_model(sec):
    kw = {}
    scenario = sec.get("scenario")
    for k, v in sec.items():
        if k in ("scenario", "method", "mcmc_chains", "mcmc_iter", "mcmc_burn_in", "mcmc_thin"):
            continue
        if k not in _MODEL_KEYS:
            raise ConfigError(f"[model] unknown key {k!r}")
        if k.startswith("include_") or k == "shared_covariate_effects":
            kw[k] = _bool(v)
        elif k in ("hyperprior_upsilon", "hyperprior_nu"):
            kw[k] = v if v.strip() else None
        elif k in ("grid",):
            kw[k] = v.strip()
        elif k in ("grid_points", "max_newton_iter"):
            kw[k] = int(v)
        else:
            kw[k] = float(v)
    spec = ModelSpec.for_scenario(scenario, **kw) if scenario else ModelSpec(**kw)
    method = sec.get("method", "laplace").strip()
    if method not in ("laplace", "mcmc"):
        raise ConfigError(f"[model] method must be laplace or mcmc, got {method!r}")
    chain = ChainConfig(
        n_chains=int(sec.get("mcmc_chains", 2)),
        n_iter=int(sec.get("mcmc_iter", 10000)),
        burn_in=int(sec.get("mcmc_burn_in", 3000)),
        thin=int(sec.get("mcmc_thin", 5)),
    )
    return spec, method, chain


def _parse_ssd(sec, master_seed):
    kw = {}
    for k, v in sec.items():
        if k in ("deffs", "stub_threshold"):
            continue
        if k not in _SSD_KEYS:
            raise ConfigError(f"[ssd] unknown key {k!r}")
        if k == "L":
            kw[k] = int(v)
        elif k == "loss_kind":
            kw[k] = v.strip()
        elif k == "use_estimated_eligibility":
            kw[k] = _bool(v)
        else:
            kw[k] = float(v)
    deffs = tuple(DesignEffect(d) for d in _floats(sec.get("deffs", "")))
    stub = sec.get("stub_threshold", "").strip()
    return SsdConfig(master_seed=master_seed, **kw), deffs, float(stub) if stub else None


def load_config(path=None, overrides=()):
    """Read an INI file (optional) and apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
        base = path.resolve().parent
    for ov in overrides:
        try:
            key, value = ov.split("=", 1)
            sec, k = key.split(".", 1)
        except ValueError:
            raise ConfigError(f"override must look like section.key=value, got {ov!r}") from None
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, k, value)
    for sec in cp.sections():
        if sec not in ("paths", "model", "ssd", "sim", "run", "synth"):
            raise ConfigError(f"unknown config section [{sec}]")
    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    paths = {k: (base / v).resolve() if v.strip() else None for k, v in raw.get("paths", {}).items()}
    run = raw.get("run", {})
    try:
        master_seed = int(run.get("master_seed", 0))
        jobs = int(run["jobs"]) if run.get("jobs", "").strip() else default_jobs()
        spec, method, chain = _parse_model(raw.get("model", {}))
        ssd, deffs, stub = _parse_ssd(raw.get("ssd", {}), master_seed)
        sim = raw.get("sim", {})
        scenarios = tuple(s.strip().upper() for s in sim.get("scenarios", "S1,S2,S3,S4").split(",") if s.strip())
        fractions = _floats(sim.get("fractions", "0.02,0.04"))
        B = int(sim.get("B", 400))
        weighted = _bool(sim.get("weighted", "false"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ConfigError, DataError)):
            raise
        raise ConfigError(f"bad config value: {exc}") from None
    for s in scenarios:
        Scenario.from_id(s)
    if B < 1:
        raise ConfigError("[sim] B must be positive")
    jobs = max(1, min(jobs, os.cpu_count() or 1))
    return RunConfig(paths, spec, method, chain, ssd, deffs, stub, scenarios, fractions, B, weighted, master_seed,
                     jobs, raw=raw)


def _digest(cfg):
    h = hashlib.sha256()
    canon = {s: {k: v for k, v in sorted(kv.items()) if (s, k) not in _VOLATILE} for s, kv in sorted(cfg.raw.items())}
    canon.setdefault("run", {})["master_seed"] = str(cfg.master_seed)
    h.update(json.dumps(canon, sort_keys=True).encode())
    for k in ("population", "covariates", "adjacency", "sample"):
        p = cfg.paths.get(k)
        if p is not None and p.is_file():
            h.update(k.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _require(cfg, key):
    p = cfg.paths.get(key)
    if p is None:
        raise ConfigError(f"[paths] {key} is required")
    if not p.exists():
        raise FileNotFoundError(f"{key} file not found: {p}")
    return p


def load_inputs(cfg):
    """Load population, scaled covariates and graph as the model requires."""
    pop = load_population(_require(cfg, "population"))
    X = graph = None
    if cfg.model.include_covariates or cfg.paths.get("covariates"):
        X = scale_covariates(load_covariates(_require(cfg, "covariates"), pop.area_ids))
    if cfg.model.include_spatial or cfg.paths.get("adjacency"):
        graph = load_adjacency(_require(cfg, "adjacency"), pop.area_ids)
    cfg.digest = _digest(cfg)
    return pop, X, graph


def _outdir(cfg):
    out = cfg.paths.get("output") or Path.cwd() / "sae_ssd_out"
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(cfg, args):
    pop, X, graph = load_inputs(cfg)
    el = eligibility(pop)
    print(f"population: {pop.J} groups x {pop.D} areas = {pop.n_cells} cells, total N = {pop.total}")
    print(f"eligible cells: {int(el.sum())} ({100 * el.mean():.1f}%)")
    if X is not None:
        print(f"covariates: {X.K} ({', '.join(X.names)})")
    if graph is not None:
        n_comp, _ = graph.components()
        print(f"graph: {len(graph.edges)} edges, {n_comp} component(s), {int(graph.isolated.sum())} isolated")
    print("ok")
    return EXIT_OK


def _fit(cfg, data, pop, X, graph):
    if cfg.method == "mcmc":
        return fit_mcmc(cfg.model, data, pop, X, graph, cfg.chain)
    return fit_laplace(cfg.model, data, pop, X, graph)


def cmd_fit(cfg, args):
    pop, X, graph = load_inputs(cfg)
    out = _outdir(cfg)
    if cfg.paths.get("sample"):
        data = load_sample(_require(cfg, "sample"), pop)
    else:
        rng = replicate_seed(cfg.master_seed, PILOT_KEY)
        data = draw_sample(pop, cfg.ssd.pilot_fraction, rng, seed=(PILOT_KEY,))
        write_sample(data, pop, out / "sample.csv", cfg.header())
    if args.dry_run:
        print(f"dry run: 1 {cfg.method} fit of {pop.n_cells} cells")
        return EXIT_OK
    post = _fit(cfg, data, pop, X, graph)
    if not post.converged:
        raise NumericalFailure(f"fit did not converge (status {post.diagnostics.get('status')})", post.diagnostics)
    with open(out / "posterior.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {cfg.header()}\n")
        fh.write("group_id,area_id,post_mean,post_sd,rse\n")
        for j, g in enumerate(pop.group_labels):
            for d, a in enumerate(pop.area_ids):
                fh.write(f"{g},{a},{post.cell_mean[j, d]:.10g},{post.cell_sd[j, d]:.10g},{post.rse[j, d]:.10g}\n")
    report = suppression_report(pop, post.cell_mean, post.cell_var, loss_kind=cfg.ssd.loss_kind)
    write_suppression_report(report, pop, out / "suppression.csv", cfg.header())
    print(f"fitted {pop.n_cells} cells ({cfg.method}); sample size {int(data.n.sum())}")
    print(f"eligible (estimated): {int(report.eligible_est.sum())}, suppressed: {len(report.suppressed_cells)}")
    print(f"wrote {out / 'posterior.csv'} and {out / 'suppression.csv'}")
    return EXIT_OK


def _stub_evaluate(threshold):
    def evaluate(f, step_key, k):
        v = float(f < threshold)
        return SsdStep(k, f, v, v, v, v)

    return evaluate


def cmd_ssd(cfg, args):
    config = cfg.ssd
    n_steps = k_max(config.f_a, config.f_b, config.h)
    if cfg.stub_threshold is not None:
        pop = load_population(_require(cfg, "population")) if cfg.paths.get("population") else None
        cfg.digest = _digest(cfg)
        X = graph = None
    else:
        pop, X, graph = load_inputs(cfg)
    if args.dry_run:
        fits = 0 if cfg.stub_threshold is not None else config.L * (2 + n_steps) + 1
        print(f"dry run: at most {2 + n_steps} fraction evaluations ({n_steps} midpoints), {fits} model fits")
        return EXIT_OK
    out = _outdir(cfg)
    evaluate = _stub_evaluate(cfg.stub_threshold) if cfg.stub_threshold is not None else None
    if evaluate is not None:
        trace = binary_search(evaluate, config, total=pop.total if pop is not None else None)
    else:
        trace = run_ssd(pop, X, graph, cfg.model, config, n_jobs=cfg.jobs)
    write_trace_csv(trace, out / "ssd_trace.csv", cfg.header())
    summary = trace_summary(trace, config, cfg.deffs,
                            extra=dict(config_sha256=cfg.digest, master_seed=cfg.master_seed))
    write_summary_json(summary, out / "ssd_summary.json")
    print(format_trace(trace))
    print(f"recommended fraction: {trace.recommended_fraction:.6g}")
    if trace.recommended_ess is not None:
        print(f"ESS: {trace.recommended_ess}")
        for d in cfg.deffs:
            print(f"  DEFF {d.deff:g}: n = {ess_to_actual(trace.recommended_ess, d)}")
    return EXIT_OK


def format_trace(trace):
    lines = [f"{'step':>4} {'f_k':>10} {'loss_true':>10} {'loss_est':>10} {'risk':>7}  interval"]
    for s in trace.steps:
        iv = f"[{s.interval_after[0]:.6g}, {s.interval_after[1]:.6g}]" if s.interval_after else ""
        lines.append(f"{s.k:>4} {s.f_k:>10.6g} {s.mean_loss_true:>10.4g} {s.mean_loss_est:>10.4g} {s.risk_est:>7.3f}  {iv}")
    return "\n".join(lines)


def cmd_simulate(cfg, args):
    pop, X, graph = load_inputs(cfg)
    n_model = sum(s != "S1" for s in cfg.scenarios)
    if args.dry_run:
        print(f"dry run: {len(cfg.scenarios)} scenario(s) x {len(cfg.fractions)} fraction(s), "
              f"{cfg.B * n_model * len(cfg.fractions)} model fits")
        return EXIT_OK
    out = _outdir(cfg)
    for f in cfg.fractions:
        for sid in cfg.scenarios:
            scen = Scenario.from_id(sid, **_spec_overrides(cfg.model))
            table = run_scenario(pop, X, graph, scen, f, cfg.B, cfg.master_seed, n_jobs=cfg.jobs,
                                 weighted=cfg.weighted)
            tag = f"{sid}_f{f:g}"
            write_cell_metrics(table, out / f"metrics_{tag}.csv", cfg.header())
            write_group_summary(table, out / f"summary_{tag}.csv", cfg.header())
            if table.diagnostics.get("n_failed"):
                print(f"{tag}: {table.diagnostics['n_failed']} failed fit(s) excluded")
            print(format_group_summary(table))
            print()
    return EXIT_OK


def _spec_overrides(spec):
    # scenario fixes the structure; priors and numerics come from [model]
    keep = ("hyperprior_upsilon", "hyperprior_nu", "fixed_effect_prior_sd", "intercept_prior_sd",
            "shared_covariate_effects", "grid", "grid_points", "newton_tol", "max_newton_iter")
    base = ModelSpec()
    return {k: getattr(spec, k) for k in keep if getattr(spec, k) != getattr(base, k)}


def cmd_synth(cfg, args):
    syn = cfg.raw.get("synth", {})
    D = args.areas or int(syn.get("D", 50))
    J = args.groups or int(syn.get("J", 3))
    seed = cfg.master_seed
    lo, hi = (int(v) for v in _floats(syn.get("headcount_range", "200,2000")))
    if args.dry_run:
        print(f"dry run: would write a {J} x {D} population")
        return EXIT_OK
    pop, X, graph = synth_population(D, J, headcount_range=(lo, hi), seed=seed,
                                     n_covariates=int(syn.get("n_covariates", 2)))
    out = _outdir(cfg)
    write_population(pop, out / "population.csv")
    write_covariates(X, pop.area_ids, out / "covariates.csv")
    write_adjacency(graph, out / "adjacency.csv")
    with open(out / "config.ini", "w", encoding="utf-8") as fh:
        fh.write(f"# sae-ssd synth D={D} J={J} master_seed={seed}\n")
        fh.write(CONFIG_TEMPLATE.format(seed=seed))
    print(f"wrote synthetic {J} x {D} population, covariates, adjacency and config.ini to {out}")
    return EXIT_OK


CONFIG_TEMPLATE = """[paths]
population = population.csv
covariates = covariates.csv
adjacency = adjacency.csv
output = out

[model]
scenario = S4
method = laplace

[ssd]
f_a = 0.01
f_b = 0.04
h = 0.01
L = 100
gamma = 0.01
kappa = 0
loss_kind = count
deffs = 1.16, 1.44

[sim]
scenarios = S1, S2, S3, S4
fractions = 0.02, 0.04
B = 400

[run]
master_seed = {seed}
"""

COMMANDS = dict(validate=cmd_validate, fit=cmd_fit, ssd=cmd_ssd, simulate=cmd_simulate, synth=cmd_synth)


def build_parser():
    p = argparse.ArgumentParser(prog="sae-ssd", description="Sample size determination for small-area estimates.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides [run] master_seed)")
    p.add_argument("--out", help="output directory (overrides [paths] output)")
    p.add_argument("--jobs", type=int, help="concurrent replications (default: cores - 1)")
    p.add_argument("--dry-run", action="store_true", help="validate and print the cost estimate only")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--areas", type=int, help="synth: number of areas")
    p.add_argument("--groups", type=int, help="synth: number of groups")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _report_violations(exc):
    print(f"error: {exc}", file=sys.stderr)
    for v in list(getattr(exc, "violations", None) or [])[:MAX_VIOLATIONS]:
        print(f"  - {v}", file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.master_seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"run.jobs={args.jobs}")
    if args.out is not None:
        overrides.append(f"paths.output={Path(args.out).resolve()}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            cfg = load_config(args.config, overrides)
            code = COMMANDS[args.command](cfg, args)
        except DataError as exc:
            _report_violations(exc)
            code = EXIT_DATA
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = EXIT_USAGE
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = EXIT_USAGE
        except NumericalFailure as exc:
            print(f"error: numerical failure: {exc}", file=sys.stderr)
            code = EXIT_NUMERIC
        finally:
            for w in caught:
                if issubclass(w.category, UserWarning):
                        print(f"warning: {w.message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
