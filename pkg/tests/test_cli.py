import json

import pytest

from sae_ssd.cli import load_config, main
from sae_ssd.exceptions import ConfigError


@pytest.fixture
def bundle(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "b"), "--areas", "12", "--groups", "2", "--seed", "3"]) == 0
    return tmp_path / "b"


def run(capsys, *args):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_synth_writes_bundle(bundle):
    for name in ("population.csv", "covariates.csv", "adjacency.csv", "config.ini"):
        assert (bundle / name).is_file()


def test_validate_ok(bundle, capsys):
    code, out, _ = run(capsys, "validate", "--config", bundle / "config.ini")
    assert code == 0
    assert "eligible cells" in out and "component" in out


def test_validate_missing_adjacency(bundle, capsys):
    (bundle / "adjacency.csv").unlink()
    code, _, err = run(capsys, "validate", "--config", bundle / "config.ini")
    assert code == 2
    assert "adjacency.csv" in err


def test_validate_bad_row(bundle, capsys):
    p = bundle / "population.csv"
    lines = p.read_text().splitlines()
    a, g, N, _ = lines[1].split(",")
    lines[1] = f"{a},{g},{N},{int(N) + 1}"
    p.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "validate", "--config", bundle / "config.ini")
    assert code == 1
    assert f"cell ({g}, {a})" in err


def test_missing_config_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "validate", "--config", tmp_path / "nope.ini")
    assert code == 2 and "nope.ini" in err


def test_bad_override_is_usage_error(bundle, capsys):
    code, _, err = run(capsys, "ssd", "--config", bundle / "config.ini", "--set", "ssd.h=0.5")
    assert code == 2 and "h" in err


def test_ssd_stub_run_and_determinism(bundle, tmp_path, capsys):
    args = ["ssd", "--config", bundle / "config.ini", "--set", "ssd.stub_threshold=0.027", "--set", "ssd.h=0.00375"]
    code, out, _ = run(capsys, *args, "--out", tmp_path / "o1")
    assert code == 0
    assert "recommended fraction" in out and "DEFF 1.16" in out
    summary = json.loads((tmp_path / "o1" / "ssd_summary.json").read_text())
    assert summary["n_midpoint_steps"] == 5
    lo, hi = summary["solution_interval"]
    assert lo <= 0.027 <= hi
    run(capsys, *args, "--out", tmp_path / "o2", "--jobs", "1")
    for name in ("ssd_trace.csv", "ssd_summary.json"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()
    assert (tmp_path / "o1" / "ssd_trace.csv").read_text().startswith("# sae-ssd config_sha256=")


def test_ssd_small_L_warning(bundle, capsys):
    code, _, err = run(capsys, "ssd", "--config", bundle / "config.ini", "--set", "ssd.L=10", "--dry-run")
    assert code == 0
    assert "L below gamma^-1 order of magnitude" in err


def test_ssd_infeasible_interval(bundle, capsys):
    code, _, err = run(capsys, "ssd", "--config", bundle / "config.ini", "--set", "ssd.stub_threshold=0.5")
    assert code == 2
    assert "raise f_b" in err


def test_dry_run_cost_estimates(bundle, capsys):
    code, out, _ = run(capsys, "ssd", "--config", bundle / "config.ini", "--dry-run")
    assert code == 0 and "401 model fits" in out  # L * (2 + k_max) + pilot
    code, out, _ = run(capsys, "simulate", "--config", bundle / "config.ini", "--dry-run")
    assert code == 0 and "2400 model fits" in out  # B * 3 model scenarios * 2 fractions


def test_simulate_s1_only(bundle, tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--config", bundle / "config.ini", "--set", "sim.scenarios=S1",
                       "--set", "sim.B=20", "--set", "sim.fractions=0.02,0.04", "--out", tmp_path / "s")
    assert code == 0
    names = sorted(p.name for p in (tmp_path / "s").iterdir())
    assert names == ["metrics_S1_f0.02.csv", "metrics_S1_f0.04.csv", "summary_S1_f0.02.csv", "summary_S1_f0.04.csv"]
    assert "S1 f=0.02 B=20" in out


def test_fit_writes_posterior(bundle, tmp_path, capsys):
    code, out, _ = run(capsys, "fit", "--config", bundle / "config.ini", "--out", tmp_path / "f")
    assert code == 0
    lines = (tmp_path / "f" / "posterior.csv").read_text().splitlines()
    assert lines[0].startswith("# sae-ssd")
    assert lines[1] == "group_id,area_id,post_mean,post_sd,rse"
    assert len(lines) == 2 + 24
    assert (tmp_path / "f" / "suppression.csv").is_file()
    # the dumped sample can be fed back in
    code, _, _ = run(capsys, "fit", "--config", bundle / "config.ini", "--out", tmp_path / "g",
                     "--set", f"paths.sample={tmp_path / 'f' / 'sample.csv'}")
    assert code == 0
    assert (tmp_path / "f" / "posterior.csv").read_text().splitlines()[1:] == \
        (tmp_path / "g" / "posterior.csv").read_text().splitlines()[1:]


def test_load_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[model]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(p)
    p.write_text("[weird]\nx = 1\n")
    with pytest.raises(ConfigError, match="weird"):
        load_config(p)
