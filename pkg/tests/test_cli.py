import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynamo_spectra import cli
from dynamo_spectra import discrete as dsc

BASE = {"profile": {"name": "simplified"}, "domain": {"kind": "annulus", "p": 0.25, "q": 2.5},
        "r0": 1.0, "M": 0.1}


def cfg(experiment, **over):
    d = dict(BASE)
    d.update(over)
    return cli.RunConfig.from_dict(d, experiment)


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


# ---------------------------------------------------------------- configuration

@pytest.mark.parametrize("over,key", [
    ({"eps_list": []}, "eps_list"),
    ({"eps_list": [1e-3, 1e-4]}, "eps_list"),
    ({"eps_list": [1e-4, 1e-3, 1e-5]}, "eps_list"),
    ({"eps_list": [0.5, 1e-3, 1e-4]}, "eps_list"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "bogus": 1}, "<root>"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "r0": -1}, "r0"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "M": 0}, "M"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "domain": {"kind": "torus"}}, "domain.kind"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "solver": {"grid_factor": 10}}, "solver.grid_factor"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "solver": {"tol": 2}}, "solver.tol"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "solver": {"speed": 2}}, "solver"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "workers": 0}, "workers"),
    ({"eps_list": [1e-3, 1e-4, 1e-5], "thresholds": {"nope": 1}}, "thresholds"),
])
def test_invalid_sweep_configs(over, key):
    with pytest.raises(cli.ConfigError, match=f"config key '{key}'"):
        cfg("sweep", **over)


def test_invalid_green_exponents_named():
    with pytest.raises(cli.ConfigError, match="γ ≤ 2/9"):
        cfg("greens-verify", eps_list=[1e-3], greens={"exponents": [0.2, 0.3, 0.21]})


def test_unknown_experiment():
    with pytest.raises(cli.ConfigError, match="experiment"):
        cli.RunConfig.from_dict(dict(BASE), "fly")


def test_config_round_trip():
    c = cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5], solver={"grid_factor": 50, "tol": 1e-9})
    again = cli.RunConfig.from_dict(c.to_dict(), "sweep")
    assert again == c


def test_unknown_profile_is_config_error():
    with pytest.raises(cli.ConfigError, match="profile"):
        cfg("growthrate", profile={"name": "nonexistent"}).build_profile()


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "r0": 1.0,\n  "M": ,\n}')
    with pytest.raises(cli.ConfigError, match="line 3"):
        cli.load_config(p, "growthrate")


def test_main_config_error_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, dict(BASE, eps_list=[]))
    assert cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["audit", "--config", str(tmp_path / "none.json")]) == cli.EXIT_CONFIG


def test_auto_M_is_inside_growth_window():
    c = cfg("growthrate", M="auto")
    M = c.resolve_M(c.build_profile())
    assert M > 0 and math.isfinite(M)


# ---------------------------------------------------------------- scaling fit

def _rows(eps, vals):
    return [{"eps": e, "lambda_re": v} for e, v in zip(eps, vals)]


def test_fit_recovers_one_third():
    eps = [1e-3, 1e-4, 1e-5, 1e-6]
    slope, err = cli.fit_scaling(_rows(eps, [e ** (1 / 3) for e in eps]))
    assert slope == pytest.approx(1 / 3, abs=1e-12)
    assert err == pytest.approx(0, abs=1e-12)


@given(st.floats(0.1, 0.9), st.floats(0.01, 100))
@settings(max_examples=30)
def test_fit_recovers_power_law(p, c):
    eps = [1e-2, 1e-3, 1e-4, 1e-5]
    slope, _ = cli.fit_scaling(_rows(eps, [c * e**p for e in eps]))
    assert slope == pytest.approx(p, abs=1e-10)


def test_fit_power_law_example():
    eps = [1e-3, 1e-4, 1e-5]
    assert cli.fit_scaling(_rows(eps, [2 * e**0.4 for e in eps]))[0] == pytest.approx(0.4, abs=1e-12)


def test_fit_needs_three_rows():
    with pytest.raises(cli.ScalingFitError):
        cli.fit_scaling(_rows([1e-3, 1e-4], [0.1, 0.05]))


def test_fit_skips_nonpositive_rows_with_warning():
    eps = [1e-3, 1e-4, 1e-5, 1e-6]
    rows = _rows(eps, [e ** (1 / 3) for e in eps])
    rows[1]["lambda_re"] = -1.0
    with pytest.warns(RuntimeWarning, match="excluded"):
        slope, _ = cli.fit_scaling(rows)
    assert slope == pytest.approx(1 / 3, abs=1e-12)


def test_fit_skips_failed_rows():
    eps = [1e-3, 1e-4, 1e-5]
    rows = _rows(eps, [e ** (1 / 3) for e in eps]) + [{"eps": 1e-6, "failed": True}]
    assert cli.fit_scaling(rows)[0] == pytest.approx(1 / 3)


# ---------------------------------------------------------------- experiments

def test_growthrate_report(tmp_path):
    assert cli.run(cfg("growthrate", eps_list=[1e-3]), tmp_path) == cli.EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["mu_star_re"] == pytest.approx(0.145614, abs=1e-6)
    assert rep["mu_star_im"] == pytest.approx(0.158114, abs=1e-6)
    assert rep["pass"] is True
    assert rep["lambda_star_by_eps"][0]["re"] == pytest.approx(0.0145614, abs=1e-6)


def test_audit_report(tmp_path):
    assert cli.run(cfg("audit"), tmp_path) == cli.EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["checks"]["gilbert_ok"] is True
    assert rep["log_deriv"] == pytest.approx(1.0)


def test_report_is_deterministic(tmp_path):
    c = cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5])
    cli.run(c, tmp_path / "a", plots=False)
    cli.run(c, tmp_path / "b", plots=False)
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_parallel_sweep_matches_serial():
    serial = cli.run_sweep(cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5]))
    par = cli.run_sweep(cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5], workers=3))
    assert [r["lambda_re"] for r in serial.rows] == [r["lambda_re"] for r in par.rows]


def test_sweep_marks_failed_rows_and_continues(monkeypatch):
    real = dsc.eigensolve

    def flaky(opr, *a, **k):
        if opr.eps == 1e-4:
            raise dsc.ConvergenceError("forced", 0j, 1.0)
        return real(opr, *a, **k)

    monkeypatch.setattr(dsc, "eigensolve", flaky)
    c = cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5, 1e-6])
    rep = cli.run_sweep(c)
    assert [bool(r.get("failed")) for r in rep.rows] == [False, True, False, False]
    assert "forced" in rep.rows[1]["error"]
    assert rep.exponent is not None
    checks = rep.checks(c)
    assert checks["all_rows_converged"] is False
    assert rep.gaps[1] is None


def test_threshold_failure_exit_code(tmp_path):
    c = cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5], thresholds={"final_gap": 1e-12})
    assert cli.run(c, tmp_path, plots=False) == cli.EXIT_THRESHOLD
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["pass"] is False and rep["checks"]["final_gap"] is False


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom():
        raise FloatingPointError("overflow")

    monkeypatch.setattr(cli, "specfun_suite", boom)
    assert cli.run(cfg("specfun-verify"), tmp_path) == cli.EXIT_NUMERICAL
    assert "overflow" in json.loads((tmp_path / "report.json").read_text())["error"]


def test_stretching_off_sweep_is_dissipative():
    c = cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5], stretching=False)
    rep = cli.run_sweep(c)
    assert all(r["lambda_re"] < 0 for r in rep.rows)
    assert rep.exponent is None
    assert rep.checks(c) == {"all_rows_converged": True, "re_lambda_negative": True}


def test_eigensolve_exports_mode(tmp_path):
    assert cli.run(cfg("eigensolve", eps_list=[1e-4]), tmp_path, plots=False) == cli.EXIT_OK
    data = np.loadtxt(tmp_path / "mode_1e-04.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 7


def test_specfun_suite_passes():
    rep = cli.specfun_suite()
    assert rep["pass"] and all(rep["checks"].values())


# ---------------------------------------------------------------- plots

@pytest.fixture(scope="module")
def sections():
    c = cfg("sweep", eps_list=[1e-3, 1e-4, 1e-5])
    sw = cli.run_sweep(c)
    greens = {"rows": [{"eps": 1e-3, "rho": 2.1}, {"eps": 1e-4, "rho": 0.13}, {"eps": 1e-5, "rho": 0.03}]}
    return {"sweep": sw.to_dict(), "mode": sw.mode, "greens": greens}


def test_emit_plots_writes_three_scripts(tmp_path, sections):
    scripts = cli.emit_plots(sections, tmp_path)
    assert [s.name for s in scripts] == ["plot_growth.py", "plot_mode.py", "plot_contraction.py"]
    for s, data in zip(scripts, ("growth.csv", "mode.csv", "contraction.csv")):
        assert data in s.read_text()
        assert (tmp_path / data).exists()


def test_plots_render_and_rerun_identically(tmp_path, sections):
    out = []
    for sub in ("a", "b"):
        scripts = cli.emit_plots(sections, tmp_path / sub)
        pngs = cli.render_plots(scripts)
        out.append([p.read_bytes() for p in pngs] + [s.read_bytes() for s in scripts])
    assert out[0] == out[1]


def test_script_runs_standalone(tmp_path, sections):
    scripts = cli.emit_plots(sections, tmp_path)
    subprocess.run([sys.executable, str(scripts[0])], check=True, cwd="/")
    assert (tmp_path / "growth.png").stat().st_size > 0


def test_empty_sections_give_placeholder_figures(tmp_path):
    scripts = cli.emit_plots({}, tmp_path)
    for s in scripts:
        assert "no " in s.read_text()
    pngs = cli.render_plots(scripts)
    assert all(p.exists() for p in pngs)
    assert not (tmp_path / "growth.csv").exists()


def test_main_end_to_end(tmp_path, capsys):
    p = write_cfg(tmp_path, dict(BASE, eps_list=[1e-3, 1e-4, 1e-5]))
    out = tmp_path / "run"
    assert cli.main(["sweep", "--config", str(p), "--out", str(out)]) == cli.EXIT_OK
    assert "sweep: pass" in capsys.readouterr().out
    for name in ("report.json", "sweep.csv", "growth.png", "mode.png", "contraction.png"):
        assert (out / name).exists()
