"""Batch driver: ``dynamo-spectra <subcommand> --config <json> [--out <dir>]``.

Subcommands
-----------
audit           hypotheses on the profile at ``r0``
growthrate      closed-form critical-layer constants
eigensolve      discrete eigenpairs, Gaussian fits and exported modes
sweep           eigenvalues over ``eps_list`` and the scaling-exponent fit
greens-verify   contraction, Neumann, Riesz and boundary suites of the Green's route
specfun-verify  special-function identity suite

Exit codes: 0 pass, 1 configuration error, 2 numerical failure, 3 a check
failed its threshold.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import runpy
import sys
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import discrete as dsc
from . import gilbert as gil
from . import greens as grn
from . import profiles as prf
from . import specfun as sf

__all__ = [
    "EXPERIMENTS",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NUMERICAL",
    "EXIT_THRESHOLD",
    "ConfigError",
    "ScalingFitError",
    "RunConfig",
    "SweepReport",
    "load_config",
    "fit_scaling",
    "run_sweep",
    "run_eigensolve",
    "run_greens",
    "specfun_suite",
    "emit_plots",
    "render_plots",
    "run",
    "main",
]

log = logging.getLogger("dynamo_spectra")

EXPERIMENTS = ("audit", "growthrate", "eigensolve", "sweep", "greens-verify", "specfun-verify")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 1, 2, 3

DEFAULT_THRESHOLDS = {
    "final_gap": 0.05,
    "exponent_range": [0.30, 0.37],
    "curvature_rel": 0.20,
    "amplitude_rel": 0.30,
    "center_layers": 2.0,
    "rho_max": 0.5,
    "rho_eps": 1e-4,
    "riesz_min": 0.5,
    "idempotence": 0.05,
    "bc_residual": 1e-8,
    "v_lower": 0.1,
    "v_upper": 10.0,
    "jinv": 10.0,
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class ScalingFitError(ValueError):
    """Fewer than three usable rows for the scaling fit."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _require(cond, key, msg):
    if not cond:
        raise ConfigError(f"config key '{key}': {msg}")


@dataclass
class RunConfig:
    """Validated run configuration.

    The JSON schema is documented in the README; every key except
    ``profile`` is optional for the experiments that do not use it.
    """

    experiment: str
    profile: dict
    domain: dict
    r0: float
    M: float | str
    eps_list: list
    grid_factor: float = 40.0
    tol: float = 1e-8
    max_iter: int = 60
    N: int = 4
    stretching: bool = True
    integer_modes: bool = False
    workers: int = 1
    greens: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict, experiment: str | None = None) -> "RunConfig":
        _require(isinstance(d, dict), "<root>", "must be a JSON object")
        exp = experiment or d.get("experiment")
        _require(exp in EXPERIMENTS, "experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        known = {"experiment", "profile", "domain", "r0", "M", "eps_list", "solver", "stretching",
                 "integer_modes", "workers", "greens", "thresholds", "out"}
        extra = set(d) - known
        _require(not extra, "<root>", f"unknown keys {sorted(extra)}")
        prof = d.get("profile", {"name": "simplified"})
        if isinstance(prof, str):
            prof = {"name": prof}
        _require(isinstance(prof, dict) and "name" in prof, "profile", "needs a 'name'")
        dom = d.get("domain", {"kind": "annulus", "p": 0.25, "q": 2.5})
        _require(isinstance(dom, dict) and dom.get("kind") in prf.DOMAIN_KINDS, "domain.kind",
                 f"must be one of {prf.DOMAIN_KINDS}")
        r0 = d.get("r0", 1.0)
        _require(isinstance(r0, (int, float)) and r0 > 0, "r0", "must be a positive number")
        M = d.get("M", "auto")
        _require(M == "auto" or (isinstance(M, (int, float)) and M != 0), "M",
                 "must be a nonzero number or \"auto\"")
        eps_list = d.get("eps_list", [])
        _require(isinstance(eps_list, list) and all(isinstance(e, (int, float)) for e in eps_list),
                 "eps_list", "must be a list of numbers")
        eps_list = [float(e) for e in eps_list]
        _require(all(0 < e <= 0.1 for e in eps_list), "eps_list", "entries must lie in (0, 0.1]")
        _require(all(a > b for a, b in zip(eps_list, eps_list[1:])), "eps_list", "must be strictly decreasing")
        needs_eps = exp in ("eigensolve", "sweep", "greens-verify")
        _require(not needs_eps or eps_list, "eps_list", f"must be nonempty for {exp}")
        _require(exp != "sweep" or len(eps_list) >= 3, "eps_list", "a sweep needs at least three values")
        solver = d.get("solver", {})
        _require(isinstance(solver, dict), "solver", "must be an object")
        bad = set(solver) - {"grid_factor", "tol", "max_iter", "N"}
        _require(not bad, "solver", f"unknown keys {sorted(bad)}")
        gf = float(solver.get("grid_factor", 40.0))
        _require(gf >= 20, "solver.grid_factor", "must be at least 20")
        tol = float(solver.get("tol", 1e-8))
        _require(0 < tol < 1, "solver.tol", "must lie in (0, 1)")
        N = solver.get("N", 4)
        _require(isinstance(N, int) and N > 0, "solver.N", "must be a positive integer")
        workers = d.get("workers", 1)
        _require(isinstance(workers, int) and workers >= 1, "workers", "must be a positive integer")
        gcfg = d.get("greens", {})
        _require(isinstance(gcfg, dict), "greens", "must be an object")
        if "exponents" in gcfg:
            ex = gcfg["exponents"]
            _require(isinstance(ex, list) and len(ex) == 3, "greens.exponents", "must be [gamma, delta, omega]")
            try:
                grn.check_exponents(*map(float, ex))
            except grn.GreensConfigError as exc:
                raise ConfigError(f"config key 'greens.exponents': {exc}") from None
        th = d.get("thresholds", {})
        _require(isinstance(th, dict) and set(th) <= set(DEFAULT_THRESHOLDS), "thresholds",
                 f"known keys are {sorted(DEFAULT_THRESHOLDS)}")
        return cls(exp, prof, dom, float(r0), M, eps_list, gf, tol, int(solver.get("max_iter", 60)), N,
                   bool(d.get("stretching", True)), bool(d.get("integer_modes", False)), workers, gcfg,
                   th, d.get("out"))

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "profile": self.profile, "domain": self.domain, "r0": self.r0,
            "M": self.M, "eps_list": self.eps_list,
            "solver": {"grid_factor": self.grid_factor, "tol": self.tol, "max_iter": self.max_iter, "N": self.N},
            "stretching": self.stretching, "integer_modes": self.integer_modes, "workers": self.workers,
            "greens": self.greens, "thresholds": self.thresholds,
        }

    def threshold(self, key):
        return self.thresholds.get(key, DEFAULT_THRESHOLDS[key])

    def build_domain(self) -> prf.Domain:
        try:
            return prf.Domain.make(self.domain["kind"], self.domain.get("p"), self.domain.get("q"))
        except (prf.ProfileError, TypeError, ValueError) as exc:
            raise ConfigError(f"config key 'domain': {exc}") from None

    def build_profile(self) -> prf.VelocityProfile:
        try:
            return prf.make_profile(self.profile["name"], self.profile.get("params"), self.build_domain())
        except (prf.ProfileError, KeyError, OSError) as exc:
            raise ConfigError(f"config key 'profile': {exc}") from None

    def resolve_M(self, profile) -> float:
        if self.M != "auto":
            return float(self.M)
        lo, hi = prf._m_window(profile, self.r0)[0]
        if hi <= lo:
            raise ConfigError("config key 'M': \"auto\" needs a nonempty growth window, found none")
        return 0.5 * (lo + hi)


def load_config(path, experiment: str | None = None) -> RunConfig:
    """Read and validate a JSON configuration file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return RunConfig.from_dict(data, experiment)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """Make an object JSON-serialisable (numpy scalars, complex, tuples)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    _atomic_write(Path(path), json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    _atomic_write(Path(path), buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return v


# ---------------------------------------------------------------------------
# scaling fit and sweep
# ---------------------------------------------------------------------------

def fit_scaling(rows) -> tuple[float, float]:
    """Ordinary least squares of ``log Re(lambda)`` on ``log eps``.

    Rows with ``Re(lambda) <= 0`` are skipped with a warning.

    Returns
    -------
    (exponent, stderr)

    Raises
    ------
    ScalingFitError
        Fewer than three usable rows.
    """
    pts = []
    for row in rows:
        if row.get("failed"):
            continue
        re = row["lambda_re"]
        if not re > 0:
            warnings.warn(f"row eps = {row['eps']:.3g} has Re(lambda) = {re:.3g} <= 0; excluded from the fit",
                          RuntimeWarning, stacklevel=2)
            continue
        pts.append((math.log(row["eps"]), math.log(re)))
    if len(pts) < 3:
        raise ScalingFitError(f"scaling fit needs at least 3 rows with Re(lambda) > 0, got {len(pts)}")
    x, y = np.array(pts).T
    xm = x - x.mean()
    sxx = float(xm @ xm)
    slope = float(xm @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xm
    dof = len(x) - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return slope, stderr


@dataclass
class SweepReport:
    """Per-eps eigenvalue rows, sorted by ``eps`` descending, plus the scaling fit."""

    rows: list
    mu_star_re: float
    exponent: float | None = None
    stderr: float | None = None
    stretching: bool = True
    warnings: list = field(default_factory=list)
    mode: dict | None = None

    @property
    def gaps(self) -> list:
        return [abs(r["scaled_re"] - self.mu_star_re) if not r.get("failed") else None for r in self.rows]

    def checks(self, cfg: RunConfig) -> dict:
        ok = [r for r in self.rows if not r.get("failed")]
        out = {"all_rows_converged": len(ok) == len(self.rows)}
        if self.stretching:
            gaps = [g for g in self.gaps if g is not None]
            lo, hi = cfg.threshold("exponent_range")
            out["re_lambda_positive"] = all(r["lambda_re"] > 0 for r in ok)
            out["gap_monotone"] = all(a > b for a, b in zip(gaps, gaps[1:]))
            out["final_gap"] = bool(gaps) and gaps[-1] <= cfg.threshold("final_gap")
            out["exponent_in_range"] = self.exponent is not None and lo <= self.exponent <= hi
        else:
            out["re_lambda_negative"] = all(r["lambda_re"] < 0 for r in ok)
        return out

    def to_dict(self) -> dict:
        return {"rows": self.rows, "mu_star_re": self.mu_star_re, "exponent": self.exponent,
                "stderr": self.stderr, "gaps": self.gaps, "stretching": self.stretching,
                "warnings": self.warnings}


def _mode_setup(cfg: RunConfig, profile, eps: float):
    """Gilbert data for one eps, with integer wavenumbers if requested."""
    M = cfg.resolve_M(profile)
    sel = None
    r0 = cfg.r0
    if cfg.integer_modes:
        sel = prf.select_integer_modes(profile, r0, M, eps)
        M, r0 = sel.M, sel.r0_adjusted
    return gil.gilbert_constants(profile, r0, M), sel


def _solve_row(cfg_dict: dict, eps: float, keep_mode: bool = False):
    """One eigen-solve; module-level so that worker processes can run it."""
    cfg = RunConfig.from_dict(cfg_dict)
    profile = cfg.build_profile()
    gd, sel = _mode_setup(cfg, profile, eps)
    grid = dsc.make_grid(profile.domain, eps, factor=cfg.grid_factor)
    row = {"eps": eps, "M": gd.M, "r0": gd.r0, "n": grid.n}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if sel is not None:
                res = dsc.full_mode(profile, gd, eps, grid, sel.m, sel.k, tol=cfg.tol)
                row.update({"m": sel.m, "k": sel.k, "residual_3cpt": res.residual_3cpt, "div_norm": res.div_norm})
            else:
                opr = dsc.assemble(profile, gd, eps, grid, stretching=cfg.stretching)
                res = dsc.eigensolve(opr, tol=cfg.tol, max_iter=cfg.max_iter)
    except (dsc.DiscreteError, ArithmeticError) as exc:
        row.update({"failed": True, "error": str(exc)})
        return row, None
    lam = res.lam
    fit = res.gaussian_fit or {}
    row.update({
        "lambda_re": lam.real, "lambda_im": lam.imag, "scaled_re": lam.real / eps ** (1 / 3),
        "scaled_im": lam.imag / eps ** (1 / 3), "residual": res.residual_2cpt, "iterations": res.iterations,
        "fit_center": fit.get("center"), "fit_curvature": fit.get("curvature"),
        "fit_amplitude_ratio": fit.get("amplitude_ratio"),
        "pred_curvature": eps ** (-2 / 3) * gd.c2_sqrt.real,
        "pred_amplitude_ratio": abs(gd.alpha) * eps ** (1 / 3),
        "mu_star_re": gd.mu_star.real, "warnings": list(res.warnings),
    })
    mode = {"r": res.r, "b": res.b} if keep_mode else None
    return row, mode


def _solve_rows(cfg: RunConfig, keep_modes: bool):
    cd = cfg.to_dict()
    if cfg.workers > 1 and len(cfg.eps_list) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futs = [pool.submit(_solve_row, cd, e, keep_modes) for e in cfg.eps_list]
            out = [f.result() for f in futs]
    else:
        out = [_solve_row(cd, e, keep_modes) for e in cfg.eps_list]
    return out


def run_sweep(cfg: RunConfig) -> SweepReport:
    """Eigenvalues over ``eps_list`` with the scaling-exponent fit.

    A failing row is marked ``failed`` and the sweep continues.
    """
    profile = cfg.build_profile()
    results = _solve_rows(cfg, keep_modes=True)
    rows = [r for r, _ in results]
    gd0, _ = _mode_setup(cfg, profile, cfg.eps_list[0])
    rep = SweepReport(rows, gd0.mu_star.real, stretching=cfg.stretching)
    if cfg.stretching:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                rep.exponent, rep.stderr = fit_scaling(rows)
            except ScalingFitError as exc:
                rep.warnings.append(str(exc))
        rep.warnings += [str(w.message) for w in caught]
    last = [(r, m) for r, m in results if m is not None]
    if last:
        row, mode = last[-1]
        rep.mode = _mode_section(row, mode)
    return rep


def _mode_section(row, mode) -> dict:
    b = np.asarray(mode["b"])
    return {"eps": row["eps"], "r0": row["r0"], "r": np.asarray(mode["r"]),
            "abs_b_theta": np.abs(b[1]), "abs_b_r": np.abs(b[0]),
            "pred_curvature": row["pred_curvature"], "fit_center": row.get("fit_center")}


def run_eigensolve(cfg: RunConfig, out_dir: Path | None = None) -> dict:
    """Eigenpairs at every ``eps`` with Gaussian-fit checks; modes are exported as CSV."""
    results = _solve_rows(cfg, keep_modes=True)
    rows = []
    checks = {}
    mode = None
    for row, m in results:
        rows.append(row)
        tag = f"{row['eps']:.0e}"
        if row.get("failed"):
            checks[f"converged_{tag}"] = False
            continue
        e13 = row["eps"] ** (1 / 3)
        checks[f"residual_{tag}"] = row["residual"] <= cfg.tol
        checks[f"center_{tag}"] = abs(row["fit_center"] - row["r0"]) <= cfg.threshold("center_layers") * e13
        checks[f"curvature_{tag}"] = (abs(row["fit_curvature"] / row["pred_curvature"] - 1)
                                      <= cfg.threshold("curvature_rel"))
        checks[f"amplitude_{tag}"] = (abs(row["fit_amplitude_ratio"] / row["pred_amplitude_ratio"] - 1)
                                      <= cfg.threshold("amplitude_rel"))
        if "residual_3cpt" in row:
            checks[f"residual_3cpt_{tag}"] = row["residual_3cpt"] <= 1e-6
            checks[f"divergence_{tag}"] = row["div_norm"] <= max(1e-2, 10 * row["residual"])
        if out_dir is not None:
            dsc.export_mode_csv(out_dir / f"mode_{tag}.csv", m["r"], m["b"])
        mode = _mode_section(row, m)
    return {"rows": rows, "checks": checks, "mode": mode}


# ---------------------------------------------------------------------------
# Green's and special-function suites
# ---------------------------------------------------------------------------

def run_greens(cfg: RunConfig) -> dict:
    """Contraction ratios over ``eps_list`` and, at ``check_eps``, the Neumann/Riesz/boundary checks.

    ``greens`` config keys: ``exponents`` (default the contractive set),
    ``n_functions`` (10), ``seed`` (2024), ``eta`` (0.05, offset of
    ``lambda`` from ``lambda_star`` in units of ``eps^{1/3}``),
    ``contour_radius`` (0.05), ``contour_points`` (16), ``check_eps``
    (1e-4 if listed, else the smallest eps), ``riesz`` and ``boundary``
    (booleans, default true).
    """
    g = cfg.greens
    ex = tuple(map(float, g.get("exponents", grn.CONTRACTIVE_EXPONENTS)))
    nfun = int(g.get("n_functions", 10))
    seed = int(g.get("seed", 2024))
    eta = complex(g.get("eta", 0.05))
    radius = float(g.get("contour_radius", 0.05))
    npts = int(g.get("contour_points", 16))
    check_eps = float(g.get("check_eps", cfg.threshold("rho_eps") if cfg.threshold("rho_eps") in cfg.eps_list
                             else cfg.eps_list[-1]))
    profile = cfg.build_profile()
    rows, out = [], {"exponents": list(ex)}
    contexts = {}
    for eps in cfg.eps_list:
        gd, _ = _mode_setup(cfg, profile, eps)
        ctx = grn.GreensContext(profile, gd, eps, ex, factor=cfg.grid_factor, N=cfg.N)
        lam = gd.lambda_star(eps) + eta * eps ** (1 / 3)
        fs = grn.random_test_functions(ctx, nfun, seed=seed)
        ratios, consts = [], []
        for f in fs:
            E, rho = ctx.error_apply(f, lam)
            ratios.append(rho)
            consts.append(ctx.x_norm(ctx.glued_apply(f, lam)) / (eps ** (-1 / 3) * ctx.y_norm(f)))
        rows.append({"eps": eps, "rho": max(ratios), "rho_mean": float(np.mean(ratios)),
                     "glued_constant": max(consts), "n_nodes": len(ctx.r)})
        contexts[eps] = ctx
    out["rows"] = rows
    rhos = [r["rho"] for r in rows]
    checks = {"rho_monotone": all(a > b for a, b in zip(rhos, rhos[1:]))}
    small = [r["rho"] for r in rows if r["eps"] <= cfg.threshold("rho_eps")]
    checks["rho_contractive"] = bool(small) and max(small) < cfg.threshold("rho_max")
    if check_eps in contexts:
        ctx = contexts[check_eps]
        gd = ctx.gd
        lam = gd.lambda_star(check_eps) + eta * check_eps ** (1 / 3)
        f = grn.random_test_functions(ctx, 1, seed=seed)[0]
        try:
            cmp_ = ctx.compare_direct(f, lam)
            out["neumann"] = cmp_
            checks["neumann_agrees"] = cmp_["agree"]
            if g.get("riesz", True):
                out["riesz"] = _riesz_checks(cfg, ctx, radius, npts)
                checks["riesz_norm"] = out["riesz"]["ratio_greens"] >= cfg.threshold("riesz_min")
                checks["riesz_idempotent"] = out["riesz"]["idempotence"] <= cfg.threshold("idempotence")
                checks["riesz_routes_agree"] = out["riesz"]["cosine"] >= 0.95
            if g.get("boundary", True) and ctx.q_index is not None and ctx.p_index is not None:
                out["boundary"] = _boundary_checks(cfg, ctx, f, lam)
                b = out["boundary"]
                e13, e23 = check_eps ** (1 / 3), check_eps ** (2 / 3)
                checks["boundary_bc"] = b["bc_residual"] <= cfg.threshold("bc_residual")
                checks["boundary_pattern"] = (
                    b["v11_p"] >= cfg.threshold("v_lower") * e13 and b["v11_q"] <= cfg.threshold("v_upper") * e23
                    and b["v21_q"] >= cfg.threshold("v_lower") * e13 and b["v21_p"] <= cfg.threshold("v_upper") * e23)
                checks["boundary_jinv"] = b["Jinv_norm"] * e13 <= cfg.threshold("jinv")
        except grn.NeumannDivergenceError as exc:
            out["neumann_error"] = {"message": str(exc), "rate": exc.rho, "lambda": exc.lam}
            checks["neumann_agrees"] = False
    out["rho_by_eps"] = {f"{r['eps']:.0e}": r["rho"] for r in rows}
    out["fitted_constants"] = {"glued_X_over_Y": max(r["glued_constant"] for r in rows)}
    out["checks"] = checks
    out["pass"] = all(checks.values())
    return out


def _cosine(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _riesz_checks(cfg, ctx, radius, npts) -> dict:
    eps, gd = ctx.eps, ctx.gd
    fstar = ctx.ansatz()
    Pf = ctx.riesz_project(fstar, radius=radius, n_points=npts, tol=1e-9)
    PPf = ctx.riesz_project(Pf, radius=radius, n_points=npts, tol=1e-9)
    profile = ctx.profile
    grid = dsc.make_grid(profile.domain, eps, factor=cfg.grid_factor)
    opr = dsc.assemble(profile, gd, eps, grid)
    _, fb = gil.ansatz_profile(gd, eps, grid.r)
    contour = (gd.lambda_star(eps), radius * eps ** (1 / 3), npts)
    Pd = dsc.riesz_project_discrete(fb, opr, contour)
    lo, hi = max(grid.r[0], ctx.r[0]), min(grid.r[-1], ctx.r[-1])
    rr = np.linspace(lo, hi, 4001)
    Pg_b = ctx.to_b(Pf)

    def interp(r, b):
        return np.concatenate([np.interp(rr, r, c.real) + 1j * np.interp(rr, r, c.imag) for c in b[:2]])

    return {
        "ratio_greens": ctx.x_norm(Pf) / ctx.x_norm(fstar),
        "idempotence": ctx.x_norm(PPf - Pf) / ctx.x_norm(Pf),
        "ratio_discrete": float(np.max(np.abs(Pd)) / np.max(np.abs(fb))),
        "cosine": _cosine(interp(grid.r, Pd), interp(ctx.r, Pg_b)),
    }


def _boundary_checks(cfg, ctx, f, lam) -> dict:
    x = ctx.neumann_resolvent(f, lam).x
    br = ctx.boundary_correct(ctx.to_b(x), lam)
    out = dict(br.diagnostics)
    out.update({"bc_residual": br.bc_residual, "cond": br.cond,
                "coefficients": [abs(c) for c in br.coefficients]})
    return out


def specfun_suite(seed: int = 7) -> dict:
    """Identity checks: Bessel and Weber Wronskians, Airy ODE residual, ``Ai(0)``, Gamma reflection."""
    rng = np.random.default_rng(seed)
    out, checks = {}, {}
    # Bessel Wronskian I K' - I' K = -1/w on the pi/4 ray, w = nu z
    worst = 0.0
    ray = np.exp(1j * np.pi / 4)
    for nu in (1.0, 5.0, 20.0, 50.0):
        for t in np.linspace(0.2, 20.0, 5):
            z = t * ray
            I, K = sf.bessel_IK_uniform(nu, z)
            W = (I.value * K.deriv - I.deriv * K.value) * np.exp(I.log_scale + K.log_scale)
            worst = max(worst, abs(W * nu * z + 1))
    out["bessel_wronskian"] = worst
    checks["bessel_wronskian"] = worst <= 1e-8
    # parabolic-cylinder Wronskian W[D_nu(z), D_nu(-z)]
    worst = 0.0
    for nu in (-2.5 + 0.3j, -0.5 - 0.2j, 0.4 + 0.1j, 1.3 - 0.4j, 2.7 + 0.5j):
        ref = sf.pcfd_wronskian(nu)
        for z in rng.uniform(-3, 3, 4) + 1j * rng.uniform(-3, 3, 4):
            a = sf.parabolic_cylinder_D(nu, z)
            b = sf.parabolic_cylinder_D(nu, -z)
            W = (-a.value * b.deriv - a.deriv * b.value) * np.exp(a.log_scale + b.log_scale)
            worst = max(worst, abs(W / ref - 1))
    out["pcfd_wronskian"] = worst
    checks["pcfd_wronskian"] = worst <= 1e-8
    # Airy ODE residual: central difference of Ai' along the ray against z Ai
    worst = 0.0
    hstep = 1e-5
    for k in range(100):
        ang = sf.AIRY_RAYS[k % 4]
        z = rng.uniform(0.2, 6.0) * np.exp(1j * ang)
        dz = hstep * np.exp(1j * ang)
        fm, f0, fp = (sf.airy_Ai(z + s * dz) for s in (-1, 0, 1))
        d2 = (fp.deriv * np.exp(fp.log_scale - f0.log_scale)
              - fm.deriv * np.exp(fm.log_scale - f0.log_scale)) / (2 * dz)
        worst = max(worst, abs(d2 - z * f0.value) / abs(z * f0.value))
    out["airy_ode"] = worst
    checks["airy_ode"] = worst <= 1e-5
    a0 = sf.airy_Ai(0.0).full
    out["airy_0"] = a0.real
    checks["airy_0"] = abs(a0 - 0.3550280538878172) <= 1e-8
    z = 0.3 + 0.2j
    refl = sf.gamma_fn(z).full * sf.gamma_fn(1 - z).full * np.sin(np.pi * z) / np.pi
    out["gamma_reflection"] = abs(refl - 1)
    checks["gamma_reflection"] = abs(refl - 1) <= 1e-10
    out["checks"] = checks
    out["pass"] = all(checks.values())
    return out


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

_PLOT_HEADER = '''"""{title}"""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

HERE = Path(__file__).resolve().parent
plt.rcParams.update({{"font.size": 9, "axes.labelsize": 10, "legend.fontsize": 8,
                     "figure.figsize": (6.0, 3.6), "lines.linewidth": 1.2}})
'''

_GROWTH = '''
data = np.genfromtxt(HERE / "{data}", delimiter=",", names=True)
fig, ax = plt.subplots()
ax.semilogx(data["eps"], data["scaled_re"], "o-", label=r"Re$\\,\\lambda/\\varepsilon^{{1/3}}$")
ax.axhline({mu}, color="k", ls="--", label=r"Re$\\,\\mu_\\star$")
ax.set_xlabel(r"$\\varepsilon$")
ax.set_ylabel(r"Re$\\,\\lambda/\\varepsilon^{{1/3}}$")
ax.invert_xaxis()
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "{png}", dpi=150, metadata={{"Software": None}})
'''

_MODE = '''
data = np.genfromtxt(HERE / "{data}", delimiter=",", names=True)
x = data["r"] - {r0!r}
fig, ax = plt.subplots()
ax.plot(data["r"], data["abs_b_theta"], label=r"$|b_\\theta|$")
ax.plot(data["r"], np.exp(-0.5 * {curv!r} * x**2), "k--", label="Gaussian ansatz")
ax.plot(data["r"], data["abs_b_r"], label=r"$|b_r|$")
ax.set_xlim({r0!r} - 8 * {layer!r}, {r0!r} + 8 * {layer!r})
ax.set_xlabel("$r$")
ax.set_title(r"$\\varepsilon = {eps:.0e}$")
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "{png}", dpi=150, metadata={{"Software": None}})
'''

_CONTRACTION = '''
data = np.genfromtxt(HERE / "{data}", delimiter=",", names=True)
fig, ax = plt.subplots()
ax.loglog(np.atleast_1d(data["eps"]), np.atleast_1d(data["rho"]), "s-", label=r"$\\rho(\\varepsilon)$")
ax.axhline(0.5, color="k", ls=":", label="Neumann threshold")
ax.set_xlabel(r"$\\varepsilon$")
ax.set_ylabel(r"$\\|E f\\|_Y / \\|f\\|_Y$")
ax.invert_xaxis()
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "{png}", dpi=150, metadata={{"Software": None}})
'''

_EMPTY = '''
fig, ax = plt.subplots()
ax.set_axis_off()
ax.text(0.5, 0.5, "{msg}", ha="center", va="center")
fig.savefig(HERE / "{png}", dpi=150, metadata={{"Software": None}})
'''


def emit_plots(report: dict, out_dir) -> list:
    """Write three self-contained plot scripts and the CSV files they read.

    ``report`` may hold ``sweep`` (rows and ``mu_star_re``), ``mode``
    (``r``, ``abs_b_theta``, ``abs_b_r``, ``r0``, ``eps``, ``pred_curvature``)
    and ``greens`` (rows with ``eps`` and ``rho``).  A missing section gives
    a script whose figure states that no data was produced.

    Returns
    -------
    list of Path
        ``plot_growth.py``, ``plot_mode.py``, ``plot_contraction.py``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scripts = []

    sweep = report.get("sweep")
    body = _PLOT_HEADER.format(title="Scaled growth rate against eps.")
    if sweep and sweep.get("rows"):
        rows = [r for r in sweep["rows"] if not r.get("failed")]
        write_csv(out / "growth.csv", ["eps", "lambda_re", "scaled_re"],
                  [[r["eps"], r["lambda_re"], r["scaled_re"]] for r in rows])
        body += _GROWTH.format(data="growth.csv", mu=repr(float(sweep["mu_star_re"])), png="growth.png")
    else:
        body += _EMPTY.format(msg="no sweep data", png="growth.png")
    scripts.append(out / "plot_growth.py")
    _atomic_write(scripts[-1], body)

    mode = report.get("mode")
    body = _PLOT_HEADER.format(title="Eigenmode profile with the Gaussian ansatz.")
    if mode:
        write_csv(out / "mode.csv", ["r", "abs_b_theta", "abs_b_r"],
                  zip(np.asarray(mode["r"]).tolist(), np.asarray(mode["abs_b_theta"]).tolist(),
                      np.asarray(mode["abs_b_r"]).tolist()))
        body += _MODE.format(data="mode.csv", r0=float(mode["r0"]), curv=float(mode["pred_curvature"]),
                             layer=float(mode["eps"]) ** (1 / 3), eps=float(mode["eps"]), png="mode.png")
    else:
        body += _EMPTY.format(msg="no eigenmode data", png="mode.png")
    scripts.append(out / "plot_mode.py")
    _atomic_write(scripts[-1], body)

    g = report.get("greens")
    body = _PLOT_HEADER.format(title="Green's contraction ratio against eps.")
    if g and g.get("rows"):
        write_csv(out / "contraction.csv", ["eps", "rho"], [[r["eps"], r["rho"]] for r in g["rows"]])
        body += _CONTRACTION.format(data="contraction.csv", png="contraction.png")
    else:
        body += _EMPTY.format(msg="no contraction data", png="contraction.png")
    scripts.append(out / "plot_contraction.py")
    _atomic_write(scripts[-1], body)
    return scripts


def render_plots(scripts) -> list:
    """Execute the emitted scripts; returns the PNG paths."""
    pngs = []
    import matplotlib.pyplot as plt

    for s in scripts:
        runpy.run_path(str(s), run_name="__main__")
        plt.close("all")
        pngs.append(Path(s).with_name(Path(s).stem.replace("plot_", "") + ".png"))
    return pngs


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _experiment(cfg: RunConfig, out: Path | None) -> tuple[dict, dict]:
    """Run one experiment; returns ``(report, plot_sections)``."""
    exp = cfg.experiment
    if exp == "audit":
        profile = cfg.build_profile()
        M = None if cfg.M == "auto" else float(cfg.M)
        rep = prf.audit(profile, cfg.r0, M).to_dict()
        rep["checks"] = {k: rep[k] for k in ("h0_ok", "h1_ok", "h2_ok", "h3_ok", "gilbert_ok")}
        return rep, {}
    if exp == "growthrate":
        profile = cfg.build_profile()
        M = cfg.resolve_M(profile)
        gd = gil.gilbert_constants(profile, cfg.r0, M)
        mu, real = gil.growth_rate(gd)
        rep = gd.to_dict(cfg.eps_list[-1]) if cfg.eps_list else gd.to_dict()
        rep["mu_star_re_real_formula"] = real
        rep["lambda_star_by_eps"] = [{"eps": e, "re": gd.lambda_star(e).real, "im": gd.lambda_star(e).imag}
                                     for e in cfg.eps_list]
        rep["checks"] = {"positive_growth": real > 0}
        return rep, {}
    if exp == "sweep":
        sw = run_sweep(cfg)
        rep = sw.to_dict()
        rep["checks"] = sw.checks(cfg)
        if out is not None:
            cols = ["eps", "M", "r0", "lambda_re", "lambda_im", "scaled_re", "residual", "fit_curvature",
                    "fit_amplitude_ratio"]
            write_csv(out / "sweep.csv", cols + ["failed"],
                      [[r.get(c) for c in cols] + [bool(r.get("failed"))] for r in sw.rows])
        return rep, {"sweep": rep, "mode": sw.mode}
    if exp == "eigensolve":
        res = run_eigensolve(cfg, out)
        mode = res.pop("mode")
        return res, {"mode": mode}
    if exp == "greens-verify":
        rep = run_greens(cfg)
        return rep, {"greens": rep}
    if exp == "specfun-verify":
        return specfun_suite(), {}
    raise ConfigError(f"unknown experiment {exp!r}")


def run(cfg: RunConfig, out_dir=None, *, plots: bool = True) -> int:
    """Run ``cfg`` and write ``report.json`` (plus CSV and plots) to ``out_dir``.

    Returns the process exit code.
    """
    out = Path(out_dir or cfg.out or "dynamo_out")
    out.mkdir(parents=True, exist_ok=True)
    try:
        report, sections = _experiment(cfg, out)
    except ConfigError:
        raise
    except (prf.ProfileError, gil.GilbertError, gil.BranchError, grn.GreensConfigError,
            grn.DecompositionError, grn.GreensDomainError, grn.WronskianPoleError) as exc:
        write_json(out / "report.json", {"config": cfg.to_dict(), "error": str(exc)})
        log.error("%s", exc)
        return EXIT_CONFIG if isinstance(exc, (prf.ProfileError, grn.GreensConfigError)) else EXIT_NUMERICAL
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        write_json(out / "report.json", {"config": cfg.to_dict(), "error": str(exc)})
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    checks = report.get("checks", {})
    report["pass"] = all(checks.values())
    report["config"] = cfg.to_dict()
    write_json(out / "report.json", report)
    if plots and any(v for v in sections.values()):
        scripts = emit_plots(sections, out)
        render_plots(scripts)
    for name, ok in checks.items():
        log.info("%-28s %s", name, "pass" if ok else "FAIL")
    return EXIT_OK if report["pass"] else EXIT_THRESHOLD


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dynamo-spectra", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--out", default=None, help="output directory (default: config 'out' or ./dynamo_out)")
    parser.add_argument("--no-plots", action="store_true", help="skip plot scripts and figures")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.subcommand)
        code = run(cfg, args.out, plots=not args.no_plots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.subcommand}: " + {EXIT_OK: "pass", EXIT_NUMERICAL: "numerical failure",
                                     EXIT_THRESHOLD: "threshold failure", EXIT_CONFIG: "config error"}[code])
    return code


if __name__ == "__main__":
    sys.exit(main())
