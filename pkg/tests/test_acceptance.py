"""End-to-end acceptance criteria on the simplified profile.

Each test records one ``criterion N: PASS/FAIL ...`` line; the lines are
printed in the terminal summary (see ``conftest.py``) and, with ``-s``, as
the tests run.
"""

import cmath
import math

import numpy as np
import pytest
from scipy.special import gamma as gamma_fn

from dynamo_spectra import cli
from dynamo_spectra import discrete as dsc
from dynamo_spectra import gilbert as gil
from dynamo_spectra import greens as grn
from dynamo_spectra import profiles as prf
from dynamo_spectra import specfun as sf

MU_STAR_RE = 0.145614
SWEEP_EPS = [1e-3, 1e-4, 1e-5, 1e-6]
RESULTS = {}


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def profile():
    return prf.simplified(prf.Domain("annulus", 0.25, 2.5))


@pytest.fixture(scope="module")
def gd(profile):
    return gil.gilbert_constants(profile, 1.0, 0.1)


def config(experiment, **over):
    d = {"profile": {"name": "simplified"}, "domain": {"kind": "annulus", "p": 0.25, "q": 2.5},
         "r0": 1.0, "M": 0.1}
    d.update(over)
    return cli.RunConfig.from_dict(d, experiment)


# ---------------------------------------------------------------- 1. growth-rate law

def test_criterion_1_growth_rate_law(gd):
    assert gd.mu_star.real == pytest.approx(MU_STAR_RE, abs=1e-6)
    rep = cli.run_sweep(config("sweep", eps_list=SWEEP_EPS, workers=4))
    rows = rep.rows
    positive = all(not r.get("failed") and r["lambda_re"] > 0 for r in rows)
    gaps = [abs(r["lambda_re"] / r["eps"] ** (1 / 3) - MU_STAR_RE) for r in rows]
    monotone = all(a > b for a, b in zip(gaps, gaps[1:]))
    final = gaps[-1] <= 0.05
    in_range = rep.exponent is not None and 0.30 <= rep.exponent <= 0.37
    ok = positive and monotone and final and in_range
    record(1, ok, f"Re(lambda)>0={positive} gaps={['%.2e' % g for g in gaps]} monotone={monotone} "
                  f"exponent={rep.exponent:.4f}")
    assert ok


# ---------------------------------------------------------------- 2. eigenmode asymptotics

def test_criterion_2_eigenmode_asymptotics(profile, gd):
    eps = 1e-5
    e13 = eps ** (1 / 3)
    res = dsc.eigensolve(dsc.assemble(profile, gd, eps, dsc.make_grid(profile.domain, eps)))
    fit = res.gaussian_fit
    curv_pred = eps ** (-2 / 3) * 0.158114
    amp_pred = 0.447214 * e13
    curv_err = abs(fit["curvature"] / curv_pred - 1)
    amp_err = abs(fit["amplitude_ratio"] / amp_pred - 1)
    center_off = abs(fit["center"] - 1.0) / e13
    ok = curv_err <= 0.20 and center_off <= 2 and amp_err <= 0.30
    record(2, ok, f"curvature err {curv_err:.3f} (<=0.20), center {center_off:.3f} layers (<=2), "
                  f"amplitude err {amp_err:.3f} (<=0.30)")
    assert ok


# ---------------------------------------------------------------- 3. frozen eigenpair oracle

def test_criterion_3_frozen_eigenpair(profile, gd):
    eps = 1e-4
    grid = dsc.make_grid(profile.domain, eps, factor=40)
    assert grid.h <= eps ** (1 / 3) / 40 * (1 + 1e-12)
    L2 = dsc.assemble(profile, gd, eps, grid, "L2_frozen")
    lam = gd.lambda_star(eps)
    V, _ = gil.ansatz_profile(gd, eps, grid.r)
    x = L2.pack(V)
    resid = np.linalg.norm(L2.matvec(x) - lam * x) / np.linalg.norm(lam * x)
    got = dsc.eigensolve(L2).lam
    rel = abs(got - lam) / abs(lam)
    ok = resid <= 1e-3 and rel <= 1e-3
    record(3, ok, f"frozen residual {resid:.2e} (<=1e-3), eigenvalue rel err {rel:.2e} (<=1e-3)")
    assert ok


# ---------------------------------------------------------------- 4. special-function identities

def test_criterion_4_special_functions():
    ray = cmath.exp(1j * math.pi / 4)
    # Bessel: I K' - I' K = -1/z; derivatives are taken with respect to w = nu z
    bessel = 0.0
    for nu, t in zip(np.repeat([2.0, 10.0, 40.0, 100.0], 5), np.tile(np.linspace(0.1, 10.0, 5), 4)):
        z = t * ray
        I, K = sf.bessel_IK_uniform(nu, z)
        w = (I.value * K.deriv - I.deriv * K.value) * cmath.exp(I.log_scale + K.log_scale) * nu
        bessel = max(bessel, abs(w * z + 1))
    # Weber: D_nu(z) D_nu'(-z) ... Wronskian of D_nu(z), D_nu(-z) is sqrt(2 pi)/Gamma(-nu)
    pcf = 0.0
    for k, nu in enumerate([-0.5 + 0.3j, 0.25 - 0.1j, 1.5 + 0.2j, -1.7 - 0.4j]):
        for t in np.linspace(0.0, 3.0, 5):
            z = t * cmath.exp(1j * math.pi * (k - 1.5) / 8)
            a = sf.parabolic_cylinder_D(nu, z)
            b = sf.parabolic_cylinder_D(nu, -z)
            W = (-a.value * b.deriv - a.deriv * b.value) * cmath.exp(a.log_scale + b.log_scale)
            ref = math.sqrt(2 * math.pi) / gamma_fn(-nu)
            pcf = max(pcf, abs(W / ref - 1))
    # Airy ODE residual along each evaluation ray
    airy = 0.0
    step = 1e-4
    for theta in sf.AIRY_RAYS:
        e = cmath.exp(1j * theta)
        for t in np.linspace(0.2, 6.0, 100 // len(sf.AIRY_RAYS) + 1):
            z = t * e
            ap = sf.airy_Ai_prime(z + step * e).full
            am = sf.airy_Ai_prime(z - step * e).full
            d2 = (ap - am) / (2 * step * e)
            a = sf.airy_Ai(z).full
            airy = max(airy, abs(d2 - z * a) / max(abs(z * a), 1e-300))
    ai0 = abs(sf.airy_Ai(0j).full - 0.3550280539)
    ok = bessel <= 1e-8 and pcf <= 1e-8 and airy <= 1e-5 and ai0 <= 1e-8
    record(4, ok, f"Bessel W {bessel:.1e}, Weber W {pcf:.1e}, Airy ODE {airy:.1e}, Ai(0) {ai0:.1e}")
    assert ok


# ---------------------------------------------------------------- 5-7. Green's route

@pytest.fixture(scope="module")
def greens_contexts(profile, gd):
    return {eps: grn.GreensContext(profile, gd, eps, grn.CONTRACTIVE_EXPONENTS) for eps in (1e-3, 1e-4, 1e-5)}


def lam_test(gd, eps):
    return gd.lambda_star(eps) + 0.05 * eps ** (1 / 3)


def test_criterion_5_greens_contraction(gd, greens_contexts):
    rho = {}
    for eps, ctx in greens_contexts.items():
        lam = lam_test(gd, eps)
        rho[eps] = max(ctx.error_apply(f, lam)[1] for f in grn.random_test_functions(ctx, 10, seed=2024))
    ordered = rho[1e-3] > rho[1e-4] > rho[1e-5]
    ctx = greens_contexts[1e-4]
    cmp_ = ctx.compare_direct(grn.random_test_functions(ctx, 1, seed=2024)[0], lam_test(gd, 1e-4))
    ok = ordered and rho[1e-4] < 0.5 and cmp_["agree"]
    record(5, ok, f"rho = {[f'{rho[e]:.3g}' for e in sorted(rho, reverse=True)]}, "
                  f"Neumann certified {cmp_['certified']:.1e}, diff {cmp_['diff_residual']:.1e}")
    assert ok


def test_criterion_6_riesz_projection(profile, gd, greens_contexts):
    eps = 1e-4
    ctx = greens_contexts[eps]
    fstar = ctx.ansatz()
    Pf = ctx.riesz_project(fstar, tol=1e-9)
    PPf = ctx.riesz_project(Pf, tol=1e-9)
    ratio_g = ctx.x_norm(Pf) / ctx.x_norm(fstar)
    idem_g = ctx.x_norm(PPf - Pf) / ctx.x_norm(Pf)
    grid = dsc.make_grid(profile.domain, eps)
    opr = dsc.assemble(profile, gd, eps, grid)
    _, fb = gil.ansatz_profile(gd, eps, grid.r)
    contour = (gd.lambda_star(eps), 0.05 * eps ** (1 / 3), 16)
    Pd = dsc.riesz_project_discrete(fb, opr, contour)
    PPd = dsc.riesz_project_discrete(Pd, opr, contour)
    ratio_d = np.abs(Pd).max() / np.abs(fb).max()
    idem_d = np.abs(PPd - Pd).max() / np.abs(Pd).max()
    rr = np.linspace(max(grid.r[0], ctx.r[0]), min(grid.r[-1], ctx.r[-1]), 4001)

    def on(r, b):
        return np.concatenate([np.interp(rr, r, c.real) + 1j * np.interp(rr, r, c.imag) for c in b[:2]])

    a, b = on(grid.r, Pd), on(ctx.r, ctx.to_b(Pf))
    cos = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    ok = ratio_g >= 0.5 and ratio_d >= 0.5 and idem_g <= 0.05 and idem_d <= 0.05 and cos >= 0.95
    record(6, ok, f"||Pf||/||f|| greens {ratio_g:.3f} discrete {ratio_d:.3f}, idempotence "
                  f"{idem_g:.1e}/{idem_d:.1e}, cosine {cos:.6f}")
    assert ok


def test_criterion_7_boundary_machinery(gd, greens_contexts):
    eps = 1e-4
    ctx = greens_contexts[eps]
    lam = lam_test(gd, eps)
    vs = ctx.homogeneous_solutions(lam)
    p, q = ctx.p_index, ctx.q_index
    e13, e23 = eps ** (1 / 3), eps ** (2 / 3)
    # (solution, component, end where it is order one, opposite end)
    pattern = [(0, 0, p, q), (1, 0, q, p), (2, 1, p, q), (3, 1, q, p)]
    c_fit = min(abs(vs[i][c, big]) / e13 for i, c, big, _ in pattern)
    C_fit = max(abs(vs[i][c, small]) / e23 for i, c, _, small in pattern)
    f = grn.random_test_functions(ctx, 1, seed=2024)[0]
    x = ctx.neumann_resolvent(f, lam).x
    br = ctx.boundary_correct(ctx.to_b(x), lam, homogeneous=vs)
    jinv = br.diagnostics["Jinv_norm"] * e13
    ok = c_fit >= 0.1 and C_fit <= 10 and br.bc_residual <= 1e-8 and jinv <= 10
    record(7, ok, f"fitted c {c_fit:.3g} (>=0.1), C {C_fit:.2e} (<=10), BC residual {br.bc_residual:.1e}, "
                  f"||J^-1|| eps^1/3 {jinv:.3f}")
    assert ok


# ---------------------------------------------------------------- 8. full three-component mode

def test_criterion_8_full_mode(profile):
    eps = 1e-5
    sel = prf.select_integer_modes(profile, 1.0, 0.1, eps)
    gdi = gil.gilbert_constants(profile, sel.r0_adjusted, sel.M)
    grid = dsc.make_grid(profile.domain, eps)
    res = dsc.full_mode(profile, gdi, eps, grid, sel.m, sel.k)
    limit = max(1e-2, 10 * res.residual_2cpt)
    ok = res.residual_3cpt <= 1e-6 and res.div_norm <= limit
    record(8, ok, f"(m, k) = ({sel.m}, {sel.k}), 3-component residual {res.residual_3cpt:.1e} (<=1e-6), "
                  f"divergence {res.div_norm:.1e} (<={limit:.0e})")
    assert ok


# ---------------------------------------------------------------- 9. stability control

def test_criterion_9_no_stretching_control():
    rep = cli.run_sweep(config("sweep", eps_list=SWEEP_EPS, stretching=False, workers=4))
    re = [r.get("lambda_re") for r in rep.rows]
    ok = all(not r.get("failed") for r in rep.rows) and all(v < 0 for v in re)
    record(9, ok, f"Re(lambda) = {['%.3g' % v for v in re]}")
    assert ok
