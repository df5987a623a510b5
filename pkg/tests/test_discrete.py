import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynamo_spectra import discrete as dsc
from dynamo_spectra import gilbert as gil
from dynamo_spectra import profiles as prf

EPS = 1e-4


@pytest.fixture(scope="module")
def profile():
    return prf.simplified(prf.Domain("annulus", 0.25, 2.5))


@pytest.fixture(scope="module")
def gd(profile):
    return gil.gilbert_constants(profile, 1.0, 0.1)


@pytest.fixture(scope="module")
def grid(profile):
    return dsc.make_grid(profile.domain, EPS)


@pytest.fixture(scope="module")
def opr(profile, gd, grid):
    return dsc.assemble(profile, gd, EPS, grid)


@pytest.fixture(scope="module")
def eig(opr):
    return dsc.eigensolve(opr)


def _rng_vec(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def _thomas(lo, mid, up, rhs):
    """Tridiagonal solve without pivoting: ``lo[i] x[i-1] + mid[i] x[i] + up[i] x[i+1] = rhs[i]``."""
    n = len(mid)
    c = np.zeros(n, dtype=complex)
    d = np.zeros(n, dtype=complex)
    c[0] = up[0] / mid[0]
    d[0] = rhs[0] / mid[0]
    for i in range(1, n):
        den = mid[i] - lo[i] * c[i - 1]
        c[i] = up[i] / den if i < n - 1 else 0
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / den
    x = np.zeros(n, dtype=complex)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


# ---------------------------------------------------------------- grids

def test_grid_resolves_layer(grid):
    assert grid.h <= EPS ** (1 / 3) / 40 * (1 + 1e-12)
    assert grid.r_left == pytest.approx(0.25) and grid.r_right == pytest.approx(2.5)
    np.testing.assert_allclose(np.diff(grid.r), grid.h, rtol=1e-10)


def test_grid_factor_below_twenty_rejected(profile):
    with pytest.raises(dsc.ResolutionError):
        dsc.make_grid(profile.domain, EPS, factor=10)


def test_coarse_grid_rejected_by_assembly(profile, gd):
    coarse = dsc.grid_from_nodes(np.linspace(0.25, 2.5, 20))
    with pytest.raises(dsc.ResolutionError):
        dsc.assemble(profile, gd, EPS, coarse)


def test_disk_grid_is_staggered():
    g = dsc.make_grid(prf.Domain("disk", 0.0, 2.5), 1e-3)
    assert g.r[0] == pytest.approx(g.h / 2)
    assert g.r_left == pytest.approx(-g.h / 2)
    assert g.left_bc == "dirichlet" and g.right_bc == "conducting"


def test_exterior_grid_is_truncated_with_dirichlet():
    g = dsc.make_grid(prf.Domain("exterior", 0.25), 1e-3, truncate=3.0)
    assert g.r_right == pytest.approx(3.0)
    assert g.right_bc == "dirichlet"


# ---------------------------------------------------------------- assembly

def test_bandwidth_at_most_five(opr, profile, gd, grid):
    assert opr.bandwidth <= 5
    assert dsc.assemble(profile, gd, EPS, grid, "z_equation").bandwidth <= 5
    assert dsc.assemble(profile, gd, EPS, grid, "L2_frozen").bandwidth <= 5


def test_matrix_rows_match_pointwise_stencil(opr, profile, gd, grid):
    u = np.vstack([_rng_vec(grid.n, 1), _rng_vec(grid.n, 2)])
    y = opr.unpack(opr.matvec(opr.pack(u)))
    left, right = opr.boundary_values(u)
    full = np.concatenate([left[:, None], u, right[:, None]], axis=1)
    ref = dsc.stencil_apply(profile, gd, EPS, grid.r_full, full)[:, 1:-1]
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_dense_and_banded_products_agree(opr):
    x = _rng_vec(opr.size, 3)
    np.testing.assert_allclose(opr.to_dense() @ x, opr.matvec(x), rtol=1e-12, atol=1e-9)


def test_coefficients_of_simplified_profile(opr, gd, grid):
    r = grid.r
    T = (r - 1) ** 2 / 2
    e13 = EPS ** (1 / 3)
    A = EPS / r**2 + e13 * 0.01 * (1 / r**2 + gd.rho**2) + 1j * 0.1 * T / e13
    np.testing.assert_allclose(opr.coeffs["A"], A, rtol=1e-12)
    np.testing.assert_allclose(opr.coeffs["B"], 2j * 0.1 * EPS ** (2 / 3) / r**2, rtol=1e-14)
    np.testing.assert_allclose(opr.coeffs["S"], -r, rtol=1e-14)


def test_conducting_boundary_values(opr, grid):
    u = np.vstack([_rng_vec(grid.n, 4), _rng_vec(grid.n, 5)])
    left, right = opr.boundary_values(u)
    assert left[0] == 0 and right[0] == 0
    r = grid.r_full
    # one-sided second-order (r b_theta)' = 0
    assert r[0] * left[1] == pytest.approx((4 * r[1] * u[1, 0] - r[2] * u[1, 1]) / 3)
    assert r[-1] * right[1] == pytest.approx((4 * r[-2] * u[1, -1] - r[-3] * u[1, -2]) / 3)


@given(st.integers(0, 2**31), st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
@settings(max_examples=25, deadline=None)
def test_matvec_linearity(opr, seed, c):
    x, y = _rng_vec(opr.size, seed), _rng_vec(opr.size, seed + 1)
    lhs = opr.matvec(x + c * y)
    rhs = opr.matvec(x) + c * opr.matvec(y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + abs(c)) * np.abs(lhs).max())


# ---------------------------------------------------------------- frozen operator

def test_frozen_operator_residual_of_ansatz(profile, gd, grid):
    L2 = dsc.assemble(profile, gd, EPS, grid, "L2_frozen")
    V, _ = gil.ansatz_profile(gd, EPS, grid.r)
    x = L2.pack(V)
    lam = gd.lambda_star(EPS)
    res = np.linalg.norm(L2.matvec(x) - lam * x) / (abs(lam) * np.linalg.norm(x))
    assert res <= 1e-3


def test_frozen_eigensolve_recovers_lambda_star(profile, gd, grid):
    L2 = dsc.assemble(profile, gd, EPS, grid, "L2_frozen")
    res = dsc.eigensolve(L2)
    lam = gd.lambda_star(EPS)
    assert abs(res.lam - lam) / abs(lam) <= 1e-3
    V, _ = gil.ansatz_profile(gd, EPS, grid.r)
    cos = abs(np.vdot(V[0], res.b[0])) / (np.linalg.norm(V[0]) * np.linalg.norm(res.b[0]))
    assert cos >= 0.999


# ---------------------------------------------------------------- linear solves

def test_identity_solve(grid, gd):
    eye = dsc.DiscreteOperator(grid, "z_equation", 1, {0: np.ones(grid.n, dtype=complex)}, "b", EPS, gd)
    f = _rng_vec(grid.n, 6)
    np.testing.assert_allclose(dsc.solve_banded(eye, f), f, rtol=1e-15)


def test_manufactured_solve(opr):
    x = _rng_vec(opr.size, 7)
    lam = 0.01 + 0.02j
    rhs = opr.matvec(x) - lam * x
    got = dsc.solve_banded(opr, rhs, lam)
    assert np.linalg.norm(got - x) / np.linalg.norm(x) <= 1e-10


def test_component_layout_round_trip(opr, grid):
    u = np.vstack([_rng_vec(grid.n, 8), _rng_vec(grid.n, 9)])
    rhs = opr.unpack(opr.matvec(opr.pack(u)))
    got = dsc.solve_banded(opr, rhs)
    assert got.shape == (2, grid.n)
    np.testing.assert_allclose(got, u, rtol=1e-8, atol=1e-8)


def test_tridiagonal_solve_matches_thomas(profile, gd, grid):
    oz = dsc.assemble(profile, gd, EPS, grid, "z_equation")
    lam = 0.004 + 0.003j
    n = grid.n
    lo = np.concatenate([[0], oz.diags[-1][1:]])
    up = np.concatenate([oz.diags[1][:-1], [0]])
    mid = oz.diags[0] - lam
    f = _rng_vec(n, 10)
    ref = _thomas(lo, mid, up, f)
    got = dsc.solve_banded(oz, f, lam)
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 1e-10


def test_shift_collision_detected(gd, grid):
    diag = np.ones(grid.n, dtype=complex)
    diag[5] = 0.25
    opr = dsc.DiscreteOperator(grid, "z_equation", 1, {0: diag}, "b", EPS, gd)
    with pytest.raises(dsc.ShiftCollisionError):
        dsc.solve_banded(opr, np.ones(grid.n), 0.25)


# ---------------------------------------------------------------- eigenproblem

def test_eigenvalue_near_lambda_star(eig, gd):
    scaled = eig.lam / EPS ** (1 / 3)
    assert eig.residual_2cpt <= 1e-8
    assert scaled.real > 0
    assert abs(scaled - gd.mu_star) / abs(gd.mu_star) <= 0.05


def test_rayleigh_quotient_consistency(eig, opr):
    x = opr.pack(eig.b[:2])
    rq = np.vdot(x, opr.matvec(x)) / np.vdot(x, x)
    assert abs(eig.lam - rq) <= 10 * eig.residual_2cpt * abs(eig.lam)


def test_eigenvector_normalisation_and_fit(eig, gd):
    assert np.max(np.abs(eig.b[1])) == pytest.approx(1.0)
    fit = eig.gaussian_fit
    e13 = EPS ** (1 / 3)
    assert abs(fit["center"] - gd.r0) <= 2 * e13
    pred_curv = gd.c2_sqrt.real / e13**2
    assert fit["curvature"] == pytest.approx(pred_curv, rel=0.2)
    assert fit["amplitude_ratio"] == pytest.approx(abs(gd.alpha) * e13, rel=0.3)


def test_growth_rate_scaling_small_eps(profile, gd):
    eps = 1e-5
    g = dsc.make_grid(profile.domain, eps)
    res = dsc.eigensolve(dsc.assemble(profile, gd, eps, g))
    assert res.lam.real / eps ** (1 / 3) == pytest.approx(gd.mu_star.real, rel=0.01)


def test_conjugation_under_M_sign(profile, grid, eig):
    gneg = gil.gilbert_constants(profile, 1.0, -0.1)
    res = dsc.eigensolve(dsc.assemble(profile, gneg, EPS, grid))
    assert abs(res.lam - eig.lam.conjugate()) <= 1e-10 * abs(eig.lam)


def test_second_order_grid_convergence(profile, gd):
    lams = [dsc.eigensolve(dsc.assemble(profile, gd, EPS, dsc.make_grid(profile.domain, EPS, factor=f))).lam
            for f in (20, 40, 80)]
    ratio = abs(lams[0] - lams[1]) / abs(lams[1] - lams[2])
    assert ratio >= 3.5


@pytest.mark.parametrize("domain,truncate", [
    (prf.Domain("disk", 0.0, 2.5), None),
    (prf.Domain("exterior", 0.25), 2.5),
])
def test_domain_robustness(domain, truncate, eig):
    p = prf.simplified(domain)
    gd_d = gil.gilbert_constants(p, 1.0, 0.1)
    g = dsc.make_grid(domain, EPS, truncate=truncate)
    res = dsc.eigensolve(dsc.assemble(p, gd_d, EPS, g))
    assert abs(res.lam - eig.lam) / abs(eig.lam) <= 0.02


def test_no_stretching_is_dissipative(profile, gd, grid):
    res = dsc.eigensolve(dsc.assemble(profile, gd, EPS, grid, stretching=False))
    assert res.lam.real < 0


def test_clustered_spectrum_uses_block_fallback(profile, gd):
    eps = 1e-5
    g = dsc.make_grid(profile.domain, eps)
    opr = dsc.assemble(profile, gd, eps, g, stretching=False)
    res = dsc.eigensolve(opr, tol=1e-8)
    assert res.iterations > 60
    assert res.residual_2cpt <= 1e-8
    assert res.lam.real < 0


def test_convergence_error_when_budget_exhausted(opr):
    with pytest.raises(dsc.ConvergenceError):
        dsc.eigensolve(opr, tol=1e-30, max_iter=3)


# ---------------------------------------------------------------- Riesz projection

@pytest.fixture(scope="module")
def contour(eig):
    return (eig.lam, 0.05 * EPS ** (1 / 3), 32)


def test_riesz_reproduces_eigenvector(opr, eig, contour):
    f = eig.b[:2]
    Pf = dsc.riesz_project_discrete(f, opr, contour)
    assert np.linalg.norm(Pf - f) / np.linalg.norm(f) <= 1e-6


def test_riesz_is_idempotent(opr, contour, grid):
    f = np.vstack([_rng_vec(grid.n, 11), _rng_vec(grid.n, 12)])
    Pf = dsc.riesz_project_discrete(f, opr, contour)
    PPf = dsc.riesz_project_discrete(Pf, opr, contour)
    assert np.linalg.norm(PPf - Pf) / np.linalg.norm(Pf) <= 1e-6


def test_riesz_output_is_parallel_to_mode(opr, eig, contour, grid):
    bump = np.exp(-((grid.r - 1) / 0.1) ** 2)
    f = np.vstack([0.1 * bump, bump])
    Pf = opr.pack(dsc.riesz_project_discrete(f, opr, contour))
    v = opr.pack(eig.b[:2])
    cos = abs(np.vdot(v, Pf)) / (np.linalg.norm(v) * np.linalg.norm(Pf))
    assert cos >= 0.99


def test_riesz_check_rejects_empty_contour(opr, eig):
    with pytest.raises(dsc.DiscreteError):
        dsc.riesz_project_discrete(eig.b[:2], opr, (eig.lam + 0.01, 1e-4, 8), check=True)


# ---------------------------------------------------------------- z component and divergence

def test_solve_z_zero_forcing(profile, gd, grid):
    oz = dsc.assemble(profile, gd, EPS, grid, "z_equation")
    np.testing.assert_array_equal(dsc.solve_z(oz, np.zeros(grid.n), 0.01), 0)


def test_solve_z_manufactured(profile, gd, grid):
    oz = dsc.assemble(profile, gd, EPS, grid, "z_equation")
    lam = 0.006 + 0.007j
    bz = np.exp(-((grid.r - 1) / 0.05) ** 2).astype(complex)
    b_r = -(oz.matvec(bz) - lam * bz) / oz.coeffs["Uprime"]
    got = dsc.solve_z(oz, b_r, lam)
    assert np.linalg.norm(got - bz) / np.linalg.norm(bz) <= 1e-10


def test_modal_residual_of_full_mode(profile, gd, grid):
    res = dsc.full_mode(profile, gd, EPS, grid, 2, -1)
    assert res.residual_3cpt <= 1e-6
    assert np.any(res.b[2])


def test_divergence_of_zero_field(grid):
    assert dsc.divergence_norm(grid.r, np.zeros((3, grid.n)), 3, 1) == 0.0


def test_divergence_free_construction():
    r = np.linspace(0.5, 2.0, 2001)
    m = 3
    br = np.sin(2 * np.pi * (r - 0.5) / 1.5) * r
    bt = 1j * np.gradient(r * br, r, edge_order=2) / m
    b = np.vstack([br, bt, np.zeros_like(r)]).astype(complex)
    assert dsc.divergence_norm(r, b, m, 2) <= 1e-4


def test_divergence_detects_gradient_field():
    r = np.linspace(0.5, 2.0, 801)
    b = np.vstack([np.ones_like(r), np.zeros_like(r), np.zeros_like(r)]).astype(complex)
    # div = 1/r, scale = 1/r: ratio one
    assert dsc.divergence_norm(r, b, 1, 1) == pytest.approx(1.0)


def test_divergence_scaled_wavenumbers():
    r = np.linspace(0.5, 2.0, 101)
    b = np.vstack([np.zeros_like(r), np.ones_like(r), np.ones_like(r)]).astype(complex)
    eps = 1e-3
    a = dsc.divergence_norm(r, b, 0.1, 0.2, eps)
    c = dsc.divergence_norm(r, b, 1.0, 2.0)
    assert a == pytest.approx(c)


# ---------------------------------------------------------------- fitting and export

def test_gaussian_fit_of_exact_gaussian(gd):
    eps = 1e-3
    r = np.linspace(0.5, 1.5, 2001)
    K = 30.0
    bt = np.exp(-K * (r - 1.02) ** 2 / 2)
    b = np.vstack([0.05 * bt, bt])
    fit = dsc.gaussian_fit(r, b, gd, eps)
    assert fit["center"] == pytest.approx(1.02, abs=1e-10)
    assert fit["curvature"] == pytest.approx(K, rel=1e-10)
    assert fit["amplitude_ratio"] == pytest.approx(0.05)


def test_export_mode_csv(tmp_path, eig):
    path = tmp_path / "mode.csv"
    dsc.export_mode_csv(path, eig.r, eig.b)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    header = path.read_text().splitlines()[0]
    assert header == "r,re_b_r,im_b_r,re_b_theta,im_b_theta,re_b_z,im_b_z"
    np.testing.assert_allclose(data[:, 0], eig.r, rtol=1e-11)
    np.testing.assert_allclose(data[:, 3] + 1j * data[:, 4], eig.b[1], rtol=1e-11, atol=1e-300)


def test_v_basis_round_trip(eig, gd):
    V = dsc.v_basis(eig, gd, EPS)
    back = gil.v_to_b(V, gd, EPS)
    np.testing.assert_allclose(back, eig.b[:2], atol=1e-12)


def test_eigen_result_to_dict(eig):
    d = eig.to_dict()
    assert d["lambda_re"] == eig.lam.real
    assert "gaussian_fit" in d and math.isfinite(d["residual_2cpt"])
