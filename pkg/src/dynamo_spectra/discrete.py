"""Finite-difference realisation of the modal induction operator.

The (b_r, b_theta) system

.. math::

    (L b)_r = D b_r - A b_r - B b_\\theta, \\qquad
    (L b)_\\theta = D b_\\theta - A b_\\theta + (B + r\\Omega') b_r,

with ``D = eps (d^2/dr^2 + r^{-1} d/dr)``,
``A = eps/r^2 + eps^{1/3} M^2 (r^{-2} + rho^2) + i eps^{-1/3} M T(r)`` and
``B = 2 i M eps^{2/3} / r^2``, is discretised with second-order centred
differences on a uniform grid.  Unknowns are interleaved
``(b_r(r_1), b_theta(r_1), b_r(r_2), ...)`` so the matrix has five diagonals.

Boundary values are eliminated rather than stored: ``b_r = 0`` drops out and
``(r b_theta)' = 0`` is imposed with the one-sided stencil
``-3 r_0 t_0 + 4 r_1 t_1 - r_2 t_2 = 0``, which folds into the first and last
interior rows without widening the band.  The eigenproblem therefore stays
a standard one, ``L b = lambda b``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .gilbert import GilbertData, b_to_v
from .profiles import Domain, VelocityProfile

__all__ = [
    "RadialGrid",
    "DiscreteOperator",
    "EigenResult",
    "DiscreteError",
    "ResolutionError",
    "ShiftCollisionError",
    "ConvergenceError",
    "make_grid",
    "assemble",
    "solve_banded",
    "eigensolve",
    "riesz_project_discrete",
    "solve_z",
    "modal_residual",
    "divergence_norm",
    "gaussian_fit",
    "stencil_apply",
    "export_mode_csv",
]


class DiscreteError(RuntimeError):
    """Base class for solver failures."""


class ResolutionError(DiscreteError, ValueError):
    """Grid does not resolve the ``eps^{1/3}`` layer."""


class ShiftCollisionError(DiscreteError):
    """Shifted matrix is singular to working precision."""


class ConvergenceError(DiscreteError):
    """Inverse iteration did not reach the requested residual."""

    def __init__(self, msg, rayleigh=None, residual=None):
        super().__init__(msg)
        self.rayleigh = rayleigh
        self.residual = residual


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial grid.

    ``r`` holds the unknown (interior) nodes.  ``r_left``/``r_right`` are the
    eliminated boundary nodes: a physical wall, the Dirichlet ghost
    ``-h/2`` of a staggered disk grid, or the truncation radius of an
    exterior domain.

    Attributes
    ----------
    r : ndarray
        Interior nodes ``r_1 < ... < r_n``.
    h : float
    kind : str
        ``annulus``, ``disk`` or ``exterior``.
    left_bc, right_bc : str
        ``conducting`` or ``dirichlet``.
    """

    r: np.ndarray
    h: float
    kind: str
    left_bc: str
    right_bc: str

    @property
    def n(self) -> int:
        return self.r.size

    @property
    def r_left(self) -> float:
        return float(self.r[0] - self.h)

    @property
    def r_right(self) -> float:
        return float(self.r[-1] + self.h)

    @property
    def r_min(self) -> float:
        """Smallest node radius (``h/2`` on a staggered disk grid)."""
        return float(self.r[0])

    @property
    def r_full(self) -> np.ndarray:
        return np.concatenate([[self.r_left], self.r, [self.r_right]])


def make_grid(domain: Domain, eps: float, *, factor: float = 40.0, truncate: float | None = None,
              n_min: int = 64) -> RadialGrid:
    """Uniform grid with ``h <= eps^{1/3}/factor``.

    Parameters
    ----------
    domain : Domain
        ``disk`` grids are staggered, ``r_i = (i - 1/2) h``; ``exterior``
        domains are truncated at ``truncate`` (default ``domain.q``) with a
        Dirichlet condition there.
    factor : float
        Layer resolution, must be at least 20.
    """
    if factor < 20:
        raise ResolutionError(f"grid factor {factor} < 20 does not resolve the eps^(1/3) layer")
    h_target = eps ** (1.0 / 3.0) / factor
    q = float(truncate if truncate is not None else domain.q)
    if domain.kind == "disk":
        n = max(n_min, int(math.ceil(q / h_target - 0.5)))
        h = q / (n + 0.5)
        r = (np.arange(1, n + 1) - 0.5) * h
        return RadialGrid(r, h, "disk", "dirichlet", "conducting")
    p = float(domain.p)
    n = max(n_min, int(math.ceil((q - p) / h_target)) - 1)
    h = (q - p) / (n + 1)
    r = p + h * np.arange(1, n + 1)
    right = "dirichlet" if domain.kind == "exterior" else "conducting"
    return RadialGrid(r, h, domain.kind, "conducting", right)


def grid_from_nodes(r_full: np.ndarray, kind: str = "annulus", left_bc: str = "conducting",
                    right_bc: str = "conducting") -> RadialGrid:
    """Wrap a uniform node array (boundary nodes included) as a :class:`RadialGrid`."""
    r_full = np.asarray(r_full, dtype=float)
    h = float(r_full[1] - r_full[0])
    if not np.allclose(np.diff(r_full), h, rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    return RadialGrid(r_full[1:-1].copy(), h, kind, left_bc, right_bc)


# ---------------------------------------------------------------------------
# Coefficients and assembly
# ---------------------------------------------------------------------------

def _coefficients(profile: VelocityProfile, gd: GilbertData, eps: float, r, *, stretching=True):
    """Pointwise coefficient fields ``A, B, S`` of the (r, theta) system and ``A_z``."""
    r = np.asarray(r, dtype=float)
    M, rho = gd.M, gd.rho
    T = (profile.omega(r) - profile.omega(gd.r0)) - rho * (profile.uz(r) - profile.uz(gd.r0))
    e13 = eps ** (1.0 / 3.0)
    transport = 1j * M * T / e13
    A = eps / r**2 + e13 * M**2 * (1.0 / r**2 + rho**2) + transport
    B = 2j * M * eps ** (2.0 / 3.0) / r**2
    S = r * profile.omega(r, 1) if stretching else np.zeros_like(r)
    Az = e13 * (M**2 / r**2 + gd.K**2) + transport
    return A, B, S, Az


@dataclass
class DiscreteOperator:
    """Banded matrix of one of the modal operators.

    Attributes
    ----------
    grid : RadialGrid
    which : str
        ``rtheta_system``, ``z_equation`` or ``L2_frozen``.
    ncomp : int
        Unknowns per node (2 interleaved or 1).
    diags : dict[int, ndarray]
        Offset -> diagonal of the ``N x N`` matrix (``N = ncomp * n``),
        with the convention ``A[i, i + k] = diags[k][i]`` (padded).
    basis : str
        ``b`` or ``V``.
    coeffs : dict
        Coefficient fields on the interior nodes.
    """

    grid: RadialGrid
    which: str
    ncomp: int
    diags: dict
    basis: str
    eps: float
    gd: GilbertData
    coeffs: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.ncomp * self.grid.n

    @property
    def bandwidth(self) -> int:
        return max(abs(k) for k in self.diags)

    def to_dense(self) -> np.ndarray:
        N = self.size
        A = np.zeros((N, N), dtype=complex)
        for k, d in self.diags.items():
            idx = np.arange(max(0, -k), min(N, N - k))
            A[idx, idx + k] = d[idx]
        return A

    def band_storage(self, shift: complex = 0.0) -> tuple[np.ndarray, int, int]:
        """LAPACK ``gbtrf`` storage of ``A - shift I``."""
        kl = ku = self.bandwidth
        N = self.size
        ab = np.zeros((2 * kl + ku + 1, N), dtype=complex)
        for k, d in self.diags.items():
            row = kl + ku - k
            i = np.arange(max(0, -k), min(N, N - k))
            vals = d[i] - (shift if k == 0 else 0.0)
            ab[row, i + k] = vals
        return ab, kl, ku

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        y = np.zeros(self.size, dtype=complex)
        N = self.size
        for k, d in self.diags.items():
            i = np.arange(max(0, -k), min(N, N - k))
            y[i] += d[i] * x[i + k]
        return y

    def pack(self, u) -> np.ndarray:
        """Component array ``(ncomp, n)`` to the unknown vector."""
        u = np.asarray(u, dtype=complex)
        if self.ncomp == 1:
            return u.reshape(-1).copy()
        return np.ravel(u, order="F").copy()

    def unpack(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.ncomp == 1:
            return x.reshape(1, -1)
        return x.reshape(self.ncomp, -1, order="F")

    def boundary_values(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Eliminated boundary values ``(left, right)`` for component array ``u``."""
        u = self.unpack(self.pack(u))
        g = self.grid
        left = np.zeros(self.ncomp, dtype=complex)
        right = np.zeros(self.ncomp, dtype=complex)
        for side, out in (("left", left), ("right", right)):
            bc = g.left_bc if side == "left" else g.right_bc
            if bc != "conducting" or self.which == "L2_frozen":
                continue
            if side == "left":
                r0, r1, r2 = g.r_left, g.r[0], g.r[1]
                v1, v2 = u[:, 0], u[:, 1]
            else:
                r0, r1, r2 = g.r_right, g.r[-1], g.r[-2]
                v1, v2 = u[:, -1], u[:, -2]
            if self.which == "z_equation":
                out[0] = (4 * v1[0] - v2[0]) / 3
            else:
                out[1] = (4 * r1 * v1[1] - r2 * v2[1]) / (3 * r0)
        return left, right

    def full_field(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and values including the eliminated boundary nodes."""
        u = self.unpack(self.pack(u))
        left, right = self.boundary_values(u)
        vals = np.concatenate([left[:, None], u, right[:, None]], axis=1)
        return self.grid.r_full, vals


def _fd_weights(r, h, eps):
    """Weights of ``eps (u'' + u'/r)`` on ``(u_{i-1}, u_i, u_{i+1})``."""
    lo = eps * (1 / h**2 - 1 / (2 * h * r))
    mid = np.full_like(r, -2 * eps / h**2)
    up = eps * (1 / h**2 + 1 / (2 * h * r))
    return lo, mid, up


def assemble(profile: VelocityProfile, gd: GilbertData, eps: float, grid: RadialGrid,
             which: str = "rtheta_system", *, stretching: bool = True) -> DiscreteOperator:
    """Assemble a banded modal operator.

    Parameters
    ----------
    which : {"rtheta_system", "z_equation", "L2_frozen"}
        The coupled (b_r, b_theta) system, the scalar b_z operator
        ``D - eps^{1/3}(M^2/r^2 + K^2) - i eps^{-1/3} M T``, or the frozen
        critical-layer operator in the V basis.
    stretching : bool
        If False the ``r Omega'`` coupling is removed (control runs).

    Raises
    ------
    ResolutionError
        If ``h > eps^{1/3}/20``.
    """
    h = grid.h
    if h > eps ** (1.0 / 3.0) / 20 * (1 + 1e-12):
        raise ResolutionError(f"h = {h:.3g} exceeds eps^(1/3)/20 = {eps ** (1 / 3) / 20:.3g}")
    r = grid.r
    n = grid.n
    if which == "L2_frozen":
        return _assemble_l2(gd, eps, grid)
    A, B, S, Az = _coefficients(profile, gd, eps, r, stretching=stretching)
    lo, mid, up = _fd_weights(r, h, eps)
    if which == "z_equation":
        d0 = mid - Az
        dm = np.zeros(n, dtype=complex)
        dp = np.zeros(n, dtype=complex)
        dm[1:] = lo[1:]
        dp[:-1] = up[:-1]
        if grid.left_bc == "conducting":
            d0[0] += lo[0] * 4 / 3
            dp[0] += -lo[0] / 3 if n > 1 else 0
            # u_{2} enters row 1 through the eliminated u_0; it is the +1 neighbour
        if grid.right_bc == "conducting":
            d0[-1] += up[-1] * 4 / 3
            dm[-1] += -up[-1] / 3
        diags = {-1: dm, 0: d0.astype(complex), 1: dp}
        return DiscreteOperator(grid, which, 1, diags, "b", eps, gd,
                                {"Az": Az, "Uprime": profile.uz(r, 1)})
    N = 2 * n
    d = {k: np.zeros(N, dtype=complex) for k in (-2, -1, 0, 1, 2)}
    ir = 2 * np.arange(n)
    it = ir + 1
    d[0][ir] = mid - A
    d[0][it] = mid - A
    d[1][ir] = -B
    d[-1][it] = B + S
    d[2][ir[:-1]] = up[:-1]
    d[2][it[:-1]] = up[:-1]
    d[-2][ir[1:]] = lo[1:]
    d[-2][it[1:]] = lo[1:]
    if grid.left_bc == "conducting":
        r0, r1, r2 = grid.r_left, r[0], r[1]
        d[0][1] += lo[0] * 4 * r1 / (3 * r0)
        d[2][1] += -lo[0] * r2 / (3 * r0)
    if grid.right_bc == "conducting":
        r0, r1, r2 = grid.r_right, r[-1], r[-2]
        d[0][N - 1] += up[-1] * 4 * r1 / (3 * r0)
        d[-2][N - 1] += -up[-1] * r2 / (3 * r0)
    return DiscreteOperator(grid, which, 2, d, "b", eps, gd,
                            {"A": A, "B": B, "S": S, "Omega_prime": profile.omega(r, 1)})


def _assemble_l2(gd: GilbertData, eps: float, grid: RadialGrid) -> DiscreteOperator:
    """Frozen operator ``eps V'' - [eps^{-1/3} c2 x^2 + eps^{1/3} M^2 (r0^-2 + rho^2)] V + eps^{1/3} kappa (V1, -V2)``."""
    r, h, n = grid.r, grid.h, grid.n
    e13 = eps ** (1.0 / 3.0)
    pot = gd.c2 * (r - gd.r0) ** 2 / e13 + e13 * gd.M**2 * (1 / gd.r0**2 + gd.rho**2)
    N = 2 * n
    d = {k: np.zeros(N, dtype=complex) for k in (-2, 0, 2)}
    ir, it = 2 * np.arange(n), 2 * np.arange(n) + 1
    d[0][ir] = -2 * eps / h**2 - pot + e13 * gd.kappa
    d[0][it] = -2 * eps / h**2 - pot - e13 * gd.kappa
    for k in (2, -2):
        d[k][:] = eps / h**2
    d[2][N - 2:] = 0
    d[-2][:2] = 0
    g = RadialGrid(grid.r, grid.h, grid.kind, "dirichlet", "dirichlet")
    return DiscreteOperator(g, "L2_frozen", 2, d, "V", eps, gd, {"potential": pot})


def stencil_apply(profile: VelocityProfile, gd: GilbertData, eps: float, r_full, b_full,
                  *, lam: complex = 0.0, stretching: bool = True) -> np.ndarray:
    """Apply ``L - lam`` in the b basis to values given on every node of a uniform grid.

    Parameters
    ----------
    r_full : ndarray, shape (n,)
        Uniform nodes, endpoints included.
    b_full : ndarray, shape (2, n)
        ``(b_r, b_theta)`` on those nodes.

    Returns
    -------
    ndarray, shape (2, n)
        Result at interior nodes; the two end columns are zero.
    """
    r_full = np.asarray(r_full, dtype=float)
    b = np.asarray(b_full, dtype=complex)
    h = r_full[1] - r_full[0]
    r = r_full[1:-1]
    A, B, S, _ = _coefficients(profile, gd, eps, r, stretching=stretching)
    lo, mid, up = _fd_weights(r, h, eps)
    out = np.zeros_like(b)
    Db = lo * b[:, :-2] + mid * b[:, 1:-1] + up * b[:, 2:]
    br, bt = b[0, 1:-1], b[1, 1:-1]
    out[0, 1:-1] = Db[0] - (A + lam) * br - B * bt
    out[1, 1:-1] = Db[1] - (A + lam) * bt + (B + S) * br
    return out


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------

class BandedLU:
    """LU factorisation of ``A - shift I`` (LAPACK ``zgbtrf``)."""

    def __init__(self, opr: DiscreteOperator, shift: complex = 0.0):
        ab, kl, ku = opr.band_storage(shift)
        lu, piv, info = lapack.zgbtrf(ab, kl, ku)
        if info > 0:
            raise ShiftCollisionError(f"shift {shift!r} makes the matrix singular (pivot {info})")
        if info < 0:
            raise DiscreteError(f"zgbtrf argument error {info}")
        diag = lu[kl + ku]
        if np.min(np.abs(diag)) <= 1e-15 * np.max(np.abs(diag)):
            raise ShiftCollisionError(f"shift {shift!r} is an eigenvalue to working precision")
        self.lu, self.piv, self.kl, self.ku = lu, piv, kl, ku
        self.opr, self.shift = opr, shift

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.zgbtrs(self.lu, self.kl, self.ku, np.asarray(rhs, dtype=complex), self.piv)
        if info != 0:
            raise DiscreteError(f"zgbtrs failed with info={info}")
        return x


def solve_banded(opr: DiscreteOperator, rhs, shift: complex = 0.0) -> np.ndarray:
    """Solve ``(A - shift I) x = rhs`` with banded LU and partial pivoting.

    ``rhs`` may be the packed vector or a component array ``(ncomp, n)``;
    the result has the same layout.

    Raises
    ------
    ShiftCollisionError
        If ``shift`` is an eigenvalue to working precision.
    """
    rhs = np.asarray(rhs, dtype=complex)
    packed = rhs.ndim == 1
    vec = rhs if packed else opr.pack(rhs)
    x = BandedLU(opr, shift).solve(vec)
    return x if packed else opr.unpack(x)


# ---------------------------------------------------------------------------
# Eigenproblem
# ---------------------------------------------------------------------------

@dataclass
class EigenResult:
    """Converged eigenpair and diagnostics.

    ``b`` has shape (3, n) in the b basis (``b_z`` zero unless filled by
    :func:`solve_z`) or (2, n) in the V basis for the frozen operator.
    """

    lam: complex
    b: np.ndarray
    r: np.ndarray
    residual_2cpt: float
    iterations: int
    gaussian_fit: dict | None = None
    residual_3cpt: float | None = None
    div_norm: float | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "lambda_re": self.lam.real, "lambda_im": self.lam.imag,
            "residual_2cpt": self.residual_2cpt, "iterations": self.iterations,
            "residual_3cpt": self.residual_3cpt, "div_norm": self.div_norm,
            "warnings": list(self.warnings),
        }
        if self.gaussian_fit:
            out["gaussian_fit"] = dict(self.gaussian_fit)
        return out


def _residual(opr, x, theta):
    return float(np.linalg.norm(opr.matvec(x) - theta * x) / (abs(theta) * np.linalg.norm(x)))


def _block_inverse_iteration(opr, lu, sigma, x, tol, max_iter, block=8):
    """Shift-invert subspace iteration with Rayleigh-Ritz extraction.

    Used when the eigenvalue nearest the shift is part of a cluster, where
    single-vector iteration converges too slowly.  Returns the Ritz pair
    nearest ``sigma`` as ``(theta, x, residual, iterations)``.
    """
    rng = np.random.default_rng(54321)
    Q = np.column_stack([x] + [rng.standard_normal(opr.size) + 1j * rng.standard_normal(opr.size)
                               for _ in range(block - 1)])
    Q, _ = np.linalg.qr(Q)
    theta, res = sigma, math.inf
    for it in range(1, max_iter + 1):
        Q, _ = np.linalg.qr(np.column_stack([lu.solve(Q[:, j]) for j in range(block)]))
        AQ = np.column_stack([opr.matvec(Q[:, j]) for j in range(block)])
        vals, vecs = np.linalg.eig(Q.conj().T @ AQ)
        j = int(np.argmin(np.abs(vals - sigma)))
        theta = complex(vals[j])
        x = Q @ vecs[:, j]
        x /= np.linalg.norm(x)
        res = float(np.linalg.norm(AQ @ vecs[:, j] / np.linalg.norm(Q @ vecs[:, j]) - theta * x) / abs(theta))
        if res <= tol:
            break
    return theta, x, res, it


def eigensolve(opr: DiscreteOperator, seed: complex | None = None, *, tol: float = 1e-8,
               max_iter: int = 60, shift_updates: int = 3, x0=None) -> EigenResult:
    """Shift-invert inverse iteration seeded at ``lambda_star``.

    The shift is moved to the current Rayleigh quotient at most
    ``shift_updates`` times, then held fixed.  The eigenvector is normalised
    so that ``max |b_theta| = 1`` (``max |V1| = 1`` in the V basis).

    Raises
    ------
    ConvergenceError
        If the relative residual ``||Ax - theta x|| / (|theta| ||x||)`` does
        not reach ``tol`` in ``max_iter`` iterations.
    """
    gd, eps = opr.gd, opr.eps
    if seed is None:
        seed = gd.lambda_star(eps)
    sigma = complex(seed)
    rng = np.random.default_rng(12345)
    if x0 is None:
        x = rng.standard_normal(opr.size) + 1j * rng.standard_normal(opr.size)
    else:
        x = np.asarray(x0, dtype=complex).copy()
    try:
        lu = BandedLU(opr, sigma)
    except ShiftCollisionError:
        sigma = sigma * (1 + 1e-7) + 1e-9j * abs(sigma)
        lu = BandedLU(opr, sigma)
    updates = 0
    theta = sigma
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        Ax = opr.matvec(x)
        theta = np.vdot(x, Ax)
        res = float(np.linalg.norm(Ax - theta * x) / abs(theta))
        if res <= tol:
            break
        if updates < shift_updates and it >= 2:
            try:
                lu = BandedLU(opr, theta)
                sigma = theta
                updates += 1
            except ShiftCollisionError:
                break
    else:
        # clustered eigenvalues near the shift: fall back to a block iteration
        theta, x, res, extra = _block_inverse_iteration(opr, lu, sigma, x, tol, max_iter)
        it += extra
        if res > tol:
            raise ConvergenceError(f"inverse iteration stalled: residual {res:.3g} after {it} iterations",
                                   theta, res)
    if res > tol:
        raise ConvergenceError(f"residual {res:.3g} > tol {tol:.3g}", theta, res)
    u = opr.unpack(x)
    comp = 1 if opr.ncomp == 2 and opr.basis == "b" else 0
    j = int(np.argmax(np.abs(u[comp])))
    u = u / u[comp, j]
    notes = []
    scale = 10 * eps ** (1.0 / 3.0) * abs(gd.mu_star)
    if abs(theta.real - complex(seed).real) > scale:
        notes.append(f"wrong-branch: Re(lambda) = {theta.real:.6g} is far from the seed {complex(seed).real:.6g}")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    if opr.basis == "b" and opr.ncomp == 2:
        b = np.vstack([u, np.zeros((1, u.shape[1]), dtype=complex)])
    else:
        b = u
    fit = gaussian_fit(opr.grid.r, b, gd, eps, basis=opr.basis)
    return EigenResult(complex(theta), b, opr.grid.r.copy(), res, it, fit, warnings=notes)


def gaussian_fit(r, b, gd: GilbertData, eps: float, *, basis: str = "b", window: float = 2.0) -> dict:
    """Quadratic least-squares fit of ``log|b_theta|`` near ``r0``.

    Returns ``center``, ``curvature`` (``K`` in ``exp(-K x^2 / 2)``),
    ``amplitude_ratio = max|b_r| / max|b_theta|`` and the fitted window.
    In the V basis ``V1`` is fitted and the ratio is ``max|V2|/max|V1|``.
    """
    r = np.asarray(r)
    main = b[1] if basis == "b" else b[0]
    other = b[0] if basis == "b" else b[1]
    half = window * eps ** (1.0 / 3.0)
    sel = np.abs(r - gd.r0) <= half
    sel &= np.abs(main) > 0
    if sel.sum() < 3:
        return {"center": float("nan"), "curvature": float("nan"), "amplitude_ratio": float("nan")}
    x = r[sel] - gd.r0
    c2, c1, c0 = np.polyfit(x, np.log(np.abs(main[sel])), 2)
    return {
        "center": float(gd.r0 - c1 / (2 * c2)) if c2 != 0 else float("nan"),
        "curvature": float(-2 * c2),
        "amplitude_ratio": float(np.max(np.abs(other)) / np.max(np.abs(main))),
        "window": [float(gd.r0 - half), float(gd.r0 + half)],
    }


def riesz_project_discrete(f, opr: DiscreteOperator, contour: tuple, *, check: bool = False):
    """Trapezoid quadrature of ``(2 pi i)^{-1} \\oint (lambda - L)^{-1} f``.

    Parameters
    ----------
    f : ndarray
        Component array ``(ncomp, n)`` or packed vector.
    contour : (center, radius, n_points)
    check : bool
        If True, verify with :func:`eigensolve` that an eigenvalue lies inside.
    """
    center, radius, npts = contour
    f = np.asarray(f, dtype=complex)
    packed = f.ndim == 1
    vec = f if packed else opr.pack(f[: opr.ncomp])
    if check:
        ev = eigensolve(opr, center)
        if abs(ev.lam - center) >= radius:
            raise DiscreteError(f"no eigenvalue inside the contour (nearest {ev.lam!r})")
    acc = np.zeros(opr.size, dtype=complex)
    for k in range(npts):
        z = np.exp(2j * np.pi * k / npts)
        lam = center + radius * z
        try:
            x = BandedLU(opr, lam).solve(vec)
        except ShiftCollisionError as exc:
            raise DiscreteError(f"contour point {k} (lambda = {lam!r}) is singular") from exc
        acc -= radius * z * x / npts
    return acc if packed else opr.unpack(acc)


# ---------------------------------------------------------------------------
# z component and divergence
# ---------------------------------------------------------------------------

def solve_z(opr_z: DiscreteOperator, b_r, lam: complex) -> np.ndarray:
    """Solve ``(L_z - lam) b_z = -U'(r) b_r`` with ``b_z' = 0`` at walls."""
    b_r = np.asarray(b_r, dtype=complex)
    rhs = -opr_z.coeffs["Uprime"] * b_r
    if not np.any(rhs):
        return np.zeros_like(b_r)
    try:
        return BandedLU(opr_z, lam).solve(rhs)
    except ShiftCollisionError:
        return BandedLU(opr_z, lam * (1 + 1e-8)).solve(rhs)


def modal_residual(opr: DiscreteOperator, opr_z: DiscreteOperator, b, lam: complex) -> float:
    """Relative residual of the three-component modal system.

    ``||[(L - lam) b_rt ; (L_z - lam) b_z + U' b_r]|| / (|lam| ||b||)``.
    """
    b = np.asarray(b, dtype=complex)
    x = opr.pack(b[:2])
    r1 = opr.matvec(x) - lam * x
    r2 = opr_z.matvec(b[2]) - lam * b[2] + opr_z.coeffs["Uprime"] * b[0]
    num = math.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2)
    return float(num / (abs(lam) * np.linalg.norm(b)))


def divergence_norm(r, b, m: int, k: int, eps: float | None = None, *, h: float | None = None,
                    ends: tuple | None = None) -> float:
    """Relative modal divergence ``sup|div b| / sup(|b_r'| + |b_r/r| + |m b_theta/r| + |k b_z|)``.

    ``div b = b_r' + b_r/r + (i m/r) b_theta + i k b_z`` with centred
    differences; ``ends`` optionally supplies the boundary values of ``b_r``
    so the derivative is centred at the first and last nodes too.

    ``m, k`` are the integer wavenumbers; when ``eps`` is given the
    ``eps^{-1/3}``-scaled parameters ``M, K`` may be passed instead.
    """
    r = np.asarray(r, dtype=float)
    b = np.asarray(b, dtype=complex)
    if eps is not None:
        m, k = m / eps ** (1.0 / 3.0), k / eps ** (1.0 / 3.0)
    if not np.any(b):
        return 0.0
    if h is None:
        h = r[1] - r[0]
    br = b[0]
    if ends is None:
        ends = (br[0], br[-1])
        d = np.gradient(br, h, edge_order=2)
    else:
        padded = np.concatenate([[ends[0]], br, [ends[1]]])
        d = (padded[2:] - padded[:-2]) / (2 * h)
    div = d + br / r + 1j * m / r * b[1] + 1j * k * b[2]
    scale = np.abs(d) + np.abs(br / r) + np.abs(m * b[1] / r) + np.abs(k * b[2])
    return float(np.max(np.abs(div)) / np.max(scale))


def full_mode(profile: VelocityProfile, gd: GilbertData, eps: float, grid: RadialGrid,
              m: int, k: int, *, tol: float = 1e-8) -> EigenResult:
    """Eigenpair of the (r, theta) system with the forced ``b_z``, residual and divergence."""
    opr = assemble(profile, gd, eps, grid)
    res = eigensolve(opr, tol=tol)
    oz = assemble(profile, gd, eps, grid, "z_equation")
    bz = solve_z(oz, res.b[0], res.lam)
    res.b[2] = bz
    res.residual_3cpt = modal_residual(opr, oz, res.b, res.lam)
    res.div_norm = divergence_norm(grid.r, res.b, m, k, ends=(0.0, 0.0))
    return res


def export_mode_csv(path, r, b) -> None:
    """Write ``r, Re/Im b_r, b_theta, b_z`` as CSV."""
    b = np.asarray(b)
    cols = [np.asarray(r)]
    names = ["r"]
    for lab, comp in zip(("b_r", "b_theta", "b_z"), b):
        cols += [comp.real, comp.imag]
        names += [f"re_{lab}", f"im_{lab}"]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="",
               fmt="%.12e")


def v_basis(res: EigenResult, gd: GilbertData, eps: float) -> np.ndarray:
    """Eigenvector of the (r, theta) system in the V basis."""
    return b_to_v(res.b[:2], gd, eps)
