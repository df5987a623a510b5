"""Constructive approximate inverse of ``L - lambda`` and its Neumann resolvent.

The radial line is tiled by an ``eps``-dependent decomposition:

* ``near_zero``  ``[0, eps^gamma)`` (disk domains): Bessel kernel;
* ``critical``   ``[r0 - eps^gamma, r0 + eps^gamma)``: parabolic cylinder kernel
  of the frozen Weber operator, the only block that depends on ``lambda``;
* ``linear_vanish`` ``[s_j - eps^omega, s_j + eps^omega)`` around simple zeros
  of ``T``: Airy kernel;
* ``towards_zero`` / ``towards_infinity``: cells of length ``eps^delta`` on
  which ``eps d^2/dr^2 - i eps^{-1/3} M T(r_j)`` is inverted exactly with
  ``T`` frozen at the left knot ``r_j``.

All kernels act on ``(V1, V2)`` grid functions.  The glued operator
``G^lambda`` sums the region contributions; the error operator
``E = (L - lambda) G^lambda - Id`` is evaluated with the finite-difference
stencil of :mod:`dynamo_spectra.discrete`, and ``(L - lambda)^{-1}`` is
obtained as ``G^lambda sum_n (-E)^n``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import rgamma

from . import specfun as sf
from .discrete import RadialGrid, assemble, solve_banded, stencil_apply
from .gilbert import GilbertData, b_to_v, root_re_positive, v_to_b
from .profiles import VelocityProfile, evaluate_transport, find_zero_set

__all__ = [
    "DEFAULT_EXPONENTS",
    "CONTRACTIVE_EXPONENTS",
    "GreensConfigError",
    "DecompositionError",
    "GreensDomainError",
    "WronskianPoleError",
    "NeumannDivergenceError",
    "BoundaryDegeneracyError",
    "Region",
    "RegionDecomposition",
    "WeightedNorms",
    "GreensContext",
    "NeumannResult",
    "BoundaryResult",
    "check_exponents",
    "decompose",
    "random_test_functions",
]

DEFAULT_EXPONENTS = (0.25, 0.30, 0.24)
# Admissible exponents with the widest gap delta - gamma; freezing T at the
# cell knots then costs least next to the critical layer, which keeps the
# Neumann series contractive at moderate eps (the defaults need eps << 1e-5).
CONTRACTIVE_EXPONENTS = (0.225, 0.44, 0.2235)
G2_ZMAX = 14.0
_DECAY_CUT = 40.0


class GreensConfigError(ValueError):
    """Invalid exponents or inputs."""


class DecompositionError(RuntimeError):
    """Overlapping special regions or a degenerate frozen coefficient."""


class GreensDomainError(ValueError):
    """Spectral parameter outside the admissible window."""


class WronskianPoleError(ZeroDivisionError):
    """``eta = 0``: the Weber Wronskian vanishes."""


class NeumannDivergenceError(RuntimeError):
    """The error operator is not a contraction on the current input."""

    def __init__(self, msg, rho, lam=None):
        super().__init__(msg)
        self.rho = rho
        self.lam = lam


class BoundaryDegeneracyError(RuntimeError):
    """Boundary matrix is numerically singular."""


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

def check_exponents(gamma: float, delta: float, omega: float) -> None:
    """Validate ``2/9 < omega < gamma < 1/3``, ``gamma < delta``, ``gamma + delta < 2/3``."""
    bad = []
    if not gamma > 2 / 9:
        bad.append("γ ≤ 2/9")
    if not gamma < 1 / 3:
        bad.append("γ ≥ 1/3")
    if not gamma < delta:
        bad.append("δ ≤ γ")
    if not gamma + delta < 2 / 3:
        bad.append("γ + δ ≥ 2/3")
    if not omega > 2 / 9:
        bad.append("ω ≤ 2/9")
    if not omega < gamma:
        bad.append("ω ≥ γ")
    if bad:
        raise GreensConfigError("exponent constraints violated: " + ", ".join(bad))


@dataclass(frozen=True)
class Region:
    """Tagged interval ``[a, b)``.

    ``knots`` lists the frozen-coefficient knots of a partitioned region;
    ``center``/``slope`` carry ``s_j`` and ``T'(s_j)`` for a linear-vanish
    region and ``r0`` for the critical one.
    """

    tag: str
    a: float
    b: float
    knots: tuple = ()
    center: float | None = None
    slope: float | None = None

    def cells(self):
        ks = list(self.knots)
        return [(k, ks[i + 1] if i + 1 < len(ks) else self.b) for i, k in enumerate(ks)]


@dataclass
class RegionDecomposition:
    eps: float
    r0: float
    gamma: float
    delta: float
    omega: float
    interval: tuple
    regions: list
    zero_set: list = field(default_factory=list)
    tau: float | None = None

    @property
    def P1(self) -> list:
        """Knots of the towards-zero partition."""
        return [k for R in self.regions if R.tag == "towards_zero" for k in R.knots]

    @property
    def P3(self) -> list:
        """Knots of the towards-infinity partition."""
        return [k for R in self.regions if R.tag == "towards_infinity" for k in R.knots]

    def region(self, tag: str) -> list:
        return [R for R in self.regions if R.tag == tag]

    def check_tiling(self, tol: float = 1e-12) -> bool:
        lo, hi = self.interval
        pos = lo
        for R in self.regions:
            if abs(R.a - pos) > tol or R.b <= R.a:
                return False
            pos = R.b
        return abs(pos - hi) <= tol

    def to_dict(self) -> dict:
        return {
            "eps": self.eps, "r0": self.r0, "gamma": self.gamma, "delta": self.delta,
            "omega": self.omega, "interval": list(self.interval),
            "regions": [{"tag": R.tag, "a": R.a, "b": R.b, "n_knots": len(R.knots)} for R in self.regions],
        }


def _default_interval(profile: VelocityProfile, r0: float) -> tuple:
    d = profile.domain
    hi = 2 * d.q if d.bounded else 3 * max(r0, 1.0)
    return (0.0 if d.contains_origin else d.p / 2), hi


def _partition(a: float, b: float, step: float) -> tuple:
    n = max(1, int(math.ceil((b - a) / step - 1e-12)))
    return tuple(a + j * step for j in range(n))


def decompose(profile: VelocityProfile, r0: float, eps: float, exponents=None, *,
              interval=None, M: float = 1.0) -> RegionDecomposition:
    """Tile ``interval`` into near-zero, critical, linear-vanish and frozen regions.

    Parameters
    ----------
    exponents : (gamma, delta, omega), optional
        Defaults to ``(0.25, 0.30, 0.24)``.
    interval : (lo, hi), optional
        Computational interval; defaults to ``[p/2, 2q]`` for an annulus,
        ``[0, 2q]`` for a disk and ``[p/2, q]`` for an exterior domain.
    M : float
        Used for the frozen-coefficient degeneracy check ``|M T(r_j)| > 1e-14``.

    Raises
    ------
    GreensConfigError
        Exponent constraints violated.
    DecompositionError
        Overlapping special regions or a vanishing frozen coefficient.
    """
    gamma, delta, omega = exponents if exponents is not None else DEFAULT_EXPONENTS
    check_exponents(gamma, delta, omega)
    lo, hi = map(float, interval if interval is not None else _default_interval(profile, r0))
    eg, ed, ew = eps**gamma, eps**delta, eps**omega
    if not (lo < r0 - eg and r0 + eg < hi):
        raise DecompositionError("critical region does not fit inside the computational interval")
    specials = []
    tau = None
    if lo == 0.0:
        tau = float(evaluate_transport(profile, r0, 0.0))
        specials.append(Region("near_zero", 0.0, eg))
    specials.append(Region("critical", r0 - eg, r0 + eg, center=r0))
    zlo = max(lo, 1e-9)
    zeros = find_zero_set(profile, r0, (zlo, hi))
    for s, slope in zeros:
        if s - ew <= lo or s + ew >= hi:
            continue
        specials.append(Region("linear_vanish", s - ew, s + ew, center=s, slope=slope))
    specials.sort(key=lambda R: R.a)
    for A, B in zip(specials, specials[1:]):
        if A.b > B.a:
            raise DecompositionError(f"regions {A.tag} [{A.a:.4g},{A.b:.4g}) and {B.tag} "
                                     f"[{B.a:.4g},{B.b:.4g}) overlap")
    regions = []
    pos = lo
    for S in specials + [None]:
        end = S.a if S is not None else hi
        if end > pos + 1e-15:
            tag = "towards_zero" if end <= r0 else "towards_infinity"
            knots = _partition(pos, end, ed)
            Tk = np.abs(M * evaluate_transport(profile, r0, np.array(knots)))
            if np.any(Tk < 1e-14):
                j = int(np.argmin(Tk))
                raise DecompositionError(f"frozen coefficient vanishes at knot r = {knots[j]:.6g}")
            regions.append(Region(tag, pos, end, knots))
        if S is not None:
            regions.append(S)
            pos = S.b
    return RegionDecomposition(eps, float(r0), gamma, delta, omega, (lo, hi), regions,
                               [tuple(z) for z in zeros], tau)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightedNorms:
    """Weighted sup norms ``X`` (weight ``max(1, r^2) w``) and ``Y`` (weight ``r^2 w``)."""

    eps: float
    r0: float
    N: int = 4

    def w(self, s):
        return 1.0 + (self.eps ** (-1.0 / 3.0) * np.abs(s)) ** self.N

    @staticmethod
    def _mag(f):
        f = np.asarray(f)
        return np.max(np.abs(f), axis=0) if f.ndim == 2 else np.abs(f)

    def x_norm(self, r, f) -> float:
        r = np.asarray(r)
        return float(np.max(np.maximum(1.0, r**2) * self.w(r - self.r0) * self._mag(f)))

    def y_norm(self, r, f) -> float:
        r = np.asarray(r)
        return float(np.max(r**2 * self.w(r - self.r0) * self._mag(f)))


# ---------------------------------------------------------------------------
# Quadrature helpers
# ---------------------------------------------------------------------------

def _phi1(x: complex) -> complex:
    """``(e^x - 1)/x``."""
    if abs(x) < 0.1:
        term, s = 1.0, 0.0
        for n in range(1, 16):
            s += term
            term *= x / (n + 1)
        return s
    return cmath.expm1(x) / x if hasattr(cmath, "expm1") else (cmath.exp(x) - 1) / x


def _psi(x: complex) -> complex:
    """``int_0^1 e^{x u} u du = (e^x (x - 1) + 1)/x^2``."""
    if abs(x) < 0.1:
        s, fact = 0.0, 1.0
        for n in range(16):
            if n:
                fact *= n
            s += x**n / (fact * (n + 2))
        return s
    return (cmath.exp(x) * (x - 1) + 1) / (x * x)


def _exp_sweep(k: complex, h: float, I: np.ndarray) -> np.ndarray:
    """``S_0 = 0``, ``S_{i+1} = e^{-kh} S_i + I_i`` along the last axis, overflow-safe."""
    m = I.shape[-1]
    S = np.zeros(I.shape[:-1] + (m + 1,), dtype=complex)
    kh = k * h
    block = max(1, int(300.0 / max(abs(kh.real), 1e-300)))
    start = 0
    carry = np.zeros(I.shape[:-1], dtype=complex)
    while start < m:
        stop = min(m, start + block)
        u = np.arange(stop - start)
        grow = np.exp(kh * u)
        C = np.cumsum(I[..., start:stop] * grow, axis=-1)
        t = u + 1
        S[..., start + 1:stop + 1] = np.exp(-kh * t) * carry[..., None] + np.exp(-kh * (t - 1)) * C
        carry = S[..., stop]
        start = stop
    return S


def _cum_trapz(q: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid integrals from the first node to each node."""
    c = np.cumsum(q, axis=-1) * h
    return c - 0.5 * h * (q[..., :1] + q)


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------

@dataclass
class NeumannResult:
    """Neumann-series output.

    ``residual`` is the certified ``||(L - lambda) x - f||_Y / ||f||_Y``;
    ``rho`` the geometric-mean contraction rate of the last terms.
    """

    x: np.ndarray
    n_terms: int
    residual: float
    rho: float
    ratios: list


@dataclass
class BoundaryResult:
    corrected: np.ndarray
    coefficients: np.ndarray
    J: np.ndarray
    homogeneous: list
    bc_residual: float
    cond: float
    diagnostics: dict


class GreensContext:
    """Grid, decomposition and kernels for one ``(profile, r0, M, eps)``.

    Parameters
    ----------
    profile, gd, eps
        Flow, critical-layer data and resistivity.
    exponents : (gamma, delta, omega), optional
    interval : (lo, hi), optional
        Computational interval.
    factor : float
        Layer resolution ``h <= eps^{1/3}/factor``; ``h`` is further limited
        by ``l_min / 8`` with ``l = eps^{2/3}/sqrt(|M T|)``.
    N : int
        Weight exponent.
    anchors : (p, q), optional
        Radii forced onto grid nodes (default: the physical domain ends).
    """

    def __init__(self, profile: VelocityProfile, gd: GilbertData, eps: float, exponents=None, *,
                 interval=None, factor: float = 40.0, N: int = 4, anchors=None, max_nodes: int = 400_000):
        self.profile, self.gd, self.eps = profile, gd, float(eps)
        self.decomp = decompose(profile, gd.r0, eps, exponents, interval=interval, M=gd.M)
        self.norms = WeightedNorms(eps, gd.r0, N)
        lo, hi = self.decomp.interval
        probe = np.linspace(max(lo, 1e-6), hi, 4001)
        Tmax = float(np.max(np.abs(gd.M * evaluate_transport(profile, gd.r0, probe))))
        ell = eps ** (2.0 / 3.0) / math.sqrt(max(Tmax, 1e-300))
        h_target = min(eps ** (1.0 / 3.0) / factor, ell / 8)
        d = profile.domain
        if lo == 0.0:
            q = d.q if d.bounded else hi
            n = int(math.ceil(q / h_target - 0.5))
            h = q / (n + 0.5)
            count = int(math.floor(hi / h + 0.5 + 1e-9))
            r = (np.arange(1, count + 1) - 0.5) * h
            self.p_index = None
            self.q_index = n - 1
        else:
            if anchors is None:
                anchors = (d.p, d.q if d.bounded else None)
            p = anchors[0]
            if anchors[1] is not None:
                n_pq = int(math.ceil((anchors[1] - p) / h_target))
                h = (anchors[1] - p) / n_pq
            else:
                h = h_target
            kl = int(math.floor((p - lo) / h + 1e-9))
            kr = int(math.floor((hi - p) / h + 1e-9))
            r = p + h * np.arange(-kl, kr + 1)
            self.p_index = kl
            self.q_index = kl + n_pq if anchors[1] is not None else None
        if r.size > max_nodes:
            raise GreensConfigError(f"grid would need {r.size} nodes (> {max_nodes})")
        self.r, self.h = r, float(h)
        self.T = evaluate_transport(profile, gd.r0, r)
        self._index_regions()
        self.zeta = math.sqrt(2.0) * root_re_positive(gd.c2_sqrt) * eps ** (-1.0 / 3.0)
        self._lv_wronskian = None
        self._weber_cache = {}
        self._cells = {}

    # -- grid bookkeeping ---------------------------------------------------

    def _node(self, x: float) -> int:
        return int(np.clip(np.rint((x - self.r[0]) / self.h), 0, self.r.size - 1))

    def _index_regions(self):
        """Snap region boundaries and cell knots to node indices."""
        out = []
        last = self.r.size - 1
        for k, R in enumerate(self.decomp.regions):
            ia = 0 if k == 0 else self._node(R.a)
            ib = last if k == len(self.decomp.regions) - 1 else self._node(R.b)
            cells = []
            if R.knots:
                idx = sorted({self._node(a) for a, _ in R.cells()} | {ia})
                idx = [i for i in idx if ia <= i < ib] + [ib]
                cells = [(idx[j], idx[j + 1]) for j in range(len(idx) - 1) if idx[j + 1] > idx[j]]
            out.append((R, ia, ib, cells))
        self.indexed = out

    @property
    def n(self) -> int:
        return self.r.size

    def zeros(self) -> np.ndarray:
        return np.zeros((2, self.n), dtype=complex)

    def region_mask(self, tags) -> np.ndarray:
        """Trapezoid-consistent indicator weights: 1 inside, 1/2 at shared boundary nodes."""
        if isinstance(tags, str):
            tags = (tags,)
        w = np.zeros(self.n)
        for R, ia, ib, _ in self.indexed:
            if R.tag in tags:
                seg = np.ones(ib - ia + 1)
                if ia > 0:
                    seg[0] = 0.5
                if ib < self.n - 1:
                    seg[-1] = 0.5
                w[ia:ib + 1] += seg
        return w

    # -- basis maps ---------------------------------------------------------

    def to_b(self, V):
        return v_to_b(V, self.gd, self.eps)

    def to_v(self, b):
        return b_to_v(b, self.gd, self.eps)

    def x_norm(self, f) -> float:
        return self.norms.x_norm(self.r, f)

    def y_norm(self, f) -> float:
        return self.norms.y_norm(self.r, f)

    # -- frozen-coefficient kernels ----------------------------------------

    def _cell_table(self, direction):
        """Per-cell frozen constants and tail factors, built once per direction."""
        table = self._cells.get(direction)
        if table is not None:
            return table
        eps, h = self.eps, self.h
        table = []
        for R, ia, ib, cells in self.indexed:
            if R.tag != direction:
                continue
            for ca, cb in cells:
                MT = self.gd.M * float(self.T[ca])
                if abs(MT) < 1e-14:
                    raise DecompositionError(f"frozen coefficient vanishes at r = {self.r[ca]:.6g}")
                beta = root_re_positive(1j * MT)
                k = beta * eps ** (-2.0 / 3.0)
                reach = int(_DECAY_CUT / max(k.real * h, 1e-300)) + 1
                j1 = min(self.n, cb + 1 + reach)
                j0 = max(0, ca - reach)
                right = np.exp(-k * h * np.arange(1, j1 - cb))
                left = np.exp(-k * h * np.arange(ca - j0, 0, -1))
                table.append((ca, cb, k, -(eps ** (-1.0 / 3.0)) / (2 * beta),
                              _phi1(-k * h), _psi(-k * h), j0, j1, left, right))
        self._cells[direction] = table
        return table

    def _frozen_cell(self, f, cell, out):
        ia, ib, k, pref, p1, ps, j0, j1, left, right = cell
        h = self.h
        seg = f[:, ia:ib + 1]
        IL = h * (seg[:, 1:] * p1 + (seg[:, :-1] - seg[:, 1:]) * ps)
        IR = h * (seg[:, :-1] * p1 + (seg[:, 1:] - seg[:, :-1]) * ps)
        Lp = _exp_sweep(k, h, IL)
        Rp = _exp_sweep(k, h, IR[:, ::-1])[:, ::-1]
        out[:, ia:ib + 1] += pref * (Lp + Rp)
        if j1 > ib + 1:
            out[:, ib + 1:j1] += (pref * Lp[:, -1:]) * right
        if ia > j0:
            out[:, j0:ia] += (pref * Rp[:, :1]) * left

    def g13_apply(self, f, direction: str = "towards_infinity") -> np.ndarray:
        """Frozen-coefficient kernels on the cells of one partitioned direction.

        Each cell ``[r_j, r_{j+1})`` contributes
        ``-eps^{-1/3}/(2 beta_j) int_cell exp(-beta_j eps^{-2/3} |r - s|) f(s) ds``
        with ``beta_j = sqrt(i M T(r_j))`` (``Re > 0``), integrated exactly
        against the piecewise-linear interpolant of ``f``.
        """
        if direction not in ("towards_zero", "towards_infinity"):
            raise GreensConfigError(f"unknown direction {direction!r}")
        f = np.asarray(f, dtype=complex)
        out = self.zeros()
        for cell in self._cell_table(direction):
            if np.any(f[:, cell[0]:cell[1] + 1]):
                self._frozen_cell(f, cell, out)
        return out

    # -- critical region ----------------------------------------------------

    def check_lambda(self, lam: complex) -> complex:
        eta = self.gd.eta_of(lam, self.eps)
        if eta == 0:
            raise WronskianPoleError("eta = 0: the Weber Wronskian has a pole at lambda_star")
        if abs((-self.gd.c2_sqrt * eta).real) > 2:
            raise GreensDomainError(f"eta = {eta!r} outside the window |Re(-c2^(1/2) eta)| <= 2")
        return eta

    def _two_sided(self, ya, yb, la, lb, g, ia, ib, W, out_idx):
        """``u = [y_b(r) int_{<r} y_a g + y_a(r) int_{>r} y_b g] / W`` on ``out_idx`` nodes.

        ``ya, yb, la, lb`` are mantissas/scales on ``out_idx`` (which must
        contain the support ``[ia, ib]``); the support integrals use the
        trapezoid rule.
        """
        pos = np.searchsorted(out_idx, np.arange(ia, ib + 1))
        sa, sb = la[pos], lb[pos]
        Ra, Rb = sa.max(), sb.max()
        if sa.max() - sa.min() > 600 or sb.max() - sb.min() > 600:
            raise GreensConfigError("support too wide for the kernel scaling")
        qa = ya[pos] * np.exp(sa - Ra) * g
        qb = yb[pos] * np.exp(sb - Rb) * g
        A_in = _cum_trapz(qa, self.h)
        B_in = _cum_trapz(qb[::-1], self.h)[::-1]
        idx = out_idx
        A = np.where(idx < ia, 0.0, np.where(idx > ib, A_in[-1], 0.0)).astype(complex)
        B = np.where(idx > ib, 0.0, np.where(idx < ia, B_in[0], 0.0)).astype(complex)
        A[pos] = A_in
        B[pos] = B_in
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            t1 = yb * A * np.exp(lb + Ra)
            t2 = ya * B * np.exp(la + Rb)
        t1[A == 0] = 0
        t2[B == 0] = 0
        return (t1 + t2) / W

    def g2_apply(self, f, lam: complex) -> np.ndarray:
        """Parabolic cylinder kernel of the frozen critical operator ``L2 - lambda``.

        Component ``c`` solves
        ``eps u'' - [eps^{-1/3} c2 x^2 + eps^{1/3} q_c] u = f_c`` with
        Weber index ``nu_1 = -eta/(2 c2^{1/2})`` and
        ``nu_2 = nu_1 - kappa/c2^{1/2}``, using ``y_b = D_nu(zeta x)`` and
        ``y_a = D_nu(-zeta x)``, ``zeta = sqrt(2) c2^{1/4} eps^{-1/3}``.
        """
        eta = self.check_lambda(lam)
        f = np.asarray(f, dtype=complex)
        out = self.zeros()
        (R, ia, ib, _), = [t for t in self.indexed if t[0].tag == "critical"]
        if not np.any(f[:, ia:ib + 1]):
            return out
        idx, kernels = self._weber_kernels(lam, eta, ia, ib)
        for c, (ya, yb, la, lb, W) in enumerate(kernels):
            g = f[c, ia:ib + 1] / self.eps
            if np.any(g):
                out[c, idx] = self._two_sided(ya, yb, la, lb, g, ia, ib, W, idx)
        return out

    def _weber_kernels(self, lam, eta, ia, ib):
        """``D_nu(+-zeta x)`` on the output nodes and the Wronskian, cached per ``lambda``."""
        key = complex(lam)
        hit = self._weber_cache.get(key)
        if hit is not None:
            return hit
        z = self.zeta * (self.r - self.gd.r0)
        keep = np.abs(z) <= G2_ZMAX
        keep[ia:ib + 1] = True
        idx = np.flatnonzero(keep)
        zz = z[idx]
        m = idx.size
        kernels = []
        for nu in (self.gd.nu(eta), self.gd.nu_second(eta)):
            v, _, l = sf.parabolic_cylinder_D_array(complex(nu), np.concatenate([zz, -zz]))
            W = -self.zeta * math.sqrt(2 * math.pi) * complex(rgamma(-complex(nu)))
            if W == 0:
                raise WronskianPoleError(f"nu = {nu!r} is a non-negative integer")
            kernels.append((v[m:], v[:m], l[m:], l[:m], W))
        if len(self._weber_cache) >= 64:
            self._weber_cache.pop(next(iter(self._weber_cache)))
        self._weber_cache[key] = (idx, kernels)
        return idx, kernels

    # -- near zero -----------------------------------------------------------

    def g0_apply(self, f) -> np.ndarray:
        """Bessel kernel on ``[0, eps^gamma)`` in the ``V_+ = V1 + V2``, ``V_- = V1 - V2`` variables.

        ``V_+ = G f_+`` and ``V_- = G(f_- - (2 i M eps^{1/3} / (alpha r^2)) V_+)``
        where ``G`` inverts ``eps(u'' + u'/r) - (eps^{1/3} M^2 / r^2 + i eps^{-1/3} M tau) u``
        with ``I_nu``, ``K_nu`` of order ``nu = |M| eps^{-1/3}``.
        """
        regs = [t for t in self.indexed if t[0].tag == "near_zero"]
        out = self.zeros()
        if not regs:
            return out
        (R, ia, ib, _), = regs
        f = np.asarray(f, dtype=complex)
        if not np.any(f[:, ia:ib + 1]):
            return out
        tau = self.decomp.tau
        if tau is None or tau == 0 or not np.isfinite(tau):
            raise DecompositionError("near-zero degeneracy: lim_{r->0} T(r) = 0")
        eps, gd = self.eps, self.gd
        nu = abs(gd.M) * eps ** (-1.0 / 3.0)
        sqb = root_re_positive(1j * tau * gd.M * eps ** (-4.0 / 3.0))
        fp = f[0, ia:ib + 1] + f[1, ia:ib + 1]
        fm = f[0, ia:ib + 1] - f[1, ia:ib + 1]
        Vp = self._bessel_scalar(fp, ia, ib, nu, sqb)
        coup = 2j * gd.M * eps ** (1.0 / 3.0) / (gd.alpha_basis * self.r**2)
        rhs = np.zeros(self.n, dtype=complex)
        rhs[ia:ib + 1] = fm
        rhs[ia:ib + 1] -= coup[ia:ib + 1] * Vp[ia:ib + 1]
        Vm = self._bessel_scalar(rhs[ia:ib + 1], ia, ib, nu, sqb)
        # the coupling also acts on V_+ outside the support, where it is
        # below the accuracy of the frozen operator and is left to the error term
        out[0] = 0.5 * (Vp + Vm)
        out[1] = 0.5 * (Vp - Vm)
        return out

    def _bessel_scalar(self, g, ia, ib, nu, sqb):
        """``-eps^{-1} [K(r) int_0^r s I f + I(r) int_r^inf s K f]`` on all nodes."""
        r = self.r
        w = sqb * r
        d = sf.bessel_IK_scaled(nu, w)
        I, K, L = d["I"], d["K"], d["logI"]
        s = r[ia:ib + 1]
        Ls = L[ia:ib + 1]
        h = self.h
        n = self.n
        # scaled running integrals: A_i e^{-L_i} and B_i e^{+L_i}
        qa = s * I[ia:ib + 1] * g
        qb = s * K[ia:ib + 1] * g
        m = ib - ia + 1
        A = np.zeros(m, dtype=complex)
        B = np.zeros(m, dtype=complex)
        # the integral from 0 to r[ia]: f vanishes left of the support except
        # on a staggered grid, where [0, r_0] is covered by the half cell
        A[0] = 0.5 * r[ia] * qa[0] if ia == 0 else 0.0
        for i in range(1, m):
            A[i] = np.exp(Ls[i - 1] - Ls[i]) * (A[i - 1] + 0.5 * h * qa[i - 1]) + 0.5 * h * qa[i]
        for i in range(m - 2, -1, -1):
            B[i] = np.exp(Ls[i] - Ls[i + 1]) * (B[i + 1] + 0.5 * h * qb[i + 1]) + 0.5 * h * qb[i]
        u = np.zeros(n, dtype=complex)
        u[ia:ib + 1] = K[ia:ib + 1] * A + I[ia:ib + 1] * B
        if ib + 1 < n:
            with np.errstate(under="ignore"):
                u[ib + 1:] = K[ib + 1:] * A[-1] * np.exp(Ls[-1] - L[ib + 1:])
        if ia > 0:
            with np.errstate(under="ignore"):
                u[:ia] = I[:ia] * B[0] * np.exp(L[:ia] - Ls[0])
        return -u / self.eps

    # -- linear vanish --------------------------------------------------------

    def lv_wronskian_unit(self) -> complex:
        """``Ai(omega z) Ai'(z) - omega Ai'(omega z) Ai(z)`` at ``z = 0`` for ``omega = e^{2 pi i/3}``, computed once."""
        if self._lv_wronskian is None:
            om = cmath.exp(2j * math.pi / 3)
            v, d, _ = sf.airy_scaled(np.array([0j]))
            self._lv_wronskian = complex(v[0] * d[0] - om * d[0] * v[0])
        return self._lv_wronskian

    def glv_apply(self, f, j: int | None = None) -> np.ndarray:
        """Airy kernel of ``eps u'' - i eps^{-1/3} tau_j (r - s_j) u`` on each linear-vanish region.

        ``a1 = Ai(g (r - s_j))`` decays to the right and
        ``a2 = Ai(e^{2 pi i sigma/3} g (r - s_j))`` to the left, with
        ``g = |tau_j|^{1/3} eps^{-4/9} e^{i sigma pi/6}``, ``tau_j = M T'(s_j)``.
        """
        f = np.asarray(f, dtype=complex)
        out = self.zeros()
        lv = [t for t in self.indexed if t[0].tag == "linear_vanish"]
        for k, (R, ia, ib, _) in enumerate(lv):
            if j is not None and k != j:
                continue
            if not np.any(f[:, ia:ib + 1]):
                continue
            tau = self.gd.M * R.slope
            if tau == 0:
                raise DecompositionError("tau_j = 0 in a linear-vanish region")
            sig = 1.0 if tau > 0 else -1.0
            g = abs(tau) ** (1.0 / 3.0) * self.eps ** (-4.0 / 9.0) * cmath.exp(1j * sig * math.pi / 6)
            om = cmath.exp(2j * sig * math.pi / 3)
            x = self.r - R.center
            a1, _, l1 = sf.airy_scaled(g * x)
            a2, _, l2 = sf.airy_scaled(om * g * x)
            Wz = self.lv_wronskian_unit() if sig > 0 else self.lv_wronskian_unit().conjugate()
            W = g * Wz
            idx = np.arange(self.n)
            for c in range(2):
                gc = f[c, ia:ib + 1] / self.eps
                if np.any(gc):
                    out[c] += self._two_sided(a2, a1, l2, l1, gc, ia, ib, W, idx)
        return out

    # -- glued operator --------------------------------------------------------

    def split(self, f, tag) -> np.ndarray:
        return np.asarray(f) * self.region_mask(tag)

    def g_extra(self, f) -> np.ndarray:
        """The ``lambda``-independent part: all non-critical kernels."""
        f = np.asarray(f, dtype=complex)
        out = self.g13_apply(f, "towards_zero") + self.g13_apply(f, "towards_infinity")
        out += self.g0_apply(f)
        out += self.glv_apply(f)
        return out

    def glued_apply(self, f, lam: complex) -> np.ndarray:
        """``G^lambda f``: every region kernel applied to its own piece of ``f``."""
        f = np.asarray(f, dtype=complex)
        return self.g2_apply(f, lam) + self.g_extra(f)

    # -- error operator and resolvent ----------------------------------------

    def apply_L(self, V, lam: complex = 0.0) -> np.ndarray:
        """``(L - lambda) V`` in the V basis via the b-basis stencil (interior nodes)."""
        b = self.to_b(V)
        Lb = stencil_apply(self.profile, self.gd, self.eps, self.r, b, lam=lam)
        return self.to_v(Lb)

    def error_apply(self, f, lam: complex):
        """``E f = (L - lambda) G^lambda f - f`` and the ratio ``||E f||_Y / ||f||_Y``."""
        f = np.asarray(f, dtype=complex)
        G = self.glued_apply(f, lam)
        E = self.apply_L(G, lam)
        E[:, 1:-1] -= f[:, 1:-1]
        E[:, [0, -1]] = 0.0
        fy = self.y_norm(f)
        return E, (self.y_norm(E) / fy if fy > 0 else 0.0)

    def neumann_resolvent(self, f, lam: complex, *, n_max: int = 150, tol: float = 1e-10,
                          window: int = 8, blowup: float = 1e8) -> NeumannResult:
        """``(L - lambda)^{-1} f ~ G^lambda sum_n (-E)^n f``.

        The residual ``(L - lambda) x - f`` equals ``(-1)^n E^{n+1} f`` exactly,
        so the series stops once ``||E^{n+1} f||_Y <= tol ||f||_Y`` and that
        norm is the certified residual.  A transient growth of the first
        terms is tolerated; after ``2 window`` terms the series is declared
        divergent when the geometric mean of the last ``window`` ratios
        reaches 1, and at any point when a term exceeds ``blowup ||f||_Y``.

        Raises
        ------
        NeumannDivergenceError
            Carries the observed contraction rate and ``lambda``.
        """
        f = np.asarray(f, dtype=complex)
        fy = self.y_norm(f)
        if fy == 0:
            return NeumannResult(self.zeros(), 0, 0.0, 0.0, [])
        acc = f.copy()
        e, ey = f, fy
        ratios = []
        for n in range(n_max + 1):
            e_next, _ = self.error_apply(e, lam)
            ny = self.y_norm(e_next)
            ratios.append(ny / ey if ey > 0 else 0.0)
            if ny <= tol * fy:
                x = self.glued_apply(acc, lam)
                return NeumannResult(x, n, ny / fy, _tail_rate(ratios, window), ratios)
            rate = _tail_rate(ratios, window)
            if ny > blowup * fy or (len(ratios) >= 2 * window and rate >= 1.0):
                raise NeumannDivergenceError(
                    f"Neumann series diverges at lambda = {complex(lam)!r}: rate {rate:.3g}", rate, lam)
            e, ey = e_next, ny
            acc = acc + (-1) ** (n + 1) * e
        rate = _tail_rate(ratios, window)
        raise NeumannDivergenceError(f"no convergence in {n_max} terms at lambda = {complex(lam)!r}, "
                                     f"rate {rate:.3g}", rate, lam)

    def contour(self, radius: float = 0.05, n_points: int = 16, center=None):
        """Points ``lambda_k = c + eps^{1/3} radius e^{i theta_k}`` and their weights."""
        c = self.gd.lambda_star(self.eps) if center is None else center
        R = radius * self.eps ** (1.0 / 3.0)
        th = 2 * np.pi * np.arange(n_points) / n_points
        pts = c + R * np.exp(1j * th)
        return pts, R * np.exp(1j * th) / n_points

    def riesz_project(self, f, *, radius: float = 0.05, n_points: int = 16, tol: float = 1e-10,
                      center=None):
        """``P f = (2 pi i)^{-1} oint (lambda - L)^{-1} f d lambda`` by trapezoid quadrature."""
        if n_points < 8:
            raise GreensConfigError("n_points must be at least 8")
        f = np.asarray(f, dtype=complex)
        pts, wts = self.contour(radius, n_points, center)
        acc = self.zeros()
        for lam, wk in zip(pts, wts):
            res = self.neumann_resolvent(f, lam, tol=tol)
            acc -= wk * res.x
        return acc

    def direct_solve(self, f, lam: complex, *, boundary=None):
        """Banded solve of ``(L - lambda) x = f`` at interior nodes.

        The end values of ``x`` are zero, or taken from the end columns of
        ``boundary`` (V basis) when given.
        """
        f = np.asarray(f, dtype=complex)
        xb = self.zeros()
        rhs = f.copy()
        if boundary is not None:
            xb[:, [0, -1]] = np.asarray(boundary)[:, [0, -1]]
            rhs = rhs - self.apply_L(xb, lam)
        grid = RadialGrid(self.r[1:-1].copy(), self.h, "annulus", "dirichlet", "dirichlet")
        opr = assemble(self.profile, self.gd, self.eps, grid)
        xb_int = solve_banded(opr, self.to_b(rhs[:, 1:-1]), shift=lam)
        xb[:, 1:-1] = self.to_v(xb_int)
        return xb

    def compare_direct(self, f, lam: complex, *, tol: float = 1e-10) -> dict:
        """Neumann resolvent against the banded direct solve on the same nodes.

        The two answers differ by ``(L - lambda)^{-1}`` applied to the
        Neumann residual, so the comparison reports

        * ``certified``: ``||(L - lambda) x_N - f||_Y / ||f||_Y``;
        * ``diff_residual``: ``||(L - lambda)(x_N - x_D)||_Y / ||f||_Y``;
        * ``diff_x`` and ``predicted_x``: ``||x_N - x_D||_X`` and the X norm of
          the direct solve of the residual, both relative to ``||x_D||_X``.

        ``agree`` holds when ``diff_residual <= 2 certified`` and ``diff_x``
        matches ``predicted_x`` to 10 percent.
        """
        f = np.asarray(f, dtype=complex)
        fy = self.y_norm(f)
        res = self.neumann_resolvent(f, lam, tol=tol)
        xd = self.direct_solve(f, lam, boundary=res.x)
        d = res.x - xd
        Ld = self.apply_L(d, lam)
        R = self.apply_L(res.x, lam)
        R[:, 1:-1] -= f[:, 1:-1]
        R[:, [0, -1]] = 0.0
        pred = self.direct_solve(R, lam)
        xn = self.x_norm(xd)
        out = {
            "lambda_re": float(np.real(lam)), "lambda_im": float(np.imag(lam)),
            "n_terms": res.n_terms, "rate": res.rho,
            "certified": res.residual,
            "diff_residual": self.y_norm(Ld) / fy,
            "diff_x": self.x_norm(d) / xn,
            "predicted_x": self.x_norm(pred) / xn,
        }
        floor = 1e-12
        out["agree"] = bool(out["diff_residual"] <= 2 * out["certified"] + floor
                            and abs(out["diff_x"] - out["predicted_x"]) <= 0.1 * out["predicted_x"] + floor)
        return out

    # -- boundary correction ------------------------------------------------

    def boundary_functionals(self, b) -> np.ndarray:
        """``(b_r(p), b_r(q), (r b_theta)'(p), (r b_theta)'(q))`` with one-sided stencils."""
        ip, iq = self.p_index, self.q_index
        if ip is None or iq is None:
            raise GreensConfigError("boundary correction needs both ends on grid nodes")
        r, h = self.r, self.h
        y = r * b[1]
        dp = (-3 * y[ip] + 4 * y[ip + 1] - y[ip + 2]) / (2 * h)
        dq = (3 * y[iq] - 4 * y[iq - 1] + y[iq - 2]) / (2 * h)
        return np.array([b[0, ip], b[0, iq], dp, dq])

    def homogeneous_solutions(self, lam: complex, *, tol: float = 1e-10) -> list:
        """``v_1..v_4`` (b basis): resolvent of indicator data just outside ``[p, q]``."""
        ip, iq = self.p_index, self.q_index
        width = self.eps ** self.decomp.delta
        r = self.r
        left = ((r >= r[ip] - width - 1e-12) & (r <= r[ip])).astype(float)
        right = ((r >= r[iq]) & (r <= r[iq] + width + 1e-12)).astype(float)
        out = []
        for ind, comp in ((left, 0), (right, 0), (left, 1), (right, 1)):
            data = np.zeros((2, self.n), dtype=complex)
            data[comp] = ind
            res = self.neumann_resolvent(self.to_v(data), lam, tol=tol)
            out.append(self.to_b(res.x))
        return out

    def boundary_correct(self, particular_b, lam: complex, *, homogeneous=None, tol: float = 1e-10,
                         det_floor: float = 1e-300, cond_max: float = 1e12) -> BoundaryResult:
        """Subtract ``sum c_i v_i`` so that ``b_r = (r b_theta)' = 0`` at ``p`` and ``q``.

        ``c = J^{-1} (boundary residues of the particular solution)``, with
        ``J[k, i]`` the ``k``-th boundary functional of ``v_i``.

        Raises
        ------
        BoundaryDegeneracyError
            If ``|det J| < det_floor`` or ``cond(J) > cond_max``.
        """
        vs = homogeneous if homogeneous is not None else self.homogeneous_solutions(lam, tol=tol)
        J = np.column_stack([self.boundary_functionals(v) for v in vs])
        det = np.linalg.det(J)
        cond = np.linalg.cond(J)
        if not np.isfinite(det) or abs(det) < det_floor or not cond <= cond_max:
            raise BoundaryDegeneracyError(f"|det J| = {abs(det):.3g}, cond = {cond:.3g}; column scales "
                                          f"{np.abs(J).max(axis=0)}")
        res = self.boundary_functionals(particular_b)
        c = np.linalg.solve(J, res)
        corrected = np.array(particular_b, dtype=complex, copy=True)
        for ci, v in zip(c, vs):
            corrected -= ci * v
        bc = self.boundary_functionals(corrected)
        scale = max(np.max(np.abs(corrected[:, self.p_index:self.q_index + 1])), 1e-300)
        Jinv = np.linalg.inv(J)
        diag = {
            "v11_p": abs(vs[0][0, self.p_index]), "v11_q": abs(vs[0][0, self.q_index]),
            "v21_q": abs(vs[1][0, self.q_index]), "v21_p": abs(vs[1][0, self.p_index]),
            "Jinv_norm": float(np.linalg.norm(Jinv, 2)),
        }
        return BoundaryResult(corrected, c, J, vs, float(np.max(np.abs(bc)) / scale), float(cond), diag)

    # -- ansatz -------------------------------------------------------------

    def ansatz(self) -> np.ndarray:
        """Gilbert mode ``(exp(-eps^{-2/3} c2^{1/2} (r - r0)^2 / 2), 0)`` on the grid."""
        x = self.r - self.gd.r0
        g = np.exp(-0.5 * self.eps ** (-2.0 / 3.0) * self.gd.c2_sqrt * x**2)
        return np.stack([g, np.zeros_like(g)])


def _tail_rate(ratios, window):
    tail = [max(q, 1e-300) for q in ratios[-window:]]
    return float(np.exp(np.mean(np.log(tail)))) if tail else 0.0


def random_test_functions(ctx: GreensContext, count: int = 10, *, seed: int = 2024, support=None,
                          n_bumps: int = 4) -> list:
    """Smooth random V-basis inputs: sums of Gaussian bumps with complex amplitudes.

    Centres are drawn from ``support`` (default: the physical domain), widths
    between ``eps^{1/3}`` and ``0.2``; a smooth window tapers the sum to zero
    at the ends of the support.
    """
    rng = np.random.default_rng(seed)
    d = ctx.profile.domain
    lo, hi = support if support is not None else (max(d.p, ctx.r[0]), min(d.q, ctx.r[-1]))
    out = []
    e13 = ctx.eps ** (1.0 / 3.0)
    for _ in range(count):
        f = ctx.zeros()
        for _ in range(n_bumps):
            c = rng.uniform(lo, hi)
            wdt = math.exp(rng.uniform(math.log(e13), math.log(0.2)))
            amp = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            f += amp[:, None] * np.exp(-(((ctx.r - c) / wdt) ** 2))[None, :]
        out.append(f * _smooth_window(ctx.r, lo, hi, 0.1 * (hi - lo)))
    return out


def _smooth_step(t):
    """C-infinity transition from 0 (``t <= 0``) to 1 (``t >= 1``)."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def _smooth_window(r, lo, hi, width):
    return _smooth_step((r - lo) / width) * _smooth_step((hi - r) / width)
