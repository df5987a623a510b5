"""Helical velocity profiles, the transport function and admissibility audits.

A Ponomarenko-type flow is described by an angular velocity ``Omega(r)`` and an
axial velocity ``U(r)``.  For a critical radius ``r0`` the transport function

.. math::

    T(r) = \\Omega(r) - \\Omega(r_0) - \\rho\\,(U(r) - U(r_0)),
    \\qquad \\rho = \\Omega'(r_0) / U'(r_0),

has a double zero at ``r0``.  Growing modes concentrate in a layer around that
double zero, so most of the numerics downstream only need ``T`` and a few
derivatives of ``Omega`` and ``U``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

__all__ = [
    "Domain",
    "VelocityProfile",
    "TransportFunction",
    "AuditReport",
    "ModeSelection",
    "ProfileError",
    "DegeneratePitchError",
    "NonSimpleZeroError",
    "ModeSelectionError",
    "simplified",
    "gaussian",
    "compact",
    "taylor_couette",
    "custom",
    "from_csv",
    "make_profile",
    "evaluate_transport",
    "transport_function",
    "find_zero_set",
    "audit",
    "select_integer_modes",
    "real_growth_rate",
]

MAX_ORDER = 3
DOMAIN_KINDS = ("full_line", "disk", "annulus", "exterior")


class ProfileError(ValueError):
    """Invalid or inadmissible velocity profile."""


class DegeneratePitchError(ProfileError):
    """``U'(r0) = 0``: the field-line pitch at the critical radius is undefined."""


class NonSimpleZeroError(ProfileError):
    """A zero of ``T`` away from ``r0`` has a vanishing slope."""


class ModeSelectionError(ProfileError):
    """No integer mode pair can be reached inside the admissible window."""


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Domain:
    """Radial interval on which the modal problem is posed.

    ``kind`` is one of ``full_line`` (``[0, inf)``), ``disk`` (``[0, q]``),
    ``annulus`` (``[p, q]``) or ``exterior`` (``[p, inf)``).
    """

    kind: str = "full_line"
    p: float = 0.0
    q: float = math.inf

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ProfileError(f"unknown domain kind {self.kind!r}")
        if self.kind in ("full_line", "disk") and self.p != 0.0:
            raise ProfileError(f"{self.kind} domain must start at r = 0")
        if self.kind in ("annulus", "exterior") and not self.p > 0:
            raise ProfileError(f"{self.kind} domain needs p > 0")
        if self.kind in ("disk", "annulus") and not (math.isfinite(self.q) and self.q > self.p):
            raise ProfileError(f"{self.kind} domain needs finite q > p")
        if self.kind in ("full_line", "exterior") and math.isfinite(self.q):
            raise ProfileError(f"{self.kind} domain is unbounded; q must be inf")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.q)

    @property
    def contains_origin(self) -> bool:
        return self.p == 0.0

    @classmethod
    def make(cls, kind: str, p: float | None = None, q: float | None = None) -> "Domain":
        if kind in ("full_line",):
            return cls(kind)
        if kind == "disk":
            return cls(kind, 0.0, float(q))
        if kind == "annulus":
            return cls(kind, float(p), float(q))
        if kind == "exterior":
            return cls(kind, float(p))
        raise ProfileError(f"unknown domain kind {kind!r}")


# --------------------------------------------------------------------------
# truncated Taylor jets, used to build closed-form derivatives of presets

def _jet_mul(a, b):
    """Leibniz rule on derivative stacks ``[f, f', f'', f''']``."""
    n = len(a)
    out = []
    for k in range(n):
        out.append(sum(math.comb(k, j) * a[j] * b[k - j] for j in range(k + 1)))
    return out


def _jet_div(a, b):
    out = []
    for k in range(len(a)):
        acc = a[k] - sum(math.comb(k, j) * b[j] * out[k - j] for j in range(1, k + 1))
        out.append(acc / b[0])
    return out


def _exp_bump(t):
    """Derivative stack of ``exp(-1/t)`` for ``t > 0`` (zero elsewhere)."""
    t = np.asarray(t, dtype=float)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    f = np.where(pos, np.exp(-1.0 / ts), 0.0)
    d1 = f / ts**2
    d2 = f * (1.0 - 2.0 * ts) / ts**4
    d3 = f * (6.0 * ts**2 - 6.0 * ts + 1.0) / ts**6
    return [f, np.where(pos, d1, 0.0), np.where(pos, d2, 0.0), np.where(pos, d3, 0.0)]


def _smooth_cutoff_jet(r, r_in, r_out):
    """C-infinity cutoff equal to 1 below ``r_in`` and 0 above ``r_out``."""
    width = r_out - r_in
    t = (r_out - np.asarray(r, dtype=float)) / width
    fa = _exp_bump(t)
    fb = _exp_bump(1.0 - t)
    # d/dr = -(1/width) d/dt ; d/dt of f(1-t) flips odd derivatives
    fb = [fb[0], -fb[1], fb[2], -fb[3]]
    psi = _jet_div(fa, [fa[k] + fb[k] for k in range(4)])
    return [psi[k] * (-1.0 / width) ** k for k in range(4)]


# --------------------------------------------------------------------------
# profiles

FieldFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class VelocityProfile:
    """Angular velocity ``Omega`` and axial velocity ``U`` with derivatives.

    Parameters
    ----------
    omega_fn, uz_fn : callable
        ``f(r, order)`` returning the ``order``-th radial derivative
        (``order`` in 0..3) at the radii ``r``.
    domain : Domain
        Radial interval the profile is posed on.
    tag : str
        Preset name (``simplified``, ``gaussian``, ``compact``,
        ``taylor_couette`` or ``custom``).
    params : dict
        Preset parameters, kept for reporting.
    """

    omega_fn: FieldFn
    uz_fn: FieldFn
    domain: Domain = field(default_factory=Domain)
    tag: str = "custom"
    params: dict = field(default_factory=dict)

    def omega(self, r, order: int = 0):
        if not 0 <= order <= MAX_ORDER:
            raise ValueError("derivative order must be between 0 and 3")
        return self.omega_fn(np.asarray(r, dtype=float), order)

    def uz(self, r, order: int = 0):
        if not 0 <= order <= MAX_ORDER:
            raise ValueError("derivative order must be between 0 and 3")
        return self.uz_fn(np.asarray(r, dtype=float), order)

    def with_domain(self, domain: Domain) -> "VelocityProfile":
        return VelocityProfile(self.omega_fn, self.uz_fn, domain, self.tag, dict(self.params))

    def pitch_ratio(self, r):
        """``Omega'(r) / U'(r)``."""
        return self.omega(r, 1) / self.uz(r, 1)


def _poly_field(coeffs):
    """Field for a polynomial ``sum c_k r^k``."""
    poly = np.polynomial.Polynomial(coeffs)
    derivs = [poly.deriv(k) if k else poly for k in range(MAX_ORDER + 1)]

    def fn(r, order):
        return derivs[order](r) + 0.0 * r

    return fn


def simplified(domain: Domain | None = None) -> VelocityProfile:
    """``Omega = 1 - r``, ``U = 1 - r^2``."""
    return VelocityProfile(_poly_field([1.0, -1.0]), _poly_field([1.0, 0.0, -1.0]),
                           domain or Domain(), "simplified", {})


def _gauss_field(a):
    def fn(r, order):
        e = np.exp(-a * r**2)
        if order == 0:
            return e
        if order == 1:
            return -2 * a * r * e
        if order == 2:
            return (4 * a**2 * r**2 - 2 * a) * e
        return (12 * a**2 * r - 8 * a**3 * r**3) * e

    return fn


def gaussian(a: float = 1.0, b: float = 2.0, domain: Domain | None = None) -> VelocityProfile:
    """Finite-energy profile ``Omega = exp(-a r^2)``, ``U = exp(-b r^2)``."""
    if not (a > 0 and b > 0) or a == b:
        raise ProfileError("gaussian profile needs a, b > 0 and a != b")
    return VelocityProfile(_gauss_field(a), _gauss_field(b), domain or Domain(), "gaussian",
                           {"a": a, "b": b})


def compact(R0: float = 2.0, R1: float = 3.0, domain: Domain | None = None) -> VelocityProfile:
    """Simplified profile multiplied by a smooth cutoff supported in ``r < R1``."""
    if not 0 < R0 < R1:
        raise ProfileError("compact profile needs 0 < R0 < R1")

    def make(coeffs):
        base = _poly_field(coeffs)

        def fn(r, order):
            chi = _smooth_cutoff_jet(r, R0, R1)
            jet = _jet_mul([base(r, k) for k in range(4)], chi)
            return jet[order]

        return fn

    return VelocityProfile(make([1.0, -1.0]), make([1.0, 0.0, -1.0]), domain or Domain(),
                           "compact", {"R0": R0, "R1": R1})


def taylor_couette(a1: float = 1.0, a2: float = 1.0, a3: float = 0.0, a4: float = 0.0,
                   domain: Domain | None = None) -> VelocityProfile:
    """Couette flow ``Omega = a1/r^2 + a3``, ``U = a2 log r + a4``.

    Singular at the axis, so the default domain is the annulus ``[0.25, 2.5]``.
    """
    if a1 == 0 or a2 == 0:
        raise ProfileError("taylor_couette profile needs a1, a2 != 0")

    def om(r, order):
        return [a1 / r**2 + a3, -2 * a1 / r**3, 6 * a1 / r**4, -24 * a1 / r**5][order]

    def uz(r, order):
        return [a2 * np.log(r) + a4, a2 / r, -a2 / r**2, 2 * a2 / r**3][order]

    dom = domain or Domain("annulus", 0.25, 2.5)
    if dom.contains_origin:
        raise ProfileError("taylor_couette profile is singular at r = 0")
    return VelocityProfile(om, uz, dom, "taylor_couette", {"a1": a1, "a2": a2, "a3": a3, "a4": a4})


def _fd_field(f: Callable):
    """Fourth-order central differences of a scalar callable.

    First derivatives use ``h = 1e-5 max(1, r)``; second and third derivatives
    use ``h = 1e-3 max(1, r)`` because the smaller step loses all digits to
    rounding for the higher stencils.
    """

    def fn(r, order):
        r = np.asarray(r, dtype=float)
        if order == 0:
            return np.asarray(f(r), dtype=float)
        scale = np.maximum(1.0, np.abs(r))
        if order == 1:
            h = 1e-5 * scale
            return (-f(r + 2 * h) + 8 * f(r + h) - 8 * f(r - h) + f(r - 2 * h)) / (12 * h)
        h = 1e-3 * scale
        if order == 2:
            return (-f(r + 2 * h) + 16 * f(r + h) - 30 * f(r) + 16 * f(r - h) - f(r - 2 * h)) / (12 * h**2)
        return (-f(r + 3 * h) + 8 * f(r + 2 * h) - 13 * f(r + h) + 13 * f(r - h)
                - 8 * f(r - 2 * h) + f(r - 3 * h)) / (8 * h**3)

    return fn


def custom(omega: Callable, uz: Callable, *, omega_derivs=None, uz_derivs=None,
           domain: Domain | None = None, params: dict | None = None) -> VelocityProfile:
    """Profile from user callables.

    ``omega_derivs``/``uz_derivs`` may list callables for the first three
    derivatives; when omitted, finite differences are used.
    """

    def wrap(f, derivs):
        if derivs is None:
            return _fd_field(f)
        table = [f, *derivs]
        if len(table) != MAX_ORDER + 1:
            raise ProfileError("custom derivatives must list orders 1, 2 and 3")
        return lambda r, order: np.asarray(table[order](r), dtype=float) + 0.0 * r

    return VelocityProfile(wrap(omega, omega_derivs), wrap(uz, uz_derivs), domain or Domain(),
                           "custom", dict(params or {}))


def from_csv(path, domain: Domain | None = None) -> VelocityProfile:
    """Tabulated profile from a CSV file with header ``r,omega,uz``.

    Values are interpolated with not-a-knot cubic splines.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"r", "omega", "uz"} - set(reader.fieldnames or [])
        if missing:
            raise ProfileError(f"profile CSV {path} lacks columns {sorted(missing)}")
        for row in reader:
            rows.append((float(row["r"]), float(row["omega"]), float(row["uz"])))
    if len(rows) < 4:
        raise ProfileError("profile CSV needs at least four rows")
    data = np.array(sorted(rows))
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ProfileError("profile CSV radii must be strictly increasing")
    spl_o = CubicSpline(data[:, 0], data[:, 1])
    spl_u = CubicSpline(data[:, 0], data[:, 2])
    dom = domain or Domain("annulus", float(data[0, 0]), float(data[-1, 0])) if data[0, 0] > 0 \
        else domain or Domain("disk", 0.0, float(data[-1, 0]))
    return VelocityProfile(lambda r, k: spl_o(r, k), lambda r, k: spl_u(r, k), dom, "custom",
                           {"csv": str(path)})


def make_profile(name: str, params: dict | None = None, domain: Domain | None = None) -> VelocityProfile:
    """Build a preset profile by name."""
    params = dict(params or {})
    if name == "simplified":
        return simplified(domain)
    if name == "gaussian":
        return gaussian(params.get("a", 1.0), params.get("b", 2.0), domain)
    if name == "compact":
        return compact(params.get("R0", 2.0), params.get("R1", 3.0), domain)
    if name == "taylor_couette":
        return taylor_couette(params.get("a1", 1.0), params.get("a2", 1.0),
                              params.get("a3", 0.0), params.get("a4", 0.0), domain)
    if name == "csv":
        return from_csv(params["path"], domain)
    raise ProfileError(f"unknown profile preset {name!r}")


# --------------------------------------------------------------------------
# transport function


@dataclass(frozen=True)
class TransportFunction:
    """``T(r)`` for a profile and critical radius.

    Attributes
    ----------
    r0 : float
        Critical radius.
    rho : float
        Pitch ratio ``Omega'(r0)/U'(r0)``.
    tau : float or None
        ``lim_{r->0} T(r)`` when the domain reaches the axis.
    zero_set : list of (float, float)
        Simple zeros ``s_j`` and slopes ``T'(s_j)``.
    """

    profile: VelocityProfile
    r0: float
    rho: float
    omega0: float
    u0: float
    tau: float | None = None
    zero_set: tuple = ()

    def __call__(self, r):
        return self.deriv(r, 0)

    def deriv(self, r, order: int = 0):
        r = np.asarray(r, dtype=float)
        val = self.profile.omega(r, order) - self.rho * self.profile.uz(r, order)
        if order == 0:
            val = val - (self.omega0 - self.rho * self.u0)
        return val

    def slopes(self, M: float = 1.0):
        """``tau_j = M T'(s_j)`` for every zero in the zero set."""
        return [M * d for _, d in self.zero_set]


def _pitch(profile: VelocityProfile, r0: float) -> float:
    up = float(profile.uz(r0, 1))
    if abs(up) < 1e-14:
        raise DegeneratePitchError(f"U'(r0) = {up:.3e} vanishes at r0 = {r0}")
    return float(profile.omega(r0, 1)) / up


def evaluate_transport(profile: VelocityProfile, r0: float, r):
    """Evaluate ``T(r) = Omega(r) - Omega(r0) - rho (U(r) - U(r0))``."""
    rho = _pitch(profile, r0)
    r = np.asarray(r, dtype=float)
    return (profile.omega(r) - profile.omega(r0)) - rho * (profile.uz(r) - profile.uz(r0))


def transport_function(profile: VelocityProfile, r0: float, window=None, *,
                       tol: float | None = None) -> TransportFunction:
    """Build the transport function, its axis limit and its zero set."""
    rho = _pitch(profile, r0)
    base = TransportFunction(profile, float(r0), rho, float(profile.omega(r0)), float(profile.uz(r0)))
    tau = None
    if profile.domain.contains_origin:
        with np.errstate(all="ignore"):
            t0 = float(base(np.array(0.0)))
        tau = t0 if np.isfinite(t0) else None
    zeros = ()
    if window is not None:
        zeros = tuple(find_zero_set(profile, r0, window, tol=tol))
    return TransportFunction(profile, base.r0, rho, base.omega0, base.u0, tau, zeros)


def find_zero_set(profile: VelocityProfile, r0: float, window, tol: float | None = None,
                  *, exclusion: float = 1e-3, samples_per_unit: int = 10_000,
                  slope_threshold: float = 1e-8):
    """Locate the simple zeros of ``T`` on ``window`` away from ``r0``.

    Sign changes on a uniform sample grid are refined with Brent's method.

    Returns
    -------
    list of (float, float)
        Zero locations ``s_j`` with slopes ``T'(s_j)``.

    Raises
    ------
    NonSimpleZeroError
        If a refined zero has ``|T'(s_j)| < slope_threshold``.
    """
    lo, hi = map(float, window)
    if not hi > lo:
        raise ProfileError("zero-set window must have positive length")
    length = hi - lo
    tol = 1e-12 * length if tol is None else tol
    n = max(int(math.ceil(samples_per_unit * length)), 16) + 1
    r = np.linspace(lo, hi, n)
    T = evaluate_transport(profile, r0, r)
    keep = np.abs(r - r0) > exclusion
    out = []
    for i in range(n - 1):
        if not (keep[i] and keep[i + 1]):
            continue
        a, b = T[i], T[i + 1]
        if a == 0.0:
            s = r[i]
        elif a * b < 0:
            s = brentq(lambda x: float(evaluate_transport(profile, r0, x)), r[i], r[i + 1],
                       xtol=tol, rtol=4 * np.finfo(float).eps)
        else:
            continue
        if out and abs(out[-1][0] - s) <= 2 * tol:
            continue
        rho = _pitch(profile, r0)
        slope = float(profile.omega(s, 1) - rho * profile.uz(s, 1))
        if abs(slope) < slope_threshold:
            raise NonSimpleZeroError(f"T has a non-simple zero near r = {s:.6g} (T' = {slope:.2e})")
        out.append((float(s), slope))
    return out


# --------------------------------------------------------------------------
# audit


def real_growth_rate(profile: VelocityProfile, r0: float, M) -> np.ndarray:
    """Closed-form real part of the Gilbert growth rate as a function of ``M``.

    ``|M|^{1/2} (|Omega'|^{1/2} r0^{-1/2} - |T''|^{1/2}/2) - M^2 (r0^{-2} + rho^2)``
    """
    rho = _pitch(profile, r0)
    om1 = abs(float(profile.omega(r0, 1)))
    t2 = abs(float(profile.omega(r0, 2) - rho * profile.uz(r0, 2)))
    M = np.abs(np.asarray(M, dtype=float))
    return np.sqrt(M) * (math.sqrt(om1 / r0) - 0.5 * math.sqrt(t2)) - M**2 * (1.0 / r0**2 + rho**2)


@dataclass
class AuditReport:
    """Outcome of the admissibility checks for one profile and ``r0``."""

    h0_ok: bool
    h1_ok: bool
    h2_ok: bool
    h3_ok: bool
    gilbert_ok: bool
    log_deriv_value: float
    zero_set: list
    M_window: tuple
    M_in_window: bool | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return self.h0_ok and self.h1_ok and self.h2_ok and self.h3_ok and self.gilbert_ok

    def to_dict(self) -> dict:
        return {
            "h0_ok": self.h0_ok, "h1_ok": self.h1_ok, "h2_ok": self.h2_ok, "h3_ok": self.h3_ok,
            "gilbert_ok": self.gilbert_ok, "log_deriv": self.log_deriv_value,
            "zero_set": [list(z) for z in self.zero_set],
            "M_window": list(self.M_window), "M_in_window": self.M_in_window,
            "diagnostics": self.diagnostics,
        }


def _m_window(profile, r0):
    """Interval of ``|M|`` with positive real growth rate.

    The positive root of ``Re mu(|M|) = 0`` is located by Brent's method and
    cross-checked against the closed form ``(A/B)^{2/3}``.
    """
    rho = _pitch(profile, r0)
    A = math.sqrt(abs(float(profile.omega(r0, 1))) / r0) - 0.5 * math.sqrt(
        abs(float(profile.omega(r0, 2) - rho * profile.uz(r0, 2))))
    B = 1.0 / r0**2 + rho**2
    if A <= 0:
        return (0.0, 0.0), {"A": A, "B": B}
    closed = (A / B) ** (2.0 / 3.0)
    root = brentq(lambda m: float(real_growth_rate(profile, r0, m)), 0.5 * closed, 2.0 * closed,
                  xtol=1e-14)
    return (0.0, root), {"A": A, "B": B, "closed_form_root": closed}


def audit(profile: VelocityProfile, r0: float, M: float | None = None, window=None, *,
          tol: float = 1e-6) -> AuditReport:
    """Check the standing hypotheses at ``r0`` on an audit window.

    Parameters
    ----------
    profile : VelocityProfile
    r0 : float
        Critical radius; must lie inside ``window``.
    M : float, optional
        Azimuthal mode parameter; when given, its membership in the
        positive-growth window is reported.
    window : (float, float), optional
        Audit window; defaults to the profile domain, truncated at ``3 r0 + 3``
        for unbounded domains and starting at ``0.05 r0`` when the domain
        reaches the axis.
    tol : float
        Relative tolerance for the tangency test ``|T'(r0)| <= tol |T''(r0)|``.
    """
    dom = profile.domain
    if window is None:
        lo = max(dom.p, 0.05 * r0)
        hi = dom.q if dom.bounded else 3.0 * r0 + 3.0
        window = (lo, hi)
    lo, hi = map(float, window)
    if not lo < r0 < hi:
        raise ProfileError(f"r0 = {r0} must be interior to the audit window {window}")
    diag: dict = {}
    r = np.linspace(lo, hi, 2001)

    # H0: smoothness, probed as finiteness of the derivative stack
    with np.errstate(all="ignore"):
        stack = [profile.omega(r, k) for k in range(4)] + [profile.uz(r, k) for k in range(4)]
    h0_ok = all(np.all(np.isfinite(s)) for s in stack)
    diag["h0"] = {"finite_derivatives": h0_ok}

    # H1: double zero at r0, simple zeros elsewhere, nonzero axis limit
    h1_ok = True
    try:
        tf = transport_function(profile, r0, window)
        zero_set = list(tf.zero_set)
    except NonSimpleZeroError as exc:
        tf = transport_function(profile, r0)
        zero_set = []
        h1_ok = False
        diag["h1_error"] = str(exc)
    t1 = float(tf.deriv(r0, 1))
    t2 = float(tf.deriv(r0, 2))
    tangency = abs(t1) <= tol * max(abs(t2), 1e-300)
    curvature = abs(t2) > 1e-8
    h1_ok = h1_ok and tangency and curvature
    if dom.contains_origin:
        h1_ok = h1_ok and tf.tau is not None and abs(tf.tau) > 1e-12
    diag["h1"] = {"T1_r0": t1, "T2_r0": t2, "tau": tf.tau, "tangency": tangency,
                  "curvature_nonzero": curvature}

    # H2: relative-derivative bounds on the window tail
    xi = r0 + 0.5 * (hi - r0)
    tail = np.linspace(xi, hi, 400)
    for s, _ in zero_set:
        tail = tail[np.abs(tail - s) > 0.05 * (hi - lo)]
    with np.errstate(all="ignore"):
        Tt = np.abs(tf(tail))
        ratios = {f"T{k}/T": float(np.max(np.abs(tf.deriv(tail, k)) / Tt)) for k in (1, 2)}
        rom = [tail * profile.omega(tail, 1),
               profile.omega(tail, 1) + tail * profile.omega(tail, 2),
               2 * profile.omega(tail, 2) + tail * profile.omega(tail, 3)]
        for k, v in enumerate(rom):
            ratios[f"(r Omega'){'^' * k}/T" if k else "r Omega'/T"] = float(np.max(np.abs(v) / Tt))
    inf_T = float(np.min(Tt)) if tail.size else 0.0
    h2_ok = bool(tail.size) and inf_T > 0 and all(np.isfinite(v) and v < 1e8 for v in ratios.values())
    diag["h2"] = {"Xi": xi, "inf_T_tail": inf_T, **ratios}

    # H3: only constrains unbounded domains
    if dom.bounded:
        h3_ok = True
        diag["h3"] = {"required": False}
    else:
        far = np.geomspace(hi, 50.0 * hi, 400)
        with np.errstate(all="ignore"):
            rom_far = np.abs(far * profile.omega(far, 1))
            T_far = tf(far)
        decaying = rom_far[-1] < 1e-6 or (rom_far[-1] < 0.1 * rom_far.max()
                                          and np.all(np.diff(rom_far[-100:]) <= 1e-14))
        lam = 1.0 - float(np.min(T_far)) if np.min(T_far) > -np.inf else 1.0
        quotient = float(np.max(rom_far**2 / np.abs(T_far + lam)))
        growing = abs(T_far[-1]) > 10 * abs(T_far[0]) and quotient < 1e6
        h3_ok = bool(decaying or growing)
        diag["h3"] = {"required": True, "r_omega_prime_decays": bool(decaying),
                      "T_grows": bool(growing), "quotient_sup": quotient}

    # Gilbert's geometric condition
    om1, om2 = float(profile.omega(r0, 1)), float(profile.omega(r0, 2))
    u1, u2 = float(profile.uz(r0, 1)), float(profile.uz(r0, 2))
    log_deriv = r0 * abs(om2 / om1 - u2 / u1)
    gilbert_ok = log_deriv < 4.0

    m_window, m_diag = _m_window(profile, r0)
    diag["M_window"] = m_diag
    in_window = None
    if M is not None:
        in_window = bool(m_window[0] < abs(M) < m_window[1])

    return AuditReport(bool(h0_ok), bool(h1_ok), bool(h2_ok), bool(h3_ok), bool(gilbert_ok),
                       float(log_deriv), zero_set, m_window, in_window, diag)


# --------------------------------------------------------------------------
# integer modes


@dataclass(frozen=True)
class ModeSelection:
    """Integer azimuthal/axial wavenumbers and the adjusted critical radius."""

    eps: float
    M: float
    K: float
    m: int
    k: int
    r0_adjusted: float
    r0_requested: float

    def to_dict(self) -> dict:
        return {"eps": self.eps, "M": self.M, "K": self.K, "m": self.m, "k": self.k,
                "r0_adjusted": self.r0_adjusted, "r0_requested": self.r0_requested}


def select_integer_modes(profile: VelocityProfile, r0: float, M: float, eps: float,
                         window=None) -> ModeSelection:
    """Round ``M eps^{-1/3}`` to an integer and move ``r0`` so ``k`` is an integer too.

    ``m`` is the integer nearest to ``M eps^{-1/3}`` (never zero), which gives
    ``|M~ - M| <= eps^{1/3}/2``.  The axial wavenumber ``k = -m rho(r0)`` is
    then made integral by root-finding on ``rho(r) = Omega'(r)/U'(r)``; the
    integer candidates are tried in order of distance from the unperturbed
    value and the reachable root closest to ``r0`` wins.
    """
    if eps <= 0:
        raise ProfileError("eps must be positive")
    if M == 0:
        raise ProfileError("M must be nonzero")
    scale = eps ** (-1.0 / 3.0)
    x = M * scale
    m = int(math.floor(abs(x) + 0.5)) * (1 if x > 0 else -1)
    if m == 0:
        m = 1 if M > 0 else -1
    M_t = m / scale
    if window is None:
        dom = profile.domain
        window = (max(dom.p, 0.05 * r0), dom.q if dom.bounded else 3.0 * r0 + 3.0)
    lo, hi = map(float, window)

    grid = np.linspace(lo, hi, 20001)
    with np.errstate(all="ignore"):
        kfun = -m * profile.pitch_ratio(grid)
    k_here = float(-m * profile.pitch_ratio(r0))
    if abs(k_here - round(k_here)) < 1e-12:
        k_int = int(round(k_here))
        return ModeSelection(eps, M_t, k_int / scale, m, k_int, float(r0), float(r0))

    finite = np.isfinite(kfun)
    kmin, kmax = np.min(kfun[finite]), np.max(kfun[finite])
    candidates = sorted(range(int(math.floor(kmin)), int(math.ceil(kmax)) + 1),
                        key=lambda j: (abs(j - k_here), -abs(j)))
    best = None
    for j in candidates[:200]:
        if j == 0:
            continue
        if best is not None and abs(j - k_here) > abs(best[1] - k_here) + 1.0:
            break
        g = kfun - j
        idx = np.nonzero(finite[:-1] & finite[1:] & (np.sign(g[:-1]) * np.sign(g[1:]) <= 0))[0]
        for i in idx:
            if g[i] == 0:
                root = grid[i]
            else:
                root = brentq(lambda r: float(-m * profile.pitch_ratio(r) - j), grid[i], grid[i + 1],
                              xtol=1e-14)
            dist = abs(root - r0)
            if best is None or dist < best[0] - 1e-15:
                best = (dist, j, root)
    if best is None:
        raise ModeSelectionError(
            f"no integer k reachable for m = {m} inside window [{lo}, {hi}]; "
            f"k(r) spans [{kmin:.3f}, {kmax:.3f}]")
    _, k_int, r_adj = best
    return ModeSelection(eps, M_t, k_int / scale, m, k_int, float(r_adj), float(r0))
