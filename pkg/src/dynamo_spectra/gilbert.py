"""Closed-form boundary-layer theory at the critical radius.

Near ``r0`` the transport term is quadratic, ``i M T(r) ~ c2 (r - r0)^2`` with
``c2 = (i M / 2) T''(r0)``, and the coupled (b_r, b_theta) system reduces to a
pair of Weber equations.  The ground state of that reduction gives the growth
rate

.. math::

    \\mu_\\star = -M^2 (r_0^{-2} + \\rho^2) + \\sqrt{-2 i M \\Omega'(r_0)/r_0} - c_2^{1/2},

an eigenvalue ``lambda = eps^{1/3} mu_star`` and a Gaussian eigenmode of width
``eps^{1/3}``.  Every complex square root here takes the branch with positive
real part.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .profiles import VelocityProfile, _pitch

__all__ = [
    "GilbertData",
    "GilbertError",
    "BranchError",
    "root_re_positive",
    "gilbert_constants",
    "growth_rate",
    "ansatz_profile",
    "v_to_b",
    "b_to_v",
]


class GilbertError(ValueError):
    """Degenerate critical-layer data (``c2 = 0`` or ``M = 0``)."""


class BranchError(ArithmeticError):
    """Complex and real growth-rate formulas disagree."""


def root_re_positive(z: complex) -> complex:
    """Square root with ``Re > 0``; purely imaginary roots take ``Im > 0``."""
    w = cmath.sqrt(complex(z))
    if w.real < 0 or (w.real == 0 and w.imag < 0):
        w = -w
    return w


@dataclass(frozen=True)
class GilbertData:
    """Scalars of the critical-layer reduction.

    Attributes
    ----------
    r0, M, K, rho : float
        Critical radius, mode parameters (``K = -M rho``) and pitch ratio.
    omega1, omega2, u1, u2 : float
        ``Omega'``, ``Omega''``, ``U'``, ``U''`` at ``r0``.
    alpha : complex
        Root of ``alpha^2 = -2 i M / (r0^3 Omega'(r0))`` with ``Re > 0``.
    c2, c2_sqrt : complex
        Curvature constant and its ``Re > 0`` root.
    stretch_root : complex
        ``sqrt(-2 i M Omega'(r0)/r0)`` with ``Re > 0``.
    mu_star : complex
        Gilbert growth rate (``lambda_star = eps^{1/3} mu_star``).
    chi : float
        ``|c2|^{-1/2} / 2``, the Gaussian decay constant of the Weber kernels.
    """

    r0: float
    M: float
    K: float
    rho: float
    omega1: float
    omega2: float
    u1: float
    u2: float
    alpha: complex
    c2: complex
    c2_sqrt: complex
    stretch_root: complex
    mu_star: complex
    chi: float

    @property
    def kappa(self) -> complex:
        """Stretching coefficient ``-alpha_b r0 Omega'(r0)``; equals ``stretch_root``."""
        return -self.alpha_basis * self.r0 * self.omega1

    @property
    def alpha_basis(self) -> complex:
        """Sign of ``alpha`` used in the change of variables.

        The two admissible signs swap the roles of ``V1`` and ``V2``; the one
        chosen here puts the growing Gaussian in ``V1``.
        """
        a = self.alpha
        return a if (-a * self.r0 * self.omega1).real > 0 else -a

    @property
    def curvature(self) -> float:
        """``T''(r0)``."""
        return self.omega2 - self.rho * self.u2

    def lambda_star(self, eps: float) -> complex:
        return eps ** (1.0 / 3.0) * self.mu_star

    def nu(self, eta) -> complex:
        """Weber index ``-eta / (2 c2^{1/2})`` of the first component."""
        return -0.5 * np.asarray(eta) / self.c2_sqrt

    def nu_second(self, eta) -> complex:
        """Weber index of the second component, shifted by the stretching term."""
        return self.nu(eta) - self.kappa / self.c2_sqrt

    def eta_of(self, lam: complex, eps: float) -> complex:
        """Contour offset ``eta`` with ``lam = eps^{1/3} (mu_star + eta)``."""
        return lam / eps ** (1.0 / 3.0) - self.mu_star

    def mu_excited(self, j: int) -> complex:
        """Growth rate of the ``j``-th Hermite state, ``mu_star - 2 j c2^{1/2}``."""
        return self.mu_star - 2 * j * self.c2_sqrt

    def to_dict(self, eps: float | None = None) -> dict:
        out = {
            "r0": self.r0, "M": self.M, "K": self.K, "rho": self.rho,
            "alpha_re": self.alpha.real, "alpha_im": self.alpha.imag,
            "c2_re": self.c2.real, "c2_im": self.c2.imag,
            "c2_sqrt_re": self.c2_sqrt.real, "c2_sqrt_im": self.c2_sqrt.imag,
            "stretch_root_re": self.stretch_root.real, "stretch_root_im": self.stretch_root.imag,
            "mu_star_re": self.mu_star.real, "mu_star_im": self.mu_star.imag,
            "chi": self.chi,
        }
        if eps is not None:
            lam = self.lambda_star(eps)
            out.update({"eps": eps, "lambda_star_re": lam.real, "lambda_star_im": lam.imag})
        return out


def gilbert_constants(profile: VelocityProfile, r0: float, M: float) -> GilbertData:
    """Evaluate the critical-layer constants at ``r0`` for mode parameter ``M``.

    Raises
    ------
    GilbertError
        If ``M = 0``, ``Omega'(r0) = 0`` or ``T''(r0) = 0``.
    """
    if M == 0:
        raise GilbertError("M = 0: c2 and alpha vanish")
    rho = _pitch(profile, r0)
    om1, om2 = float(profile.omega(r0, 1)), float(profile.omega(r0, 2))
    u1, u2 = float(profile.uz(r0, 1)), float(profile.uz(r0, 2))
    if om1 == 0:
        raise GilbertError("Omega'(r0) = 0: no stretching at the critical radius")
    c2 = 0.5j * M * (om2 - rho * u2)
    if abs(c2) < 1e-300:
        raise GilbertError("c2 = 0: degenerate curvature, Weber reduction fails")
    alpha = root_re_positive(-2j * M / (r0**3 * om1))
    c2_sqrt = root_re_positive(c2)
    stretch = root_re_positive(-2j * M * om1 / r0)
    mu = -M**2 * (1.0 / r0**2 + rho**2) + stretch - c2_sqrt
    return GilbertData(float(r0), float(M), float(-M * rho), rho, om1, om2, u1, u2,
                       alpha, c2, c2_sqrt, stretch, complex(mu), 0.5 / math.sqrt(abs(c2)))


def growth_rate(gd: GilbertData, *, check_tol: float = 1e-10) -> tuple[complex, float]:
    """Return ``(mu_star, Re mu_star)`` after cross-checking the real-part formula.

    The real part is recomputed as
    ``|M|^{1/2}(|Omega'|^{1/2} r0^{-1/2} - |T''|^{1/2}/2) - M^2 (r0^{-2} + rho^2)``.
    """
    M = abs(gd.M)
    real = (math.sqrt(M) * (math.sqrt(abs(gd.omega1) / gd.r0) - 0.5 * math.sqrt(abs(gd.curvature)))
            - M**2 * (1.0 / gd.r0**2 + gd.rho**2))
    if abs(real - gd.mu_star.real) > check_tol * max(1.0, abs(real)):
        raise BranchError(f"complex formula Re = {gd.mu_star.real!r}, real formula = {real!r}")
    return gd.mu_star, real


def v_to_b(V, gd: GilbertData, eps: float):
    """Map ``(V1, V2)`` to ``(b_r, b_theta) = (a (V2 - V1), V1 + V2)``, ``a = alpha eps^{1/3}``."""
    V = np.asarray(V)
    a = gd.alpha_basis * eps ** (1.0 / 3.0)
    return np.stack([a * (V[1] - V[0]), V[0] + V[1]])


def b_to_v(b, gd: GilbertData, eps: float):
    """Inverse of :func:`v_to_b`."""
    b = np.asarray(b)
    a = gd.alpha_basis * eps ** (1.0 / 3.0)
    return np.stack([0.5 * (b[1] - b[0] / a), 0.5 * (b[1] + b[0] / a)])


def ansatz_profile(gd: GilbertData, eps: float, r):
    """Gaussian ground state in both bases.

    Returns
    -------
    V : ndarray, shape (2, n)
        ``(exp(-eps^{-2/3} c2^{1/2} (r - r0)^2 / 2), 0)``.
    b : ndarray, shape (2, n)
        ``(b_r, b_theta) = (-alpha eps^{1/3} V1, V1)``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    g = np.exp(-0.5 * eps ** (-2.0 / 3.0) * gd.c2_sqrt * (r - gd.r0) ** 2)
    V = np.stack([g, np.zeros_like(g)])
    return V, v_to_b(V, gd, eps)
