"""Marchenko-Pastur law and the limiting functionals built on it.

Conventions: ``M = A A* / N`` with ``A`` of shape ``N x n``, ratio ``c = n/N``
and entry variance ``sigma2``.  The law is supported on ``[u_minus, u_plus]``
plus an atom of weight ``1 - c`` at zero when ``c < 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from covfluct import quadrature
from covfluct.errors import DomainError
from covfluct.testfunctions import TestFunction

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MpParams:
    sigma2: float
    c: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise DomainError(f"c must be positive, got {self.c}")

    @property
    def u_minus(self) -> float:
        return self.sigma2 * (1.0 - math.sqrt(self.c)) ** 2

    @property
    def u_plus(self) -> float:
        return self.sigma2 * (1.0 + math.sqrt(self.c)) ** 2

    @property
    def mean(self) -> float:
        return self.c * self.sigma2

    def dual(self) -> "MpParams":
        """Parameters of the companion law with ratio ``1/c``."""
        return MpParams(self.sigma2, 1.0 / self.c)


def mp_atom_weight(p: MpParams) -> float:
    return max(0.0, 1.0 - p.c)


def mp_density(x, p: MpParams):
    """Absolutely continuous part of the MP law (the atom is excluded)."""
    x = np.asarray(x, dtype=float)
    lo, hi = p.u_minus, p.u_plus
    inside = (x >= lo) & (x <= hi) & (x > 0)
    xs = np.where(inside, x, 1.0)
    val = np.sqrt(np.clip((hi - xs) * (xs - lo), 0.0, None)) / (2 * math.pi * xs * p.sigma2)
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def _continuous_weight(theta: np.ndarray, p: MpParams) -> tuple[np.ndarray, np.ndarray]:
    """Nodes x(theta) and the density-times-Jacobian for x = u- + (u+ - u-) sin^2."""
    lo, width = p.u_minus, p.u_plus - p.u_minus
    s, co = np.sin(theta), np.cos(theta)
    x = lo + width * s * s
    # density * dx/dtheta; the square-root edges cancel against the Jacobian
    w = width * width * 2.0 * (s * co) ** 2 / (2 * math.pi * p.sigma2 * x)
    if lo == 0.0:
        # c == 1: simplify s^2/x analytically to stay finite at theta -> 0
        w = width * 2.0 * co * co / (2 * math.pi * p.sigma2)
    return x, w


def mp_integrate(h: ArrayFn, p: MpParams, atol: float = quadrature.DEFAULT_ATOL,
                 include_atom: bool = True):
    """Integrate a vectorized (real or complex) ``h`` against the MP law."""
    def integrand(theta):
        x, w = _continuous_weight(theta, p)
        return h(x) * w

    total = quadrature.integrate(integrand, 0.0, math.pi / 2, atol=atol)
    atom = mp_atom_weight(p)
    if include_atom and atom > 0:
        total = total + atom * h(np.zeros(1))[0]
    return total


def mp_expect(f: TestFunction | ArrayFn, p: MpParams, atol: float = quadrature.DEFAULT_ATOL) -> float:
    if isinstance(f, TestFunction):
        f.check_domain(p.u_plus)
    return float(np.real(mp_integrate(f, p, atol=atol)))


def mp_cdf(x, p: MpParams):
    """Distribution function of the MP law, atom included."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    lo, width = p.u_minus, p.u_plus - p.u_minus
    atom = mp_atom_weight(p)
    for k, xv in enumerate(xs):
        if xv < 0:
            out[k] = 0.0
        elif xv <= lo:
            out[k] = atom
        elif xv >= p.u_plus:
            out[k] = 1.0
        else:
            top = math.asin(math.sqrt((xv - lo) / width))
            cont = quadrature.integrate(lambda t: _continuous_weight(t, p)[1], 0.0, top, atol=1e-12)
            out[k] = atom + cont
    return out if np.ndim(x) else float(out[0])


# -- Stieltjes transform ---------------------------------------------------

def _check_resolvent_domain(z, p: MpParams) -> None:
    z = np.asarray(z, dtype=complex)
    bad = (z.imag == 0) & (z.real >= 0) & (z.real <= p.u_plus)
    if np.any(bad):
        raise DomainError(f"z must avoid [0, {p.u_plus:.6g}] on the real axis")


def stieltjes_g(z, p: MpParams):
    """Stieltjes transform g(z) = int dmu(x) / (z - x) of the MP law.

    Uses the closed-form root of ``z s2 g^2 + (s2 (c-1) - z) g + 1 = 0`` with
    sqrt((z-u+)(z-u-)) taken as sqrt(z-u+) * sqrt(z-u-): this product has its
    cut exactly on [u-, u+] and grows like z, which selects the decaying root
    on every component of the domain.
    """
    _check_resolvent_domain(z, p)
    z = np.asarray(z, dtype=complex)
    s2, c = p.sigma2, p.c
    root = np.sqrt(z - p.u_plus) * np.sqrt(z - p.u_minus)
    b = z - s2 * (c - 1.0)
    # pick the cancellation-free form of the same root
    minus = b - root
    plus = b + root
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(np.abs(minus) >= np.abs(plus), minus / (2 * z * s2), 2.0 / plus)
    return g if g.ndim else complex(g)


def stieltjes_g_prime(z, p: MpParams):
    """Derivative g'(z), from implicit differentiation of the quadratic."""
    g = np.asarray(stieltjes_g(z, p))
    z = np.asarray(z, dtype=complex)
    s2 = p.sigma2
    out = (g - s2 * g * g) / (2 * z * s2 * g + s2 * (p.c - 1.0) - z)
    return out if out.ndim else complex(out)


def stieltjes_quadrature(z: complex, p: MpParams, atol: float = 1e-12) -> complex:
    """Stieltjes transform by direct integration (independent of the closed form)."""
    _check_resolvent_domain(z, p)
    return complex(mp_integrate(lambda x: 1.0 / (z - x), p, atol=atol))


def quadratic_residual(z, g, p: MpParams):
    return z * p.sigma2 * g * g + (p.sigma2 * (p.c - 1.0) - z) * g + 1.0


# -- limiting functionals ---------------------------------------------------

def omega2(f: TestFunction, p: MpParams) -> float:
    """Variance of f(eta) for eta MP-distributed."""
    m1 = mp_expect(f, p)
    m2 = mp_expect(lambda x: f(x) ** 2, p)
    return max(0.0, m2 - m1 * m1)


def orthonormal_p1(x, p: MpParams):
    """Second orthonormal polynomial of the MP law: (x - c s2) / (sqrt(c) s2)."""
    return (np.asarray(x) - p.c * p.sigma2) / (math.sqrt(p.c) * p.sigma2)


def rho(f: TestFunction, p: MpParams) -> float:
    if isinstance(f, TestFunction):
        f.check_domain(p.u_plus)
    return mp_expect(lambda x: f(x) * orthonormal_p1(x, p), p)


# -- phi kernels on the companion law ----------------------------------------

@dataclass(frozen=True)
class PhiValues:
    """phi(z, w) and its real-bilinear parts under the ratio-1/c law."""
    phi: complex
    pp: float
    mm: float
    pm: float


def _check_phi_domain(z, p: MpParams) -> None:
    dual = p.dual()
    z = complex(z)
    if z == 0:
        raise DomainError("phi kernel undefined at z = 0")
    if z.imag == 0 and dual.u_minus <= z.real <= dual.u_plus:
        raise DomainError(f"z={z} lies on the support of the ratio-1/c law")


def phi_direct(z: complex, w: complex, p: MpParams) -> complex:
    """E[z/(z-eta) * w/(w-eta)], eta ~ MP(sigma2, 1/c), by quadrature."""
    _check_phi_domain(z, p)
    _check_phi_domain(w, p)
    return complex(mp_integrate(lambda x: z / (z - x) * (w / (w - x)), p.dual()))


def phi_via_c(z: complex, w: complex, p: MpParams) -> complex:
    """Same kernel reduced to an expectation under the ratio-c law."""
    _check_phi_domain(z, p)
    _check_phi_domain(w, p)
    c = p.c
    cz, cw = c * z, c * w
    inner = mp_integrate(lambda x: cz / (cz - x) * (cw / (cw - x)), p)
    return complex(inner / c + (1.0 - 1.0 / c))


def phi_components(z: complex, w: complex, p: MpParams) -> PhiValues:
    """phi and the Re/Re, Im/Im, Re/Im expectations, each by its own quadrature."""
    _check_phi_domain(z, p)
    _check_phi_domain(w, p)
    dual = p.dual()
    z, w = complex(z), complex(w)

    def fz(x):
        return z / (z - x)

    def fw(x):
        return w / (w - x)

    return PhiValues(
        phi=complex(mp_integrate(lambda x: fz(x) * fw(x), dual)),
        pp=float(np.real(mp_integrate(lambda x: fz(x).real * fw(x).real, dual))),
        mm=float(np.real(mp_integrate(lambda x: fz(x).imag * fw(x).imag, dual))),
        pm=float(np.real(mp_integrate(lambda x: fz(x).real * fw(x).imag, dual))),
    )


def phi_kernel(z: complex, w: complex, p: MpParams, tol: float = 1e-9) -> PhiValues:
    """phi components, after checking the two reductions agree to ``tol``."""
    vals = phi_components(z, w, p)
    other = phi_via_c(z, w, p)
    if abs(vals.phi - other) > tol * max(1.0, abs(other)):
        raise ArithmeticError(
            f"phi reductions disagree at ({z}, {w}): {vals.phi} vs {other}")
    return vals


# -- CLT predictions ---------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    """Limiting Gaussian law of one normalized entry sqrt(N) (f(M)_ij - center)."""
    field: str
    diagonal: bool
    center: float
    omega2: float
    rho: float
    kappa4: float
    omega_term: float
    kappa4_term: float
    variance: float
    re_variance: float
    im_variance: float
    re_im_covariance: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def predict_entry_clt(f: TestFunction, p: MpParams, field: str, kappa4: float,
                      diagonal: bool) -> Prediction:
    if field not in ("real", "complex"):
        raise DomainError(f"field must be 'real' or 'complex', got {field!r}")
    om = omega2(f, p)
    r = rho(f, p)
    if diagonal:
        omega_term = (2.0 if field == "real" else 1.0) * om
        k_term = kappa4 / p.sigma2 ** 2 * r * r
    else:
        omega_term, k_term = om, 0.0
    total = omega_term + k_term
    # the two terms can cancel exactly (e.g. symmetric +-1 entries on the diagonal);
    # quadrature leaves a residue of either sign at roundoff level
    if abs(total) <= 1e-10 * (abs(omega_term) + abs(k_term)):
        total = 0.0
    if field == "complex" and not diagonal:
        re_var = im_var = 0.5 * total
    else:
        # diagonal entries of a self-adjoint f(M) are real
        re_var, im_var = total, 0.0
    center = mp_expect(f, p) if diagonal else 0.0
    return Prediction(field, diagonal, center, om, r, kappa4, omega_term, k_term,
                      total, re_var, im_var)


def _complex_moments_to_block(pseudo: complex, herm: complex) -> np.ndarray:
    """2x2 cross-covariance of (Re X, Im X) vs (Re Y, Im Y) from E[XY], E[X conj Y]."""
    return 0.5 * np.array([
        [(pseudo + herm).real, (pseudo - herm).imag],
        [(pseudo + herm).imag, (herm - pseudo).real],
    ])


def cauchy_covariance(z: complex, w: complex, p: MpParams) -> complex:
    """Bilinear Cov(1/(z - eta), 1/(w - eta)) for eta ~ MP(sigma2, c), closed form."""
    gz = stieltjes_g(z, p)
    if z == w:
        return complex(-stieltjes_g_prime(z, p) - gz * gz)
    gw = stieltjes_g(w, p)
    return complex(-(gz - gw) / (z - w) - gz * gw)


def _rho_cauchy(z: complex, p: MpParams) -> complex:
    # rho of x -> 1/(z - x): ((z - c s2) g(z) - 1) / (sqrt(c) s2)
    return ((z - p.c * p.sigma2) * stieltjes_g(z, p) - 1.0) / (math.sqrt(p.c) * p.sigma2)


def resolvent_cov_identity(z: complex, w: complex, p: MpParams, field: str,
                           kappa4: float, i: int, j: int) -> np.ndarray:
    """Resolvent-field block from closed-form Cauchy covariances (no quadrature).

    Uses that the limit of sqrt(N)(R_ij - delta_ij g) behaves like the entry
    fluctuation of f(x) = 1/(z - x).
    """
    _check_resolvent_domain([z, w], p)
    z, w = complex(z), complex(w)
    wb = w.conjugate()
    k = kappa4 / p.sigma2 ** 2
    if i == j:
        scale = 2.0 if field == "real" else 1.0
        pseudo = scale * cauchy_covariance(z, w, p) + k * _rho_cauchy(z, p) * _rho_cauchy(w, p)
        herm = scale * cauchy_covariance(z, wb, p) + k * _rho_cauchy(z, p) * _rho_cauchy(wb, p)
    elif field == "real":
        pseudo = cauchy_covariance(z, w, p)
        herm = cauchy_covariance(z, wb, p)
    else:
        pseudo = 0.0
        herm = cauchy_covariance(z, wb, p)
    return _complex_moments_to_block(pseudo, herm)


def predict_resolvent_field_cov(z: complex, w: complex, p: MpParams, field: str,
                                kappa4: float, i: int, j: int) -> np.ndarray:
    """2x2 covariance of (Re, Im) Psi_ij(z) against (Re, Im) Psi_ij(w).

    Assembled from the covariance list of the limiting field Y with the phi
    kernels evaluated at (z/c, w/c) (the field is indexed at c times the kernel
    argument), then mapped through Psi = sqrt(c) g^2 Y.
    """
    if field not in ("real", "complex"):
        raise DomainError(f"field must be 'real' or 'complex', got {field!r}")
    _check_resolvent_domain([z, w], p)
    z, w = complex(z), complex(w)
    c, s4 = p.c, p.sigma2 ** 2
    zs, ws = z / c, w / c
    zw = phi_components(zs, ws, p)
    wz_pm = phi_components(ws, zs, p).pm
    if i == j:
        dual = p.dual()
        tz = zs * stieltjes_g(zs, dual)
        tw = ws * stieltjes_g(ws, dual)
        scale = 2.0 * s4 if field == "real" else s4
        cy = np.array([
            [kappa4 * tz.real * tw.real + scale * zw.pp,
             kappa4 * tz.real * tw.imag + scale * zw.pm],
            [kappa4 * tz.imag * tw.real + scale * wz_pm,
             kappa4 * tz.imag * tw.imag + scale * zw.mm],
        ])
    elif field == "real":
        cy = s4 * np.array([[zw.pp, zw.pm], [wz_pm, zw.mm]])
    else:
        diag = 0.5 * s4 * (zw.pp + zw.mm)
        off = 0.5 * s4 * (zw.pm - wz_pm)
        cy = np.array([[diag, off], [-off, diag]])

    def lift(v: complex) -> np.ndarray:
        q = math.sqrt(c) * stieltjes_g(v, p) ** 2
        return np.array([[q.real, -q.imag], [q.imag, q.real]])

    return lift(z) @ cy @ lift(w).T
