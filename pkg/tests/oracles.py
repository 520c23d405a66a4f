"""Independent reference computations used only by the tests."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate


def mp_quad(f, sigma2: float, c: float, include_atom: bool = True) -> complex:
    """E f(eta) for eta ~ MP(sigma2, c) with scipy's algebraic-weight rule (QAWS)."""
    um, up = sigma2 * (1 - math.sqrt(c)) ** 2, sigma2 * (1 + math.sqrt(c)) ** 2

    def part(g):
        if abs(c - 1.0) < 1e-15:
            # density = sqrt(up - x) x^{-1/2} / (2 pi sigma2)
            h = lambda x: g(x) / (2 * math.pi * sigma2)  # noqa: E731
            wvar = (-0.5, 0.5)
        else:
            h = lambda x: g(x) / (2 * math.pi * sigma2 * x)  # noqa: E731
            wvar = (0.5, 0.5)
        return integrate.quad(h, um, up, weight="alg", wvar=wvar, epsabs=1e-14, epsrel=1e-13,
                              limit=200)[0]

    val = part(lambda x: np.real(f(x))) + 1j * part(lambda x: np.imag(f(x)))
    if include_atom and c < 1:
        val += (1 - c) * f(0.0)
    return val


def mp_moment(k: int, sigma2: float, c: float) -> float:
    """k-th moment via the Narayana-polynomial closed form."""
    if k == 0:
        return 1.0
    total = sum(math.comb(k, r) * math.comb(k, r - 1) / k * c ** r for r in range(1, k + 1))
    return sigma2 ** k * total
