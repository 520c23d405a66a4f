"""Built-in test-function families with closed-form derivatives.

Every family is C-infinity on a neighbourhood of the Marchenko-Pastur support,
so regularity is guaranteed by construction rather than checked numerically.

Families and their ``params``:

``polynomial``          ``coeffs`` -- ascending coefficients, f(x) = sum c_k x^k
``constant``            ``value``
``cauchy_re``           ``z0`` (complex) -- f(x) = Re 1/(z0 - x)
``cauchy_im``           ``z0`` (complex) -- f(x) = Im 1/(z0 - x)
``gaussian_bump``       ``center``, ``width`` -- f(x) = exp(-(x - center)^2 / (2 width^2))
``indicator_smoothed``  ``left``, ``right``, ``width`` -- erf-smoothed indicator of
                        [left, right]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import erf, eval_hermitenorm

from covfluct.errors import DomainError

FAMILIES = (
    "polynomial",
    "cauchy_re",
    "cauchy_im",
    "gaussian_bump",
    "indicator_smoothed",
    "constant",
)

# families whose derivatives vanish (to double precision) outside a bounded window
COMPACT_FAMILIES = ("gaussian_bump", "indicator_smoothed")

_TAIL_WIDTHS = 12.0


@dataclass(frozen=True)
class TestFunction:
    family: str
    params: dict[str, Any] = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown test-function family {self.family!r}")
        p = self.params
        required = {
            "polynomial": ("coeffs",),
            "constant": ("value",),
            "cauchy_re": ("z0",),
            "cauchy_im": ("z0",),
            "gaussian_bump": ("center", "width"),
            "indicator_smoothed": ("left", "right", "width"),
        }[self.family]
        missing = [k for k in required if k not in p]
        if missing:
            raise DomainError(f"{self.family} requires params {missing}")
        extra = sorted(set(p) - set(required))
        if extra:
            raise DomainError(f"unknown params for {self.family}: {extra}")
        if self.family in ("gaussian_bump", "indicator_smoothed") and not p["width"] > 0:
            raise DomainError("width must be positive")
        if self.family == "indicator_smoothed" and not p["left"] < p["right"]:
            raise DomainError("indicator_smoothed needs left < right")

    # -- constructors ---------------------------------------------------
    @classmethod
    def polynomial(cls, *coeffs: float) -> "TestFunction":
        return cls("polynomial", {"coeffs": [float(c) for c in coeffs]})

    @classmethod
    def identity(cls) -> "TestFunction":
        return cls.polynomial(0.0, 1.0)

    @classmethod
    def constant(cls, value: float = 1.0) -> "TestFunction":
        return cls("constant", {"value": float(value)})

    @classmethod
    def cauchy_re(cls, z0: complex) -> "TestFunction":
        return cls("cauchy_re", {"z0": complex(z0)})

    @classmethod
    def cauchy_im(cls, z0: complex) -> "TestFunction":
        return cls("cauchy_im", {"z0": complex(z0)})

    @classmethod
    def gaussian_bump(cls, center: float, width: float) -> "TestFunction":
        return cls("gaussian_bump", {"center": float(center), "width": float(width)})

    @classmethod
    def indicator_smoothed(cls, left: float, right: float, width: float) -> "TestFunction":
        return cls("indicator_smoothed",
                   {"left": float(left), "right": float(right), "width": float(width)})

    # -- evaluation -----------------------------------------------------
    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order: int = 0):
        """``order``-th derivative of f at real ``x`` (vectorized)."""
        x = np.asarray(x, dtype=float)
        fam, p = self.family, self.params
        if fam == "constant":
            return np.full_like(x, p["value"] if order == 0 else 0.0)
        if fam == "polynomial":
            coeffs = np.asarray(p["coeffs"], dtype=float)
            if order:
                coeffs = P.polyder(coeffs, order) if len(coeffs) > order else np.zeros(1)
            return P.polyval(x, coeffs)
        if fam in ("cauchy_re", "cauchy_im"):
            z0 = complex(p["z0"])
            # d^k/dx^k (z0 - x)^-1 = k! (z0 - x)^-(k+1)
            val = math.factorial(order) / (z0 - x) ** (order + 1)
            return val.real if fam == "cauchy_re" else val.imag
        if fam == "gaussian_bump":
            w = p["width"]
            u = (x - p["center"]) / w
            return (-1) ** order * eval_hermitenorm(order, u) * np.exp(-0.5 * u * u) / w ** order
        # indicator_smoothed: 0.5*(erf((x-a)/w) - erf((x-b)/w))
        a, b, w = p["left"], p["right"], p["width"]
        if order == 0:
            return 0.5 * (erf((x - a) / w) - erf((x - b) / w))
        return _erf_derivative(x, a, w, order) - _erf_derivative(x, b, w, order)

    # -- metadata -------------------------------------------------------
    def poles(self) -> list[complex]:
        if self.family in ("cauchy_re", "cauchy_im"):
            return [complex(self.params["z0"])]
        return []

    def check_domain(self, u_plus: float) -> None:
        """Reject poles touching [0, u_plus]."""
        for z0 in self.poles():
            if z0.imag == 0 and 0.0 <= z0.real <= u_plus:
                raise DomainError(f"pole {z0} lies on the spectral support [0, {u_plus}]")

    def effective_window(self) -> tuple[float, float]:
        """Interval outside of which f and its derivatives are negligible."""
        p = self.params
        if self.family == "gaussian_bump":
            r = _TAIL_WIDTHS * p["width"]
            return p["center"] - r, p["center"] + r
        if self.family == "indicator_smoothed":
            r = _TAIL_WIDTHS * p["width"]
            return p["left"] - r, p["right"] + r
        raise DomainError(f"{self.family} has no bounded effective support")

    def to_dict(self) -> dict[str, Any]:
        params = {}
        for k, v in self.params.items():
            if isinstance(v, complex):
                v = [v.real, v.imag]
            params[k] = v
        return {"family": self.family, "params": params}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TestFunction":
        params = dict(d.get("params", {}))
        if "z0" in params:
            z = params["z0"]
            params["z0"] = complex(*z) if isinstance(z, (list, tuple)) else complex(z)
        return cls(d["family"], params)


def _erf_derivative(x, shift, w, order):
    # d^k/dx^k 0.5*erf((x-shift)/w), k >= 1
    u = (x - shift) / w
    # d/du 0.5 erf(u) = exp(-u^2)/sqrt(pi); then k-1 more derivatives of exp(-u^2)
    # d^j/du^j exp(-u^2) = (-1)^j H_j(u) exp(-u^2) with physicists' Hermite H_j
    j = order - 1
    herm = eval_hermitenorm(j, math.sqrt(2.0) * u) * 2.0 ** (j / 2.0)
    return (-1) ** j * herm * np.exp(-u * u) / math.sqrt(math.pi) / w ** order
