"""Random sample covariance ensembles.

Entry laws come from a closed menu with exact moments, so fourth cumulants
enter predictions without estimation noise.  Every trial draws from its own
Philox stream keyed by ``(seed, stream, trial)``; results do not depend on the
order in which trials are executed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from dataclasses import field as dc_field
from typing import Any

import numpy as np
from scipy import integrate, stats

from covfluct.errors import ConfigError, DomainError
from covfluct.mp import MpParams

KINDS = ("gaussian", "rademacher", "uniform", "centered_exponential", "two_point")
FIELDS = ("real", "complex")


@dataclass(frozen=True)
class EntryDist:
    """Centered entry law with variance ``sigma2``.

    ``two_point`` puts mass ``p`` at ``sigma*sqrt((1-p)/p)`` and ``1-p`` at
    ``-sigma*sqrt(p/(1-p))``.
    """

    kind: str
    sigma2: float = 1.0
    p: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown entry kind {self.kind!r}; choose from {KINDS}")
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")
        if self.kind == "two_point":
            if self.p is None or not 0 < self.p < 1:
                raise DomainError("two_point needs 0 < p < 1")
        elif self.p is not None:
            raise DomainError(f"parameter p only applies to two_point, not {self.kind}")

    # standardized (unit-variance) moments
    @property
    def _std_m3(self) -> float:
        if self.kind == "centered_exponential":
            return 2.0
        if self.kind == "two_point":
            p, q = self.p, 1.0 - self.p
            return (q - p) / math.sqrt(p * q)
        return 0.0

    @property
    def _std_m4(self) -> float:
        if self.kind == "gaussian":
            return 3.0
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "uniform":
            return 1.8
        if self.kind == "centered_exponential":
            return 9.0
        p, q = self.p, 1.0 - self.p
        return (p ** 3 + q ** 3) / (p * q)

    @property
    def m4(self) -> float:
        return self._std_m4 * self.sigma2 ** 2

    @property
    def kappa3(self) -> float:
        return self._std_m3 * self.sigma2 ** 1.5

    @property
    def kappa4_real(self) -> float:
        return self.m4 - 3.0 * self.sigma2 ** 2

    @property
    def m4_complex(self) -> float:
        """E|A|^4 when Re and Im are i.i.d. copies of this law at variance sigma2/2."""
        return (self._std_m4 + 1.0) / 2.0 * self.sigma2 ** 2

    @property
    def kappa4_complex(self) -> float:
        return self.m4_complex - 2.0 * self.sigma2 ** 2

    def kappa4(self, field: str) -> float:
        return self.kappa4_real if field == "real" else self.kappa4_complex

    def draw_standard(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Unit-variance, mean-zero draws."""
        k = self.kind
        if k == "gaussian":
            return rng.standard_normal(shape)
        if k == "rademacher":
            return 2.0 * rng.integers(0, 2, size=shape).astype(float) - 1.0
        if k == "uniform":
            return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=shape)
        if k == "centered_exponential":
            return rng.standard_exponential(shape) - 1.0
        p, q = self.p, 1.0 - self.p
        hi, lo = math.sqrt(q / p), -math.sqrt(p / q)
        return np.where(rng.random(shape) < p, hi, lo)

    def clipped_moments(self, bound: float) -> tuple[float, float, float]:
        """Exact (mean, variance, raw 4th moment about that mean) of clip(X, -b, b),
        X standardized."""
        b = float(bound)
        k = self.kind
        if k == "gaussian":
            raw = _clipped_gaussian_raw(b)
        elif k in ("rademacher", "two_point"):
            if k == "rademacher":
                atoms, probs = np.array([-1.0, 1.0]), np.array([0.5, 0.5])
            else:
                p, q = self.p, 1.0 - self.p
                atoms, probs = np.array([math.sqrt(q / p), -math.sqrt(p / q)]), np.array([p, q])
            y = np.clip(atoms, -b, b)
            raw = [float(probs @ y ** j) for j in range(5)]
        elif k == "uniform":
            a = math.sqrt(3.0)
            raw = [_clipped_raw(lambda x: 1.0 / (2 * a), -a, a, b, j) for j in range(5)]
        else:
            # X = E - 1 with E ~ Exp(1): density exp(-(x+1)) on [-1, inf)
            raw = [_clipped_raw(lambda x: math.exp(-(x + 1.0)), -1.0, math.inf, b, j)
                   for j in range(5)]
        m1, m2, m3, m4 = raw[1], raw[2], raw[3], raw[4]
        var = m2 - m1 * m1
        c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 ** 4
        return m1, var, c4

    def support_bound(self) -> float:
        """sup |X| for standardized X (inf for unbounded kinds)."""
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "uniform":
            return math.sqrt(3.0)
        if self.kind == "two_point":
            p, q = self.p, 1.0 - self.p
            return max(math.sqrt(q / p), math.sqrt(p / q))
        return math.inf

    def to_dict(self) -> dict[str, Any]:
        d = {"kind": self.kind, "sigma2": self.sigma2}
        if self.p is not None:
            d["p"] = self.p
        return d


def _clipped_gaussian_raw(b: float) -> list[float]:
    # E[clip(X,-b,b)^j] = int_{-b}^{b} x^j phi + b^j P(X>b) + (-b)^j P(X<-b)
    phi_b, tail = stats.norm.pdf(b), stats.norm.sf(b)
    inner = [1.0 - 2.0 * tail, 0.0]
    for j in range(2, 5):
        # int_{-b}^{b} x^j phi = (j-1) int x^{j-2} phi - [x^{j-1} phi]_{-b}^{b}
        boundary = b ** (j - 1) * phi_b - (-b) ** (j - 1) * phi_b
        inner.append((j - 1) * inner[j - 2] - boundary)
    return [inner[j] + (b ** j + (-b) ** j) * tail for j in range(5)]


def _clipped_raw(density, lo, hi, b, j) -> float:
    a, c = max(lo, -b), min(hi, b)
    body = integrate.quad(lambda x: x ** j * density(x), a, c, epsabs=1e-14, epsrel=1e-12)[0] \
        if c > a else 0.0
    upper = integrate.quad(density, b, hi, epsabs=1e-15)[0] if hi > b else 0.0
    lower = integrate.quad(density, lo, -b, epsabs=1e-15)[0] if lo < -b else 0.0
    return body + b ** j * upper + (-b) ** j * lower


@dataclass(frozen=True)
class Truncation:
    """Clip at ``level * sqrt(N)``, then recenter and rescale to the target variance."""
    level: float = 0.1

    def __post_init__(self):
        if not self.level > 0:
            raise DomainError("truncation level must be positive")


@dataclass(frozen=True)
class EnsembleSpec:
    N: int
    n: int
    field: str = "real"
    entry: EntryDist = dc_field(default_factory=lambda: EntryDist("gaussian"))
    truncation: Truncation | None = None
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.n < 1:
            raise ConfigError("N and n must be positive")
        if self.field not in FIELDS:
            raise ConfigError(f"field must be one of {FIELDS}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def c_N(self) -> float:
        return self.n / self.N

    @property
    def sigma2(self) -> float:
        return self.entry.sigma2

    def mp_params(self) -> MpParams:
        """Finite-N parameters (ratio c_N)."""
        return MpParams(self.sigma2, self.c_N)

    def kappa4(self) -> float:
        """Fourth cumulant of the entries actually generated (truncation included)."""
        if self.truncation is None:
            return self.entry.kappa4(self.field)
        part_var = self.sigma2 if self.field == "real" else self.sigma2 / 2
        bound = self.truncation.level * math.sqrt(self.N) / math.sqrt(part_var)
        _, var, c4 = self.entry.clipped_moments(bound)
        std_m4 = c4 / var ** 2
        if self.field == "real":
            return (std_m4 - 3.0) * self.sigma2 ** 2
        return ((std_m4 + 1.0) / 2.0 - 2.0) * self.sigma2 ** 2

    def with_(self, **changes) -> "EnsembleSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "N": self.N,
            "n": self.n,
            "field": self.field,
            "entry": self.entry.to_dict(),
            "truncation": None if self.truncation is None else {"level": self.truncation.level},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EnsembleSpec":
        trunc = d.get("truncation")
        return cls(
            N=int(d["N"]),
            n=int(d["n"]),
            field=d.get("field", "real"),
            entry=EntryDist(**d.get("entry", {"kind": "gaussian"})),
            truncation=None if trunc is None else Truncation(**trunc),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class SampleMatrix:
    a: np.ndarray
    spec: EnsembleSpec

    def __post_init__(self):
        if self.a.shape != (self.spec.N, self.spec.n):
            raise DomainError(f"matrix shape {self.a.shape} does not match spec")


def trial_rng(seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one trial; independent of execution order."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, trial))
    return np.random.Generator(np.random.Philox(ss))


def sample_matrix(spec: EnsembleSpec, rng: np.random.Generator) -> SampleMatrix:
    shape = (spec.N, spec.n)
    ent = spec.entry
    if spec.field == "real":
        a = math.sqrt(ent.sigma2) * ent.draw_standard(rng, shape)
    else:
        scale = math.sqrt(ent.sigma2 / 2)
        re = ent.draw_standard(rng, shape)
        im = ent.draw_standard(rng, shape)
        a = scale * (re + 1j * im)
    m = SampleMatrix(a, spec)
    if spec.truncation is not None:
        m = truncate_entries(m, spec.truncation.level)
    return m


def _truncate_real(x: np.ndarray, ent: EntryDist, part_var: float, bound: float) -> np.ndarray:
    sd = math.sqrt(part_var)
    std_bound = bound / sd
    if std_bound >= ent.support_bound():
        return x
    mean, var, _ = ent.clipped_moments(std_bound)
    if not var > 0:
        raise DomainError(f"clip bound {bound:g} leaves zero variance")
    y = np.clip(x, -bound, bound)
    return (y - mean * sd) / math.sqrt(var)


def truncate_entries(m: SampleMatrix, level: float) -> SampleMatrix:
    """Clip entries at ``level*sqrt(N)`` and restore mean 0 / variance sigma2.

    A simple stand-in for a truncation that keeps the properties downstream
    limits use: exact centering and variance, a uniform sup bound, and
    controlled fourth moments.  Complex entries are treated part by part.
    """
    if not level > 0:
        raise DomainError("truncation level must be positive")
    spec = m.spec
    bound = level * math.sqrt(spec.N)
    ent = spec.entry
    if spec.field == "real":
        a = _truncate_real(m.a, ent, ent.sigma2, bound)
    else:
        half = ent.sigma2 / 2
        a = _truncate_real(m.a.real, ent, half, bound) + 1j * _truncate_real(m.a.imag, ent, half, bound)
    return SampleMatrix(a, spec)


def form_covariance(m: SampleMatrix) -> np.ndarray:
    """M = A A* / N, symmetrized."""
    a = m.a
    N = a.shape[0]
    mat = (a @ a.conj().T) / N
    return 0.5 * (mat + mat.conj().T)
