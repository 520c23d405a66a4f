"""Estimators and tests that confront Monte-Carlo batches with limiting predictions."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from covfluct.errors import DomainError
from covfluct.fluct import FluctuationBatch, ResolventFieldBatch
from covfluct.mp import Prediction

Z95 = 1.959963984540054
MIN_TRIALS = 100
MIN_KS_SAMPLES = 500
MIN_BLOCK_TRIALS = 1000


@dataclass(frozen=True)
class VarianceReport:
    target: str
    estimate: float
    ci95: tuple[float, float]
    predicted: float
    ratio: float
    band: float
    trials: int
    passed: bool
    kind: str = "variance"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return d


@dataclass(frozen=True)
class GofReport:
    target: str
    ks_statistic: float
    p_value_approx: float
    variance: float
    standardization: str
    samples: int
    alpha: float
    passed: bool
    kind: str = "ks"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class IndependenceReport:
    target: str
    correlation: float
    threshold: float
    applicable: bool
    passed: bool
    kind: str = "independence"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CovBlockReport:
    target: str
    empirical: tuple[tuple[float, float], tuple[float, float]]
    predicted: tuple[tuple[float, float], tuple[float, float]]
    stderr: tuple[tuple[float, float], tuple[float, float]]
    rel_band: float
    abs_band: float
    passed: bool
    kind: str = "cov_block"

    def to_dict(self) -> dict:
        return {k: (np.asarray(v).tolist() if isinstance(v, tuple) else v)
                for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SkippedReport:
    """A test that was enabled but whose preconditions did not hold."""
    target: str
    test: str
    reason: str
    passed: bool = True
    kind: str = "skipped"

    def to_dict(self) -> dict:
        return asdict(self)


# -- variance -------------------------------------------------------------------

def variance_ci(x: np.ndarray) -> tuple[float, tuple[float, float]]:
    """Unbiased variance and a 95% normal-approximation interval.

    The interval uses Var(s^2) ~ (m4 - s^4)/n, which reduces to the chi-square
    width 2 s^4/n for Gaussian data and stays honest for heavier tails.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    dev = x - x.mean()
    s2 = float(dev @ dev) / (n - 1)
    m4 = float(np.mean(dev ** 4))
    half = Z95 * math.sqrt(max(m4 - s2 * s2, 0.0) / n)
    return s2, (max(s2 - half, 0.0), s2 + half)


def coordinate_predictions(pred, coords: Sequence[str]) -> dict[str, float]:
    if isinstance(pred, Prediction):
        if pred.field == "complex" and not pred.diagonal:
            return {"re": pred.re_variance, "im": pred.im_variance}
        return {"re": pred.variance}
    if isinstance(pred, Mapping):
        return {k: float(v) for k, v in pred.items()}
    return {c: float(pred) for c in coords}


def variance_test(batch: FluctuationBatch, predictions: Sequence, rel_band: float = 0.1,
                  band_abs: float | None = None) -> list[VarianceReport]:
    """Compare per-coordinate sample variances with predicted limits.

    ``predictions`` holds one entry per pair: a :class:`Prediction`, a float
    (used for every coordinate) or a mapping ``{"re": v, "im": v}``.
    """
    if batch.valid().shape[0] < MIN_TRIALS:
        raise DomainError(f"variance_test needs at least {MIN_TRIALS} trials")
    if len(predictions) != len(batch.pairs):
        raise DomainError("one prediction per pair is required")
    per_pair = []
    for k in range(len(batch.pairs)):
        coords = batch.coordinates(k)
        per_pair.append((coords, coordinate_predictions(predictions[k], list(coords))))
    scale = max([abs(v) for _, pr in per_pair for v in pr.values()] + [0.0])
    if band_abs is None:
        band_abs = 1e-3 * max(1.0, scale)
    reports = []
    for (i, j), (coords, preds) in zip(batch.pairs, per_pair):
        for name, x in coords.items():
            predicted = preds[name]
            if predicted < 0:
                raise DomainError("predicted variance must be non-negative")
            est, (lo, hi) = variance_ci(x)
            if predicted == 0.0:
                ok, band, ratio = est <= band_abs, band_abs, math.inf if est > 0 else 1.0
            else:
                band = max(rel_band, (hi - lo) / 2 / est) if est > 0 else rel_band
                ok = est > 0 and est * (1 - band) <= predicted <= est * (1 + band)
                ratio = est / predicted
            reports.append(VarianceReport(f"{i}-{j}:{name}", est, (lo, hi), predicted,
                                          ratio, band, x.size, bool(ok)))
    return reports


# -- Kolmogorov-Smirnov -----------------------------------------------------------

def kolmogorov_sf(lam: float, terms: int = 20) -> float:
    """P(sqrt(n) D_n > lam) in the large-n limit.

    For lam >= 1 the alternating series 2 sum (-1)^(k-1) exp(-2 k^2 lam^2)
    (``terms`` terms); below that its Jacobi-transformed form, which converges
    fast where the alternating series does not.
    """
    if lam <= 0:
        return 1.0
    if lam >= 1.0:
        k = np.arange(1, terms + 1)
        q = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam))
    else:
        k = np.arange(1, terms + 1)
        cdf = math.sqrt(2 * math.pi) / lam * np.sum(
            np.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8 * lam * lam)))
        q = 1.0 - cdf
    return float(min(max(q, 0.0), 1.0))


def ks_statistic(samples, cdf) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_gaussian_test(samples, variance: float, target: str = "",
                     standardization: str = "predicted", alpha: float = 0.01) -> GofReport:
    """One-sample KS test of ``samples`` against N(0, variance)."""
    if not variance > 0:
        raise DomainError("KS reference variance must be positive")
    x = np.asarray(samples, dtype=float)
    if x.size < MIN_KS_SAMPLES:
        raise DomainError(f"KS test needs at least {MIN_KS_SAMPLES} samples")
    sd = math.sqrt(variance)
    d = ks_statistic(x, lambda t: ndtr(t / sd))
    p = kolmogorov_sf(math.sqrt(x.size) * d)
    return GofReport(target, d, p, float(variance), standardization, x.size, alpha, p > alpha)


# -- independence -------------------------------------------------------------------

def independence_test(batch: FluctuationBatch, pair_pairs: Iterable, threshold: float = 0.1
                      ) -> list[IndependenceReport]:
    """Absolute sample correlation between coordinates of distinct pairs."""
    index = {p: k for k, p in enumerate(batch.pairs)}
    reports = []
    for a, b in pair_pairs:
        a, b = tuple(a), tuple(b)
        if a not in index or b not in index:
            raise DomainError(f"pairs {a}, {b} must both be in the batch")
        ca, cb = batch.coordinates(index[a]), batch.coordinates(index[b])
        for na, xa in ca.items():
            for nb, xb in cb.items():
                target = f"{a[0]}-{a[1]}:{na}|{b[0]}-{b[1]}:{nb}"
                da, db = xa - xa.mean(), xb - xb.mean()
                va, vb = float(da @ da), float(db @ db)
                if va == 0 or vb == 0:
                    reports.append(IndependenceReport(target, math.nan, threshold, False, True))
                    continue
                corr = float(np.clip((da @ db) / math.sqrt(va * vb), -1.0, 1.0))
                # a pair against itself is a guard rail, not a test
                applicable = a != b
                reports.append(IndependenceReport(target, corr, threshold, applicable,
                                                  not applicable or abs(corr) <= threshold))
    return reports


# -- resolvent covariance blocks -------------------------------------------------------

def cross_covariance_block(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 covariance of (Re u, Im u) against (Re v, Im v) and its standard errors."""
    pu = [u.real - u.real.mean(), u.imag - u.imag.mean()]
    pv = [v.real - v.real.mean(), v.imag - v.imag.mean()]
    n = u.size
    est = np.empty((2, 2))
    se = np.empty((2, 2))
    for a in range(2):
        for b in range(2):
            prod = pu[a] * pv[b]
            est[a, b] = prod.sum() / (n - 1)
            se[a, b] = prod.std(ddof=1) / math.sqrt(n)
    return est, se


def block_within(emp: np.ndarray, pred: np.ndarray, se: np.ndarray, rel_band: float,
                 abs_band: float, ci_slack: bool = True) -> bool:
    slack = Z95 * se if ci_slack else 0.0
    near_zero = np.abs(pred) < abs_band
    tol = np.where(near_zero, abs_band, rel_band * np.abs(pred)) + slack
    return bool(np.all(np.abs(emp - pred) <= tol))


def covariance_block_test(batch: ResolventFieldBatch, predictions: Mapping, rel_band: float = 0.15,
                          abs_band: float | None = None, ci_slack: bool = True
                          ) -> list[CovBlockReport]:
    """Compare empirical (Re, Im) cross-covariance blocks with predicted ones.

    ``predictions`` maps ``(i, j, a, b)`` -- 1-based entry and point indices --
    to a predicted 2x2 block for Cov((Re, Im) Psi_ij(z_a), (Re, Im) Psi_ij(z_b)).
    ``abs_band`` defaults to 5% of the largest predicted element in each block.
    """
    samples = batch.valid()
    if samples.shape[0] < MIN_BLOCK_TRIALS:
        raise DomainError(f"covariance_block_test needs at least {MIN_BLOCK_TRIALS} trials")
    reports = []
    for (i, j, a, b), pred in predictions.items():
        pred = np.asarray(pred, dtype=float)
        emp, se = cross_covariance_block(samples[:, a, i - 1, j - 1], samples[:, b, i - 1, j - 1])
        band = abs_band if abs_band is not None else 0.05 * float(np.max(np.abs(pred)))
        ok = block_within(emp, pred, se, rel_band, band, ci_slack)
        za, zb = batch.points[a], batch.points[b]
        reports.append(CovBlockReport(
            f"{i}-{j}@({za:g},{zb:g})", _tup(emp), _tup(pred), _tup(se), rel_band, band, ok))
    return reports


def _tup(m: np.ndarray):
    return tuple(tuple(float(x) for x in row) for row in m)


# -- serialization ---------------------------------------------------------------------

def reports_to_csv(reports: Sequence, path) -> None:
    """Flat CSV: one row per report, union of fields, nested values JSON-ish."""
    rows = [r.to_dict() for r in reports]
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in keys})
