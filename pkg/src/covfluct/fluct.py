"""Monte-Carlo sampling of normalized entry fluctuations and of the resolvent field.

Index pairs are 1-based, matching the usual matrix notation.  Trials run on an
optional thread pool; every trial owns a counter-derived RNG stream and writes
to its own row, so batches are identical for any worker count or order.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from covfluct import funcalc
from covfluct.ensemble import EnsembleSpec, form_covariance, sample_matrix, trial_rng
from covfluct.errors import CovfluctError, DomainError
from covfluct.mp import MpParams, mp_expect, stieltjes_g
from covfluct.testfunctions import TestFunction

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 1e-3
MAX_PAIR_INDEX = 32
MAX_CORNER = 8


class TrialFailure(CovfluctError):
    """Too many trials failed their linear algebra."""


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _run_trials(task: Callable[[int], np.ndarray], trials: int, workers: int | None,
                template: np.ndarray) -> tuple[np.ndarray, list[int]]:
    out = np.empty((trials,) + template.shape, dtype=template.dtype)
    failed: list[int] = []

    def guarded(t: int):
        try:
            return t, task(t)
        except CovfluctError as exc:
            log.warning("trial %d failed: %s", t, exc)
            return t, None

    workers = workers or 1
    if workers == 1:
        results = map(guarded, range(trials))
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        results = pool.map(guarded, range(trials))
    for t, row in results:
        if row is None:
            failed.append(t)
            out[t] = np.nan
        else:
            out[t] = row
    if workers != 1:
        pool.shutdown()
    if len(failed) > MAX_FAILURE_RATE * trials:
        raise TrialFailure(f"{len(failed)} of {trials} trials failed")
    return out, sorted(failed)


# -- entry fluctuations -----------------------------------------------------

@dataclass
class FluctuationBatch:
    spec: EnsembleSpec
    f: TestFunction
    pairs: list[tuple[int, int]]
    centering: str
    samples: np.ndarray
    centers: np.ndarray
    failed: list[int] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return self.samples.shape[0]

    def valid(self) -> np.ndarray:
        return np.delete(self.samples, self.failed, axis=0)

    def target_ids(self) -> list[str]:
        return [f"{i}-{j}" for i, j in self.pairs]

    def coordinates(self, k: int) -> dict[str, np.ndarray]:
        """Real coordinates for pair ``k`` on which variances are estimated."""
        col = self.valid()[:, k]
        i, j = self.pairs[k]
        if self.spec.field == "real":
            return {"re": np.real(col)}
        if i == j:
            return {"re": col.real}
        return {"re": col.real, "im": col.imag}


def _check_pairs(pairs, N: int) -> list[tuple[int, int]]:
    out = []
    for pair in pairs:
        i, j = int(pair[0]), int(pair[1])
        if not 1 <= i <= j:
            raise DomainError(f"pair {pair} must satisfy 1 <= i <= j")
        if j > min(N, MAX_PAIR_INDEX):
            raise DomainError(f"pair {pair} exceeds min(N, {MAX_PAIR_INDEX})")
        out.append((i, j))
    return out


def entry_values(a: np.ndarray, f: TestFunction, pairs0: Sequence[tuple[int, int]]) -> np.ndarray:
    """f(M)_ij for M = A A*/N at 0-based pairs, choosing the cheapest exact route."""
    N = a.shape[0]
    fam = f.family
    if fam == "constant":
        return np.array([f.params["value"] if i == j else 0.0 for i, j in pairs0])
    if fam == "polynomial":
        coeffs = np.asarray(f.params["coeffs"], dtype=float)
        ah = a.conj().T
        cols = sorted({j for _, j in pairs0})
        vec = np.zeros((N, len(cols)), dtype=a.dtype)
        vec[cols, range(len(cols))] = 1.0
        acc = coeffs[0] * vec
        for ck in coeffs[1:]:
            vec = a @ (ah @ vec) / N
            acc = acc + ck * vec
        where = {j: k for k, j in enumerate(cols)}
        return np.array([acc[i, where[j]] for i, j in pairs0])
    M = form_covariance_array(a)
    if fam in ("cauchy_re", "cauchy_im"):
        z0 = complex(f.params["z0"])
        idx = sorted({i for i, _ in pairs0} | {j for _, j in pairs0})
        if z0.imag == 0 and z0.real > 0:
            cols = funcalc.resolvent_rows_real_shift(M, z0.real, idx)
        else:
            cols = _resolvent_columns(M, z0, idx)
        where = {j: k for k, j in enumerate(idx)}
        r = lambda i, j: cols[i, where[j]]  # noqa: E731
        if fam == "cauchy_re":
            return np.array([0.5 * (r(i, j) + np.conj(r(j, i))) for i, j in pairs0])
        return np.array([(r(i, j) - np.conj(r(j, i))) / 2j for i, j in pairs0])
    dec = funcalc.eigh(M)
    return funcalc.spectral_entries(dec, f, pairs0)


def _resolvent_columns(M: np.ndarray, z: complex, idx) -> np.ndarray:
    pairs = [(i, j) for j in idx for i in range(M.shape[0])]
    vals = funcalc.resolvent_entries(M, z, pairs)
    return vals.reshape(len(idx), M.shape[0]).T


def form_covariance_array(a: np.ndarray) -> np.ndarray:
    N = a.shape[0]
    mat = (a @ a.conj().T) / N
    return 0.5 * (mat + mat.conj().T)


def run_entry_fluctuations(spec: EnsembleSpec, f: TestFunction, pairs, trials: int,
                           centering: str = "empirical", workers: int | None = None,
                           stream: int = 0) -> FluctuationBatch:
    if trials < 100:
        raise DomainError("at least 100 trials are required")
    if centering not in ("empirical", "analytic"):
        raise DomainError(f"centering must be 'empirical' or 'analytic', got {centering!r}")
    pairs = _check_pairs(pairs, spec.N)
    pairs0 = [(i - 1, j - 1) for i, j in pairs]
    params = spec.mp_params()
    f.check_domain(params.u_plus)
    dtype = float if spec.field == "real" else complex

    def task(t: int) -> np.ndarray:
        m = sample_matrix(spec, trial_rng(spec.seed, t, stream))
        vals = entry_values(m.a, f, pairs0)
        return (vals.real if dtype is float else vals).astype(dtype)

    raw, failed = _run_trials(task, trials, workers, np.zeros(len(pairs), dtype=dtype))
    root_n = math.sqrt(spec.N)
    if centering == "analytic":
        expect = mp_expect(f, params)
        centers = np.array([expect if i == j else 0.0 for i, j in pairs])
        samples = root_n * (raw - centers)
    else:
        good = np.delete(raw, failed, axis=0)
        centers = good.mean(axis=0)
        samples = root_n * raw - root_n * centers
        # remove the residual roundoff of the mean exactly
        samples -= np.delete(samples, failed, axis=0).mean(axis=0)
    return FluctuationBatch(spec, f, pairs, centering, samples, np.asarray(centers), failed)


# -- resolvent field ----------------------------------------------------------

@dataclass
class ResolventFieldBatch:
    spec: EnsembleSpec
    points: list[complex]
    m: int
    samples: np.ndarray  # (trials, points, m, m)
    failed: list[int] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return self.samples.shape[0]

    def valid(self) -> np.ndarray:
        return np.delete(self.samples, self.failed, axis=0)

    def target_ids(self) -> list[str]:
        return [f"z{k}:{i + 1}-{j + 1}" for k in range(len(self.points))
                for i in range(self.m) for j in range(self.m)]


def _check_points(points, params: MpParams, margin: float = 0.1) -> list[complex]:
    out = []
    for z in points:
        z = complex(z)
        x = min(max(z.real, 0.0), params.u_plus)
        if abs(z - x) < margin:
            raise DomainError(f"point {z} is within {margin} of [0, {params.u_plus:.4g}]")
        out.append(z)
    return out


def run_resolvent_field(spec: EnsembleSpec, points, m: int, trials: int,
                        workers: int | None = None, stream: int = 0) -> ResolventFieldBatch:
    if not 1 <= m <= min(MAX_CORNER, spec.N):
        raise DomainError(f"corner size m must be in [1, {MAX_CORNER}]")
    if trials < 100:
        raise DomainError("at least 100 trials are required")
    params = spec.mp_params()
    points = _check_points(points, params)
    pts = np.array(points)
    g = np.asarray(stieltjes_g(pts, params))
    root_n = math.sqrt(spec.N)
    eye = np.eye(m)

    def task(t: int) -> np.ndarray:
        sm = sample_matrix(spec, trial_rng(spec.seed, t, stream))
        dec = funcalc.eigh(form_covariance(sm))
        q = dec.eigenvectors[:m]
        inv = 1.0 / (pts[:, None] - dec.eigenvalues[None, :])
        corner = np.einsum("il,pl,jl->pij", q, inv, q.conj())
        return root_n * (corner - g[:, None, None] * eye)

    samples, failed = _run_trials(task, trials, workers,
                                  np.zeros((len(points), m, m), dtype=complex))
    return ResolventFieldBatch(spec, points, m, samples, failed)


# -- decay of mean and variance of R_11 -----------------------------------------

@dataclass(frozen=True)
class DecayRow:
    N: int
    bias: float           # |mean tr_N R(z) - g_{c_N}(z)|: exchangeable estimate of |E R_11 - g|
    bias_se: float
    entry_bias: float     # |mean R_11 - g_{c_N}(z)| from the single entry (noisier)
    variance: float       # sample variance of R_11(z)
    scaled_variance: float


def resolvent_decay_probe(base: EnsembleSpec, sizes: Sequence[int], z: complex, trials: int,
                          c: float | None = None, workers: int | None = None) -> list[DecayRow]:
    """Empirical bias and variance of R_11(z) for each N in ``sizes``.

    E R_ii does not depend on i, so the bias is estimated from the normalized
    trace, whose Monte-Carlo noise is O(1/N) smaller than that of R_11 alone.
    """
    z = complex(z)
    if z.imag < 0.5:
        raise DomainError("the decay probe needs Im z >= 0.5")
    ratio = base.c_N if c is None else c
    rows = []
    for N in sizes:
        spec = base.with_(N=int(N), n=max(1, int(round(ratio * N))))
        params = spec.mp_params()
        g = complex(stieltjes_g(z, params))

        def task(t: int, spec=spec) -> np.ndarray:
            sm = sample_matrix(spec, trial_rng(spec.seed, t, stream=int(spec.N)))
            M = form_covariance(sm)
            if spec.field == "real":
                r11, eig = funcalc.first_diagonal_resolvent(M, [z])
                r11 = r11[0]
            else:
                dec = funcalc.eigh(M)
                eig = dec.eigenvalues
                r11 = np.sum(np.abs(dec.eigenvectors[0]) ** 2 / (z - eig))
            return np.array([r11, np.mean(1.0 / (z - eig))])

        out, failed = _run_trials(task, trials, workers, np.zeros(2, dtype=complex))
        out = np.delete(out, failed, axis=0)
        r11, tr = out[:, 0], out[:, 1]
        var = float(np.mean(np.abs(r11 - r11.mean()) ** 2) * len(r11) / (len(r11) - 1))
        rows.append(DecayRow(
            N=int(N),
            bias=float(abs(tr.mean() - g)),
            bias_se=float(np.std(tr, ddof=1) / math.sqrt(len(tr))),
            entry_bias=float(abs(r11.mean() - g)),
            variance=var,
            scaled_variance=N * var,
        ))
    return rows
