"""Functions of self-adjoint matrices: spectral route, resolvent entries and
the Helffer-Sjostrand integral."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from covfluct.errors import DomainError, EigenError
from covfluct.testfunctions import COMPACT_FAMILIES, TestFunction


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.conj().T


def eigh(M: np.ndarray) -> SpectralDecomposition:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError("eigh needs a square matrix")
    try:
        w, q = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"eigendecomposition failed: {exc}") from exc
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(q))):
        raise EigenError("eigendecomposition returned non-finite values")
    return SpectralDecomposition(w, q)


def matrix_function_spectral(M: np.ndarray, f: TestFunction,
                             decomposition: SpectralDecomposition | None = None) -> np.ndarray:
    dec = decomposition or eigh(M)
    q = dec.eigenvectors
    fx = f(dec.eigenvalues)
    out = (q * fx) @ q.conj().T
    return 0.5 * (out + out.conj().T)


def spectral_entries(dec: SpectralDecomposition, f: TestFunction, pairs) -> np.ndarray:
    """f(M)_ij for the given (0-based) index pairs without forming f(M)."""
    q = dec.eigenvectors
    fx = f(dec.eigenvalues)
    return np.array([np.sum(q[i] * fx * q[j].conj()) for i, j in pairs])


def resolvent_entries(M: np.ndarray, z: complex, pairs) -> np.ndarray:
    """(z - M)^-1 entries at 0-based ``pairs`` via one LU factorization."""
    M = np.asarray(M)
    N = M.shape[0]
    z = complex(z)
    if z.imag == 0:
        gap = np.min(np.abs(np.linalg.eigvalsh(M) - z.real))
        if gap <= 1e-8:
            raise DomainError(f"z={z} is within 1e-8 of the spectrum")
    shifted = z * np.eye(N) - M
    cols = sorted({j for _, j in pairs})
    rhs = np.zeros((N, len(cols)), dtype=complex)
    rhs[cols, range(len(cols))] = 1.0
    try:
        lu = sla.lu_factor(shifted, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenError(f"singular shift at z={z}") from exc
    if np.any(np.diag(lu[0]) == 0):
        raise EigenError(f"singular shift at z={z}")
    sol = sla.lu_solve(lu, rhs, check_finite=False)
    where = {j: k for k, j in enumerate(cols)}
    return np.array([sol[i, where[j]] for i, j in pairs])


def resolvent_rows_real_shift(M: np.ndarray, z0: float, rows) -> np.ndarray:
    """Columns of (z0 - M)^-1 for real z0 above the spectrum (Cholesky)."""
    N = M.shape[0]
    rhs = np.zeros((N, len(rows)))
    rhs[list(rows), range(len(rows))] = 1.0
    try:
        factor = sla.cho_factor(z0 * np.eye(N) - M, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"z0={z0} is not above the spectrum") from exc
    return sla.cho_solve(factor, rhs, check_finite=False)


def first_diagonal_resolvent(M: np.ndarray, points) -> tuple[np.ndarray, np.ndarray]:
    """R_11 at each point plus the full spectrum, from one tridiagonal reduction.

    The lower-triangular Householder reduction leaves e_1 fixed, so R_11 of M
    equals R_11 of the tridiagonal matrix, which is a continued fraction.
    """
    M = np.asarray(M)
    if np.iscomplexobj(M):
        raise DomainError("first_diagonal_resolvent supports real symmetric input")
    _, d, e, _, info = lapack.dsytrd(M, lower=1)
    if info != 0:
        raise EigenError(f"dsytrd failed (info={info})")
    eig = sla.eigvalsh_tridiagonal(d, e)
    out = []
    e2 = e * e
    for z in points:
        acc = z - d[-1]
        for k in range(len(d) - 2, -1, -1):
            acc = z - d[k] - e2[k] / acc
        out.append(1.0 / acc)
    return np.array(out), eig


# -- Helffer-Sjostrand --------------------------------------------------------

def _ramp(t):
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, np.exp(-1.0 / safe), 0.0)


def _ramp_prime(t):
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, np.exp(-1.0 / safe) / safe ** 2, 0.0)


def mollifier(y):
    """Smooth cutoff: 1 for |y| <= 1/2, 0 for |y| >= 1."""
    a = 1.0 - np.abs(y)
    b = np.abs(y) - 0.5
    return _ramp(a) / (_ramp(a) + _ramp(b))


def mollifier_prime(y):
    y = np.asarray(y, dtype=float)
    a = 1.0 - np.abs(y)
    b = np.abs(y) - 0.5
    ha, hb = _ramp(a), _ramp(b)
    dha, dhb = _ramp_prime(a), _ramp_prime(b)
    # d/d|y| of ha/(ha+hb) with da/d|y| = -1, db/d|y| = +1
    d_abs = (-dha * hb - ha * dhb) / (ha + hb) ** 2
    return np.sign(y) * d_abs


@dataclass(frozen=True)
class QuasiAnalyticExtension:
    f: TestFunction
    order: int = 6

    def __post_init__(self):
        if self.order < 1:
            raise DomainError("extension order must be >= 1")

    def value(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        total = np.zeros(x.shape, dtype=complex)
        for k in range(self.order + 1):
            total += self.f.derivative(x, k) * (1j * y) ** k / math.factorial(k)
        return total * mollifier(y)

    def dbar(self, x, y):
        """d/dzbar of the extension: top Taylor term plus the cutoff derivative."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        l = self.order
        top = self.f.derivative(x, l + 1) * (1j * y) ** l / math.factorial(l) * mollifier(y)
        sp = mollifier_prime(y)
        cut = np.zeros(x.shape, dtype=complex)
        active = sp != 0
        if np.any(active):
            taylor = np.zeros(x.shape, dtype=complex)
            for k in range(l + 1):
                taylor += self.f.derivative(x, k) * (1j * y) ** k / math.factorial(k)
            cut = np.where(active, 1j * sp * taylor, 0.0)
        return 0.5 * (top + cut)


@dataclass(frozen=True)
class HSGrid:
    """Tensor grid for the strip 0 < y < 1 (the y < 0 half follows by symmetry).

    ``nx`` Gauss-Legendre nodes in x over the function's effective window;
    ``ny_near`` nodes in log(y) on [y_min, 1/2] and ``ny_cut`` Gauss-Legendre
    nodes on [1/2, 1] where the cutoff varies.
    """
    nx: int = 200
    ny_near: int = 48
    ny_cut: int = 16
    y_min: float = 1e-4

    def refined(self) -> "HSGrid":
        return HSGrid(int(self.nx * 1.5), int(self.ny_near * 1.5), int(self.ny_cut * 1.5), self.y_min)

    def nodes(self, window: tuple[float, float]):
        a, b = window
        gx, gw = np.polynomial.legendre.leggauss(self.nx)
        xs = 0.5 * (b - a) * gx + 0.5 * (a + b)
        wx = 0.5 * (b - a) * gw
        tn, tw = np.polynomial.legendre.leggauss(self.ny_near)
        la, lb = math.log(self.y_min), math.log(0.5)
        t = 0.5 * (lb - la) * tn + 0.5 * (la + lb)
        y_near = np.exp(t)
        w_near = 0.5 * (lb - la) * tw * y_near
        cn, cw = np.polynomial.legendre.leggauss(self.ny_cut)
        y_cut = 0.25 * cn + 0.75
        w_cut = 0.25 * cw
        return xs, wx, np.concatenate([y_near, y_cut]), np.concatenate([w_near, w_cut])


DEFAULT_GRID = HSGrid()
_PRUNE = 1e-13


def _hs_integral(M: np.ndarray, ext: QuasiAnalyticExtension, grid: HSGrid) -> np.ndarray:
    f = ext.f
    if f.family not in COMPACT_FAMILIES:
        raise DomainError(f"Helffer-Sjostrand route needs a localized family, not {f.family}")
    N = M.shape[0]
    xs, wx, ys, wy = grid.nodes(f.effective_window())
    acc = np.zeros((N, N), dtype=complex)
    eye = np.eye(N)
    weights_all = ext.dbar(xs[None, :], ys[:, None]) * wx[None, :] * wy[:, None]
    # |R(x+iy)| <= 1/y bounds each node's contribution
    bound = np.abs(weights_all) / ys[:, None]
    keep_all = bound > _PRUNE * bound.max()
    for y, weights, keep in zip(ys, weights_all, keep_all):
        if not np.any(keep):
            continue
        zs = xs[keep] + 1j * y
        # one factorization (batched inverse) per grid node, summed in node order
        shifted = zs[:, None, None] * eye[None] - M[None]
        res = np.linalg.inv(shifted)
        acc += np.tensordot(weights[keep], res, axes=(0, 0))
    # y < 0 half: R(zbar) = R(z)^*, dbar(x, -y) = conj(dbar(x, y))
    out = -(acc + acc.conj().T) / math.pi
    return out.real if np.isrealobj(M) else out


def matrix_function_hs(M: np.ndarray, ext: QuasiAnalyticExtension,
                       grid: HSGrid = DEFAULT_GRID, tol: float | None = 1e-3) -> np.ndarray:
    """f(M) by the Helffer-Sjostrand formula.

    With ``tol`` set, the result is compared with a 1.5x refined grid and an
    error is raised when the relative Frobenius difference exceeds ``tol``.
    """
    M = np.asarray(M)
    out = _hs_integral(M, ext, grid)
    if tol is not None:
        fine = _hs_integral(M, ext, grid.refined())
        scale = max(np.linalg.norm(fine), 1e-300)
        diff = np.linalg.norm(out - fine) / scale
        if diff > tol:
            raise ArithmeticError(
                f"HS grid too coarse: relative difference {diff:.3g} to refined grid "
                f"(|coarse|={np.linalg.norm(out):.6g}, |fine|={np.linalg.norm(fine):.6g})")
    return out


def commute_identity_residual(B: np.ndarray, z: complex) -> float:
    """max |B*(z - BB*)^-1 B - B*B (z - B*B)^-1| with independent factorizations."""
    B = np.asarray(B)
    N, n = B.shape
    z = complex(z)
    if z == 0:
        raise DomainError("z = 0 is excluded")
    bh = B.conj().T
    left_k = z * np.eye(N) - B @ bh
    right_k = z * np.eye(n) - bh @ B
    try:
        left = bh @ sla.solve(left_k, B.astype(complex))
        # X (z - B*B) = B*B  <=>  (z - B*B)^T X^T = (B*B)^T
        gram = bh @ B
        right = sla.solve(right_k.T, gram.T.astype(complex)).T
    except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
        raise EigenError(f"singular shift at z={z}") from exc
    return float(np.max(np.abs(left - right))) if left.size else 0.0
