from __future__ import annotations

import numpy as np
import pytest
from scipy import linalg as sla

from covfluct import funcalc
from covfluct.ensemble import EnsembleSpec, form_covariance, sample_matrix, trial_rng
from covfluct.errors import DomainError
from covfluct.funcalc import (
    DEFAULT_GRID, HSGrid, QuasiAnalyticExtension, commute_identity_residual, eigh,
    first_diagonal_resolvent, matrix_function_hs, matrix_function_spectral, mollifier,
    resolvent_entries,
)
from covfluct.testfunctions import TestFunction


def cov_instance(N, n, seed=0, field="real"):
    return form_covariance(sample_matrix(EnsembleSpec(N, n, field=field), trial_rng(seed, 0)))


def test_eigh_trivial_cases():
    dec = eigh(np.eye(4))
    assert np.all(dec.eigenvalues == 1.0)
    assert np.allclose(dec.reconstruct(), np.eye(4), atol=0)
    dec = eigh(np.diag([0.0, 3.0]))
    assert np.allclose(dec.eigenvalues, [0, 3])
    assert np.allclose(np.abs(dec.eigenvectors), np.eye(2))


@pytest.mark.parametrize("field", ["real", "complex"])
def test_eigh_invariants(field):
    M = cov_instance(50, 70, field=field)
    dec = eigh(M)
    q = dec.eigenvectors
    assert np.max(np.abs(q @ q.conj().T - np.eye(50))) < 1e-12
    assert np.max(np.abs(dec.reconstruct() - M)) <= 1e-10 * (1 + np.linalg.norm(M, 2))
    assert dec.eigenvalues.min() >= -1e-10
    assert np.all(np.diff(dec.eigenvalues) >= 0)


def test_spectral_function_trivial_cases():
    M = cov_instance(30, 20)
    assert np.allclose(matrix_function_spectral(M, TestFunction.identity()), M, atol=1e-10)
    assert np.allclose(matrix_function_spectral(M, TestFunction.constant(1.0)), np.eye(30), atol=1e-12)


def test_spectral_cauchy_against_direct_solve():
    M = cov_instance(40, 40, seed=2)
    fM = matrix_function_spectral(M, TestFunction.cauchy_re(5.0))
    direct = np.linalg.solve(5.0 * np.eye(40) - M, np.eye(40))
    assert np.max(np.abs(fM - direct)) < 1e-8
    z0 = 1.0 + 0.5j
    fM = matrix_function_spectral(M, TestFunction.cauchy_im(z0))
    assert np.max(np.abs(fM - np.linalg.inv(z0 * np.eye(40) - M).imag)) < 1e-8


@pytest.mark.parametrize("f", [TestFunction.gaussian_bump(1.0, 0.5), TestFunction.polynomial(1, 2, -1)],
                         ids=["bump", "poly"])
def test_spectral_function_properties(f):
    M = cov_instance(25, 35, seed=3, field="complex")
    fM = matrix_function_spectral(M, f)
    assert np.array_equal(fM, fM.conj().T)
    scale = 1 + np.linalg.norm(fM) * np.linalg.norm(M)
    assert np.max(np.abs(fM @ M - M @ fM)) < 1e-9 * scale
    got = np.sort(np.linalg.eigvalsh(fM))
    want = np.sort(f(np.linalg.eigvalsh(M)))
    assert np.max(np.abs(got - want)) < 1e-9


def test_spectral_entries_match_full_matrix():
    M = cov_instance(20, 30)
    f = TestFunction.gaussian_bump(0.8, 0.3)
    dec = eigh(M)
    full = matrix_function_spectral(M, f, dec)
    pairs = [(0, 0), (0, 5), (3, 7)]
    assert np.allclose(funcalc.spectral_entries(dec, f, pairs), [full[i, j] for i, j in pairs], atol=1e-14)


# -- resolvent entries ----------------------------------------------------------------

def test_resolvent_trivial_cases():
    assert resolvent_entries(np.zeros((3, 3)), 1j, [(0, 0)])[0] == pytest.approx(-1j)
    vals = resolvent_entries(np.diag([1.0, 2.0]), 3.0, [(0, 0), (1, 1), (0, 1)])
    assert np.allclose(vals, [0.5, 1.0, 0.0])


def test_resolvent_near_spectrum_rejected():
    with pytest.raises(DomainError):
        resolvent_entries(np.diag([1.0, 2.0]), 2.0, [(0, 0)])


def test_resolvent_reflection_and_bounds():
    M = cov_instance(30, 30, seed=4)
    pairs = [(i, j) for i in range(30) for j in range(30)]
    z = 1.3 + 0.4j
    R = resolvent_entries(M, z, pairs).reshape(30, 30)
    Rb = resolvent_entries(M, z.conjugate(), pairs).reshape(30, 30)
    assert np.max(np.abs(Rb - R.conj())) < 1e-12
    assert np.linalg.norm(R, 2) <= 1 / z.imag + 1e-12
    assert np.all(np.sum(np.abs(R) ** 2, axis=1) <= 1 / z.imag ** 2 + 1e-10)


def test_cholesky_rows_match_lu():
    M = cov_instance(50, 50, seed=5)
    cols = funcalc.resolvent_rows_real_shift(M, 5.0, [0, 3])
    ref = resolvent_entries(M, 5.0, [(i, j) for j in (0, 3) for i in range(50)]).reshape(2, 50).T
    assert np.allclose(cols, ref.real, atol=1e-13)


def test_first_diagonal_resolvent_matches_solve():
    M = cov_instance(60, 60, seed=6)
    pts = [1 + 1j, 2j, -0.5 + 0.1j, 10j]
    r11, eig = first_diagonal_resolvent(M, pts)
    ref = [resolvent_entries(M, z, [(0, 0)])[0] for z in pts]
    assert np.allclose(r11, ref, atol=1e-12)
    assert np.allclose(eig, np.linalg.eigvalsh(M), atol=1e-12)


# -- Helffer-Sjostrand --------------------------------------------------------------

def test_mollifier_shape():
    y = np.array([0.0, 0.3, 0.5, 0.75, 1.0, 1.5, -0.4, -0.9])
    m = mollifier(y)
    assert np.all(m[[0, 1, 2, 6]] == 1.0)
    assert np.all(m[[4, 5]] == 0.0)
    assert 0 < m[3] < 1 and 0 < m[7] < 1


@pytest.mark.parametrize("f", [TestFunction.gaussian_bump(1.0, 0.5), TestFunction.indicator_smoothed(0.5, 2.0, 0.3)],
                         ids=["bump", "indicator"])
def test_extension_restricts_to_f(f):
    x = np.linspace(-1, 4, 17)
    ext = QuasiAnalyticExtension(f, 6)
    assert np.array_equal(ext.value(x, 0.0), f(x).astype(complex))


@pytest.mark.parametrize("order", [2, 4, 6])
def test_dbar_vanishes_to_order_l(order):
    f = TestFunction.gaussian_bump(1.0, 0.5)
    ext = QuasiAnalyticExtension(f, order)
    # x points away from zeros of f^(order+1)
    x = np.array([0.13, 0.61, 1.37, 1.92])
    x = x[np.abs(f.derivative(x, order + 1)) > 1e-3]
    d2, d3 = np.abs(ext.dbar(x, 1e-2)), np.abs(ext.dbar(x, 1e-3))
    exponent = np.log10(d2 / d3)
    assert np.all(np.abs(exponent - order) <= 0.2 * order)


def test_hs_scalar_matrix():
    f = TestFunction.gaussian_bump(1.0, 0.5)
    out = matrix_function_hs(np.array([[1.2]]), QuasiAnalyticExtension(f))
    assert out[0, 0] == pytest.approx(f(1.2), abs=1e-4)


def test_hs_matches_spectral_on_ensemble_instance():
    M = cov_instance(50, 100, seed=7)
    f = TestFunction.gaussian_bump(2.0, 0.6)
    hs = matrix_function_hs(M, QuasiAnalyticExtension(f, 6))
    sp = matrix_function_spectral(M, f)
    assert np.linalg.norm(hs - sp) / np.linalg.norm(sp) < 1e-3


def test_higher_order_extension_is_more_accurate():
    M = cov_instance(30, 30, seed=8)
    f = TestFunction.gaussian_bump(1.0, 0.4)
    sp = matrix_function_spectral(M, f)
    err = {l: np.linalg.norm(matrix_function_hs(M, QuasiAnalyticExtension(f, l), tol=None) - sp)
           for l in (2, 6)}
    assert err[6] < err[2]


def test_hs_coarse_grid_detected():
    M = cov_instance(10, 10, seed=9)
    f = TestFunction.gaussian_bump(1.0, 0.05)
    with pytest.raises(ArithmeticError, match="refined"):
        matrix_function_hs(M, QuasiAnalyticExtension(f), HSGrid(nx=12, ny_near=6, ny_cut=4))


def test_hs_rejects_unbounded_family():
    with pytest.raises(DomainError):
        matrix_function_hs(np.eye(2), QuasiAnalyticExtension(TestFunction.identity()))


# -- commutation identity ------------------------------------------------------------

def test_commute_identity_cases():
    assert commute_identity_residual(np.zeros((3, 4)), 2j) == 0.0
    rng = np.random.default_rng(0)
    B = rng.standard_normal((20, 35)) / np.sqrt(20)
    assert commute_identity_residual(B, 5j) < 1e-10
    S = rng.standard_normal((15, 15)) / np.sqrt(15)
    top = np.linalg.norm(S @ S.T, 2)
    assert commute_identity_residual(S, top + 1.5) < 1e-10


def test_commute_identity_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(50):
        N, n = rng.integers(2, 30, size=2)
        B = (rng.standard_normal((N, n)) + 1j * rng.standard_normal((N, n))) / np.sqrt(2 * N)
        z = complex(rng.uniform(-1, 5), rng.choice([-1, 1]) * rng.uniform(0.2, 3))
        assert commute_identity_residual(B, z) < 1e-9


def test_commute_identity_rejects_zero():
    with pytest.raises(DomainError):
        commute_identity_residual(np.ones((2, 2)), 0.0)


def test_default_grid_shape():
    xs, wx, ys, wy = DEFAULT_GRID.nodes((0.0, 1.0))
    assert xs.size == 200 and ys.size == 64
    assert wx.sum() == pytest.approx(1.0)
    assert ys.min() > 1e-4 and ys.max() < 1.0
