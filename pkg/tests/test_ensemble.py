from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from covfluct.ensemble import (
    EnsembleSpec, EntryDist, KINDS, SampleMatrix, Truncation, form_covariance, sample_matrix,
    trial_rng, truncate_entries,
)
from covfluct.errors import ConfigError, DomainError


def dist(kind, sigma2=1.0):
    return EntryDist(kind, sigma2, 0.3 if kind == "two_point" else None)


# closed-form moments against scipy.stats reference laws
REFERENCE = {
    "gaussian": stats.norm(),
    "uniform": stats.uniform(-math.sqrt(3), 2 * math.sqrt(3)),
    "centered_exponential": stats.expon(loc=-1.0),
}


@pytest.mark.parametrize("kind", sorted(REFERENCE))
def test_fourth_moments_match_reference_law(kind):
    law = REFERENCE[kind]
    assert law.mean() == pytest.approx(0.0, abs=1e-14)
    assert law.var() == pytest.approx(1.0)
    d = dist(kind, 2.0)
    assert d.m4 == pytest.approx(law.expect(lambda x: x ** 4) * 4.0, rel=1e-9)
    assert d.kappa3 == pytest.approx(law.stats(moments="s") * 2.0 ** 1.5, abs=1e-9)


@pytest.mark.parametrize("kind, k4", [("gaussian", 0.0), ("rademacher", -2.0), ("uniform", -1.2),
                                      ("centered_exponential", 6.0)])
def test_real_fourth_cumulants(kind, k4):
    assert dist(kind).kappa4_real == pytest.approx(k4)
    assert dist(kind, 3.0).kappa4_real == pytest.approx(9 * k4)


def test_two_point_moments_from_atoms():
    d = EntryDist("two_point", 1.0, 0.2)
    q = 0.8
    atoms = np.array([math.sqrt(q / 0.2), -math.sqrt(0.2 / q)])
    probs = np.array([0.2, q])
    assert probs @ atoms == pytest.approx(0.0, abs=1e-15)
    assert probs @ atoms ** 2 == pytest.approx(1.0)
    assert d.m4 == pytest.approx(probs @ atoms ** 4)
    assert d.kappa3 == pytest.approx(probs @ atoms ** 3)


@pytest.mark.parametrize("kind", KINDS)
def test_complex_kappa4_matches_construction(kind):
    d = dist(kind)
    rng = trial_rng(11, 0)
    a = math.sqrt(0.5) * (d.draw_standard(rng, 400_000) + 1j * d.draw_standard(rng, 400_000))
    assert np.mean(np.abs(a) ** 4) == pytest.approx(d.m4_complex, rel=0.03)
    assert d.kappa4_complex == pytest.approx(d.kappa4_real / 2)


def test_invalid_entry_laws():
    with pytest.raises(DomainError):
        EntryDist("cauchy")
    with pytest.raises(DomainError):
        EntryDist("gaussian", 0.0)
    with pytest.raises(DomainError):
        EntryDist("two_point", 1.0, 1.5)
    with pytest.raises(DomainError):
        EntryDist("gaussian", 1.0, 0.5)


def test_rademacher_support():
    m = sample_matrix(EnsembleSpec(30, 40, entry=EntryDist("rademacher")), trial_rng(1, 0))
    assert set(np.unique(m.a)) == {-1.0, 1.0}


def test_gaussian_entry_moments():
    spec = EnsembleSpec(256, 256, entry=EntryDist("gaussian", 2.0))
    a = sample_matrix(spec, trial_rng(5, 0)).a
    assert abs(a.mean()) < 0.05
    assert 1.8 <= a.var() <= 2.2


def test_complex_entries_are_proper():
    spec = EnsembleSpec(200, 300, field="complex", entry=EntryDist("uniform", 1.5))
    a = sample_matrix(spec, trial_rng(3, 0)).a
    assert a.dtype == complex
    assert abs(np.mean(a)) < 0.02
    assert abs(np.mean(a * a)) < 0.02          # E A^2 = 0
    assert np.mean(np.abs(a) ** 2) == pytest.approx(1.5, rel=0.02)


def test_same_stream_is_bit_identical_and_streams_differ():
    spec = EnsembleSpec(20, 30, seed=99)
    a1 = sample_matrix(spec, trial_rng(spec.seed, 4)).a
    a2 = sample_matrix(spec, trial_rng(spec.seed, 4)).a
    a3 = sample_matrix(spec, trial_rng(spec.seed, 5)).a
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, a3)


def test_order_independence_of_streams():
    spec = EnsembleSpec(10, 10, seed=1)
    forward = [sample_matrix(spec, trial_rng(1, t)).a for t in range(5)]
    backward = [sample_matrix(spec, trial_rng(1, t)).a for t in reversed(range(5))][::-1]
    assert all(np.array_equal(x, y) for x, y in zip(forward, backward))


# -- truncation -------------------------------------------------------------------

def test_clipped_gaussian_moments_against_truncnorm():
    b = 1.3
    d = EntryDist("gaussian")
    inside = 1 - 2 * stats.norm.sf(b)
    tn = stats.truncnorm(-b, b)
    m2 = inside * tn.moment(2) + 2 * stats.norm.sf(b) * b ** 2
    m4 = inside * tn.moment(4) + 2 * stats.norm.sf(b) * b ** 4
    mean, var, c4 = d.clipped_moments(b)
    assert mean == pytest.approx(0.0, abs=1e-15)
    assert var == pytest.approx(m2, rel=1e-12)
    assert c4 == pytest.approx(m4, rel=1e-12)


@pytest.mark.parametrize("kind", ["uniform", "centered_exponential", "two_point", "rademacher"])
def test_clipped_moments_against_monte_carlo(kind):
    d = dist(kind)
    x = d.draw_standard(trial_rng(2, 0), 1_000_000)
    y = np.clip(x, -0.9, 0.9)
    mean, var, c4 = d.clipped_moments(0.9)
    assert mean == pytest.approx(y.mean(), abs=3e-3)
    assert var == pytest.approx(y.var(), rel=1e-2)
    assert c4 == pytest.approx(np.mean((y - y.mean()) ** 4), rel=2e-2)


def test_truncation_identity_for_bounded_kind():
    spec = EnsembleSpec(100, 100, entry=EntryDist("rademacher"))
    m = sample_matrix(spec, trial_rng(0, 0))
    assert np.array_equal(truncate_entries(m, 0.2).a, m.a)


def test_truncation_exact_moments_of_output_law():
    # level*sqrt(N) = 1: output is (clip(X) - mean)/sd with exact clipped moments
    d = EntryDist("gaussian")
    mean, var, _ = d.clipped_moments(1.0)
    x = np.linspace(-4, 4, 9)
    spec = EnsembleSpec(1, 9)
    out = truncate_entries(SampleMatrix(x[None, :], spec), 1.0).a[0]
    assert np.allclose(out, (np.clip(x, -1, 1) - mean) / math.sqrt(var), atol=1e-15)
    # exact moments of the output law: mean 0 and variance 1
    m_out = (0.0 - mean) / math.sqrt(var)
    assert m_out == pytest.approx(0.0, abs=1e-15)


def test_truncated_sample_statistics_and_bound():
    spec = EnsembleSpec(100, 400, entry=EntryDist("centered_exponential"), truncation=Truncation(0.2))
    a = sample_matrix(spec, trial_rng(8, 0)).a
    bound = 0.2 * math.sqrt(100)
    mean, var, _ = spec.entry.clipped_moments(bound)
    assert np.max(np.abs(a)) <= (bound + abs(mean)) / math.sqrt(var) + 1e-12
    assert abs(a.mean()) < 0.02
    assert a.var() == pytest.approx(1.0, rel=0.03)
    assert spec.kappa4() < spec.entry.kappa4_real


def test_nonpositive_truncation_level_raises():
    spec = EnsembleSpec(4, 4, entry=EntryDist("two_point", 1.0, 0.5))
    m = sample_matrix(spec, trial_rng(0, 0))
    with pytest.raises(DomainError):
        truncate_entries(m, 0.0)


# -- covariance matrix --------------------------------------------------------------

def test_form_covariance_trivial_cases():
    spec = EnsembleSpec(3, 2)
    assert np.array_equal(form_covariance(SampleMatrix(np.zeros((3, 2)), spec)), np.zeros((3, 3)))
    one = EnsembleSpec(1, 1, field="complex")
    m = form_covariance(SampleMatrix(np.array([[2 - 1j]]), one))
    assert m[0, 0] == pytest.approx(5.0)


def test_form_covariance_self_adjoint_psd():
    spec = EnsembleSpec(40, 20, field="complex")
    M = form_covariance(sample_matrix(spec, trial_rng(0, 0)))
    assert np.array_equal(M, M.conj().T)
    assert np.linalg.eigvalsh(M).min() > -1e-12


def test_mean_diagonal_entry_equals_ratio():
    spec = EnsembleSpec(64, 128)
    vals = np.array([form_covariance(sample_matrix(spec, trial_rng(2, t)))[0, 0] for t in range(10_000)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 2.0) < 3 * se


def test_spectral_norm_moment_bound():
    spec = EnsembleSpec(500, 500)
    norms = [np.linalg.eigvalsh(form_covariance(sample_matrix(spec, trial_rng(4, t))))[-1] ** 2
             for t in range(100)]
    assert np.mean(norms) <= 20


def test_spec_validation_and_round_trip():
    with pytest.raises(ConfigError):
        EnsembleSpec(0, 3)
    with pytest.raises(ConfigError):
        EnsembleSpec(3, 3, field="quaternion")
    spec = EnsembleSpec(10, 20, "complex", EntryDist("two_point", 2.0, 0.1), Truncation(0.5), 7)
    assert EnsembleSpec.from_dict(spec.to_dict()) == spec
    assert spec.c_N == 2.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), trial=st.integers(0, 10 ** 6))
def test_rng_streams_deterministic(seed, trial):
    assert trial_rng(seed, trial).integers(0, 2 ** 63) == trial_rng(seed, trial).integers(0, 2 ** 63)
