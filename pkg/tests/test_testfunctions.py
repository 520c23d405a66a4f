from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from covfluct.errors import DomainError
from covfluct.testfunctions import FAMILIES, TestFunction

SAMPLES = [
    TestFunction.polynomial(1.0, -2.0, 0.5, 0.25),
    TestFunction.constant(3.0),
    TestFunction.cauchy_re(5.0),
    TestFunction.cauchy_im(1.0 + 0.7j),
    TestFunction.gaussian_bump(1.5, 0.4),
    TestFunction.indicator_smoothed(0.5, 2.5, 0.3),
]


@pytest.mark.parametrize("f", SAMPLES, ids=lambda f: f.family)
@pytest.mark.parametrize("order", [1, 2, 3, 5, 7])
def test_derivatives_match_finite_differences(f, order):
    x = np.linspace(-0.3, 3.7, 9)
    h = 1e-5
    fd = (f.derivative(x + h, order - 1) - f.derivative(x - h, order - 1)) / (2 * h)
    exact = f.derivative(x, order)
    scale = 1 + np.max(np.abs(exact))
    assert np.max(np.abs(fd - exact)) / scale < 1e-6


def test_values_against_direct_formulas():
    x = np.linspace(-1, 4, 11)
    assert np.allclose(TestFunction.gaussian_bump(1.0, 0.5)(x), np.exp(-0.5 * ((x - 1) / 0.5) ** 2))
    ind = TestFunction.indicator_smoothed(0.0, 2.0, 0.1)
    assert np.allclose(ind(x), 0.5 * (erf(x / 0.1) - erf((x - 2.0) / 0.1)))
    assert np.allclose(TestFunction.cauchy_im(2 + 1j)(x), (1 / (2 + 1j - x)).imag)
    assert np.allclose(TestFunction.identity()(x), x)


def test_unknown_family_and_bad_params_rejected():
    with pytest.raises(DomainError):
        TestFunction("sine", {})
    with pytest.raises(DomainError):
        TestFunction("gaussian_bump", {"center": 0.0})
    with pytest.raises(DomainError):
        TestFunction("gaussian_bump", {"center": 0.0, "width": -1.0})
    with pytest.raises(DomainError):
        TestFunction("constant", {"value": 1.0, "extra": 2})


def test_pole_on_support_is_rejected():
    TestFunction.cauchy_re(5.0).check_domain(4.0)
    TestFunction.cauchy_re(2.0 + 0.5j).check_domain(4.0)
    with pytest.raises(DomainError):
        TestFunction.cauchy_re(2.0).check_domain(4.0)


def test_effective_window_only_for_localized_families():
    lo, hi = TestFunction.gaussian_bump(1.0, 0.1).effective_window()
    assert lo < 1.0 < hi and hi - lo == pytest.approx(2.4)
    with pytest.raises(DomainError):
        TestFunction.identity().effective_window()


@settings(max_examples=50, deadline=None)
@given(
    family=st.sampled_from(FAMILIES),
    a=st.floats(-3, 3),
    b=st.floats(0.05, 3),
)
def test_dict_round_trip(family, a, b):
    f = {
        "polynomial": lambda: TestFunction.polynomial(a, b),
        "constant": lambda: TestFunction.constant(a),
        "cauchy_re": lambda: TestFunction.cauchy_re(complex(a, b)),
        "cauchy_im": lambda: TestFunction.cauchy_im(complex(a, b)),
        "gaussian_bump": lambda: TestFunction.gaussian_bump(a, b),
        "indicator_smoothed": lambda: TestFunction.indicator_smoothed(a, a + b, b),
    }[family]()
    assert TestFunction.from_dict(f.to_dict()) == f
