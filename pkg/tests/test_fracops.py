import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from fracbench.errors import InvalidParameterError
from fracbench.fracops import GLKernel, gl_apply, gl_weights, s_power


def gamma_weights(alpha, n):
    # (-1)^j binom(alpha, j) through the Gamma function, valid for non-integer alpha
    j = np.arange(n + 1)
    return (-1.0) ** j * gamma(alpha + 1) / (gamma(j + 1) * gamma(alpha - j + 1))


def test_weights_first_derivative_truncates():
    assert gl_weights(1, 3).tolist() == [1, -1, 0, 0]


def test_weights_identity():
    assert gl_weights(0, 2).tolist() == [1, 0, 0]


def test_weights_half_order_example():
    np.testing.assert_allclose(gl_weights(0.5, 4), [1, -0.5, -0.125, -0.0625, -0.0390625], rtol=1e-14)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.85, 1.5])
def test_weights_match_gamma_oracle(alpha):
    np.testing.assert_allclose(gl_weights(alpha, 50), gamma_weights(alpha, 50), rtol=1e-12)


@pytest.mark.parametrize("alpha", [math.nan, math.inf, -math.inf])
def test_weights_reject_non_finite(alpha):
    with pytest.raises(InvalidParameterError):
        gl_weights(alpha, 3)


def test_weights_large_n_stay_finite():
    w = gl_weights(0.67, 200_000)
    assert np.all(np.isfinite(w))


def test_identity_returns_copy():
    t = np.linspace(0, 1, 1001)
    out = gl_apply(t, 0, 1e-3)
    np.testing.assert_array_equal(out, t)
    assert out is not t


def test_half_derivative_of_ramp():
    t = np.arange(1001) * 1e-3
    got = gl_apply(t, 0.5, 1e-3)[-1]
    want = gamma(2) / gamma(1.5)
    assert abs(got - want) / want < 0.01


def test_first_derivative_of_square():
    t = np.arange(1001) * 1e-3
    got = gl_apply(t**2, 1, 1e-3)
    assert abs(got[-1] - 2.0) / 2.0 < 0.01
    np.testing.assert_allclose(got[100:], 2 * t[100:], rtol=0.02)


def test_integral_of_constant():
    h = 1e-3
    got = gl_apply(np.full(1001, 3.0), -1, h)[-1]
    assert abs(got - 3.0) / 3.0 < 0.005


@pytest.mark.parametrize("step", [0.0, -0.1])
def test_apply_rejects_bad_step(step):
    with pytest.raises(InvalidParameterError):
        gl_apply([1.0, 2.0], 0.5, step)


def test_apply_rejects_empty():
    with pytest.raises(InvalidParameterError):
        gl_apply([], 0.5, 0.1)


def test_short_memory_window():
    x = np.random.default_rng(0).normal(size=300)
    full = gl_apply(x, 0.7, 0.01)
    windowed = gl_apply(x, 0.7, 0.01, memory=50)
    # identical while the history fits in the window
    np.testing.assert_allclose(windowed[:50], full[:50], rtol=1e-12)
    w = gl_weights(0.7, 49)
    k = 200
    want = 0.01**-0.7 * np.dot(w, x[k : k - 50 : -1])
    assert windowed[k] == pytest.approx(want, rel=1e-12)


def test_kernel_matches_apply():
    x = np.random.default_rng(1).normal(size=120)
    kern = GLKernel(-0.85, 0.01, 119)
    full = gl_apply(x, -0.85, 0.01)
    for k in (0, 1, 57, 119):
        assert kern.at(x, k) == pytest.approx(full[k], rel=1e-12, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(-5, 5), b=st.floats(-5, 5),
    alpha=st.floats(-1.9, 1.9),
    seed=st.integers(0, 2**32 - 1),
)
def test_apply_is_linear(a, b, alpha, seed):
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=(2, 64))
    lhs = gl_apply(a * f + b * g, alpha, 0.05)
    rhs = a * gl_apply(f, alpha, 0.05) + b * gl_apply(g, alpha, 0.05)
    scale = max(1.0, np.max(np.abs(lhs)))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * scale)


def test_s_power_examples():
    assert s_power(1, 2) == pytest.approx(2j, abs=1e-15)
    assert s_power(2, 2) == pytest.approx(-4 + 0j, abs=1e-14)
    want = (1j) ** 0.5
    assert s_power(0.5, 1) == pytest.approx(want, abs=1e-15)
    assert abs(s_power(0.5, 1) - complex(0.70711, 0.70711)) < 1e-5


@pytest.mark.parametrize("omega", [0.0, -1.0])
def test_s_power_rejects_non_positive_omega(omega):
    with pytest.raises(InvalidParameterError):
        s_power(0.5, omega)


@settings(max_examples=200)
@given(alpha=st.floats(-2, 2), omega=st.floats(1e-3, 100))
def test_s_power_polar_form(alpha, omega):
    z = s_power(alpha, omega)
    assert abs(z) == pytest.approx(omega**alpha, rel=1e-12)
    assert math.atan2(z.imag, z.real) == pytest.approx(alpha * math.pi / 2, abs=1e-12)
    assert z * s_power(-alpha, omega) == pytest.approx(1.0, abs=1e-12)
