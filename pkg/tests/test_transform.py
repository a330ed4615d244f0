import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hazardsieve.transform import BoxCoxTransform, h_all, h_eval, h_prime, h_ratios, log_h

S_VALUES = (0.0, 0.25, 0.5, 0.75, 1.0)


@pytest.mark.parametrize("s, y, expected", [(0, 0, 1.0), (1, 0.5, 1.5), (0.5, 1, 2.25)])
def test_h_values(s, y, expected):
    assert h_eval(BoxCoxTransform(s), y) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("s, y, expected", [(0, 0, 1.0), (1, 0.3, 1.0), (1, -0.7, 1.0), (0.5, 1, 1.5)])
def test_h_prime_values(s, y, expected):
    assert h_prime(BoxCoxTransform(s), y) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("s, y, expected", [(0, 0, (1, 1)), (1, 1, (0.5, 0.5)), (0.5, 0, (1, 1))])
def test_ratios(s, y, expected):
    assert h_ratios(BoxCoxTransform(s), y) == pytest.approx(expected, rel=1e-14)


def test_ratios_exp_case():
    y = np.array([-3.0, 0.0, 2.0])
    h1, h2 = h_ratios(BoxCoxTransform(0), y)
    assert np.allclose(h1, 1.0)
    assert np.allclose(h2, np.exp(y))


@pytest.mark.parametrize("s", S_VALUES)
def test_g_inverts_h(s):
    tr = BoxCoxTransform(s)
    y = np.linspace(-0.9, 3.0, 50)
    assert np.allclose(tr.g_eval(h_eval(tr, y)), y, atol=1e-12)


def test_g_rejects_nonpositive():
    with pytest.raises(ValueError):
        BoxCoxTransform(0.5).g_eval([1.0, 0.0])


def test_invalid_index():
    with pytest.raises(ValueError):
        BoxCoxTransform(-0.5)


@pytest.mark.parametrize("s", S_VALUES)
def test_extension_is_c1(s):
    tr = BoxCoxTransform(s, floor_eps=1e-4)
    if s == 0:
        return
    y0 = tr.switch_point
    eps = 1e-9
    assert h_eval(tr, y0 - eps) == pytest.approx(h_eval(tr, y0 + eps), rel=1e-4)
    assert h_prime(tr, y0 - eps) == pytest.approx(h_prime(tr, y0 + eps), rel=1e-4)
    assert h_eval(tr, y0) == pytest.approx(1e-4, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(s=st.sampled_from(S_VALUES), a=st.floats(-50, 50), b=st.floats(-50, 50))
def test_positive_and_monotone(s, a, b):
    tr = BoxCoxTransform(s)
    lo, hi = min(a, b), max(a, b)
    hl, hh = h_eval(tr, lo), h_eval(tr, hi)
    assert hl > 0 and hh > 0
    assert hl <= hh
    assert h_prime(tr, lo) > 0
    assert log_h(tr, lo) <= log_h(tr, hi)


@settings(max_examples=100, deadline=None)
@given(s=st.sampled_from(S_VALUES), y=st.floats(-30, 30))
def test_h_all_consistent(s, y):
    tr = BoxCoxTransform(s, floor_eps=1e-4)
    lh, h, hp, h1, h2 = h_all(tr, np.array([y]))
    assert np.isclose(h[0], h_eval(tr, y), rtol=1e-12)
    assert np.isclose(hp[0], h_prime(tr, y), rtol=1e-12)
    assert np.isfinite(h1[0]) and np.isfinite(lh[0])
    if h[0] > 1e-150:
        # ratios are formed in log space; compare only where H does not underflow
        assert np.isclose(h1[0], hp[0] / h[0], rtol=1e-10)
        assert np.isclose(h2[0], hp[0] ** 2 / h[0], rtol=1e-10)


@settings(max_examples=100, deadline=None)
@given(s=st.sampled_from(S_VALUES), y=st.floats(-2, 3))
def test_h_prime_matches_difference(s, y):
    tr = BoxCoxTransform(s, floor_eps=1e-4)
    # the extension has curvature rate**2, so it needs a finer step
    step = 1e-6 if y >= tr.switch_point else 1e-8
    fd = (h_eval(tr, y + step) - h_eval(tr, y - step)) / (2 * step)
    if s > 0 and abs(y - tr.switch_point) < 2 * step:
        return
    assert fd == pytest.approx(h_prime(tr, y), rel=1e-6, abs=1e-9)


def test_small_index_approaches_exp():
    tr = BoxCoxTransform(1e-8)
    y = np.linspace(-2, 2, 81)
    assert np.allclose(h_eval(tr, y), np.exp(y), rtol=1e-6, atol=0)
