import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from trajloc.filter import DEFAULT_BETAS, FilterConfig, filter_batch, filter_sequence, frequency_response


def scipy_cascade(x, betas, init="first"):
    """Oracle: the same two recursions realized as IIR sections by scipy."""
    b1, b2, b3, b4, b5 = betas
    s1 = ([b1], [1.0, -b2])
    s2 = ([b3], [1.0, -b4, -b5])
    if init == "zero":
        return signal.lfilter(*s2, signal.lfilter(*s1, x))
    x0 = x[0]
    y1 = signal.lfilter(*s1, x, zi=signal.lfilter_zi(*s1) * x0)[0]
    return signal.lfilter(*s2, y1, zi=signal.lfilter_zi(*s2) * x0)[0]


finite = st.floats(-110, 0, allow_nan=False)


class TestFilterSequence:
    def test_constant_in_constant_out(self):
        out = filter_sequence(np.full(30, -63.5))
        np.testing.assert_allclose(out, -63.5, atol=1e-12)

    def test_step_from_rest(self):
        out = filter_sequence(np.ones(5), init="zero")
        assert out[0] == pytest.approx(0.64, abs=1e-15)
        # second sample by hand: y1 = 0.8 + 0.2*0.8 = 0.96; y = 0.8*0.96 + 0.15*0.64
        assert out[1] == pytest.approx(0.8 * 0.96 + 0.15 * 0.64, abs=1e-15)

    def test_spike_bound(self):
        x = np.full(40, -70.0)
        x[10] += 20.0
        dev = np.abs(filter_sequence(x) + 70.0)
        # the peak deviation is the first impulse-response sample 20*b1*b3
        assert dev.max() == pytest.approx(20 * 0.8 * 0.8, abs=1e-12)
        assert np.argmax(dev) == 10
        assert dev.max() <= 12.8 + 1e-12

    @pytest.mark.parametrize("init", ["first", "zero"])
    def test_matches_scipy(self, init):
        x = np.random.default_rng(0).normal(-70, 6, size=200)
        np.testing.assert_allclose(filter_sequence(x, init=init), scipy_cascade(x, DEFAULT_BETAS, init),
                                   atol=1e-10)

    def test_multifeature_axis0(self):
        X = np.random.default_rng(1).normal(-70, 5, size=(25, 4))
        out = filter_sequence(X)
        for j in range(4):
            np.testing.assert_allclose(out[:, j], filter_sequence(X[:, j]), atol=1e-13)

    def test_disabled_is_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(filter_sequence(x, FilterConfig(enabled=False)), x)

    def test_batch(self):
        X = np.random.default_rng(2).normal(-60, 5, size=(3, 7, 2))
        out = filter_batch(X)
        for b in range(3):
            np.testing.assert_allclose(out[b], filter_sequence(X[b]), atol=1e-13)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            filter_sequence(np.zeros(0))


class TestFilterConfig:
    def test_unit_gain_required(self):
        with pytest.raises(ValueError):
            FilterConfig((0.7, 0.2, 0.8, 0.15, 0.05))
        with pytest.raises(ValueError):
            FilterConfig((0.8, 0.2, 0.8, 0.15))


class TestFrequencyResponse:
    def test_dc_gain(self):
        assert abs(frequency_response(FilterConfig(), 0.0)) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_low_pass(self):
        w = np.arange(9) * np.pi / 8
        g = np.abs(frequency_response(FilterConfig(), w))
        assert np.all(np.diff(g) <= 1e-12)
        assert g[-1] < 0.6

    def test_matches_freqz(self):
        b1, b2, b3, b4, b5 = DEFAULT_BETAS
        w = np.linspace(0, np.pi, 64)
        num = np.polymul([b1], [b3])
        den = np.polymul([1, -b2], [1, -b4, -b5])
        _, h = signal.freqz(num, den, worN=w)
        np.testing.assert_allclose(frequency_response(FilterConfig(), w), h, atol=1e-12)

    def test_identity_config(self):
        w = np.linspace(0, np.pi, 9)
        g = frequency_response(FilterConfig((1.0, 0.0, 1.0, 0.0, 0.0)), w)
        np.testing.assert_allclose(np.abs(g), 1.0, atol=1e-15)


class TestFilterProperties:
    @settings(max_examples=60, deadline=None)
    @given(arrays(float, 20, elements=finite), arrays(float, 20, elements=finite),
           st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, x, z, a, b):
        lhs = filter_sequence(a * x + b * z, init="zero")
        rhs = a * filter_sequence(x, init="zero") + b * filter_sequence(z, init="zero")
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(arrays(float, st.integers(1, 30), elements=finite), arrays(float, st.integers(1, 10), elements=finite))
    def test_appending_keeps_prefix(self, x, extra):
        full = filter_sequence(np.concatenate([x, extra]))
        np.testing.assert_array_equal(full[:len(x)], filter_sequence(x))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-110, 0), st.integers(1, 50))
    def test_constant(self, c, n):
        np.testing.assert_allclose(filter_sequence(np.full(n, c)), c, atol=1e-9)
