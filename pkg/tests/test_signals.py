import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal as sps

from edasplit.errors import ConfigurationError, DataError
from edasplit.signals import (FRAME_LEN, EdaSignal, FilterSpec, Frame, butterworth_lowpass,
                              butterworth_sos, frame_signal, resample)


def _steady_gain(freq, fs=8.0, seconds=120.0, zero_phase=False):
    t = np.arange(int(seconds * fs)) / fs
    x = np.sin(2 * np.pi * freq * t)
    y = butterworth_lowpass(EdaSignal(x + 5.0, fs), zero_phase=zero_phase).samples - 5.0
    mid = slice(len(t) // 4, 3 * len(t) // 4)
    # least-squares amplitude of the steady-state sinusoid
    basis = np.column_stack([np.sin(2 * np.pi * freq * t[mid]), np.cos(2 * np.pi * freq * t[mid])])
    coef, *_ = np.linalg.lstsq(basis, y[mid], rcond=None)
    return float(np.hypot(*coef))


class TestEdaSignal:
    def test_samples_read_only(self):
        sig = EdaSignal([1.0, 2.0], 8.0)
        with pytest.raises(ValueError):
            sig.samples[0] = 3.0

    def test_bad_rate(self):
        with pytest.raises(ConfigurationError):
            EdaSignal([1.0], 0.0)

    def test_validate_rejects_nan(self):
        with pytest.raises(DataError, match="index 1"):
            EdaSignal([1.0, np.nan, 2.0], 8.0).validate()

    def test_validate_rejects_empty(self):
        with pytest.raises(DataError):
            EdaSignal([], 8.0).validate()

    def test_frame_length_enforced(self):
        with pytest.raises(DataError):
            Frame(np.zeros(100))


class TestButterworth:
    def test_gain_at_cutoff_single_pass(self):
        assert abs(_steady_gain(3.0) - 1 / np.sqrt(2)) < 0.01

    def test_passband_gain(self):
        assert abs(_steady_gain(0.05, seconds=400.0) - 1.0) < 0.01

    def test_zero_phase_squares_gain(self):
        assert abs(_steady_gain(3.0, zero_phase=True) - 0.5) < 0.01

    def test_design_matches_frequency_response(self):
        sos = butterworth_sos(FilterSpec(), 8.0)
        _, h = sps.sosfreqz(sos, worN=[3.0], fs=8.0)
        assert abs(abs(h[0]) - 1 / np.sqrt(2)) < 1e-9

    def test_cutoff_above_nyquist(self):
        with pytest.raises(ConfigurationError):
            butterworth_sos(FilterSpec(cutoff_hz=4.0), 8.0)

    def test_constant_preserved(self):
        y = butterworth_lowpass(EdaSignal(np.full(500, 2.5), 8.0)).samples
        np.testing.assert_allclose(y, 2.5, atol=1e-12)

    def test_zero_phase_has_no_lag(self):
        t = np.arange(1600) / 8.0
        x = np.sin(2 * np.pi * 0.5 * t)
        y = butterworth_lowpass(EdaSignal(x, 8.0)).samples
        lag = np.argmax(np.correlate(y[400:1200], x[400:1200], mode="full")) - 799
        assert lag == 0


class TestResample:
    def test_identity(self):
        sig = EdaSignal(np.arange(10.0), 8.0)
        np.testing.assert_array_equal(resample(sig, 8.0).samples, sig.samples)

    def test_integer_ratio_lands_on_samples(self):
        x = np.random.default_rng(0).normal(size=4 * 1440)
        out = resample(EdaSignal(x, 32.0), 8.0)
        assert out.fs == 8.0
        np.testing.assert_array_equal(out.samples, x[::4])

    def test_linear_exact(self):
        t = np.arange(100) / 5.0
        out = resample(EdaSignal(3.0 * t + 1.0, 5.0), 8.0)
        np.testing.assert_allclose(out.samples, 3.0 * out.times() + 1.0, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(DataError):
            resample(EdaSignal([1.0], 4.0), 8.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 400), st.sampled_from([2.0, 4.0, 10.0, 16.0, 32.0, 50.0]))
    def test_output_within_input_range(self, n, fs):
        x = np.random.default_rng(n).normal(size=n)
        out = resample(EdaSignal(x, fs), 8.0)
        assert out.samples.min() >= x.min() - 1e-12
        assert out.samples.max() <= x.max() + 1e-12
        assert (out.samples.size - 1) / 8.0 <= (n - 1) / fs + 1e-9


class TestFraming:
    def test_drops_partial(self):
        frames = frame_signal(EdaSignal(np.arange(2 * FRAME_LEN + 100.0), 8.0))
        assert [f.index for f in frames] == [0, 1]
        assert frames[1].samples[0] == FRAME_LEN

    def test_requires_8hz(self):
        with pytest.raises(ConfigurationError):
            frame_signal(EdaSignal(np.zeros(3000), 4.0))
