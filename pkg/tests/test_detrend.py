import itertools
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from edasplit.detrend import LinearTrend, detrend_decompose, theil_sen, theil_sen_fit
from edasplit.errors import NumericError
from edasplit.signals import FRAME_FS, FRAME_LEN, Frame
from edasplit.synth import scenario_step_scl

T = np.arange(FRAME_LEN) / FRAME_FS


def brute_theil_sen(t, x):
    """Double loop over pairs with the statistics-module median."""
    slopes = [(x[j] - x[i]) / (t[j] - t[i]) for i, j in itertools.combinations(range(len(t)), 2)]
    m = statistics.median(slopes)
    return m, statistics.median([xi - m * ti for ti, xi in zip(t, x)])


class TestTheilSen:
    def test_exact_line(self):
        tr = theil_sen(Frame(0.002 * T + 1.0))
        assert abs(tr.slope - 0.002) < 1e-12
        assert abs(tr.intercept - 1.0) < 1e-12

    def test_constant(self):
        tr = theil_sen(Frame(np.full(FRAME_LEN, 3.2)))
        assert tr.slope == 0.0
        assert tr.intercept == 3.2

    def test_outlier_spike_matches_brute_force(self):
        t = np.arange(200) / FRAME_FS
        x = 0.002 * t + 1.0
        x[77] += 10.0
        fit = theil_sen_fit(t, x)
        slope, intercept = brute_theil_sen(t, x)
        assert abs(fit.slope - slope) < 1e-12
        assert abs(fit.intercept - intercept) < 1e-12
        assert abs(fit.slope - 0.002) < 1e-6

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_noisy_matches_brute_force_and_scipy(self, seed):
        rng = np.random.default_rng(seed)
        t = np.arange(200) / FRAME_FS
        x = rng.normal(size=200).cumsum() * 0.01 + 0.001 * t
        fit = theil_sen_fit(t, x)
        slope, intercept = brute_theil_sen(t, x)
        assert abs(fit.slope - slope) < 1e-12
        assert abs(fit.intercept - intercept) < 1e-12
        ref = stats.theilslopes(x, t)
        assert abs(fit.slope - ref.slope) < 1e-12

    def test_breakdown_robustness(self):
        rng = np.random.default_rng(11)
        t = np.arange(200) / FRAME_FS
        noise = rng.normal(0.0, 0.01, 200)
        base = 0.003 * t + 2.0 + noise
        clean_dev = abs(theil_sen_fit(t, base).slope - 0.003)
        x = base.copy()
        hit = rng.choice(200, size=int(0.29 * 200), replace=False)
        x[hit] += rng.uniform(1.0, 5.0, hit.size)
        dev = abs(theil_sen_fit(t, x).slope - 0.003)
        assert dev < 10 * max(clean_dev, 1e-6)
        assert abs(theil_sen_fit(t, x).slope - brute_theil_sen(t, x)[0]) < 1e-12

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            LinearTrend(np.nan, 0.0)


class TestDetrendDecompose:
    def test_line_has_zero_phasic(self):
        d = detrend_decompose(Frame(-0.001 * T + 2.0))
        assert np.max(np.abs(d.phasic)) < 1e-12

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-5.0, 5.0), st.floats(0.1, 10.0))
    def test_equivariance(self, seed, c, k):
        x = np.random.default_rng(seed).normal(size=FRAME_LEN).cumsum() * 0.01 + 5.0
        base = detrend_decompose(Frame(x))
        shifted = detrend_decompose(Frame(x + c))
        scaled = detrend_decompose(Frame(k * x))
        np.testing.assert_allclose(base.tonic + base.phasic, x, atol=1e-12)
        tb, ts = theil_sen(Frame(x)), theil_sen(Frame(x + c))
        assert abs(ts.slope - tb.slope) < 1e-12
        assert abs(ts.intercept - tb.intercept - c) < 1e-9
        np.testing.assert_allclose(shifted.phasic, base.phasic, atol=1e-9)
        np.testing.assert_allclose(scaled.tonic, k * base.tonic, atol=1e-9 * k)
        np.testing.assert_allclose(scaled.phasic, k * base.phasic, atol=1e-9 * k)

    def test_step_scenario_misses_step(self):
        frame, _ = scenario_step_scl(0)
        d = detrend_decompose(frame)
        assert np.ptp(d.phasic) >= 0.5 * 0.5
