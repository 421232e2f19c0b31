import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edasplit.decomposition import Decomposition
from edasplit.errors import ReportError
from edasplit.features import (AMPLITUDE_LABELS, PEAK_COUNT_LABELS, RANGE_LABELS, FrameFeatures,
                               Peak, SlopeClass, aggregate, classify_slope, detect_peaks,
                               format_csv, format_tables, frame_features, summarise, tonic_slope)
from edasplit.signals import FRAME_FS, FRAME_LEN
from edasplit.synth import (BatemanParams, ScrEvent, SynthSpec, event_kernel, generate_frame,
                            phasic_curve)

T = np.arange(FRAME_LEN) / FRAME_FS


def brute_peaks(x, min_amp=0.01, min_dist=8):
    """Direct transcription of the rule set, written independently of the package."""
    cands = []
    i = 1
    while i < len(x) - 1:
        j = i
        while j + 1 < len(x) and x[j + 1] == x[i]:
            j += 1
        if x[i] > x[i - 1] and j + 1 < len(x) and x[j + 1] < x[i]:
            cands.append((i + j) // 2)
        i = j + 1
    kept = []
    for c in cands:
        start = kept[-1] if kept else 0
        amp = x[c] - min(x[start:c + 1])
        if amp < min_amp:
            continue
        if kept and c - kept[-1] < min_dist:
            if x[c] <= x[kept[-1]]:
                continue
            prev = kept.pop()
            start = kept[-1] if kept else 0
            if x[c] - min(x[start:c + 1]) < min_amp:
                kept.append(prev)
                continue
        kept.append(c)
    return kept


class TestSlope:
    def test_constant(self):
        assert tonic_slope(np.full(FRAME_LEN, 2.0)) == 0.0

    def test_line(self):
        assert abs(tonic_slope(1.0 + 0.002 * T) - 0.002) < 1e-15

    @pytest.mark.parametrize("slope,cls", [(-0.002, SlopeClass.FALLING), (0.0, SlopeClass.STABLE),
                                           (0.001, SlopeClass.STABLE), (-0.001, SlopeClass.STABLE),
                                           (0.0011, SlopeClass.RISING)])
    def test_classes(self, slope, cls):
        assert classify_slope(slope) is cls

    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert classify_slope(lo) <= classify_slope(hi)


class TestDetectPeaks:
    def test_monotone_none(self):
        assert detect_peaks(np.linspace(0, 1, FRAME_LEN)) == []

    def test_single_kernel(self):
        x = event_kernel(ScrEvent(50.0, 0.5), BatemanParams())
        peaks = detect_peaks(x)
        assert len(peaks) == 1
        assert abs(peaks[0].amplitude - 0.5) <= 0.02

    def test_two_kernels_half_second_apart(self):
        x = phasic_curve([ScrEvent(50.0, 0.3), ScrEvent(50.5, 0.3)], BatemanParams())
        assert len(detect_peaks(x)) == 1

    def test_plateau_midpoint(self):
        x = np.zeros(50)
        x[10:15] = 1.0
        (p,) = detect_peaks(x)
        assert p.index == 12

    def test_floor(self):
        x = np.zeros(50)
        x[20] = 0.009
        assert detect_peaks(x) == []

    def test_conflict_keeps_higher(self):
        x = np.zeros(60)
        x[20], x[24] = 0.5, 0.8
        (p,) = detect_peaks(x)
        assert p.index == 24 and abs(p.amplitude - 0.8) < 1e-15

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 100_000), st.integers(-5000, 5000))
    def test_against_brute_force_and_invariants(self, seed, k):
        rng = np.random.default_rng(seed)
        # dyadic grid: rounding creates plateaus and the shift below is exact
        x = np.round(rng.normal(size=300).cumsum() * 0.02 * 1024) / 1024
        c = k / 1024
        peaks = detect_peaks(x)
        idx = [p.index for p in peaks]
        assert idx == brute_peaks(x)
        assert all(b - a >= 8 for a, b in zip(idx, idx[1:]))
        assert all(0 < i < len(x) - 1 for i in idx)
        assert all(p.amplitude >= 0.01 for p in peaks)
        shifted = detect_peaks(x + c)
        assert [p.index for p in shifted] == idx
        np.testing.assert_allclose([p.amplitude for p in shifted], [p.amplitude for p in peaks],
                                   atol=1e-9)


class TestFrameFeatures:
    def test_zero_phasic(self):
        f = frame_features(Decomposition(np.full(FRAME_LEN, 2.0), np.zeros(FRAME_LEN)))
        assert (f.peak_count, f.phasic_range, f.slope_class) == (0, 0.0, SlopeClass.STABLE)

    def test_five_events(self):
        events = tuple(ScrEvent(o, 0.3) for o in (20.0, 50.0, 80.0, 110.0, 140.0))
        frame, truth = generate_frame(SynthSpec("constant", {"level": 2.0}, events))
        f = frame_features(Decomposition(truth.tonic, truth.phasic))
        assert f.peak_count == 5
        assert abs(np.mean(f.amplitudes) - 0.3) <= 0.05
        assert f.peak_count == len(f.amplitudes)


def _feat(slope=0.0, amps=(), rng_=0.0):
    return FrameFeatures(slope, classify_slope(slope), len(amps), tuple(amps), rng_)


class TestAggregate:
    def test_eleven_peaks_bin(self):
        s = summarise([_feat(amps=[0.05] * 11)])
        assert s.peaks.rounded()[PEAK_COUNT_LABELS.index("10-14")] == 100
        assert s.peaks.mean == 11

    def test_amplitude_band(self):
        s = summarise([_feat(amps=[0.25, 0.25]), _feat(amps=[0.25])])
        assert s.amplitude.rounded()[AMPLITUDE_LABELS.index("0.2-0.4")] == 100

    def test_edges_lower_inclusive(self):
        s = summarise([_feat(rng_=v) for v in (0.02, 0.05, 10.0, 0.0199)])
        counts = dict(zip(RANGE_LABELS, s.phasic_range.counts))
        assert counts["<0.02"] == 1 and counts["0.02-0.05"] == 1
        assert counts["0.05-0.1"] == 1 and counts[">=10"] == 1

    def test_empty(self):
        with pytest.raises(ReportError):
            aggregate({})
        with pytest.raises(ReportError):
            aggregate({"detrend": []})

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(-0.01, 0.01), st.lists(st.floats(0.01, 2.0), max_size=40),
                              st.floats(0.0, 20.0)), min_size=1, max_size=30),
           st.randoms(use_true_random=False))
    def test_percentages_and_permutation(self, rows, rnd):
        feats = [_feat(s, a, r) for s, a, r in rows]
        shuffled = feats[:]
        rnd.shuffle(shuffled)
        a, b = summarise(feats), summarise(shuffled)
        for key in ("slope", "peaks", "amplitude", "phasic_range"):
            ha, hb = getattr(a, key), getattr(b, key)
            np.testing.assert_array_equal(ha.counts, hb.counts)
            assert ha.mean == hb.mean
            if ha.total:
                assert sum(ha.rounded()) == 100
                assert all(abs(r - p) < 1 for r, p in zip(ha.rounded(), ha.percentages))
                assert abs(ha.percentages.sum() - 100) < 1e-9

    def test_serialisation(self):
        report = aggregate({"detrend": [_feat(0.002, [0.1, 0.3], 0.4)],
                            "feel-3": [_feat(0.0, [], 0.01)]})
        text = format_tables(report)
        assert "Number of peaks per frame" in text and "feel-3" in text
        rows = list(csv.DictReader(io.StringIO(format_csv(report))))
        assert {r["method"] for r in rows} == {"detrend", "feel-3"}
        mean = [r for r in rows if r["method"] == "detrend" and r["table"] == "amplitude"
                and r["bin"] == "mean"]
        assert float(mean[0]["value"]) == pytest.approx(0.2)
        assert format_csv(report) == format_csv(report)
