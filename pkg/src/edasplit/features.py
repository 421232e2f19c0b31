"""Per-frame comparison features and the histogram tables built from them."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .decomposition import Decomposition
from .errors import ReportError
from .signals import FRAME_FS

SLOPE_BOUNDARY = 0.001          # uS/s
MIN_PEAK_AMPLITUDE = 0.01       # uS
MIN_PEAK_DISTANCE = 8           # samples (1 s at 8 Hz)

PEAK_COUNT_EDGES = (5, 10, 15, 20, 25, 30)
PEAK_COUNT_LABELS = ("0-4", "5-9", "10-14", "15-19", "20-24", "25-29", "30+")
AMPLITUDE_EDGES = (0.005, 0.10, 0.20, 0.40)
RANGE_EDGES = (0.02, 0.05, 0.10, 0.50, 1.0, 10.0)


class SlopeClass(IntEnum):
    FALLING = 0
    STABLE = 1
    RISING = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class Peak:
    index: int
    amplitude: float


@dataclass(frozen=True)
class FrameFeatures:
    slope: float
    slope_class: SlopeClass
    peak_count: int
    amplitudes: Tuple[float, ...]
    phasic_range: float
    peaks: Tuple[Peak, ...] = ()


def tonic_slope(tonic: Sequence[float]) -> float:
    """Last-minus-first sample over the time between them, in uS/s.

    Dividing by the sampled span (179.875 s for a frame) rather than a flat
    180 s keeps the estimate exact for straight lines.
    """
    tonic = np.asarray(tonic, dtype=np.float64)
    return float((tonic[-1] - tonic[0]) / ((tonic.size - 1) / FRAME_FS))


def classify_slope(slope: float) -> SlopeClass:
    # boundary values count as stable
    if slope < -SLOPE_BOUNDARY:
        return SlopeClass.FALLING
    if slope > SLOPE_BOUNDARY:
        return SlopeClass.RISING
    return SlopeClass.STABLE


def _local_maxima(x: np.ndarray) -> List[int]:
    """Strict local maxima; a flat-topped maximum reports its midpoint."""
    out = []
    n = x.size
    i = 1
    while i < n - 1:
        if x[i] > x[i - 1]:
            j = i
            while j + 1 < n and x[j + 1] == x[i]:
                j += 1
            if j + 1 < n and x[j + 1] < x[i]:
                out.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return out


def detect_peaks(phasic: Sequence[float],
                 min_amplitude: float = MIN_PEAK_AMPLITUDE,
                 min_distance: int = MIN_PEAK_DISTANCE) -> List[Peak]:
    """Trough-relative peak detection, resolved left to right.

    A candidate's amplitude is its height above the lowest sample since the
    previously accepted peak (or the frame start). Candidates below
    ``min_amplitude`` are ignored. When a candidate falls within
    ``min_distance`` samples of the last accepted peak the higher of the two
    is kept, with its amplitude re-measured against the peak before it.
    """
    x = np.asarray(phasic, dtype=np.float64)
    accepted: List[Peak] = []

    def trough_since(prev_idx: int, idx: int) -> float:
        return float(np.min(x[prev_idx:idx + 1]))

    for idx in _local_maxima(x):
        anchor = accepted[-1].index if accepted else 0
        amp = float(x[idx]) - trough_since(anchor, idx)
        if amp < min_amplitude:
            continue
        if accepted and idx - accepted[-1].index < min_distance:
            last = accepted[-1]
            if x[idx] <= x[last.index]:
                continue
            accepted.pop()
            anchor = accepted[-1].index if accepted else 0
            amp = float(x[idx]) - trough_since(anchor, idx)
            if amp < min_amplitude:
                accepted.append(last)
                continue
        accepted.append(Peak(idx, amp))
    return accepted


def frame_features(d: Decomposition) -> FrameFeatures:
    slope = tonic_slope(d.tonic)
    peaks = detect_peaks(d.phasic)
    amps = tuple(p.amplitude for p in peaks)
    rng = float(np.max(d.phasic) - np.min(d.phasic))
    return FrameFeatures(slope, classify_slope(slope), len(peaks), amps, rng, tuple(peaks))


# -- aggregation ------------------------------------------------------------

def _edge_labels(edges: Sequence[float]) -> Tuple[str, ...]:
    labels = [f"<{edges[0]:g}"]
    labels += [f"{a:g}-{b:g}" for a, b in zip(edges[:-1], edges[1:])]
    labels.append(f">={edges[-1]:g}")
    return tuple(labels)


AMPLITUDE_LABELS = _edge_labels(AMPLITUDE_EDGES)
RANGE_LABELS = _edge_labels(RANGE_EDGES)
SLOPE_LABELS = tuple(c.label for c in SlopeClass)


@dataclass
class Histogram:
    labels: Tuple[str, ...]
    counts: np.ndarray
    mean: float | None = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def percentages(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros(len(self.labels))
        return 100.0 * self.counts / self.total

    def rounded(self) -> List[int]:
        """Integer percentages summing to exactly 100 (largest remainder)."""
        if self.total == 0:
            return [0] * len(self.labels)
        pct = self.percentages
        base = np.floor(pct).astype(int)
        short = 100 - int(base.sum())
        # stable sort: ties go to the earlier bin
        order = np.argsort(-(pct - base), kind="stable")
        base[order[:short]] += 1
        return [int(v) for v in base]


@dataclass
class MethodSummary:
    frames: int
    slope: Histogram
    peaks: Histogram
    amplitude: Histogram
    phasic_range: Histogram


@dataclass
class HistogramReport:
    methods: Dict[str, MethodSummary] = field(default_factory=dict)


def _bin(values: Sequence[float], edges: Sequence[float], n_bins: int) -> np.ndarray:
    # lower edges inclusive: value == edge lands in the upper bin
    idx = np.searchsorted(np.asarray(edges, dtype=np.float64), np.asarray(values, dtype=np.float64),
                          side="right")
    return np.bincount(idx, minlength=n_bins)[:n_bins]


def summarise(features: Sequence[FrameFeatures]) -> MethodSummary:
    # fsum keeps the means independent of frame order
    if len(features) == 0:
        raise ReportError("no frames to aggregate")
    classes = np.bincount([int(f.slope_class) for f in features], minlength=3)
    counts = [f.peak_count for f in features]
    amps = [a for f in features for a in f.amplitudes]
    ranges = [f.phasic_range for f in features]
    return MethodSummary(
        frames=len(features),
        slope=Histogram(SLOPE_LABELS, classes),
        peaks=Histogram(PEAK_COUNT_LABELS, _bin(counts, PEAK_COUNT_EDGES, 7),
                        math.fsum(counts) / len(counts)),
        amplitude=Histogram(AMPLITUDE_LABELS, _bin(amps, AMPLITUDE_EDGES, 5),
                            math.fsum(amps) / len(amps) if amps else None),
        phasic_range=Histogram(RANGE_LABELS, _bin(ranges, RANGE_EDGES, 7)),
    )


def aggregate(features: Mapping[str, Sequence[FrameFeatures]]) -> HistogramReport:
    """Bin every method's frame features into the four comparison tables."""
    if not features:
        raise ReportError("no methods to aggregate")
    report = HistogramReport()
    for method, feats in features.items():
        if len(feats) == 0:
            raise ReportError(f"method {method!r} has no frames")
        report.methods[method] = summarise(feats)
    return report


# -- serialisation ------------------------------------------------------------

_TABLES = (
    ("slope", "Tonic slope"),
    ("peaks", "Number of peaks per frame"),
    ("amplitude", "Peak amplitude (uS)"),
    ("phasic_range", "Phasic range max-min (uS)"),
)


def _fmt_mean(mean) -> str:
    return "-" if mean is None else f"{mean:.3f}"


def format_tables(report: HistogramReport) -> str:
    """Plain-text tables, one per feature, percentages rounded to integers."""
    out = []
    names = list(report.methods)
    wname = max([len("Method")] + [len(n) for n in names])
    for key, title in _TABLES:
        first = getattr(report.methods[names[0]], key)
        has_mean = key != "slope" and key != "phasic_range"
        cols = list(first.labels)
        widths = [max(len(c), 4) for c in cols]
        header = f"{'Method':<{wname}}  {'Frames':>6}"
        if has_mean:
            header += f"  {'Mean':>7}"
        header += "  " + "  ".join(f"{c:>{w}}" for c, w in zip(cols, widths))
        out.append(title)
        out.append("=" * len(header))
        out.append(header)
        out.append("-" * len(header))
        for name in names:
            summ = report.methods[name]
            hist = getattr(summ, key)
            row = f"{name:<{wname}}  {summ.frames:>6}"
            if has_mean:
                row += f"  {_fmt_mean(hist.mean):>7}"
            row += "  " + "  ".join(f"{str(p) + '%':>{w}}" for p, w in zip(hist.rounded(), widths))
            out.append(row)
        out.append("")
    return "\n".join(out)


CSV_FIELDS = ("method", "table", "bin", "count", "value")


def report_rows(report: HistogramReport) -> List[Dict[str, str]]:
    rows = []
    for method, summ in report.methods.items():
        for key, _ in _TABLES:
            hist = getattr(summ, key)
            for label, cnt, pct in zip(hist.labels, hist.counts, hist.percentages):
                rows.append({"method": method, "table": key, "bin": label,
                             "count": str(int(cnt)), "value": repr(float(pct))})
            if hist.mean is not None:
                rows.append({"method": method, "table": key, "bin": "mean",
                             "count": str(hist.total), "value": repr(float(hist.mean))})
    return rows


def format_csv(report: HistogramReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(report))
    return buf.getvalue()
