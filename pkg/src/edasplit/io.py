"""Session CSV ingestion and the CSV files written by the harness."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from .decomposition import Decomposition
from .errors import DataError
from .signals import FRAME_FS, EdaSignal, Frame, resample
from .synth import GroundTruth

PathLike = Union[str, Path]


def _fmt(x: float) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))


def _parse_float(cell: str, lineno: int, column: str) -> float:
    try:
        val = float(cell)
    except ValueError:
        raise DataError(f"line {lineno}: {column} {cell!r} is not a number") from None
    if not math.isfinite(val):
        raise DataError(f"line {lineno}: {column} is not finite ({cell.strip()})")
    return val


def read_session(path: PathLike):
    """Parse a session CSV into (timestamps, values), validating every row.

    The first line is a header. The first two columns are read as
    ``timestamp_s`` and ``eda_us``; any further columns are ignored, so the
    decomposition CSVs written by this package load back as sessions.
    """
    path = Path(path)
    ts: List[float] = []
    xs: List[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if len(header) < 2:
            raise DataError(f"{path}: line 1: header needs at least two columns")
        try:
            float(header[0])
        except ValueError:
            pass
        else:
            raise DataError(f"{path}: line 1: expected a header, found numbers")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise DataError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
            t = _parse_float(row[0], lineno, "timestamp")
            x = _parse_float(row[1], lineno, "conductance")
            if x < 0:
                raise DataError(f"{path}: line {lineno}: negative conductance {x}")
            if ts and t <= ts[-1]:
                raise DataError(f"{path}: line {lineno}: timestamp {t} does not increase")
            ts.append(t)
            xs.append(x)
    if len(ts) < 2:
        raise DataError(f"{path}: need at least two samples, got {len(ts)}")
    return np.asarray(ts), np.asarray(xs)


def load_csv(path: PathLike, target_hz: float = FRAME_FS) -> EdaSignal:
    """Load a session CSV as an ``target_hz`` signal.

    Timestamps are first mapped onto a uniform grid at the median
    inter-sample rate (linear interpolation; a no-op for regular files),
    then resampled to ``target_hz``.
    """
    t, x = read_session(path)
    dt = float(np.median(np.diff(t)))
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + np.arange(n) * dt
    if not np.array_equal(grid, t):
        x = np.interp(grid, t, x)
    sig = EdaSignal(x, 1.0 / dt, origin=float(t[0]))
    return resample(sig, target_hz).validate()


def write_session(path: PathLike, samples: Sequence[float], fs: float = FRAME_FS,
                  start: float = 0.0) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_s", "eda_us"])
        for i, x in enumerate(samples):
            w.writerow([_fmt(start + i / fs), _fmt(x)])
    return path


def write_truth(path: PathLike, truths: Sequence[GroundTruth], fs: float = FRAME_FS) -> Path:
    """Ground-truth tonic, phasic and noise for consecutive synthetic frames."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_s", "eda_us", "tonic_us", "phasic_us", "noise_us"])
        offset = 0
        for g in truths:
            noise = g.noise
            for i in range(g.samples.size):
                w.writerow([_fmt((offset + i) / fs), _fmt(g.samples[i]), _fmt(g.tonic[i]),
                            _fmt(g.phasic[i]), _fmt(noise[i])])
            offset += g.samples.size
    return path


def write_events(path: PathLike, truths: Sequence[GroundTruth]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "onset_s", "amplitude_us"])
        for k, g in enumerate(truths):
            for e in g.events:
                w.writerow([k, _fmt(e.onset_s), _fmt(e.amplitude)])
    return path


def write_decomposition(path: PathLike, frame: Frame, d: Decomposition,
                        peak_indices: Iterable[int] = (), start: Optional[float] = None) -> Path:
    """Columns t, eda, tonic, phasic, peak (1 at detected peaks)."""
    path = Path(path)
    flags = np.zeros(frame.samples.size, dtype=int)
    flags[list(peak_indices)] = 1
    t0 = frame.index * frame.samples.size / frame.fs if start is None else start
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "eda", "tonic", "phasic", "peak"])
        for i in range(frame.samples.size):
            w.writerow([_fmt(t0 + i / frame.fs), _fmt(frame.samples[i]), _fmt(d.tonic[i]),
                        _fmt(d.phasic[i]), flags[i]])
    return path


def read_columns(path: PathLike) -> dict:
    """Read a numeric CSV written by this package into {column: array}."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    data = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(header)))
    return {name: data[:, j] for j, name in enumerate(header)}
