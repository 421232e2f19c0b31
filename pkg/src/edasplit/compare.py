"""Run several decomposition methods over a set of frames and write the report."""
from __future__ import annotations

import csv
import datetime as _dt
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .decomposition import Decomposition
from .deconv import SparseDeconvolver
from .detrend import detrend_decompose
from .errors import ConfigurationError, DataError, EdaError
from .features import FrameFeatures, aggregate, format_csv, format_tables, frame_features
from .feel.checkpoint import load_checkpoint
from .feel.model import POOL_KERNELS, ArchConfig, init_params, transformer_decompose
from .io import load_csv, write_decomposition
from .signals import EdaSignal, FilterSpec, Frame, butterworth_lowpass, frame_signal
from .synth import (GroundTruth, balanced_slope_specs, corpus, random_spec,
                    scenario_step_scl)

log = logging.getLogger(__name__)

METHODS = ("detrend", "deconv", "feel-1", "feel-2", "feel-3")
STEP_WINDOW_S = (105.0, 130.0)


# -- scenarios --------------------------------------------------------------------

def _linear(seed: int):
    rng = np.random.default_rng(seed)
    return corpus([random_spec(rng) for _ in range(4)])


def _spline(seed: int):
    rng = np.random.default_rng(seed + 1)
    return corpus([random_spec(rng, tonic_kind="spline") for _ in range(3)])


def _balanced(seed: int):
    return corpus(balanced_slope_specs(2, seed=seed + 2))


def _clean(seed: int):
    rng = np.random.default_rng(seed + 3)
    return corpus([random_spec(rng, n_events=5, amplitude=(0.1, 0.6), min_spacing=10.0,
                               noise_sigma=0.0) for _ in range(2)])


def _step(seed: int):
    return [scenario_step_scl(seed)]


SCENARIOS: Dict[str, Callable[[int], List[Tuple[Frame, GroundTruth]]]] = {
    "step-scl": _step,
    "linear": _linear,
    "spline": _spline,
    "balanced": _balanced,
    "clean": _clean,
}
SUITE = ("step-scl", "linear", "spline", "balanced", "clean")


def scenario_frames(name: str, seed: int) -> List[Tuple[Frame, GroundTruth]]:
    if name == "suite":
        out = []
        for n in SUITE:
            out += SCENARIOS[n](seed)
        return out
    if name not in SCENARIOS:
        raise ConfigurationError(
            f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)} or suite")
    return SCENARIOS[name](seed)


# -- configuration --------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Everything a harness run needs; each field is also a config key and CLI flag."""

    inputs: Tuple[str, ...] = ()
    scenarios: Tuple[str, ...] = ()
    methods: Tuple[str, ...] = ()
    checkpoints: Tuple[str, ...] = ()   # "method=path" items
    out: str = "out"
    seed: int = 0
    filter_cutoff: float = 3.0
    filter_order: int = 4               # 0 disables the low-pass filter
    lam: Optional[float] = None
    max_iter: int = 5000
    epochs: int = 200
    lr: float = 1e-3
    batch: int = 8
    workers: int = 1
    frame: int = 0
    n_coords: int = 200

    def validate(self, need_methods: bool = True, need_source: bool = True) -> "RunConfig":
        if need_methods and not self.methods:
            raise ConfigurationError("at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if need_source and not (self.inputs or self.scenarios):
            raise ConfigurationError("give inputs or scenarios")
        for p in self.inputs:
            if not Path(p).is_file():
                raise ConfigurationError(f"input {p} does not exist")
        for name in self.scenarios:
            if name != "suite" and name not in SCENARIOS:
                raise ConfigurationError(f"unknown scenario {name!r}")
        for method, path in self.checkpoint_map().items():
            if method not in POOL_KERNELS:
                raise ConfigurationError(f"checkpoint given for non-model method {method!r}")
            if not Path(path).is_file():
                raise ConfigurationError(f"checkpoint {path} does not exist")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.filter_order < 0:
            raise ConfigurationError("filter_order must be >= 0")
        return self

    def checkpoint_map(self) -> Dict[str, str]:
        out = {}
        for item in self.checkpoints:
            if "=" not in item:
                raise ConfigurationError(f"checkpoint {item!r} must look like method=path")
            method, path = item.split("=", 1)
            out[method.strip()] = path.strip()
        return out

    @property
    def filter_spec(self) -> Optional[FilterSpec]:
        if self.filter_order == 0:
            return None
        return FilterSpec(self.filter_cutoff, self.filter_order)


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


# -- frames ----------------------------------------------------------------------

@dataclass
class SourceFrame:
    frame: Frame
    source: str
    truth: Optional[GroundTruth] = None


def _filtered(samples: np.ndarray, spec: Optional[FilterSpec], fs: float) -> np.ndarray:
    if spec is None:
        return samples
    return butterworth_lowpass(EdaSignal(samples, fs), spec).samples


def collect_frames(cfg: RunConfig) -> Tuple[List[SourceFrame], int]:
    """Frames from every input file and scenario, renumbered in order.

    Returns the frames and the number skipped because filtering left
    invalid (non-finite or negative) samples.
    """
    frames: List[SourceFrame] = []
    skipped = 0
    spec = cfg.filter_spec

    def add(samples, source, truth=None):
        nonlocal skipped
        x = _filtered(np.asarray(samples, dtype=np.float64), spec, 8.0)
        if not np.all(np.isfinite(x)):
            skipped += 1
            return
        frames.append(SourceFrame(Frame(x, index=len(frames)), source, truth))

    for path in cfg.inputs:
        sig = load_csv(path)
        sig = EdaSignal(_filtered(sig.samples, spec, sig.fs), sig.fs, sig.origin)
        for fr in frame_signal(sig):
            if not np.all(np.isfinite(fr.samples)):
                skipped += 1
                continue
            frames.append(SourceFrame(Frame(fr.samples, index=len(frames)), str(path)))
    for name in cfg.scenarios:
        names = SUITE if name == "suite" else (name,)
        for n in names:
            for fr, truth in scenario_frames(n, cfg.seed):
                add(fr.samples, n, truth)
    if not frames:
        raise DataError("no complete 3-minute frames in the given inputs")
    return frames, skipped


# -- methods ---------------------------------------------------------------------

class MethodRunner:
    """Builds each method's state once and decomposes frames with it."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._deconv: Optional[SparseDeconvolver] = None
        self._models: Dict[str, object] = {}

    def model(self, method: str):
        if method not in self._models:
            path = self.cfg.checkpoint_map().get(method)
            if path is not None:
                params = load_checkpoint(path)
                if params.arch.pool_kernel != POOL_KERNELS[method]:
                    raise ConfigurationError(
                        f"{path}: pool kernel {params.arch.pool_kernel} does not match "
                        f"{method} ({POOL_KERNELS[method]})")
            else:
                # untrained but seeded; the tonic comes from the pooling branch only
                params = init_params(ArchConfig(pool_kernel=POOL_KERNELS[method]), self.cfg.seed)
            self._models[method] = params
        return self._models[method]

    def decompose(self, method: str, frame: Frame) -> Decomposition:
        if method == "detrend":
            return detrend_decompose(frame)
        if method == "deconv":
            if self._deconv is None:
                self._deconv = SparseDeconvolver(lam=self.cfg.lam, max_iter=self.cfg.max_iter)
            return replace(self._deconv.decompose(frame), method="deconv")
        if method in POOL_KERNELS:
            return transformer_decompose(frame, self.model(method), method=method)
        raise ConfigurationError(f"unknown method {method!r}")


@dataclass
class FrameResult:
    index: int
    method: str
    decomposition: Optional[Decomposition] = None
    features: Optional[FrameFeatures] = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def _run_frame(runner: MethodRunner, methods: Sequence[str], frame: Frame) -> List[FrameResult]:
    out = []
    for m in methods:
        try:
            d = runner.decompose(m, frame)
            if not (np.all(np.isfinite(d.tonic)) and np.all(np.isfinite(d.phasic))):
                raise DataError("non-finite decomposition")
            out.append(FrameResult(frame.index, m, d, frame_features(d)))
        except (EdaError, ArithmeticError, ValueError) as exc:
            log.warning("frame %d, %s failed: %s", frame.index, m, exc)
            out.append(FrameResult(frame.index, m, error=f"{type(exc).__name__}: {exc}"))
    return out


_WORKER: Dict[str, object] = {}


def _init_worker(cfg: RunConfig):
    _WORKER["runner"] = MethodRunner(cfg)


def _worker_frame(frame: Frame) -> List[FrameResult]:
    runner = _WORKER["runner"]
    return _run_frame(runner, runner.cfg.methods, frame)


def decompose_all(cfg: RunConfig, frames: Sequence[Frame]) -> List[List[FrameResult]]:
    """Per-frame results in frame order, whatever order the workers finish in."""
    if cfg.workers == 1 or len(frames) < 2:
        runner = MethodRunner(cfg)
        return [_run_frame(runner, cfg.methods, f) for f in frames]
    with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(cfg,)) as pool:
        return list(pool.map(_worker_frame, frames))


# -- report ----------------------------------------------------------------------

@dataclass
class CompareOutcome:
    frames: int
    skipped: int
    failures: int
    spurious: Dict[str, int] = field(default_factory=dict)
    out_dir: Path = Path(".")

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def spurious_peaks(result: FrameResult, window=STEP_WINDOW_S) -> int:
    """Peaks detected inside the step window, where the step scenario has no SCR."""
    lo, hi = window
    fs = 8.0
    return sum(1 for p in result.features.peaks if lo <= p.index / fs <= hi)


FRAME_FIELDS = ("frame", "source", "method", "status", "slope", "slope_class", "peak_count",
                "mean_amplitude", "phasic_range", "step_window_peaks")


def run_compare(cfg: RunConfig) -> CompareOutcome:
    """Decompose every frame with every method and write the report files.

    Writes ``tables.txt`` (the only file with a timestamp, in its first
    line), ``report.csv``, ``frames.csv`` and one decomposition CSV per
    frame and method under ``decompositions/<method>/``.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sources, skipped = collect_frames(cfg)
    results = decompose_all(cfg, [s.frame for s in sources])

    per_method: Dict[str, List[FrameFeatures]] = {m: [] for m in cfg.methods}
    spurious: Dict[str, int] = {}
    failed = []
    rows = []
    for src, frame_results in zip(sources, results):
        for r in frame_results:
            row = {"frame": str(src.frame.index), "source": src.source, "method": r.method,
                   "status": "ok" if r.ok else "failed", "slope": "", "slope_class": "",
                   "peak_count": "", "mean_amplitude": "", "phasic_range": "",
                   "step_window_peaks": ""}
            if not r.ok:
                failed.append((src.frame.index, r.method, r.error))
                rows.append(row)
                continue
            f = r.features
            per_method[r.method].append(f)
            row.update(slope=repr(f.slope), slope_class=f.slope_class.label,
                       peak_count=str(f.peak_count), phasic_range=repr(f.phasic_range),
                       mean_amplitude=repr(float(np.mean(f.amplitudes))) if f.amplitudes else "")
            if src.source == "step-scl":
                n = spurious_peaks(r)
                row["step_window_peaks"] = str(n)
                spurious[r.method] = spurious.get(r.method, 0) + n
            rows.append(row)
            ddir = out / "decompositions" / r.method
            ddir.mkdir(parents=True, exist_ok=True)
            write_decomposition(ddir / f"frame_{src.frame.index:04d}.csv", src.frame,
                                r.decomposition, [p.index for p in f.peaks])

    with open(out / "frames.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=FRAME_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

    usable = {m: feats for m, feats in per_method.items() if feats}
    csv_text = format_csv(aggregate(usable)) if usable else ",".join(
        ("method", "table", "bin", "count", "value")) + "\n"
    extra = [f"{m},step_window_peaks,{STEP_WINDOW_S[0]:g}-{STEP_WINDOW_S[1]:g}s,{n},{float(n)!r}\n"
             for m, n in spurious.items()]
    (out / "report.csv").write_text(csv_text + "".join(extra), encoding="utf-8")

    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    lines = [f"# generated {stamp}",
             f"frames: {len(sources)}  skipped: {skipped}  failed frame-methods: {len(failed)}",
             ""]
    if usable:
        lines.append(format_tables(aggregate(usable)))
    if spurious:
        lines.append(f"Peaks detected in the {STEP_WINDOW_S[0]:g}-{STEP_WINDOW_S[1]:g} s "
                     "step window (step-scl; none are real)")
        for m, n in spurious.items():
            lines.append(f"  {m:<8} {n}")
        lines.append("")
    if failed:
        lines.append("Failed frames")
        for index, method, error in failed:
            lines.append(f"  frame {index} {method}: {error}")
        lines.append("")
    (out / "tables.txt").write_text("\n".join(lines), encoding="utf-8")
    return CompareOutcome(len(sources), skipped, len(failed), spurious, out)
