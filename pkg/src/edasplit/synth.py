"""Synthetic EDA frames with exactly known tonic and phasic parts.

Phasic activity is a superposition of Bateman biexponential kernels, each
scaled so that its own sampled maximum equals the event amplitude. The
tonic part is one of a few simple shapes, including a ramped level step
that mimics a movement-induced baseline shift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, SpecError
from .signals import FRAME_FS, FRAME_LEN, FRAME_SECONDS, Frame

KERNEL_SECONDS = 30.0
TONIC_KINDS = ("constant", "linear", "spline", "step")


@dataclass(frozen=True)
class BatemanParams:
    tau_rise: float = 0.7
    tau_decay: float = 2.0

    def __post_init__(self):
        if not (0 < self.tau_rise < self.tau_decay):
            raise ConfigurationError(
                f"need 0 < tau_rise < tau_decay, got {self.tau_rise}, {self.tau_decay}")

    @property
    def peak_time(self) -> float:
        r, d = self.tau_rise, self.tau_decay
        return (r * d / (d - r)) * math.log(d / r)


def bateman(t, p: BatemanParams = BatemanParams()):
    """exp(-t/tau_decay) - exp(-t/tau_rise), zero for t < 0."""
    t = np.asarray(t, dtype=np.float64)
    tt = np.maximum(t, 0.0)
    out = np.exp(-tt / p.tau_decay) - np.exp(-tt / p.tau_rise)
    out = np.where(t < 0, 0.0, out)
    return out if out.ndim else float(out)


def sampled_kernel(p: BatemanParams, fs: float, n: int, phase: float = 0.0) -> np.ndarray:
    """Kernel sampled at ``phase + k/fs`` for k < n, scaled to unit sampled peak.

    The normalising peak is taken over the untruncated grid, so a kernel cut
    short by ``n`` keeps the same scale as its full-length sibling.
    """
    k_peak = int(math.ceil((p.peak_time - phase) * fs)) + 2
    ref = bateman(phase + np.arange(max(k_peak, 1)) / fs, p)
    peak = float(np.max(ref))
    return bateman(phase + np.arange(n) / fs, p) / peak


@dataclass(frozen=True)
class ScrEvent:
    onset_s: float
    amplitude: float

    def __post_init__(self):
        if not (0 <= self.onset_s < FRAME_SECONDS):
            raise SpecError(f"event onset {self.onset_s} s outside [0, {FRAME_SECONDS})")
        if not self.amplitude > 0:
            raise SpecError(f"event amplitude must be positive, got {self.amplitude}")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic frame.

    ``tonic_params`` keys per kind: constant -> level; linear -> level, slope;
    spline -> knots (values equally spaced over the frame); step -> level,
    slope, step_start, step_end, step_height (signed change of level, ramped
    linearly between start and end).
    """

    tonic_kind: str = "constant"
    tonic_params: Mapping[str, object] = field(default_factory=lambda: {"level": 1.0})
    events: Tuple[ScrEvent, ...] = ()
    noise_sigma: float = 0.0
    bateman: BatemanParams = BatemanParams()
    seed: int = 0

    def __post_init__(self):
        if self.tonic_kind not in TONIC_KINDS:
            raise SpecError(f"unknown tonic kind {self.tonic_kind!r}")
        if not self.noise_sigma >= 0:
            raise SpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "tonic_params", dict(self.tonic_params))


@dataclass(frozen=True)
class GroundTruth:
    tonic: np.ndarray
    phasic: np.ndarray
    events: Tuple[ScrEvent, ...]
    samples: np.ndarray

    @property
    def noise(self) -> np.ndarray:
        return self.samples - self.tonic - self.phasic

    def peak_times(self, p: BatemanParams = BatemanParams()) -> np.ndarray:
        return np.array([e.onset_s + p.peak_time for e in self.events])


def _times() -> np.ndarray:
    return np.arange(FRAME_LEN) / FRAME_FS


def tonic_curve(kind: str, params: Mapping[str, object]) -> np.ndarray:
    t = _times()
    if kind == "constant":
        return np.full(FRAME_LEN, float(params["level"]))
    if kind == "linear":
        return float(params["level"]) + float(params.get("slope", 0.0)) * t
    if kind == "spline":
        knots = np.asarray(params["knots"], dtype=np.float64)
        if knots.size < 2:
            raise SpecError("spline tonic needs at least 2 knot values")
        kt = np.linspace(0.0, FRAME_SECONDS, knots.size)
        return CubicSpline(kt, knots, bc_type="natural")(t)
    if kind == "step":
        start = float(params["step_start"])
        end = float(params["step_end"])
        if not end > start:
            raise SpecError("step_end must exceed step_start")
        ramp = np.clip((t - start) / (end - start), 0.0, 1.0)
        return (float(params["level"]) + float(params.get("slope", 0.0)) * t
                + float(params["step_height"]) * ramp)
    raise SpecError(f"unknown tonic kind {kind!r}")


def event_kernel(event: ScrEvent, p: BatemanParams) -> np.ndarray:
    """One event's contribution on the frame grid, truncated at 30 s and frame end."""
    out = np.zeros(FRAME_LEN)
    first = int(math.ceil(event.onset_s * FRAME_FS - 1e-9))
    if first >= FRAME_LEN:
        return out
    phase = first / FRAME_FS - event.onset_s
    n_kernel = int(KERNEL_SECONDS * FRAME_FS)
    n = min(n_kernel, FRAME_LEN - first)
    out[first:first + n] = event.amplitude * sampled_kernel(p, FRAME_FS, n, phase)
    return out


def phasic_curve(events: Iterable[ScrEvent], p: BatemanParams) -> np.ndarray:
    phasic = np.zeros(FRAME_LEN)
    for ev in events:
        phasic += event_kernel(ev, p)
    return phasic


def generate_frame(spec: SynthSpec, index: int = 0) -> Tuple[Frame, GroundTruth]:
    """Render a spec into a frame plus its ground truth.

    Raises SpecError if the tonic or the noisy frame goes negative anywhere;
    values are never clamped.
    """
    tonic = tonic_curve(spec.tonic_kind, spec.tonic_params)
    if np.any(tonic < 0):
        raise SpecError(f"tonic goes negative (min {tonic.min():.4g} uS)")
    phasic = phasic_curve(spec.events, spec.bateman)
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.noise_sigma, FRAME_LEN) if spec.noise_sigma > 0 else np.zeros(FRAME_LEN)
    samples = tonic + phasic + noise
    if np.any(samples < 0):
        raise SpecError(f"generated conductance goes negative (min {samples.min():.4g} uS)")
    truth = GroundTruth(tonic=tonic, phasic=phasic, events=spec.events, samples=samples)
    return Frame(samples, index=index), truth


def scenario_step_scl(seed: int = 0) -> Tuple[Frame, GroundTruth]:
    """Baseline drops 0.5 uS over 110-125 s with three SCRs away from the step."""
    return generate_frame(step_scl_spec(seed))


def step_scl_spec(seed: int = 0) -> SynthSpec:
    return SynthSpec(
        tonic_kind="step",
        tonic_params={"level": 2.0, "slope": 0.0, "step_start": 110.0,
                      "step_end": 125.0, "step_height": -0.5},
        events=(ScrEvent(30.0, 0.3), ScrEvent(70.0, 0.4), ScrEvent(150.0, 0.25)),
        noise_sigma=0.005,
        seed=seed,
    )


# -- random corpora --------------------------------------------------------

def random_onsets(rng: np.random.Generator, n: int, min_spacing: float,
                  lo: float = 2.0, hi: float = FRAME_SECONDS - 10.0) -> List[float]:
    """Draw ``n`` sorted onsets in [lo, hi] at least ``min_spacing`` apart.

    Uses the gap-shrinking trick so no rejection loop is needed. Onsets are
    snapped to the sample grid.
    """
    slack = (hi - lo) - (n - 1) * min_spacing
    if n == 0:
        return []
    if slack < 0:
        raise SpecError(f"cannot fit {n} events {min_spacing} s apart in [{lo}, {hi}]")
    base = np.sort(rng.uniform(0.0, slack, n))
    onsets = lo + base + np.arange(n) * min_spacing
    return [round(o * FRAME_FS) / FRAME_FS for o in onsets]


def random_spec(rng: np.random.Generator, *, tonic_kind: str = "linear",
                slope: float | None = None, level: float | None = None,
                n_events: int | Tuple[int, int] = (0, 8),
                amplitude: Tuple[float, float] = (0.05, 0.5),
                min_spacing: float = 4.0, noise_sigma: float = 0.01,
                bateman_params: BatemanParams = BatemanParams()) -> SynthSpec:
    """Draw a random frame recipe; all randomness comes from ``rng``."""
    if isinstance(n_events, tuple):
        n_events = int(rng.integers(n_events[0], n_events[1] + 1))
    if level is None:
        level = float(rng.uniform(1.0, 4.0))
    if slope is None:
        slope = float(rng.uniform(-0.004, 0.004))
    if tonic_kind == "linear":
        params: Dict[str, object] = {"level": level, "slope": slope}
    elif tonic_kind == "constant":
        params = {"level": level}
    elif tonic_kind == "spline":
        params = {"knots": tuple(level + np.cumsum(rng.normal(0.0, 0.15, 4)))}
    else:
        raise SpecError(f"random_spec does not draw {tonic_kind!r} tonics")
    onsets = random_onsets(rng, n_events, min_spacing)
    amps = rng.uniform(amplitude[0], amplitude[1], n_events)
    events = tuple(ScrEvent(o, float(a)) for o, a in zip(onsets, amps))
    return SynthSpec(tonic_kind, params, events, noise_sigma, bateman_params,
                     seed=int(rng.integers(0, 2**31 - 1)))


def corpus(specs: Sequence[SynthSpec]) -> List[Tuple[Frame, GroundTruth]]:
    return [generate_frame(s, index=i) for i, s in enumerate(specs)]


def balanced_slope_specs(n_per_class: int, seed: int = 0,
                         noise_sigma: float = 0.01) -> List[SynthSpec]:
    """Equal thirds of falling, stable and rising linear tonics.

    Falling/rising slopes are drawn from 0.0015-0.004 uS/s in magnitude and
    stable ones from +-0.0005 uS/s, clear of the +-0.001 class boundaries.
    """
    rng = np.random.default_rng(seed)
    ranges = [(-0.004, -0.0015), (-0.0005, 0.0005), (0.0015, 0.004)]
    specs = []
    for lo, hi in ranges:
        for _ in range(n_per_class):
            specs.append(random_spec(rng, slope=float(rng.uniform(lo, hi)),
                                     n_events=(0, 6), amplitude=(0.05, 0.4),
                                     noise_sigma=noise_sigma))
    return specs


# -- flat key=value serialisation -----------------------------------------

def spec_to_config(spec: SynthSpec) -> Dict[str, str]:
    out = {"tonic_kind": spec.tonic_kind}
    for key, val in spec.tonic_params.items():
        if key == "knots":
            out[key] = ",".join(repr(float(v)) for v in val)
        else:
            out[key] = repr(float(val))
    out["events"] = ";".join(f"{e.onset_s!r}:{e.amplitude!r}" for e in spec.events)
    out["noise_sigma"] = repr(float(spec.noise_sigma))
    out["tau_rise"] = repr(spec.bateman.tau_rise)
    out["tau_decay"] = repr(spec.bateman.tau_decay)
    out["seed"] = str(int(spec.seed))
    return out


_TONIC_KEYS = {
    "constant": ("level",),
    "linear": ("level", "slope"),
    "spline": ("knots",),
    "step": ("level", "slope", "step_start", "step_end", "step_height"),
}


def spec_from_config(cfg: Mapping[str, str]) -> SynthSpec:
    kind = cfg.get("tonic_kind", "constant")
    if kind not in _TONIC_KEYS:
        raise SpecError(f"unknown tonic kind {kind!r}")
    params: Dict[str, object] = {}
    for key in _TONIC_KEYS[kind]:
        if key not in cfg:
            if key == "slope":
                continue
            raise SpecError(f"missing key {key!r} for {kind} tonic")
        if key == "knots":
            params[key] = tuple(float(v) for v in cfg[key].split(","))
        else:
            params[key] = float(cfg[key])
    events = []
    raw = cfg.get("events", "").strip()
    if raw:
        for item in raw.split(";"):
            onset, amp = item.split(":")
            events.append(ScrEvent(float(onset), float(amp)))
    bp = BatemanParams(float(cfg.get("tau_rise", 0.7)), float(cfg.get("tau_decay", 2.0)))
    return SynthSpec(kind, params, tuple(events), float(cfg.get("noise_sigma", 0.0)),
                     bp, int(cfg.get("seed", 0)))
