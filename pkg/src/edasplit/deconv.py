"""Sparse nonnegative deconvolution over a dictionary of Bateman kernels.

The frame is modelled as ``x = D d + B c + residual`` where ``D`` holds one
peak-normalised Bateman kernel per onset sample, ``d >= 0`` is the sparse
driver and ``B`` is a cubic B-spline tonic basis (knots every 30 s) with
free coefficients ``c``. The objective

    0.5 * ||x - D d - B c||^2 + lam * sum(d),   d >= 0

is minimised by FISTA on ``d``; ``c`` is refit exactly by least squares at
every iteration, which is the same as running FISTA on the objective with
``B`` projected out.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import fft as sfft
from scipy.linalg import toeplitz

from .decomposition import Decomposition
from .errors import ConfigurationError
from .signals import FRAME_FS, FRAME_LEN, Frame
from .synth import BatemanParams, sampled_kernel

KNOT_SPACING_S = 30.0
MAX_ITER = 5000
REL_TOL = 1e-8
POWER_STEPS = 50


@dataclass(frozen=True)
class KernelDictionary:
    columns: np.ndarray
    kernel: np.ndarray
    bateman: BatemanParams
    fs: float


@dataclass(frozen=True)
class TonicBasis:
    columns: np.ndarray
    knots: np.ndarray

    @property
    def m(self) -> int:
        return self.columns.shape[1]


@dataclass
class DeconvSolution:
    driver: np.ndarray
    tonic_coeffs: np.ndarray
    lam: float
    iterations: int
    final_objective: float
    converged: bool
    history: List[float] = field(default_factory=list)
    restarts: int = 0


def build_dictionary(bateman: BatemanParams = BatemanParams(), fs: float = FRAME_FS,
                     n: int = FRAME_LEN) -> KernelDictionary:
    """Column j is the unit-peak kernel starting at sample j, cut at the frame end."""
    h = sampled_kernel(bateman, fs, n)
    cols = toeplitz(h, np.zeros(n))
    cols.setflags(write=False)
    return KernelDictionary(cols, h, bateman, fs)


def cubic_bspline(u: np.ndarray) -> np.ndarray:
    """Centred uniform cubic B-spline with unit knot spacing."""
    a = np.abs(u)
    return np.where(a < 1, 2.0 / 3.0 - a ** 2 + 0.5 * a ** 3,
                    np.where(a < 2, (2.0 - a) ** 3 / 6.0, 0.0))


def build_tonic_basis(n: int = FRAME_LEN, fs: float = FRAME_FS,
                      spacing_s: float = KNOT_SPACING_S) -> TonicBasis:
    """Uniform cubic B-splines with knots every ``spacing_s`` seconds.

    Spline centres run from one spacing before the frame start to one
    spacing past its end (-30, 0, ..., 210 s for a 180 s frame), nine
    columns in all. Every B-spline that touches the frame is included, so
    the columns sum to one at every sample and reproduce any cubic spline
    on the 30 s knot grid exactly, including constants and straight lines.
    """
    t = np.arange(n) / fs
    duration = (n - 1) / fs
    centres = np.arange(-spacing_s, duration + spacing_s * 1.5, spacing_s)
    cols = cubic_bspline((t[:, None] - centres[None, :]) / spacing_s)
    cols.setflags(write=False)
    return TonicBasis(cols, centres)


def lipschitz_bound(dictionary: KernelDictionary, basis: TonicBasis,
                    steps: int = POWER_STEPS) -> float:
    """Largest eigenvalue of [D B]^T [D B] by power iteration (deterministic start)."""
    D, B = dictionary.columns, basis.columns
    v = np.ones(D.shape[1] + B.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(steps):
        av = D @ v[:D.shape[1]] + B @ v[D.shape[1]:]
        w = np.concatenate([D.T @ av, B.T @ av])
        lam = float(np.linalg.norm(w))
        v = w / lam
    return lam


def default_lambda(x: np.ndarray) -> float:
    return 1e-3 * float(np.max(np.abs(x)))


class _Problem:
    """Objective pieces with the tonic basis projected out.

    Products with ``D`` and ``D^T`` go through zero-padded FFTs of the
    kernel; ``D`` is lower-triangular Toeplitz so this is exact.
    """

    def __init__(self, x, dictionary: KernelDictionary, basis: TonicBasis, lam: float):
        self.x = np.asarray(x, dtype=np.float64)
        self.n = self.x.size
        self.nfft = sfft.next_fast_len(2 * self.n - 1, real=True)
        self.H = sfft.rfft(dictionary.kernel, self.nfft)
        self.Hc = np.conj(self.H)
        self.B = basis.columns
        self.Q, _ = np.linalg.qr(basis.columns)
        self.lam = lam

    def apply(self, d):
        return sfft.irfft(sfft.rfft(d, self.nfft) * self.H, self.nfft)[:self.n]

    def apply_t(self, r):
        return sfft.irfft(sfft.rfft(r, self.nfft) * self.Hc, self.nfft)[:self.n]

    def project(self, r):
        return r - self.Q @ (self.Q.T @ r)

    def objective(self, d, Dd):
        r = self.project(self.x - Dd)
        return 0.5 * float(r @ r) + self.lam * float(np.sum(d))

    def gradient(self, Dd):
        """Gradient of the smooth part with respect to d."""
        return -self.apply_t(self.project(self.x - Dd))

    def tonic_coeffs(self, Dd):
        c, *_ = np.linalg.lstsq(self.B, self.x - Dd, rcond=None)
        return c


def fit_sparse(frame: Frame, dictionary: KernelDictionary, basis: TonicBasis,
               lam: Optional[float] = None, max_iter: int = MAX_ITER,
               rel_tol: float = REL_TOL, lipschitz: Optional[float] = None) -> DeconvSolution:
    """FISTA with function-value restart on the nonnegative lasso.

    A step that would raise the objective is discarded, momentum is reset
    and a plain proximal-gradient step is taken instead, so the recorded
    objective never increases. Iteration stops once a non-restart step
    lowers the objective by less than ``rel_tol`` relative to its value, or
    at ``max_iter``. ``converged`` is False only if the cap was hit while
    the last relative decrease still exceeded 1e-6.
    """
    x = frame.samples if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    if lam is None:
        lam = default_lambda(x)
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    prob = _Problem(x, dictionary, basis, lam)
    L = lipschitz if lipschitz is not None else lipschitz_bound(dictionary, basis)
    n = prob.n

    d = np.zeros(n)
    Dd = np.zeros_like(prob.x)
    y, Dy = d, Dd
    t = 1.0
    f_prev = prob.objective(d, Dd)
    history = [f_prev]
    restarts = 0
    rel = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        z = np.maximum(y - (prob.gradient(Dy) + lam) / L, 0.0)
        Dz = prob.apply(z)
        fz = prob.objective(z, Dz)
        restarted = fz > f_prev
        if restarted:
            restarts += 1
            t = 1.0
            z = np.maximum(d - (prob.gradient(Dd) + lam) / L, 0.0)
            Dz = prob.apply(z)
            fz = prob.objective(z, Dz)
            if fz > f_prev:  # rounding-level stall
                z, Dz, fz = d, Dd, f_prev
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        y = z + beta * (z - d)
        Dy = Dz + beta * (Dz - Dd)
        d, Dd, t = z, Dz, t_next
        rel = (f_prev - fz) / max(abs(f_prev), np.finfo(float).tiny)
        f_prev = fz
        history.append(fz)
        if not restarted and rel < rel_tol:
            break
    converged = it < max_iter or rel <= 1e-6
    return DeconvSolution(driver=d, tonic_coeffs=prob.tonic_coeffs(Dd), lam=lam,
                          iterations=it, final_objective=f_prev, converged=converged,
                          history=history, restarts=restarts)


def kkt_residuals(frame: Frame, solution: DeconvSolution, dictionary: KernelDictionary,
                  basis: TonicBasis) -> Tuple[float, float]:
    """Worst KKT violations at the returned point.

    Returns ``(active, inactive)``: the largest ``|g + lam|`` over entries
    with ``d > 0`` and the most negative ``g + lam`` over entries with
    ``d == 0`` (0 if none is negative), where ``g`` is the smooth gradient.
    """
    x = frame.samples if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    prob = _Problem(x, dictionary, basis, solution.lam)
    d = solution.driver
    s = prob.gradient(prob.apply(d)) + solution.lam
    active = d > 0
    act = float(np.max(np.abs(s[active]))) if active.any() else 0.0
    inact = float(max(0.0, -np.min(s[~active]))) if (~active).any() else 0.0
    return act, inact


def deconv_decompose(frame: Frame, solution: DeconvSolution, dictionary: KernelDictionary,
                     basis: TonicBasis) -> Decomposition:
    """Tonic is the fitted spline part; phasic is whatever the spline leaves."""
    tonic = basis.columns @ solution.tonic_coeffs
    return Decomposition(tonic, frame.samples - tonic, frame.index, "deconv")


class SparseDeconvolver:
    """Dictionary, basis and step size built once, reused across frames."""

    def __init__(self, bateman: BatemanParams = BatemanParams(), lam: Optional[float] = None,
                 max_iter: int = MAX_ITER):
        self.dictionary = build_dictionary(bateman)
        self.basis = build_tonic_basis()
        self.lipschitz = lipschitz_bound(self.dictionary, self.basis)
        self.lam = lam
        self.max_iter = max_iter

    def fit(self, frame: Frame) -> DeconvSolution:
        return fit_sparse(frame, self.dictionary, self.basis, self.lam,
                          max_iter=self.max_iter, lipschitz=self.lipschitz)

    def decompose(self, frame: Frame) -> Decomposition:
        return deconv_decompose(frame, self.fit(frame), self.dictionary, self.basis)
