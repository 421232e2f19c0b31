"""Feel Transformer: pooled SCL branch plus an autocorrelation encoder/decoder SCR branch.

The network reconstructs a (normalised) frame as ``scl + scr``. ``scl`` is a
parameter-free centred average pool of the input, so the trainable part
only ever has to explain what the pool leaves behind. The SCR branch is
non-autoregressive: the whole sequence is processed at once, no masking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..decomposition import Decomposition
from ..errors import ConfigurationError, NumericError
from ..signals import FRAME_LEN, Frame
from . import autograd as ag
from .autograd import Tensor

POOL_KERNELS = {"feel-1": 481, "feel-2": 241, "feel-3": 9}
STD_FLOOR = 1e-6
LN_EPS = 1e-5


@dataclass(frozen=True)
class ArchConfig:
    d_model: int = 32
    n_heads: int = 4
    ff_dim: int = 16
    n_encoder: int = 1
    n_decoder: int = 2
    pool_kernel: int = 481
    seq_len: int = FRAME_LEN
    autocorr_factor: float = 1.0
    decomp_kernel: int = 25

    def __post_init__(self):
        if self.pool_kernel % 2 != 1 or self.pool_kernel < 1:
            raise ConfigurationError(f"pool_kernel must be odd, got {self.pool_kernel}")
        if self.pool_kernel > self.seq_len:
            raise ConfigurationError("pool_kernel may not exceed seq_len")
        if self.decomp_kernel % 2 != 1:
            raise ConfigurationError(f"decomp_kernel must be odd, got {self.decomp_kernel}")
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        for name in ("d_model", "n_heads", "ff_dim", "seq_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_encoder < 0 or self.n_decoder < 0:
            raise ConfigurationError("layer counts must be non-negative")

    @property
    def top_k(self) -> int:
        return max(1, int(math.floor(self.autocorr_factor * math.log(self.seq_len))))

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


TOY_ARCH = ArchConfig(d_model=8, n_heads=2, ff_dim=8, pool_kernel=9, seq_len=64)


# Additive constants that every block cancels are left out: a time-constant
# shift is removed exactly by the series decomposition, and a constant shift
# of all lag scores leaves the softmax unchanged. That rules out biases on
# the q/k/v/out projections and on the second feed-forward layer, and
# layer-norm offsets (the last one would only duplicate out.bias).

def _attn_shapes(prefix: str, d: int) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(f"{prefix}.{proj}.weight", (d, d)) for proj in ("q", "k", "v", "o")]


def _block_shapes(prefix: str, arch: ArchConfig, attn: Tuple[str, ...]):
    d, f = arch.d_model, arch.ff_dim
    out = []
    for a in attn:
        out += _attn_shapes(f"{prefix}.{a}", d)
    out += [(f"{prefix}.ff.w1", (d, f)), (f"{prefix}.ff.b1", (f,)),
            (f"{prefix}.ff.w2", (f, d)), (f"{prefix}.norm.scale", (d,))]
    return out


def param_shapes(arch: ArchConfig) -> Dict[str, Tuple[int, ...]]:
    """Every parameter name and shape, in canonical order."""
    shapes = [("embed.weight", (3, arch.d_model))]
    for i in range(arch.n_encoder):
        shapes += _block_shapes(f"enc{i}", arch, ("attn",))
    for i in range(arch.n_decoder):
        shapes += _block_shapes(f"dec{i}", arch, ("self", "cross"))
    shapes += [("out.weight", (arch.d_model, 1)), ("out.bias", (1,))]
    return dict(shapes)


@dataclass
class ModelParams:
    arch: ArchConfig
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def names(self) -> List[str]:
        return list(self.tensors)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {n: Tensor(t.data.copy(), True, n)
                                       for n, t in self.tensors.items()})

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())


def _fan_in(name: str, shapes: Dict[str, Tuple[int, ...]]) -> int:
    if name == "embed.weight":
        return 3
    if name.endswith(".bias"):
        return shapes[name[:-len("bias")] + "weight"][0]
    if name.endswith(".b1"):
        return shapes[name[:-2] + "w1"][0]
    return shapes[name][0]


def init_params(arch: ArchConfig, seed: int = 0) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights and biases; unit layer-norm scales."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(arch)
    tensors = {}
    for name, shape in shapes.items():
        if name.endswith("norm.scale"):
            data = np.ones(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shapes))
            data = rng.uniform(-bound, bound, shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(arch, tensors)


# -- parameter-free pieces -------------------------------------------------------

def avg_pool_scl(values, kernel: int) -> np.ndarray:
    """Centred moving average with replicate padding; same length as the input.

    Works along the last axis, so a batch of frames can be pooled at once.
    """
    if kernel % 2 != 1 or kernel < 1:
        raise ConfigurationError(f"pooling kernel must be odd, got {kernel}")
    x = np.asarray(values, dtype=np.float64)
    if kernel > x.shape[-1]:
        raise ConfigurationError(f"kernel {kernel} exceeds sequence length {x.shape[-1]}")
    return ag.moving_average_np(x, kernel, axis=-1)


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pe = np.zeros((length, d_model))
    pos = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * -(math.log(10000.0) / d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d_model // 2])
    return pe


def normalize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame z-score along the last axis with the std floored at 1e-6."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = np.maximum(x.std(axis=-1, keepdims=True), STD_FLOOR)
    return (x - mu) / sd, mu, sd


# -- network pieces -------------------------------------------------------------

def _check(t: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation in {where}")
    return t


def _embed(X: np.ndarray, p: ModelParams) -> Tensor:
    """Width-3 circular convolution from one channel to d_model plus positions."""
    w = p["embed.weight"]
    x = X[..., None]
    taps = (np.roll(x, 1, axis=1), x, np.roll(x, -1, axis=1))
    out = None
    for i, tap in enumerate(taps):
        term = ag.matmul(Tensor(tap), w[i:i + 1])
        out = term if out is None else out + term
    return out + positional_encoding(X.shape[1], p.arch.d_model)


def _linear(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    out = ag.matmul(x, p[f"{prefix}.weight"])
    bias = p.tensors.get(f"{prefix}.bias")
    return out if bias is None else out + bias


def _attention(x: Tensor, cross: Tensor, p: ModelParams, prefix: str) -> Tensor:
    arch = p.arch
    B, L, _ = x.shape
    shape = (B, L, arch.n_heads, arch.head_dim)
    q = ag.reshape(_linear(x, p, f"{prefix}.q"), shape)
    k = ag.reshape(_linear(cross, p, f"{prefix}.k"), shape)
    v = ag.reshape(_linear(cross, p, f"{prefix}.v"), shape)
    agg = ag.autocorrelation(q, k, v, arch.top_k)
    return _linear(ag.reshape(agg, (B, L, arch.d_model)), p, f"{prefix}.o")


def _feed_forward(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    h = ag.gelu(ag.matmul(x, p[f"{prefix}.ff.w1"]) + p[f"{prefix}.ff.b1"])
    return ag.matmul(h, p[f"{prefix}.ff.w2"])


def _seasonal(x: Tensor, kernel: int) -> Tensor:
    """Series decomposition: keep x minus its moving-average trend."""
    return x - ag.moving_average(x, kernel, axis=1)


def _layer_norm(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    mu = ag.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ag.mean(xc * xc, axis=-1, keepdims=True)
    return xc * ag.power(var + LN_EPS, -0.5) * p[f"{prefix}.norm.scale"]


def _encoder_block(x: Tensor, p: ModelParams, prefix: str, attention: bool = True) -> Tensor:
    k = p.arch.decomp_kernel
    if attention:
        x = x + _attention(x, x, p, f"{prefix}.attn")
    x = _seasonal(x, k)
    x = _seasonal(x + _feed_forward(x, p, prefix), k)
    return _layer_norm(x, p, prefix)


def _decoder_block(x: Tensor, cross: Tensor, p: ModelParams, prefix: str,
                   attention: bool = True) -> Tensor:
    k = p.arch.decomp_kernel
    if attention:
        x = x + _attention(x, x, p, f"{prefix}.self")
    x = _seasonal(x, k)
    if attention:
        x = x + _attention(x, cross, p, f"{prefix}.cross")
    x = _seasonal(x, k)
    x = _seasonal(x + _feed_forward(x, p, prefix), k)
    return _layer_norm(x, p, prefix)


def scr_branch(X: np.ndarray, p: ModelParams, attention: bool = True) -> Tensor:
    """SCR estimate for a normalised batch ``X`` of shape [batch, seq_len]."""
    emb = _check(_embed(X, p), "embedding")
    h = emb
    for i in range(p.arch.n_encoder):
        h = _check(_encoder_block(h, p, f"enc{i}", attention), f"encoder {i}")
    for i in range(p.arch.n_decoder):
        h = _check(_decoder_block(h, emb, p, f"dec{i}", attention), f"decoder {i}")
    out = _check(_linear(h, p, "out"), "output projection")
    return ag.reshape(out, X.shape)


def linear_scr_branch(X: np.ndarray, p: ModelParams) -> Tensor:
    """Embedding, one series decomposition and the output projection only.

    Every parameter enters this path linearly, which makes it a sharp
    target for finite-difference gradient checks.
    """
    emb = _embed(X, p)
    h = _seasonal(emb, p.arch.decomp_kernel)
    return ag.reshape(_linear(h, p, "out"), X.shape)


@dataclass
class DecomposedOutput:
    scl: np.ndarray
    scr: np.ndarray
    recon: np.ndarray


def forward_tensors(X: np.ndarray, p: ModelParams, attention: bool = True
                    ) -> Tuple[np.ndarray, Tensor, Tensor]:
    """(scl, scr, recon) on normalised input, keeping the graph for backprop."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[-1] != p.arch.seq_len:
        raise ConfigurationError(f"expected length {p.arch.seq_len}, got {X.shape[-1]}")
    scl = avg_pool_scl(X, p.arch.pool_kernel)
    scr = scr_branch(X, p, attention)
    return scl, scr, scr + scl


def forward(frame, p: ModelParams) -> DecomposedOutput:
    """Run one frame (already normalised) through the network."""
    x = frame.samples if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    scl, scr, _ = forward_tensors(x[None, :], p)
    scl = scl[0]
    scr_v = scr.data[0]
    return DecomposedOutput(scl=scl, scr=scr_v, recon=scl + scr_v)


def mse_loss(target, recon):
    """Mean squared error; returns a Tensor when ``recon`` is one, else a float."""
    if isinstance(recon, Tensor):
        diff = recon - np.asarray(target, dtype=np.float64)
        return ag.mean(diff * diff)
    t = np.asarray(target.samples if isinstance(target, Frame) else target, dtype=np.float64)
    r = np.asarray(recon, dtype=np.float64)
    if t.shape != r.shape:
        raise ConfigurationError(f"length mismatch {t.shape} vs {r.shape}")
    return float(np.mean((r - t) ** 2))


def transformer_decompose(frame: Frame, p: ModelParams, method: Optional[str] = None
                          ) -> Decomposition:
    """Tonic is the pooled SCL mapped back to uS; phasic is the residue."""
    xn, mu, sd = normalize(frame.samples)
    out = forward(xn, p)
    tonic = out.scl * sd + mu
    label = method or f"feel-k{p.arch.pool_kernel}"
    return Decomposition(tonic, frame.samples - tonic, frame.index, label)


def with_pool_kernel(arch: ArchConfig, kernel: int) -> ArchConfig:
    return replace(arch, pool_kernel=kernel)
