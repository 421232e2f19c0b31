"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the decomposer needs are provided. Each op computes its
value eagerly and records a closure that maps the output gradient to input
gradients; ``Tensor.backward`` replays those closures in reverse
topological order. Everything is float64.
"""
from __future__ import annotations

from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from ..errors import GraphError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: Tuple["Tensor", ...] = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    # -- graph traversal ---------------------------------------------------

    def _topo(self) -> List["Tensor"]:
        """Nodes reachable from self in topological order (inputs first).

        Iterative DFS with three colours so deep graphs do not hit the
        recursion limit and a cycle is reported instead of looping.
        """
        order: List[Tensor] = []
        state = {}
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            key = id(node)
            if done:
                state[key] = 2
                order.append(node)
                continue
            s = state.get(key, 0)
            if s == 2:
                continue
            if s == 1:
                raise GraphError(f"cycle detected at {node!r}")
            state[key] = 1
            stack.append((node, True))
            for p in node._parents:
                ps = state.get(id(p), 0)
                if ps == 1:
                    raise GraphError(f"cycle detected at {p!r}")
                if ps == 0:
                    stack.append((p, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if not self.requires_grad:
            raise GraphError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(self._topo()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node._parents:
                    raise GraphError(f"{node!r} has parents but no backward rule")
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, True, "", tuple(parents), backward)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = x * cdf

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)
    return _make(out, (a,), back)


# -- reductions and shape ops -------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(out, (a,), back)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.roll(a.data, shift, axis), (a,), lambda g: (np.roll(g, -shift, axis),))


def getitem(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return _make(a.data[idx], (a,), back)


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is a 2-D weight and ``a`` has any leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    out = a.data @ b.data

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb
    return _make(out, (a, b), back)


# -- sequence ops -------------------------------------------------------------

def _window_sum_full(x: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Sums over every length-k window of x along axis (len - k + 1 outputs)."""
    c = np.cumsum(x, axis=axis)
    zero_shape = list(x.shape)
    zero_shape[axis] = 1
    c = np.concatenate([np.zeros(zero_shape), c], axis=axis)
    n = x.shape[axis]
    hi = np.take(c, np.arange(k, n + 1), axis=axis)
    lo = np.take(c, np.arange(0, n - k + 1), axis=axis)
    return hi - lo


def moving_average_np(x: np.ndarray, kernel: int, axis: int = -1) -> np.ndarray:
    """Centred moving average with edge-replicate padding; output keeps length."""
    if kernel % 2 != 1:
        raise ValueError(f"kernel must be odd, got {kernel}")
    axis = axis % x.ndim
    half = (kernel - 1) // 2
    if half == 0:
        return x.copy()
    pad = [(0, 0)] * x.ndim
    pad[axis] = (half, half)
    xp = np.pad(x, pad, mode="edge")
    return _window_sum_full(xp, kernel, axis) / kernel


def _moving_average_adjoint(g: np.ndarray, kernel: int, axis: int) -> np.ndarray:
    half = (kernel - 1) // 2
    n = g.shape[axis]
    # scatter each output's 1/k share onto the padded input positions
    pad = [(0, 0)] * g.ndim
    pad[axis] = (kernel - 1, kernel - 1)
    gp = np.pad(g, pad, mode="constant")
    gpad = _window_sum_full(gp, kernel, axis) / kernel  # length n + 2*half
    idx_front = np.arange(0, half + 1)
    idx_back = np.arange(n + half - 1, n + 2 * half)
    core = np.take(gpad, np.arange(half, n + half), axis=axis).copy()
    front = np.take(gpad, idx_front, axis=axis).sum(axis=axis)
    back = np.take(gpad, idx_back, axis=axis).sum(axis=axis)
    sl_first = [slice(None)] * g.ndim
    sl_first[axis] = 0
    sl_last = [slice(None)] * g.ndim
    sl_last[axis] = n - 1
    core[tuple(sl_first)] = front
    core[tuple(sl_last)] = back if n > 1 else front + back - np.take(gpad, half, axis=axis)
    return core


def moving_average(a: Tensor, kernel: int, axis: int = 1) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.ndim
    if (kernel - 1) // 2 == 0:
        return a
    out = moving_average_np(a.data, kernel, axis)
    return _make(out, (a,), lambda g: (_moving_average_adjoint(g, kernel, axis),))


def _shift_sum(x: np.ndarray, lags: np.ndarray, weights: np.ndarray, sign: int) -> np.ndarray:
    """out[b, h, t] = sum_i weights[b, h, i] * x[b, h, (t - sign * lags[b, h, i]) mod L].

    Circular shifts are done with two slice copies per (batch, head, lag);
    that is much cheaper than a fancy-index gather at these sizes.
    """
    B, H, L = x.shape[:3]
    out = np.zeros_like(x)
    for b in range(B):
        for h in range(H):
            xs, acc = x[b, h], out[b, h]
            for lag, wi in zip(lags[b, h], weights[b, h]):
                s = (sign * int(lag)) % L
                if s == 0:
                    acc += wi * xs
                else:
                    acc[s:] += wi * xs[:L - s]
                    acc[:s] += wi * xs[L - s:]
    return out


def _shifted_dots(g: np.ndarray, x: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """dots[b, h, i] = sum_{t,e} g[b, h, t] * x[b, h, (t - lags[b, h, i]) mod L]."""
    B, H, L = x.shape[:3]
    dots = np.empty(lags.shape)
    for b in range(B):
        for h in range(H):
            gs, xs = g[b, h], x[b, h]
            for i, lag in enumerate(lags[b, h]):
                s = int(lag) % L
                if s == 0:
                    dots[b, h, i] = np.vdot(gs, xs)
                else:
                    dots[b, h, i] = np.vdot(gs[s:], xs[:L - s]) + np.vdot(gs[:s], xs[L - s:])
    return dots


def autocorrelation(q: Tensor, k: Tensor, v: Tensor, top_k: int) -> Tensor:
    """Lag-correlation attention for inputs shaped [batch, length, heads, channels].

    Per (batch, head): ``R(tau) = mean_{t,e} q[t, e] * k[t - tau, e]`` over
    circular lags, the ``top_k`` largest lags are kept (ties go to the
    smaller lag), their scores are softmax-normalised and the output is the
    weighted sum of ``v`` rolled forward by each lag,
    ``out[t] = sum_i w_i * v[t - tau_i]``.

    Selection is piecewise constant, so gradients flow only through the
    selected scores and through ``v``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    B, L, H, E = q.shape
    if not (1 <= top_k <= L):
        raise ValueError(f"top_k must be in [1, {L}], got {top_k}")
    to_bhle = (0, 2, 1, 3)
    qt = np.ascontiguousarray(q.data.transpose(to_bhle))
    kt = np.ascontiguousarray(k.data.transpose(to_bhle))
    vt = np.ascontiguousarray(v.data.transpose(to_bhle))
    R = lag_scores(qt, kt)
    lags = np.argsort(-R, axis=-1, kind="stable")[..., :top_k]  # B H K
    scores = np.take_along_axis(R, lags, axis=-1)
    w = np.exp(scores - scores.max(axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    out = _shift_sum(vt, lags, w, +1)
    c = 1.0 / (L * E)

    def back(g):
        gt = np.ascontiguousarray(g.transpose(to_bhle))
        dv = _shift_sum(gt, lags, w, -1)
        dw = _shifted_dots(gt, vt, lags)
        dscore = c * w * (dw - np.sum(w * dw, axis=-1, keepdims=True))
        dq = _shift_sum(kt, lags, dscore, +1)
        dk = _shift_sum(qt, lags, dscore, -1)
        return dq.transpose(to_bhle), dk.transpose(to_bhle), dv.transpose(to_bhle)

    return _make(out.transpose(to_bhle), (q, k, v), back)


def lag_scores(qt: np.ndarray, kt: np.ndarray) -> np.ndarray:
    """R[..., tau] = mean over (t, e) of q[t, e] * k[(t - tau) mod L, e].

    Inputs are [..., L, E]; computed in the frequency domain.
    """
    L, E = qt.shape[-2], qt.shape[-1]
    Qf = np.fft.rfft(qt, axis=-2)
    Kf = np.fft.rfft(kt, axis=-2)
    S = np.sum(Qf * np.conj(Kf), axis=-1)
    return np.fft.irfft(S, n=L, axis=-1) / (L * E)


def parameters_grads(params: Iterable[Tensor]) -> List[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
