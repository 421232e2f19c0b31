"""Unsupervised training (reconstruction MSE, Adam) and finite-difference gradient checks."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, DataError, NumericError, TrainingDiverged
from ..signals import Frame
from .model import (TOY_ARCH, ArchConfig, ModelParams, forward_tensors, init_params,
                    linear_scr_branch, mse_loss, normalize, avg_pool_scl)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.epochs < 0:
            raise ConfigurationError(f"invalid training config {self}")


class Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.t = 0

    def step(self):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params.tensors.items():
            if p.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * p.grad
            v *= c.beta2
            v += (1.0 - c.beta2) * p.grad * p.grad
            p.data -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def _stack(dataset) -> np.ndarray:
    rows = [f.samples if isinstance(f, Frame) else np.asarray(f, dtype=np.float64)
            for f in dataset]
    if not rows:
        raise DataError("training dataset is empty")
    return np.vstack(rows)


def batch_loss(X: np.ndarray, params: ModelParams):
    """Reconstruction MSE of a normalised batch, as a graph-carrying Tensor."""
    _, _, recon = forward_tensors(X, params)
    return mse_loss(X, recon)


def train(dataset: Sequence, config: TrainConfig = TrainConfig(),
          arch: ArchConfig = ArchConfig(), params: Optional[ModelParams] = None,
          progress: Optional[Callable[[int, float], None]] = None
          ) -> Tuple[ModelParams, List[float]]:
    """Fit the SCR branch so that ``scl + scr`` reconstructs each normalised frame.

    Frames are z-scored individually. Batches are drawn from a seeded
    permutation every epoch, so a fixed seed reproduces the loss curve
    bit for bit. The returned curve holds one mean loss per epoch.
    Raises TrainingDiverged if the epoch loss exceeds ten times the first
    epoch's for three epochs running.
    """
    X = _stack(dataset)
    Xn, _, _ = normalize(X)
    if params is None:
        params = init_params(arch, config.seed)
    opt = Adam(params, config)
    rng = np.random.default_rng(config.seed)
    curve: List[float] = []
    bad = 0
    n = Xn.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            params.zero_grad()
            loss = batch_loss(Xn[idx], params)
            loss.backward()
            opt.step()
            if not params.all_finite():
                raise NumericError(f"non-finite parameter after epoch {epoch} step {opt.t}")
            total += float(loss.data) * idx.size
        epoch_loss = total / n
        curve.append(epoch_loss)
        if progress is not None:
            progress(epoch, epoch_loss)
        bad = bad + 1 if epoch_loss > 10.0 * curve[0] else 0
        if bad >= 3:
            raise TrainingDiverged(
                f"loss {epoch_loss:.4g} above 10x initial {curve[0]:.4g} for 3 epochs", curve)
    params.zero_grad()
    return params, curve


def evaluate_mse(dataset: Sequence, params: ModelParams) -> float:
    """Mean reconstruction MSE over normalised frames (no graph kept)."""
    Xn, _, _ = normalize(_stack(dataset))
    losses = [float(batch_loss(Xn[i:i + 8], params).data) * Xn[i:i + 8].shape[0]
              for i in range(0, Xn.shape[0], 8)]
    return sum(losses) / Xn.shape[0]


# -- gradient check ---------------------------------------------------------------

@dataclass
class GradcheckResult:
    max_rel_error: float
    n_coords: int
    worst: Tuple[str, int]


def _toy_batch(arch: ArchConfig, rng: np.random.Generator, batch: int) -> np.ndarray:
    # smooth random walks, normalised like real frames
    x = np.cumsum(rng.normal(size=(batch, arch.seq_len)), axis=1)
    return normalize(x)[0]


def gradcheck(params: Optional[ModelParams] = None, arch: ArchConfig = TOY_ARCH,
              seed: int = 0, n_coords: int = 200, step: float = 1e-5,
              linear_only: bool = False, batch: int = 2) -> GradcheckResult:
    """Compare backprop gradients with central differences on random coordinates.

    Relative error per coordinate is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)``.
    With ``linear_only`` the loss goes through the embedding, one series
    decomposition and the output projection, bypassing attention; only
    parameters on that path are sampled. The pooling branch has no
    parameters and is never sampled.
    """
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(arch, seed)
    X = _toy_batch(params.arch, rng, batch)

    if linear_only:
        names = ["embed.weight", "out.weight", "out.bias"]

        def loss_fn():
            scr = linear_scr_branch(X, params)
            return mse_loss(X, scr + avg_pool_scl(X, params.arch.pool_kernel))
    else:
        names = params.names()

        def loss_fn():
            return batch_loss(X, params)

    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {n: (params[n].grad.copy() if params[n].grad is not None
                    else np.zeros_like(params[n].data)) for n in names}
    params.zero_grad()

    coords = [(n, i) for n in names for i in range(params[n].data.size)]
    pick = rng.choice(len(coords), size=min(n_coords, len(coords)), replace=False)
    worst, worst_at = 0.0, ("", -1)
    for j in sorted(pick):
        name, i = coords[j]
        flat = params[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn().data)
        flat[i] = orig - step
        down = float(loss_fn().data)
        flat[i] = orig
        g_fd = (up - down) / (2.0 * step)
        g_ad = float(analytic[name].reshape(-1)[i])
        err = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)
        if err > worst:
            worst, worst_at = err, (name, int(i))
    return GradcheckResult(worst, int(len(pick)), worst_at)
