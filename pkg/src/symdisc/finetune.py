"""Refining the eigenbasis by gradient descent on an MMD objective.

With the signs frozen, ``A_W = W diag(signs) W^T`` is optimised so that the
sample and its image under ``A_W`` look alike under a squared-exponential
kernel. Gradients are analytic; an orthogonality penalty keeps W near the
orthogonal group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericInstabilityError
from .rng import as_rng


@dataclass
class FinetuneConfig:
    epochs: int = 100
    learning_rate: float = 0.1
    momentum: float = 0.5
    batch: int = 1024
    ortho_penalty_weight: float = 0.1
    bandwidth: float = 3.0
    lr_backoff: float = 0.3
    max_restarts: int = 5
    dtype: str = "float32"  # kernel arithmetic precision; float32 is ~4x faster on CPU

    def validate(self) -> None:
        if self.epochs < 1 or self.batch < 2:
            raise InvalidArgumentError("epochs must be >= 1 and batch >= 2")
        if not (self.learning_rate > 0 and self.bandwidth > 0 and 0 < self.lr_backoff < 1):
            raise InvalidArgumentError("learning rate, bandwidth and backoff must be positive (backoff < 1)")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.ortho_penalty_weight < 0 or self.max_restarts < 0:
            raise InvalidArgumentError("penalty weight and max_restarts must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgumentError("dtype must be float32 or float64")


@dataclass
class FinetuneTrace:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    restarts: int = 0
    w: np.ndarray | None = None
    grad_norm: float = float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["epoch", "loss", "lr", "restarts"])
            for e, (loss, lr) in enumerate(zip(self.losses, self.lrs)):
                out.writerow([e, repr(float(loss)), repr(float(lr)), self.restarts])


def ortho_penalty(w) -> tuple[float, np.ndarray]:
    """``||W^T W - I||_F^2`` and its gradient ``4 W (W^T W - I)``."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvalidArgumentError("W must be square")
    e = w.T @ w - np.eye(len(w))
    return float((e * e).sum()), 4.0 * w @ e


def _gauss(a, b, scale):
    """Kernel matrix exp(-scale |a_i - b_j|^2) with a zeroed diagonal (self-pairs omitted).

    The exponent comes out of one product of augmented rows,
    [2s a, -s|a|^2, -1] . [b, 1, s|b|^2], so the only elementwise pass is the exp.
    """
    na = np.einsum("ij,ij->i", a, a)
    nb = np.einsum("ij,ij->i", b, b)
    one = np.ones((len(a), 1), dtype=a.dtype)
    left = np.hstack([(2 * scale) * a, (-scale * na)[:, None], -one])
    right = np.hstack([b, np.ones((len(b), 1), dtype=b.dtype), (scale * nb)[:, None]])
    k = np.dot(left, np.ascontiguousarray(right.T))
    np.exp(k, out=k)
    np.fill_diagonal(k, 0)
    return k


def mmd_loss_grad(w, signs, x, bandwidth: float, with_loss: bool = True):
    """Paired unbiased MMD^2 between ``x`` and ``x A_W`` (self-pairs omitted) and d/dW.

    Runs in the dtype of ``x``; returns float64 results.
    """
    dt = x.dtype
    n = len(x)
    w = np.asarray(w, dtype=dt)
    signs = np.asarray(signs, dtype=dt)
    a = (w * signs) @ w.T
    y = x @ a
    xt = np.ascontiguousarray(x.T)
    s = dt.type(1.0 / (2.0 * bandwidth))
    kyy = _gauss(y, y, s)
    kxy = _gauss(x, y, s)
    row_yy = kyy.sum(1)
    col_xy = kxy.sum(0)
    c = 1.0 / (n * (n - 1))
    loss = float("nan")
    if with_loss:
        kxx_sum = float(_gauss(x, x, s).sum(dtype=np.float64))
        loss = c * (kxx_sum + float(row_yy.sum(dtype=np.float64)) - 2 * float(col_xy.sum(dtype=np.float64)))
    # derivative of the kernel sums with respect to A
    lap = xt @ (row_yy[:, None] * x) - xt @ (kyy @ x)
    g_yy = (-2.0 / bandwidth) * (a @ lap)
    g_xy = (1.0 / bandwidth) * (xt @ (kxy @ x) - a @ (xt @ (col_xy[:, None] * x)))
    g = (c * (g_yy - 2 * g_xy)).astype(np.float64)
    grad = (g + g.T) @ np.asarray(w, dtype=np.float64) * np.asarray(signs, dtype=np.float64)
    return loss, grad


def total_loss_grad(w, signs, x, config: FinetuneConfig, with_loss: bool = True):
    loss, grad = mmd_loss_grad(w, signs, x, config.bandwidth, with_loss)
    if config.ortho_penalty_weight:
        pv, pg = ortho_penalty(w)
        loss += config.ortho_penalty_weight * pv
        grad = grad + config.ortho_penalty_weight * pg
    return loss, grad


def _attempt(x, signs, w_init, lr, config, rng):
    w = np.array(w_init, dtype=float)
    vel = np.zeros_like(w)
    losses = []
    n_batches = max(1, len(x) // config.batch)
    grad = np.zeros_like(w)
    for _ in range(config.epochs):
        batch_losses = []
        for idx in np.array_split(rng.permutation(len(x)), n_batches):
            loss, grad = total_loss_grad(w, signs, x[idx], config)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                return None, losses
            vel = config.momentum * vel - lr * grad
            w = w + vel
            batch_losses.append(loss)
        if not np.all(np.isfinite(w)):
            return None, losses
        losses.append(float(np.mean(batch_losses)))
    return (w, float(np.linalg.norm(grad))), losses


def finetune(x, signs, w_init, config: FinetuneConfig | None = None, rng=None) -> FinetuneTrace:
    """SGD with momentum from ``w_init``; on a non-finite value restart with a smaller step."""
    config = config or FinetuneConfig()
    config.validate()
    x = np.asarray(getattr(x, "values", x))
    w_init = np.asarray(w_init, dtype=float)
    signs = np.asarray(signs, dtype=float)
    d = x.shape[1]
    if w_init.shape != (d, d) or signs.shape != (d,):
        raise InvalidArgumentError("W must be d x d and signs length d")
    if np.abs(w_init.T @ w_init - np.eye(d)).max() > 1e-6:
        raise InvalidArgumentError("initial W must be orthonormal within 1e-6")
    if len(x) < 2:
        raise InvalidArgumentError("need at least 2 rows")
    xc = np.ascontiguousarray(x, dtype=config.dtype)
    streams = as_rng(rng).spawn(config.max_restarts + 1)
    lr = config.learning_rate
    last = []
    for restart, stream in enumerate(streams):
        result, losses = _attempt(xc, signs, w_init, lr, config, stream)
        if result is not None:
            w, gnorm = result
            return FinetuneTrace(losses, [lr] * len(losses), restart, w, gnorm)
        last = losses
        lr *= config.lr_backoff
    raise NumericInstabilityError(
        f"non-finite loss after {config.max_restarts} restarts",
        FinetuneTrace(last, [lr / config.lr_backoff] * len(last), config.max_restarts, None),
    )
