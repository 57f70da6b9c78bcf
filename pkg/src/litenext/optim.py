"""NAdam with L2 penalty, EMA target update, and reduce-on-plateau schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class NAdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum_decay: float = 0.004
    weight_decay: float = 0.0
    step: int = 0
    mu_product: float = 1.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def nadam_step(params: dict[str, Tensor], state: NAdamState) -> None:
    """One in-place NAdam update of every tensor in ``params`` from its ``.grad``.

    Momentum schedule mu_t = beta1 * (1 - 0.5 * 0.96 ** (t * psi)); the L2
    penalty enters as ``weight_decay * param`` added to the gradient.
    """
    missing = [k for k, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"missing gradient for parameter(s): {', '.join(missing)}")
    state.step += 1
    t = state.step
    b1, b2, psi = state.beta1, state.beta2, state.momentum_decay
    mu_t = b1 * (1.0 - 0.5 * 0.96 ** (t * psi))
    mu_next = b1 * (1.0 - 0.5 * 0.96 ** ((t + 1) * psi))
    state.mu_product *= mu_t
    mu_prod_next = state.mu_product * mu_next
    bias2 = 1.0 - b2**t
    c_grad = state.lr * (1.0 - mu_t) / (1.0 - state.mu_product)
    c_mom = state.lr * mu_next / (1.0 - mu_prod_next)
    for name, p in params.items():
        g = p.grad
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / bias2) + state.eps
        p.data -= ((c_grad * g + c_mom * m) / denom).astype(p.data.dtype, copy=False)


def ema_update(phi: dict[str, Tensor], theta: dict[str, Tensor], alpha: float) -> None:
    """phi <- alpha * phi + (1 - alpha) * theta, elementwise and in place."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if phi.keys() != theta.keys():
        raise ValueError(f"phi/theta name mismatch: {sorted(set(phi) ^ set(theta))}")
    for k, t in phi.items():
        src = theta[k].data
        if t.data.shape != src.shape:
            raise ShapeError(f"phi/theta shape mismatch for {k}: {t.data.shape} vs {src.shape}")
        t.data = (alpha * t.data + (1.0 - alpha) * src).astype(t.data.dtype, copy=False)


@dataclass
class PlateauScheduler:
    """Multiply lr by ``factor`` once ``patience`` consecutive epochs bring no
    improvement of at least ``threshold`` in the monitored loss."""

    lr: float
    patience: int = 30
    factor: float = 0.75
    threshold: float = 1e-6
    best: float = math.inf
    bad_epochs: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def plateau_scheduler_step(state: PlateauScheduler, val_loss: float) -> float:
    return state.step(val_loss)
