"""Adam with parameter groups and global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .params import ParamStore

# published learning rates: pretrained text encoder vs everything else
LR_TEXT = 5e-5
LR = 1e-4


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float | dict[str, float], betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update.

    ``lr`` is a scalar or a per-parameter mapping.  Parameters absent from
    ``grads`` are left untouched.
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise T.ShapeError(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if m.shape != p.shape:
            raise T.ShapeError(f"{name}: optimizer state {m.shape} vs param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step_lr = lr[name] if isinstance(lr, dict) else lr
        p -= step_lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


class Adam:
    """Two learning-rate groups: ``encoder.text.*`` and everything else."""

    def __init__(self, params: ParamStore, lr: float = LR, lr_text: float = LR_TEXT,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = 1.0, text_prefix: str = "encoder.text."):
        self.params = params
        self.betas = tuple(betas)
        self.eps = eps
        self.clip_norm = clip_norm
        self.lrs = {n: (lr_text if n.startswith(text_prefix) else lr) for n in params}
        self.state = AdamState()

    def step(self) -> float:
        grads = {n: t.grad.copy() for n, t in self.params.items() if t.grad is not None}
        norm = clip_grad_norm(grads, self.clip_norm) if self.clip_norm else float("nan")
        adam_step({n: t.data for n, t in self.params.items()}, grads, self.state,
                  self.lrs, self.betas, self.eps)
        return norm
