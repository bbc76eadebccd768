"""Main regression loss and the weighted joint objective."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T

# trade-off weights reported for the published experiments
ALPHA = 1e-2
BETA = 1e-3


@dataclass
class LossReport:
    main: float
    oc_micro: float
    oc_macro: float
    diff_micro: float
    diff_macro: float
    total: float
    alpha: float
    beta: float
    tensor: T.Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("tensor")
        return d


def main_loss(y_hat: T.Tensor, y: T.Tensor) -> T.Tensor:
    """Mean squared error over the batch."""
    if y_hat.shape != y.shape:
        raise T.ShapeError(f"main_loss: {y_hat.shape} vs {y.shape}")
    if y_hat.data.size == 0:
        raise ValueError("main_loss: empty batch")
    return T.mean_all(T.square(y_hat - y))


def total_loss(main, oc_micro, oc_macro, diff_micro, diff_macro,
               alpha: float = ALPHA, beta: float = BETA) -> LossReport:
    """main + alpha * (oc_micro + oc_macro) + beta * (diff_micro + diff_macro).

    Components may be scalar tensors (the result keeps a differentiable
    ``tensor``) or plain floats.
    """
    parts = [p if isinstance(p, T.Tensor) else T.Tensor(np.asarray(float(p)))
             for p in (main, oc_micro, oc_macro, diff_micro, diff_macro)]
    for name, p in zip(("main", "oc_micro", "oc_macro", "diff_micro", "diff_macro"), parts):
        if p.data.size != 1:
            raise T.ShapeError(f"{name} must be a scalar")
        if not np.isfinite(p.data).all():
            raise T.NumericError(f"{name} is not finite")
    m, ocm, ocM, dm, dM = parts
    total = m + T.scale(ocm + ocM, alpha) + T.scale(dm + dM, beta)
    return LossReport(
        main=float(m.data), oc_micro=float(ocm.data), oc_macro=float(ocM.data),
        diff_micro=float(dm.data), diff_macro=float(dM.data), total=float(total.data),
        alpha=alpha, beta=beta, tensor=total,
    )
