"""Finite-difference check of every parameter block of the full objective.

The loss is re-evaluated with the SVD projections of the unperturbed pass held
fixed, which is the gradient the backward pass defines for the split.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .config import effective_beta, synth_config
from .data import collate, generate_synthetic, raw_widths
from .model import forward_full, init_params
from .training import model_config


@dataclass
class BlockResult:
    name: str
    size: int
    checked: int
    max_abs_err: float
    rel_err: float
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    """max|a - n| / (max(max|a|, max|n|) + atol) over the checked entries of a block."""
    diff = float(np.max(np.abs(analytic - numeric)))
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return diff / (scale + atol)


def check_gradients(batch, params, mcfg, alpha: float, beta: float, step: float = 1e-5,
                    tol: float = 1e-4, max_entries: int | None = 12, seed: int = 0) -> list[BlockResult]:
    params.zero_grad()
    trace, rep = forward_full(batch, params, mcfg, alpha, beta)
    T.backward(rep.tensor)
    frozen = trace.projections
    rng = np.random.default_rng(seed)

    weights = np.array([1.0, alpha, alpha, beta, beta])

    def loss_at() -> np.ndarray:
        # components are differenced separately: the O(1) main term would
        # otherwise swamp the small conflict-branch gradients in round-off
        with T.no_grad():
            r = forward_full(batch, params, mcfg, alpha, beta, frozen=frozen)[1]
        return np.array([r.main, r.oc_micro, r.oc_macro, r.diff_micro, r.diff_macro])

    results = []
    for name, t in params.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            numeric[j] = float(weights @ (up - down)) / (2 * step)
        analytic = grad.reshape(-1)[idx]
        err = relative_error(analytic, numeric)
        results.append(BlockResult(name, int(flat.size), len(idx),
                                   float(np.max(np.abs(analytic - numeric))), err, err <= tol))
    return results


def gradcheck_from_config(cfg: dict) -> dict:
    """Two-sample synthetic batch, small 64-bit model, every parameter block."""
    gc = cfg["gradcheck"]
    synth = synth_config({**cfg["synth"], **gc["synth"], "seed": gc["seed"]})
    samples = generate_synthetic(synth)[:2]
    batch = collate(samples)
    mcfg = model_config(cfg, raw_widths(samples), gc["model"])
    params = init_params(mcfg, gc["seed"], dtype=np.float64)
    blocks = check_gradients(batch, params, mcfg, cfg["loss"]["alpha"], effective_beta(cfg),
                             gc["step"], gc["tol"], gc["max_entries"], gc["seed"])
    return {
        "tol": gc["tol"],
        "passed": all(b.passed for b in blocks),
        "max_rel_err": max(b.rel_err for b in blocks),
        "blocks": [asdict(b) for b in blocks],
    }
