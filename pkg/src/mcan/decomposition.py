"""Aligned/conflict split of a fused representation by truncated SVD.

For a fused matrix F = U S V^T the aligned part keeps the k largest singular
triplets and the conflict part keeps the rest.  Gradients treat the singular
subspaces as constants of the forward pass:

    aligned  = P_U F P_V,      P_U = U_k U_k^T,  P_V = V_k V_k^T
    conflict = F - aligned

which equals the truncated reconstructions in the forward direction and avoids
the 1/(s_i^2 - s_j^2) terms of exact SVD derivatives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

# truncation used at full scale; smaller fused matrices fall back to k_ratio
DEFAULT_K = 44


@dataclass
class SplitResult:
    aligned: T.Tensor
    conflict: T.Tensor
    k_used: int
    spectrum: T.Tensor


@dataclass
class BatchSplit:
    aligned: T.Tensor
    conflict: T.Tensor
    k_used: list[int]
    spectra: list[np.ndarray]
    projections: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)


def resolve_k(h: int, k: int | None = None, k_ratio: float = 0.6) -> int:
    """Number of singular triplets kept as aligned.

    With no explicit ``k``: 44 when the spectrum is longer than 44, otherwise
    ceil(k_ratio * h).  Always clamped to [1, h - 1] so the conflict part is
    never empty.
    """
    if h < 2:
        raise T.ShapeError(f"split needs at least 2 singular values, got h={h}")
    if k is None:
        k = DEFAULT_K if h > DEFAULT_K else math.ceil(k_ratio * h)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return min(k, h - 1)


def _projections(f: np.ndarray, k: int | None, k_ratio: float):
    u, s, vt = T.svd_array(f)
    kk = resolve_k(len(s), k, k_ratio)
    uk, vk = u[:, :kk], vt[:kk].T
    return uk @ uk.T, vk @ vk.T, kk, s


def split_aligned_conflict(f: T.Tensor, k: int | None = None, k_ratio: float = 0.6) -> SplitResult:
    """Split a single (m, n) matrix."""
    if f.ndim != 2 or min(f.shape) < 2:
        raise T.ShapeError(f"split_aligned_conflict needs an (m, n) matrix with m, n >= 2, got {f.shape}")
    pu, pv, kk, s = _projections(f.data, k, k_ratio)
    aligned = T.matmul(T.matmul(T.Tensor(pu), f), T.Tensor(pv))
    return SplitResult(aligned, f - aligned, kk, T.Tensor(s))


def split_batch(f: T.Tensor, mask: np.ndarray | None = None, k: int | None = None,
                k_ratio: float = 0.6, frozen: tuple[np.ndarray, np.ndarray] | None = None) -> BatchSplit:
    """Per-sample split of a padded batch (B, m, n).

    Only rows where ``mask`` holds enter each sample's SVD; padded rows stay
    zero in both parts.  ``frozen`` replays previously computed projections
    instead of recomputing the SVD (used by finite-difference checks).
    """
    b, m, n = f.shape
    if mask is None:
        mask = np.ones((b, m), bool)
    mask = np.asarray(mask, bool)
    if frozen is not None:
        pu, pv = frozen
        k_used, spectra = [], []
    else:
        pu = np.zeros((b, m, m), dtype=f.data.dtype)
        pv = np.zeros((b, n, n), dtype=f.data.dtype)
        k_used, spectra = [], []
        for i in range(b):
            rows = np.flatnonzero(mask[i])
            if len(rows) < 2 or n < 2:
                raise T.ShapeError(f"sample {i}: split needs m, n >= 2 (got {len(rows)} x {n})")
            pu_i, pv_i, kk, s = _projections(f.data[i, rows], k, k_ratio)
            pu[i][np.ix_(rows, rows)] = pu_i
            pv[i] = pv_i
            k_used.append(kk)
            spectra.append(s)
    aligned = T.matmul(T.matmul(T.Tensor(pu), f), T.Tensor(pv))
    return BatchSplit(aligned, f - aligned, k_used, spectra, (pu, pv))


def split_norms(f: np.ndarray, k: int | None = None, k_ratio: float = 0.6) -> dict:
    """Spectrum and Frobenius norms of a split, as plain JSON-ready values."""
    res = split_aligned_conflict(T.Tensor(np.asarray(f, dtype=np.float64)), k, k_ratio)
    return {
        "shape": list(np.shape(f)),
        "k_used": res.k_used,
        "spectrum": res.spectrum.data.tolist(),
        "norm_input": float(np.linalg.norm(f)),
        "norm_aligned": float(np.linalg.norm(res.aligned.data)),
        "norm_conflict": float(np.linalg.norm(res.conflict.data)),
    }
