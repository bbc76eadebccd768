"""Conflict modelling branch: conflict-aware cross-attention (CACA), pooled
conflict features, prediction heads and the discrepancy losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import add_ffn_params, ffn
from .params import ParamStore

# (name, query source, key/value source) for the four micro attentions
MICRO_CACA = (
    ("tv_t", "F_tv_conflict", "F_t"),
    ("ta_t", "F_ta_conflict", "F_t"),
    ("tv_v", "F_tv_conflict", "F_v"),
    ("ta_a", "F_ta_conflict", "F_a"),
)
MACRO_CACA = (
    ("ta", "Z_c_conflict", "F_ta_aligned"),
    ("tv", "Z_c_conflict", "F_tv_aligned"),
)
BRANCH_HEADS = ("t", "v", "a", "tv", "ta")


@dataclass
class ConflictFeatures:
    f_t_prime: T.Tensor
    f_v_prime: T.Tensor
    f_a_prime: T.Tensor
    f_tv_dprime: T.Tensor
    f_ta_dprime: T.Tensor


@dataclass
class BranchPredictions:
    y_t: T.Tensor
    y_v: T.Tensor
    y_a: T.Tensor
    y_tv: T.Tensor
    y_ta: T.Tensor


def add_caca_params(params: ParamStore, prefix: str, d: int, d_c: int) -> None:
    params.add(f"{prefix}.w_q", (d, d_c))
    params.add(f"{prefix}.w_k", (d, d_c))
    params.add(f"{prefix}.w_v", (d, d))


def add_branch_params(params: ParamStore, d: int, d_c: int, head_hidden: int) -> None:
    for name, _, _ in MICRO_CACA:
        add_caca_params(params, f"cmb.micro_caca.{name}", d, d_c)
    for name, _, _ in MACRO_CACA:
        add_caca_params(params, f"cmb.macro_caca.{name}", d, d_c)
    for name in BRANCH_HEADS:
        add_ffn_params(params, f"cmb.head.{name}", d, head_hidden, 1)


def micro_caca(conflict: T.Tensor, unimodal: T.Tensor, params: ParamStore, prefix: str,
               key_mask: np.ndarray | None = None) -> T.Tensor:
    """Single-head attention: queries from a conflict constituent, keys/values
    from the representation being enriched.  Output length follows ``conflict``.

    The same block serves the macro level with aligned bimodal keys/values.
    """
    w_q = params[f"{prefix}.w_q"]
    d_c = w_q.shape[1]
    squeeze = conflict.ndim == 2
    if squeeze:
        conflict = T.reshape(conflict, (1,) + conflict.shape)
        unimodal = T.reshape(unimodal, (1,) + unimodal.shape)
    q = T.matmul(conflict, w_q)
    k = T.matmul(unimodal, params[f"{prefix}.w_k"])
    v = T.matmul(unimodal, params[f"{prefix}.w_v"])
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_c))
    mask = None
    if key_mask is not None:
        km = np.asarray(key_mask, bool).reshape(unimodal.shape[0], unimodal.shape[1])
        mask = km[:, None, :]
    out = T.matmul(T.softmax_rows(scores, mask), v)
    return T.reshape(out, out.shape[1:]) if squeeze else out


def build_conflict_features(trace: dict, masks: dict, params: ParamStore) -> ConflictFeatures:
    """Pool the CACA outputs into five width-d vectors per sample.

    ``trace`` maps the main-branch names (F_t, F_tv_conflict, ...) to (B, n, d)
    tensors; ``masks`` maps the same names to their (B, n) validity masks.
    """
    needed = {src for _, a, b in MICRO_CACA + MACRO_CACA for src in (a, b)}
    missing = sorted(needed - set(trace))
    if missing:
        raise KeyError(f"trace is missing {missing}")

    def pooled(group: str, name: str, q_src: str, kv_src: str) -> T.Tensor:
        out = micro_caca(trace[q_src], trace[kv_src], params, f"cmb.{group}.{name}", masks[kv_src])
        return T.masked_mean(out, masks[q_src])

    # pool each textual view before averaging the two
    t_from_tv = pooled("micro_caca", "tv_t", "F_tv_conflict", "F_t")
    t_from_ta = pooled("micro_caca", "ta_t", "F_ta_conflict", "F_t")
    return ConflictFeatures(
        f_t_prime=T.scale(t_from_tv + t_from_ta, 0.5),
        f_v_prime=pooled("micro_caca", "tv_v", "F_tv_conflict", "F_v"),
        f_a_prime=pooled("micro_caca", "ta_a", "F_ta_conflict", "F_a"),
        f_tv_dprime=pooled("macro_caca", "tv", "Z_c_conflict", "F_tv_aligned"),
        f_ta_dprime=pooled("macro_caca", "ta", "Z_c_conflict", "F_ta_aligned"),
    )


def prediction_head(f: T.Tensor, params: ParamStore, prefix: str) -> T.Tensor:
    """FFN regressor d -> hidden -> 1; (d,) gives a scalar, (B, d) gives (B,)."""
    single = f.ndim == 1
    if single:
        f = T.reshape(f, (1,) + f.shape)
    out = ffn(f, params, prefix)
    return T.reshape(out, ()) if single else T.reshape(out, out.shape[:-1])


def branch_predictions(feats: ConflictFeatures, params: ParamStore) -> BranchPredictions:
    return BranchPredictions(
        y_t=prediction_head(feats.f_t_prime, params, "cmb.head.t"),
        y_v=prediction_head(feats.f_v_prime, params, "cmb.head.v"),
        y_a=prediction_head(feats.f_a_prime, params, "cmb.head.a"),
        y_tv=prediction_head(feats.f_tv_dprime, params, "cmb.head.tv"),
        y_ta=prediction_head(feats.f_ta_dprime, params, "cmb.head.ta"),
    )


def _dot(a: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.sum_axis(T.mul(a, b), -1)


def _sum(terms: list[T.Tensor]) -> T.Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def orthogonality_loss_micro(f_t: T.Tensor, f_v: T.Tensor, f_a: T.Tensor) -> T.Tensor:
    """Sum over the six ordered pairs of squared cross-Gram norms.

    For pooled vectors the cross-Gram is the dot product.  Works on (d,) or
    per sample on (B, d).
    """
    feats = (f_t, f_v, f_a)
    return _sum([T.square(_dot(p, q)) for i, p in enumerate(feats)
                 for j, q in enumerate(feats) if i != j])


def diff_loss_micro(y_t: T.Tensor, y_v: T.Tensor, y_a: T.Tensor) -> T.Tensor:
    preds = (y_t, y_v, y_a)
    return _sum([T.square(p - q) for i, p in enumerate(preds)
                 for j, q in enumerate(preds) if i != j])


def macro_losses(f_tv: T.Tensor, f_ta: T.Tensor, y_tv: T.Tensor, y_ta: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
    return T.square(_dot(f_tv, f_ta)), T.square(y_tv - y_ta)
