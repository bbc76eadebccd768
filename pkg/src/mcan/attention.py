"""Cross-modal multi-head attention, Cross-Transformer layers and MSIN stacks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamStore


@dataclass(frozen=True)
class MsinConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 32
    head_dim: int = 8
    ffn_hidden: int = 64
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("layers", "heads", "model_dim", "head_dim", "ffn_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"MsinConfig.{name} must be positive")


@dataclass
class MsinOutput:
    fused: T.Tensor
    mask: np.ndarray


def add_attention_params(params: ParamStore, prefix: str, d: int, heads: int, head_dim: int) -> None:
    width = heads * head_dim
    params.add(f"{prefix}.w_q", (d, width))
    params.add(f"{prefix}.w_k", (d, width))
    params.add(f"{prefix}.w_v", (d, width))
    params.add(f"{prefix}.w_o", (width, d))


def add_ffn_params(params: ParamStore, prefix: str, d_in: int, hidden: int, d_out: int) -> None:
    params.add(f"{prefix}.w1", (d_in, hidden))
    params.add(f"{prefix}.b1", (hidden,), init="zeros")
    params.add(f"{prefix}.w2", (hidden, d_out))
    params.add(f"{prefix}.b2", (d_out,), init="zeros")


def add_layer_params(params: ParamStore, prefix: str, cfg: MsinConfig) -> None:
    d = cfg.model_dim
    for stream in ("x", "y"):
        p = f"{prefix}.{stream}"
        add_attention_params(params, f"{p}.attn", d, cfg.heads, cfg.head_dim)
        params.add(f"{p}.ln1.g", (d,), init="ones")
        params.add(f"{p}.ln1.b", (d,), init="zeros")
        add_ffn_params(params, f"{p}.ffn", d, cfg.ffn_hidden, d)
        params.add(f"{p}.ln2.g", (d,), init="ones")
        params.add(f"{p}.ln2.b", (d,), init="zeros")


def add_msin_params(params: ParamStore, prefix: str, cfg: MsinConfig) -> None:
    for i in range(cfg.layers):
        add_layer_params(params, f"{prefix}.layer{i}", cfg)


def ffn(x: T.Tensor, params: ParamStore, prefix: str) -> T.Tensor:
    hidden = T.gelu(T.add_bias(T.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add_bias(T.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _as_batch(x: T.Tensor) -> tuple[T.Tensor, bool]:
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    return x, False


def _split_heads(x: T.Tensor, heads: int, head_dim: int) -> T.Tensor:
    b, n, _ = x.shape
    return T.permute(T.reshape(x, (b, n, heads, head_dim)), (0, 2, 1, 3))


def cross_attention(q_in: T.Tensor, kv_in: T.Tensor, params: ParamStore, prefix: str,
                    heads: int, head_dim: int, key_mask: np.ndarray | None = None,
                    return_weights: bool = False):
    """Multi-head attention with queries from ``q_in`` and keys/values from ``kv_in``.

    Accepts (n, d) or (batch, n, d) inputs.  ``key_mask`` marks valid keys
    (shape (n_k,) or (batch, n_k)); masked keys get zero weight.
    """
    q_in, squeeze = _as_batch(q_in)
    kv_in, _ = _as_batch(kv_in)
    b, n_q, d = q_in.shape
    n_k = kv_in.shape[1]
    if kv_in.shape[2] != d or kv_in.shape[0] != b:
        raise T.ShapeError(f"cross_attention: query {q_in.shape} vs key/value {kv_in.shape}")
    q = _split_heads(T.matmul(q_in, params[f"{prefix}.w_q"]), heads, head_dim)
    k = _split_heads(T.matmul(kv_in, params[f"{prefix}.w_k"]), heads, head_dim)
    v = _split_heads(T.matmul(kv_in, params[f"{prefix}.w_v"]), heads, head_dim)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(head_dim))
    mask = None
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool).reshape(b, n_k)
        mask = km[:, None, None, :]
    weights = T.softmax_rows(scores, mask)
    ctx = T.permute(T.matmul(weights, v), (0, 2, 1, 3))
    out = T.matmul(T.reshape(ctx, (b, n_q, heads * head_dim)), params[f"{prefix}.w_o"])
    if squeeze:
        out = T.reshape(out, (n_q, d))
    if return_weights:
        return out, weights
    return out


def _stream_update(x: T.Tensor, other: T.Tensor, params: ParamStore, prefix: str,
                   cfg: MsinConfig, mask_x, mask_other) -> T.Tensor:
    attn = cross_attention(x, other, params, f"{prefix}.attn", cfg.heads, cfg.head_dim, mask_other)
    h = T.layer_norm(x + attn, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], cfg.ln_eps)
    out = T.layer_norm(h + ffn(h, params, f"{prefix}.ffn"),
                       params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"], cfg.ln_eps)
    if mask_x is not None:
        out = T.apply_mask(out, mask_x)
    return out


def cross_transformer_layer(x: T.Tensor, y: T.Tensor, params: ParamStore, prefix: str,
                            cfg: MsinConfig, mask_x=None, mask_y=None) -> tuple[T.Tensor, T.Tensor]:
    """One bidirectional layer: x attends to y and y attends to x, each with its own weights.

    Both updates read the previous layer's streams.
    """
    x, squeeze = _as_batch(x)
    y, _ = _as_batch(y)
    new_x = _stream_update(x, y, params, f"{prefix}.x", cfg, mask_x, mask_y)
    new_y = _stream_update(y, x, params, f"{prefix}.y", cfg, mask_y, mask_x)
    if squeeze:
        new_x = T.reshape(new_x, new_x.shape[1:])
        new_y = T.reshape(new_y, new_y.shape[1:])
    return new_x, new_y


def msin_forward(x: T.Tensor, y: T.Tensor, cfg: MsinConfig, params: ParamStore, prefix: str,
                 mask_x=None, mask_y=None) -> MsinOutput:
    """Stack of ``cfg.layers`` Cross-Transformer layers; final streams concatenated
    along time, x first."""
    x, squeeze = _as_batch(x)
    y, _ = _as_batch(y)
    b = x.shape[0]
    mx = np.ones(x.shape[:2], bool) if mask_x is None else np.asarray(mask_x, bool).reshape(b, -1)
    my = np.ones(y.shape[:2], bool) if mask_y is None else np.asarray(mask_y, bool).reshape(b, -1)
    for i in range(cfg.layers):
        x, y = cross_transformer_layer(x, y, params, f"{prefix}.layer{i}", cfg, mx, my)
    fused = T.concat([x, y], axis=1)
    mask = np.concatenate([mx, my], axis=1)
    if squeeze:
        return MsinOutput(T.reshape(fused, fused.shape[1:]), mask[0])
    return MsinOutput(fused, mask)
