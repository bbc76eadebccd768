"""Unimodal front-ends: recurrent encoders for audio/visual and a projected or
passthrough text path (pretrained language models are out of scope)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .params import ParamStore


@dataclass
class ModalitySample:
    id: str
    label: float
    text: np.ndarray
    visual: np.ndarray
    audio: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("text", "visual", "audio"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise ValueError(f"sample {self.id}: {name} must be a non-empty 2-D matrix")
            setattr(self, name, arr)
        if not np.isfinite(self.label) or not -3.0 <= self.label <= 3.0:
            raise ValueError(f"sample {self.id}: label {self.label} outside [-3, 3]")


@dataclass
class EncodedSample:
    f_t: T.Tensor
    f_v: T.Tensor
    f_a: T.Tensor
    mask_t: np.ndarray
    mask_v: np.ndarray
    mask_a: np.ndarray


def add_lstm_params(params: ParamStore, prefix: str, d_in: int, d: int) -> None:
    params.add(f"{prefix}.w_x", (d_in, 4 * d))
    params.add(f"{prefix}.w_h", (d, 4 * d))
    params.add(f"{prefix}.b", (4 * d,), init="zeros")
    # forget gate starts open
    params[f"{prefix}.b"].data[d:2 * d] = 1.0


def add_text_params(params: ParamStore, d_raw: int, d: int, mode: str) -> None:
    if mode == "passthrough":
        if d_raw != d:
            raise T.ShapeError(f"passthrough text needs raw width {d_raw} == model dim {d}")
        return
    params.add("encoder.text.proj.w", (d_raw, d))
    params.add("encoder.text.proj.b", (d,), init="zeros")
    add_lstm_params(params, "encoder.text.lstm", d, d)


def lstm(seq: T.Tensor, params: ParamStore, prefix: str) -> T.Tensor:
    """Unidirectional single-layer LSTM over (B, n, d_in); returns hidden states (B, n, d).

    Zero initial state. Gate order in the packed weights is input, forget, cell, output.
    """
    w_x, w_h, b = params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"]
    if seq.shape[-1] != w_x.shape[0]:
        raise T.ShapeError(f"{prefix}: input width {seq.shape[-1]} != {w_x.shape[0]}")
    batch, steps = seq.shape[0], seq.shape[1]
    d = w_h.shape[0]
    xz = T.add_bias(T.matmul(seq, w_x), b)
    h = T.Tensor(np.zeros((batch, d), dtype=seq.data.dtype))
    c = h
    outs = []
    for t in range(steps):
        z = xz[:, t, :] + T.matmul(h, w_h) if t else xz[:, t, :]
        i = T.sigmoid(z[:, 0:d])
        f = T.sigmoid(z[:, d:2 * d])
        g = T.tanh(z[:, 2 * d:3 * d])
        o = T.sigmoid(z[:, 3 * d:4 * d])
        c = T.mul(i, g) if t == 0 else T.mul(f, c) + T.mul(i, g)
        h = T.mul(o, T.tanh(c))
        outs.append(T.reshape(h, (batch, 1, d)))
    return T.concat(outs, axis=1)


def _check_raw(seq: T.Tensor, width: int, what: str) -> None:
    if seq.ndim != 3:
        raise T.ShapeError(f"{what}: expected (batch, steps, width), got {seq.shape}")
    if seq.shape[-1] != width:
        raise T.ShapeError(f"{what}: raw width {seq.shape[-1]} != configured {width}")


def encode_text(text_seq: T.Tensor, params: ParamStore, mode: str, d: int,
                mask: np.ndarray | None = None) -> T.Tensor:
    """Text features F_t.

    ``passthrough`` returns precomputed features unchanged.  ``project`` applies
    a linear projection followed by a residual LSTM pass: out = P + LSTM(P).
    """
    squeeze = text_seq.ndim == 2
    if squeeze:
        text_seq = T.reshape(text_seq, (1,) + text_seq.shape)
    if mode == "passthrough":
        _check_raw(text_seq, d, "encode_text")
        out = text_seq
    elif mode == "project":
        _check_raw(text_seq, params["encoder.text.proj.w"].shape[0], "encode_text")
        proj = T.add_bias(T.matmul(text_seq, params["encoder.text.proj.w"]),
                          params["encoder.text.proj.b"])
        out = proj + lstm(proj, params, "encoder.text.lstm")
    else:
        raise ValueError(f"unknown text encoder mode {mode!r}")
    if mask is not None:
        out = T.apply_mask(out, mask)
    return T.reshape(out, out.shape[1:]) if squeeze else out


def encode_av(seq: T.Tensor, params: ParamStore, prefix: str,
              mask: np.ndarray | None = None) -> T.Tensor:
    """Visual/audio features: LSTM hidden sequence, padded steps zeroed."""
    squeeze = seq.ndim == 2
    if squeeze:
        seq = T.reshape(seq, (1,) + seq.shape)
    _check_raw(seq, params[f"{prefix}.w_x"].shape[0], "encode_av")
    out = lstm(seq, params, prefix)
    if mask is not None:
        out = T.apply_mask(out, mask)
    return T.reshape(out, out.shape[1:]) if squeeze else out
