"""Full network: encoders, two Micro-MSINs, SVD splits, Macro-MSIN, main head
and (optionally) the conflict modelling branch."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attention import MsinConfig, add_ffn_params, add_msin_params, msin_forward
from .conflict import (add_branch_params, branch_predictions, build_conflict_features,
                       diff_loss_micro, macro_losses, orthogonality_loss_micro)
from .conflict import prediction_head
from .decomposition import split_batch
from .encoders import add_lstm_params, add_text_params, encode_av, encode_text
from .losses import ALPHA, BETA, LossReport, main_loss, total_loss
from .params import ParamStore

TRACE_NAMES = (
    "F_t", "F_v", "F_a",
    "F_ta", "F_tv",
    "F_ta_aligned", "F_ta_conflict", "F_tv_aligned", "F_tv_conflict",
    "Z_c_aligned", "Z_c_conflict",
    "F_t_prime", "F_v_prime", "F_a_prime",
    "F_tv_dprime", "F_ta_dprime",
    "y_main", "y_t", "y_v", "y_a", "y_tv", "y_ta",
)
SPLIT_SITES = ("ta", "tv", "c")


@dataclass
class ModelConfig:
    d: int = 32
    d_t_raw: int = 32
    d_v_raw: int = 16
    d_a_raw: int = 16
    text_encoder: str = "passthrough"
    micro_layers: int = 2
    macro_layers: int = 1
    heads: int = 4
    head_dim: int | None = None
    ffn_hidden: int = 64
    k: int | None = None
    k_ratio: float = 0.6
    use_cmb: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.text_encoder not in ("passthrough", "project"):
            raise ValueError(f"text_encoder must be 'passthrough' or 'project', got {self.text_encoder!r}")
        if self.head_dim is None:
            if self.d % self.heads:
                raise ValueError(f"d={self.d} not divisible by heads={self.heads}; set head_dim")
            self.head_dim = self.d // self.heads
        if not 0.0 < self.k_ratio <= 1.0:
            raise ValueError("k_ratio must lie in (0, 1]")

    def msin(self, layers: int) -> MsinConfig:
        return MsinConfig(layers=layers, heads=self.heads, model_dim=self.d,
                          head_dim=self.head_dim, ffn_hidden=self.ffn_hidden, ln_eps=self.ln_eps)

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ParamStore:
    """All learnable weights, addressable by hierarchical name.

    Initial values depend only on (seed, name), so a model without the
    conflict branch shares its main-branch weights with the full model.
    """
    p = ParamStore(seed=seed, dtype=dtype)
    add_text_params(p, cfg.d_t_raw, cfg.d, cfg.text_encoder)
    add_lstm_params(p, "encoder.visual", cfg.d_v_raw, cfg.d)
    add_lstm_params(p, "encoder.audio", cfg.d_a_raw, cfg.d)
    add_msin_params(p, "micro_msin.ta", cfg.msin(cfg.micro_layers))
    add_msin_params(p, "micro_msin.tv", cfg.msin(cfg.micro_layers))
    add_msin_params(p, "macro_msin", cfg.msin(cfg.macro_layers))
    add_ffn_params(p, "head.main", cfg.d, cfg.ffn_hidden, 1)
    if cfg.use_cmb:
        add_branch_params(p, cfg.d, cfg.head_dim, cfg.ffn_hidden)
    return p


def msin_prefixes(params: ParamStore) -> dict[str, list[str]]:
    """Instantiated MSIN stacks grouped by level (structural introspection)."""
    out: dict[str, set[str]] = {"micro": set(), "macro": set()}
    for name in params:
        parts = name.split(".")
        if parts[0] == "micro_msin":
            out["micro"].add(".".join(parts[:2]))
        elif parts[0] == "macro_msin":
            out["macro"].add(parts[0])
    return {k: sorted(v) for k, v in out.items()}


@dataclass
class ForwardTrace:
    values: dict[str, T.Tensor]
    masks: dict[str, np.ndarray]
    fused_macro: T.Tensor
    projections: dict[str, tuple[np.ndarray, np.ndarray]] = field(repr=False)
    k_used: dict[str, list[int]]
    spectra: dict[str, list[np.ndarray]] = field(repr=False)

    def __getitem__(self, name: str) -> T.Tensor:
        return self.values[name]

    def names(self) -> set[str]:
        return set(self.values)


def forward_full(batch, params: ParamStore, cfg: ModelConfig, alpha: float = ALPHA,
                 beta: float = BETA, frozen: dict | None = None) -> tuple[ForwardTrace, LossReport]:
    """One forward pass over a padded batch, returning every named intermediate
    and the decomposed joint loss (batch mean of per-sample losses).

    ``frozen`` (the ``projections`` of an earlier trace) pins the SVD subspaces.
    """
    dtype = params.dtype
    mt, mv, ma = batch.mask_t, batch.mask_v, batch.mask_a
    f_t = encode_text(T.Tensor(batch.text.astype(dtype)), params, cfg.text_encoder, cfg.d, mt)
    f_v = encode_av(T.Tensor(batch.visual.astype(dtype)), params, "encoder.visual", mv)
    f_a = encode_av(T.Tensor(batch.audio.astype(dtype)), params, "encoder.audio", ma)

    micro = cfg.msin(cfg.micro_layers)
    ta = msin_forward(f_t, f_a, micro, params, "micro_msin.ta", mt, ma)
    tv = msin_forward(f_t, f_v, micro, params, "micro_msin.tv", mt, mv)
    frozen = frozen or {}
    s_ta = split_batch(ta.fused, ta.mask, cfg.k, cfg.k_ratio, frozen.get("ta"))
    s_tv = split_batch(tv.fused, tv.mask, cfg.k, cfg.k_ratio, frozen.get("tv"))

    macro = msin_forward(s_ta.aligned, s_tv.aligned, cfg.msin(cfg.macro_layers), params,
                         "macro_msin", ta.mask, tv.mask)
    s_c = split_batch(macro.fused, macro.mask, cfg.k, cfg.k_ratio, frozen.get("c"))

    y_main = prediction_head(T.masked_mean(s_c.aligned, macro.mask), params, "head.main")
    values = {
        "F_t": f_t, "F_v": f_v, "F_a": f_a,
        "F_ta": ta.fused, "F_tv": tv.fused,
        "F_ta_aligned": s_ta.aligned, "F_ta_conflict": s_ta.conflict,
        "F_tv_aligned": s_tv.aligned, "F_tv_conflict": s_tv.conflict,
        "Z_c_aligned": s_c.aligned, "Z_c_conflict": s_c.conflict,
        "y_main": y_main,
    }
    masks = {
        "F_t": mt, "F_v": mv, "F_a": ma,
        "F_ta": ta.mask, "F_ta_aligned": ta.mask, "F_ta_conflict": ta.mask,
        "F_tv": tv.mask, "F_tv_aligned": tv.mask, "F_tv_conflict": tv.mask,
        "Z_c_aligned": macro.mask, "Z_c_conflict": macro.mask,
    }
    labels = T.Tensor(np.asarray(batch.labels, dtype=dtype))
    l_main = main_loss(y_main, labels)

    if cfg.use_cmb:
        feats = build_conflict_features(values, masks, params)
        preds = branch_predictions(feats, params)
        values.update({
            "F_t_prime": feats.f_t_prime, "F_v_prime": feats.f_v_prime, "F_a_prime": feats.f_a_prime,
            "F_tv_dprime": feats.f_tv_dprime, "F_ta_dprime": feats.f_ta_dprime,
            "y_t": preds.y_t, "y_v": preds.y_v, "y_a": preds.y_a,
            "y_tv": preds.y_tv, "y_ta": preds.y_ta,
        })
        oc_micro = T.mean_all(orthogonality_loss_micro(feats.f_t_prime, feats.f_v_prime, feats.f_a_prime))
        diff_micro = T.mean_all(diff_loss_micro(preds.y_t, preds.y_v, preds.y_a))
        oc_m, diff_m = macro_losses(feats.f_tv_dprime, feats.f_ta_dprime, preds.y_tv, preds.y_ta)
        report = total_loss(l_main, oc_micro, T.mean_all(oc_m), diff_micro, T.mean_all(diff_m),
                            alpha, beta)
    else:
        report = total_loss(l_main, 0.0, 0.0, 0.0, 0.0, alpha, beta)

    trace = ForwardTrace(
        values=values, masks=masks, fused_macro=macro.fused,
        projections={"ta": s_ta.projections, "tv": s_tv.projections, "c": s_c.projections},
        k_used={"ta": s_ta.k_used, "tv": s_tv.k_used, "c": s_c.k_used},
        spectra={"ta": s_ta.spectra, "tv": s_tv.spectra, "c": s_c.spectra},
    )
    return trace, report


def predict(batch, params: ParamStore, cfg: ModelConfig) -> np.ndarray:
    """Main-head predictions without recording a graph."""
    with T.no_grad():
        trace, _ = forward_full(batch, params, cfg, 0.0, 0.0)
    return trace["y_main"].data.copy()
