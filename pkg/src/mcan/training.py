"""Train/eval loops and run directories."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import float32_roundtrip, load_checkpoint, save_checkpoint
from .config import dump_config, effective_beta
from .data import load_dataset, make_batches, raw_widths, split_dataset
from .encoders import ModalitySample
from .metrics import MetricReport, compute_metrics
from .model import ModelConfig, forward_full, init_params
from .optim import Adam
from .params import ParamStore

log = logging.getLogger(__name__)

LOSS_KEYS = ("main", "oc_micro", "oc_macro", "diff_micro", "diff_macro", "total")


def model_config(cfg: dict, widths: dict[str, int], extra: dict | None = None) -> ModelConfig:
    m = dict(cfg["model"])
    m.update(extra or {})
    return ModelConfig(d_t_raw=widths["text"], d_v_raw=widths["visual"], d_a_raw=widths["audio"], **m)


@dataclass
class EvalResult:
    metrics: MetricReport
    loss: dict[str, float]
    preds: np.ndarray = field(repr=False)

    def record(self, epoch: int, split: str) -> dict:
        m = self.metrics
        return {"epoch": epoch, "split": split, "acc2": m.acc2, "acc7": m.acc7, "f1": m.f1,
                "corr": m.corr, "mae": m.mae, "loss": dict(self.loss)}


def evaluate(samples: Sequence[ModalitySample], params: ParamStore, mcfg: ModelConfig,
             alpha: float, beta: float, batch_size: int = 64) -> EvalResult:
    """Main-head predictions and sample-weighted mean losses, no graph recorded."""
    preds, labels = [], []
    sums = dict.fromkeys(LOSS_KEYS, 0.0)
    with T.no_grad():
        for batch in make_batches(samples, batch_size, shuffle=False):
            trace, rep = forward_full(batch, params, mcfg, alpha, beta)
            preds.append(trace["y_main"].data)
            labels.append(batch.labels)
            for k in LOSS_KEYS:
                sums[k] += getattr(rep, k) * len(batch)
    n = len(samples)
    return EvalResult(compute_metrics(np.concatenate(preds), np.concatenate(labels)),
                      {k: v / n for k, v in sums.items()}, np.concatenate(preds))


def train_steps(params: ParamStore, batches, mcfg: ModelConfig, optim: Adam,
                alpha: float, beta: float) -> list[float]:
    losses = []
    for batch in batches:
        params.zero_grad()
        _, rep = forward_full(batch, params, mcfg, alpha, beta)
        T.backward(rep.tensor)
        optim.step()
        losses.append(rep.total)
    return losses


def checkpoint_params(params: ParamStore) -> ParamStore:
    """Copy of ``params`` holding exactly what the float32 checkpoint stores."""
    out = params.copy()
    out.load_state(float32_roundtrip(params.state()))
    return out


def load_splits(cfg: dict) -> dict[str, list[ModalitySample]]:
    path = cfg["data"]["path"]
    if not path:
        raise FileNotFoundError("data.path is not set")
    samples = load_dataset(path)
    if not samples:
        raise ValueError(f"dataset {path} is empty")
    d = cfg["data"]
    return split_dataset(samples, d["val_fraction"], d["test_fraction"], d["split_seed"])


def run_training(cfg: dict, run_dir: str | Path, splits: dict | None = None) -> dict:
    """Train for ``train.epochs`` epochs, keeping the checkpoint with the lowest
    validation MAE.  Writes config.json, metrics.jsonl, best.ckpt and summary.json.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if splits is None:
        cfg = json.loads(json.dumps(cfg))
        cfg["data"]["path"] = str(Path(cfg["data"]["path"]).resolve()) if cfg["data"]["path"] else None
        splits = load_splits(cfg)
    dump_config(cfg, run_dir / "config.json")

    train = splits["train"]
    select_split = "val" if splits.get("val") else "train"
    mcfg = model_config(cfg, raw_widths(train))
    seed = cfg["train"]["seed"]
    params = init_params(mcfg, seed)
    o = cfg["optim"]
    optim = Adam(params, lr=o["lr"], lr_text=o["lr_text"], betas=tuple(o["betas"]), eps=o["eps"],
                 clip_norm=o["clip_norm"])
    alpha, beta = cfg["loss"]["alpha"], effective_beta(cfg)
    bs = cfg["train"]["batch_size"]

    best_mae, best_epoch = np.inf, -1
    metrics_path = run_dir / "metrics.jsonl"
    with open(metrics_path, "w") as mf:
        for epoch in range(1, cfg["train"]["epochs"] + 1):
            batches = make_batches(train, bs, seed=[seed, epoch])
            losses = train_steps(params, batches, mcfg, optim, alpha, beta)
            snapshot = checkpoint_params(params)
            res = evaluate(splits[select_split], snapshot, mcfg, alpha, beta)
            mf.write(json.dumps(res.record(epoch, select_split)) + "\n")
            mf.flush()
            log.info("epoch %d train_loss %.4f %s_mae %.4f", epoch, float(np.mean(losses)),
                     select_split, res.metrics.mae)
            if res.metrics.mae < best_mae:
                best_mae, best_epoch = res.metrics.mae, epoch
                save_checkpoint(run_dir / "best.ckpt", snapshot.state())
        summary = {"best_epoch": best_epoch, "select_split": select_split}
        best = init_params(mcfg, seed)
        best.load_state(load_checkpoint(run_dir / "best.ckpt"))
        for split in ("val", "test"):
            if splits.get(split):
                res = evaluate(splits[split], best, mcfg, alpha, beta)
                if split == "test":
                    mf.write(json.dumps(res.record(best_epoch, split)) + "\n")
                summary[split] = res.record(best_epoch, split)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def evaluate_run(run_dir: str | Path, split: str = "test") -> dict:
    """Recompute a split's metrics from a run directory alone."""
    run_dir = Path(run_dir)
    cfg = json.loads((run_dir / "config.json").read_text())
    splits = load_splits(cfg)
    if not splits.get(split):
        raise ValueError(f"split {split!r} is empty")
    mcfg = model_config(cfg, raw_widths(splits["train"] or splits[split]))
    params = init_params(mcfg, cfg["train"]["seed"])
    params.load_state(load_checkpoint(run_dir / "best.ckpt"))
    summary = json.loads((run_dir / "summary.json").read_text()) if (run_dir / "summary.json").exists() else {}
    res = evaluate(splits[split], params, mcfg, cfg["loss"]["alpha"], effective_beta(cfg))
    return res.record(summary.get("best_epoch", -1), split)
