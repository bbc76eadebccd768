"""Ablation matrix: full model, each discrepancy loss removed, no conflict
branch, and a sweep over the SVD truncation position, repeated over seeds."""
from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import synth_config
from .data import generate_synthetic, load_dataset, split_dataset, write_dataset
from .training import run_training

log = logging.getLogger(__name__)

METRICS = ("acc2", "acc7", "f1", "corr", "mae")
GROUPS = (
    ("Full model", ("full",)),
    ("Effect of discrepancy constraints", ("no_diff", "no_oc")),
    ("Effect of CMB", ("no_cmb",)),
    ("Effect of truncation positions", None),
)
LABELS = {"full": "Full", "no_diff": "w/o L_diff", "no_oc": "w/o L_oc", "no_cmb": "w/o CMB"}


def ablation_cells(cfg: dict) -> list[tuple[str, dict]]:
    """(cell name, config patch) for every requested row."""
    wanted = cfg["ablation"]["cells"]
    cells = []
    if "full" in wanted:
        cells.append(("full", {}))
    if "no_diff" in wanted:
        cells.append(("no_diff", {"loss": {"beta": 0.0}}))
    if "no_oc" in wanted:
        cells.append(("no_oc", {"loss": {"alpha": 0.0}}))
    if "no_cmb" in wanted:
        cells.append(("no_cmb", {"model": {"use_cmb": False}}))
    if "k_sweep" in wanted:
        for k in cfg["ablation"]["k_sweep"]:
            cells.append((f"top_{k}", {"model": {"k": int(k)}}))
    return cells


def _patched(cfg: dict, patch: dict) -> dict:
    out = copy.deepcopy(cfg)
    for section, values in patch.items():
        out[section].update(values)
    return out


def _run_cell(args):
    cfg, run_dir = args
    splits = split_dataset(load_dataset(cfg["data"]["path"]), cfg["data"]["val_fraction"],
                           cfg["data"]["test_fraction"], cfg["data"]["split_seed"])
    return run_training(cfg, run_dir, splits)


def summarise(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "sd": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
            "values": arr.tolist()}


def run_ablation(cfg: dict, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = copy.deepcopy(cfg)
    if not cfg["data"]["path"]:
        data_path = out_dir / "data.jsonl"
        write_dataset(generate_synthetic(synth_config(cfg["synth"])), data_path)
        cfg["data"]["path"] = str(data_path.resolve())
    else:
        cfg["data"]["path"] = str(Path(cfg["data"]["path"]).resolve())

    jobs, keys = [], []
    for name, patch in ablation_cells(cfg):
        for seed in cfg["ablation"]["seeds"]:
            cell_cfg = _patched(cfg, patch)
            cell_cfg["train"]["seed"] = int(seed)
            jobs.append((cell_cfg, str(out_dir / name / f"seed_{seed}")))
            keys.append((name, seed))

    workers = max(1, int(cfg["ablation"]["workers"]))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            summaries = list(pool.map(_run_cell, jobs))
    else:
        summaries = [_run_cell(job) for job in jobs]

    split = "test" if all("test" in s for s in summaries) else "val"
    rows: dict[str, dict] = {}
    for (name, seed), summ in zip(keys, summaries):
        row = rows.setdefault(name, {"cell": name, "label": LABELS.get(name, name.replace("top_", "Top-")),
                                     "seeds": [], "runs": []})
        row["seeds"].append(seed)
        row["runs"].append({m: summ[split][m] for m in METRICS})
    for row in rows.values():
        row["metrics"] = {m: summarise([r[m] for r in row["runs"]]) for m in METRICS}

    report = {"split": split, "rows": list(rows.values()), "table": format_table(rows)}
    (out_dir / "ablation.json").write_text(json.dumps(report, indent=2) + "\n")
    (out_dir / "ablation.txt").write_text(report["table"] + "\n")
    return report


def format_table(rows: dict[str, dict]) -> str:
    """Plain-text table grouped like the published ablation (mean ± sd over seeds)."""
    header = f"{'Ablation':<16}" + "".join(f"{m.upper():>18}" for m in METRICS)
    lines = [header, "-" * len(header)]
    for title, names in GROUPS:
        members = [n for n in rows if n.startswith("top_")] if names is None else [n for n in names if n in rows]
        if not members:
            continue
        lines.append(f"[{title}]")
        for n in members:
            row = rows[n]
            cells = "".join(f"{row['metrics'][m]['mean']:>10.4f}±{row['metrics'][m]['sd']:<7.4f}" for m in METRICS)
            lines.append(f"{row['label']:<16}{cells}")
    return "\n".join(lines)
