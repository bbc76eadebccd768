"""Command line: ``mcan {train,eval,ablate,gradcheck,synth,decompose}``.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ConfigError, build_config, synth_config
from .data import DatasetError, collate, generate_synthetic, load_dataset, raw_widths, write_dataset
from .decomposition import split_norms

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_train(args, cfg) -> int:
    from .training import run_training
    run_dir = args.run_dir or cfg["run_dir"]
    summary = run_training(cfg, run_dir)
    _emit({"run_dir": str(run_dir), **summary})
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .training import evaluate_run
    _emit(evaluate_run(args.run_dir, args.split))
    return EXIT_OK


def cmd_ablate(args, cfg) -> int:
    from .ablation import run_ablation
    report = run_ablation(cfg, args.out or Path(cfg["run_dir"]) / "ablation")
    print(report["table"])
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    from .gradcheck import gradcheck_from_config
    report = gradcheck_from_config(cfg)
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_synth(args, cfg) -> int:
    samples = generate_synthetic(synth_config(cfg["synth"]))
    write_dataset(samples, args.out)
    _emit({"path": str(args.out), "n_samples": len(samples)})
    return EXIT_OK


def cmd_decompose(args, cfg) -> int:
    k = cfg["model"]["k"]
    ratio = cfg["model"]["k_ratio"]
    if args.matrix:
        mat = np.asarray(json.loads(Path(args.matrix).read_text()), dtype=np.float64)
        _emit(split_norms(mat, k, ratio))
        return EXIT_OK

    from .checkpoint import load_checkpoint
    from .model import forward_full, init_params
    from .training import model_config
    if cfg["data"]["path"]:
        samples = load_dataset(cfg["data"]["path"])
    else:
        samples = generate_synthetic(synth_config(cfg["synth"]))
    if not 0 <= args.sample < len(samples):
        raise ConfigError(f"--sample {args.sample} out of range (0..{len(samples) - 1})")
    sample = samples[args.sample]
    mcfg = model_config(cfg, raw_widths(samples))
    params = init_params(mcfg, cfg["train"]["seed"])
    if args.checkpoint:
        params.load_state(load_checkpoint(args.checkpoint))
    with T.no_grad():
        trace, _ = forward_full(collate([sample]), params, mcfg)
    sites = {"ta": trace["F_ta"], "tv": trace["F_tv"], "c": trace.fused_macro}
    _emit({"sample": sample.id,
           "sites": {name: split_norms(t.data[0], k, ratio) for name, t in sites.items()}})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("-c", "--config", help="YAML/JSON run configuration")
        p.add_argument("overrides", nargs="*", help="dotted overrides, e.g. model.k=16")
        p.set_defaults(func=fn)
        return p

    p = add("train", cmd_train, "train a model; writes a run directory")
    p.add_argument("--run-dir")
    p = add("eval", cmd_eval, "recompute metrics from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p = add("ablate", cmd_ablate, "run the ablation matrix")
    p.add_argument("--out")
    add("gradcheck", cmd_gradcheck, "finite-difference check of every parameter block")
    p = add("synth", cmd_synth, "write a synthetic dataset")
    p.add_argument("--out", required=True)
    p = add("decompose", cmd_decompose, "dump SVD spectra and aligned/conflict norms")
    p.add_argument("--matrix", help="JSON file holding a 2-D matrix to split directly")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--checkpoint")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.config, args.overrides)
        if args.command == "train" and not cfg["data"]["path"]:
            raise ConfigError("data.path is required for training")
        if args.command == "train" and not Path(cfg["data"]["path"]).exists():
            raise ConfigError(f"dataset not found: {cfg['data']['path']}")
        return args.func(args, cfg)
    except (ConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"mcan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("mcan").debug("failure", exc_info=True)
        print(f"mcan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
