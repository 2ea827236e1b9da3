"""Command-line front end: synth, train, impute, eval, mask-dump.

Exit codes: 0 on success, 2 for configuration problems, 3 for numeric
failures.  ``SSMDIFF_CONFIG`` supplies a default --config path; everything
else comes from flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import masking
from .data import Dataset, load_dataset, save_dataset, synth_dataset
from .errors import ConfigError, DomainError, MetricError, NumericError
from .pipeline import RunConfig, evaluate_files, impute_run, train_model
from .rng import Rng


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmdiff",
        description="Train and run a state-space diffusion imputer for time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset file")
    p_synth.add_argument("--kind", default="sines", choices=["sines", "damped", "square-mix"])
    p_synth.add_argument("--n", type=int, default=512)
    p_synth.add_argument("--channels", type=int, default=4)
    p_synth.add_argument("--length", type=int, default=128)
    p_synth.add_argument("--noise-sd", type=float, default=0.05)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", required=True)

    p_train = sub.add_parser("train", help="train a model per a run config")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--config", default=os.environ.get("SSMDIFF_CONFIG"))
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--scenario", choices=list(masking.SCENARIOS))
    p_train.add_argument("--ratio", type=float)
    p_train.add_argument("--horizon", type=int)
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--learning-rate", type=float)
    p_train.add_argument("--steps", type=int, help="diffusion steps T")
    p_train.add_argument("--mode", choices=["D0", "D1"])
    p_train.add_argument("--channel-split-width", type=int)

    p_impute = sub.add_parser("impute", help="draw imputations from a checkpoint")
    p_impute.add_argument("--checkpoint", required=True)
    p_impute.add_argument("--data", required=True)
    p_impute.add_argument("--seed", type=int, required=True)
    p_impute.add_argument("--out-dir", required=True)
    p_impute.add_argument("--draws", type=int)
    p_impute.add_argument("--split", default="test", choices=["train", "val", "test"])
    p_impute.add_argument("--scenario", choices=list(masking.SCENARIOS),
                          help="evaluation scenario override (train/test mismatch)")
    p_impute.add_argument("--ratio", type=float)
    p_impute.add_argument("--horizon", type=int)

    p_eval = sub.add_parser("eval", help="metric report from saved arrays")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--m-imp", required=True)
    p_eval.add_argument("--m-mvi")

    p_mask = sub.add_parser("mask-dump", help="write one scenario mask as CSV")
    p_mask.add_argument("--scenario", required=True, choices=list(masking.SCENARIOS))
    p_mask.add_argument("--length", type=int, required=True)
    p_mask.add_argument("--channels", type=int, required=True)
    p_mask.add_argument("--ratio", type=float)
    p_mask.add_argument("--horizon", type=int)
    p_mask.add_argument("--seed", type=int, required=True)
    p_mask.add_argument("--out", required=True)
    return parser


def _load_run_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = RunConfig()
    if args.scenario is not None:
        cfg.scenario = args.scenario
    if args.ratio is not None:
        cfg.ratio = args.ratio
    if args.horizon is not None:
        cfg.horizon = args.horizon
    if args.iterations is not None:
        cfg.training.iterations = args.iterations
    if args.batch_size is not None:
        cfg.training.batch_size = args.batch_size
    if args.learning_rate is not None:
        cfg.training.learning_rate = args.learning_rate
    if args.steps is not None:
        cfg.diffusion.steps = args.steps
    if args.mode is not None:
        cfg.diffusion.mode = args.mode
    if args.channel_split_width is not None:
        cfg.channel_split_width = args.channel_split_width
    return cfg


def _run(args) -> int:
    if args.command == "synth":
        dataset = synth_dataset(args.kind, args.n, args.channels, args.length,
                                args.noise_sd, args.seed)
        save_dataset(args.out, dataset)
        print(f"wrote {args.out}: {dataset.n_samples} x {dataset.channels} "
              f"x {dataset.length}")
        return 0

    if args.command == "train":
        cfg = _load_run_config(args)
        cfg.seed = args.seed
        dataset = load_dataset(args.data)
        result = train_model(dataset, cfg, args.out_dir)
        print(f"checkpoint: {result['checkpoint']}")
        print(f"loss trace: {result['trace']}")
        print(f"final loss: {result['final_loss']!r}")
        return 0

    if args.command == "impute":
        dataset = load_dataset(args.data)
        result = impute_run(args.checkpoint, dataset, args.seed, args.out_dir,
                            n_draws=args.draws, scenario=args.scenario,
                            ratio=args.ratio, horizon=args.horizon,
                            split=args.split)
        print(Path(result["report"]).read_text(encoding="utf-8"))
        return 0

    if args.command == "eval":
        report = evaluate_files(args.pred, args.truth, args.m_imp, args.m_mvi)
        print(report.to_json(indent=2))
        return 0

    if args.command == "mask-dump":
        mask = masking.scenario_mask(args.scenario, args.length, args.channels,
                                     Rng(args.seed), ratio=args.ratio,
                                     horizon=args.horizon)
        masking.write_mask_csv(mask, args.out)
        print(f"wrote {args.out}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, DomainError, MetricError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
