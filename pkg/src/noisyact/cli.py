"""Command-line entry point.

Subcommands: gen-data, train, eval, anneal-demo, summarize. Flags
--config/--seed/--out/--mode override the corresponding config values;
without --config each experiment's documented defaults apply. Exits 0 on
success and 1 with a message on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiments import (
    EXPERIMENTS,
    MODES,
    ExperimentConfig,
    default_config,
    experiment_data,
    build_model,
    load_config,
    resolve_out_dir,
    run_experiment,
    summarize_dir,
)
from .networks import load_checkpoint
from .training import evaluate_model


def _load(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "experiment", None):
        cfg = default_config(args.experiment)
    else:
        raise SystemExit("either --config or an experiment name is required")
    if getattr(args, "mode", None):
        # replace() re-runs validation against the overridden mode
        cfg = replace(cfg, noise=replace(cfg.noise, mode=args.mode))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _add_common(sub, experiment_positional: bool = True) -> None:
    if experiment_positional:
        sub.add_argument(
            "experiment", nargs="?", choices=EXPERIMENTS,
            help="experiment to run with default config (omit when using --config)",
        )
    sub.add_argument("--config", metavar="PATH", help="JSON experiment config")
    sub.add_argument("--seed", type=int, metavar="N", help="run only this seed")
    sub.add_argument("--out", metavar="DIR", help="output directory")
    sub.add_argument("--mode", choices=MODES, help="override the noise mode")


def _cmd_train(args) -> int:
    cfg = _load(args)
    out = resolve_out_dir(cfg, args.out)
    run_experiment(cfg, out)
    print(f"wrote results for seeds {list(cfg.seeds)} to {out}")
    return 0


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    if cfg.experiment == "anneal-demo":
        raise SystemExit("anneal-demo has no dataset to generate")
    data = experiment_data(cfg)
    out = resolve_out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, inputs, labels in (
        ("train", data.train_inputs, data.train_labels),
        ("eval", data.eval_inputs, data.eval_labels),
    ):
        table = np.column_stack([inputs, labels])
        fmt = "%.17g" if np.issubdtype(inputs.dtype, np.floating) else "%d"
        np.savetxt(out / f"{cfg.experiment}-{split}.csv", table, fmt=fmt, delimiter=",")
    print(f"wrote {cfg.experiment} train/eval data to {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args)
    if cfg.experiment == "anneal-demo":
        raise SystemExit("anneal-demo has no model to evaluate")
    data = experiment_data(cfg)
    from .rng import RngStream

    model = build_model(cfg, RngStream(cfg.seeds[0]))
    if args.checkpoint:
        load_checkpoint(args.checkpoint, model.parameters())
    nll, accuracy = evaluate_model(model, data.eval_inputs, data.eval_labels)
    print(f"eval_nll={nll!r} eval_accuracy={accuracy!r} error={100.0 * (1.0 - accuracy):.2f}%")
    return 0


def _cmd_anneal_demo(args) -> int:
    if not args.config and not getattr(args, "experiment", None):
        args.experiment = "anneal-demo"
    cfg = _load(args)
    if cfg.experiment != "anneal-demo":
        raise SystemExit(f"config is for {cfg.experiment!r}, expected anneal-demo")
    out = resolve_out_dir(cfg, args.out)
    run_experiment(cfg, out)
    summary = (out / "summary.csv").read_text()
    print(summary.strip())
    print(f"details in {out}")
    return 0


def _cmd_summarize(args) -> int:
    target = args.out or (args.config and str(resolve_out_dir(load_config(args.config), None)))
    if not target:
        raise SystemExit("summarize needs --out DIR (or --config to locate it)")
    print(summarize_dir(Path(target)))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="noisyact",
        description="Train and probe hard-saturating networks with learnable noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run an experiment (all seeds)")
    _add_common(train)
    train.set_defaults(fn=_cmd_train)

    gen = sub.add_parser("gen-data", help="write an experiment's dataset as CSV")
    _add_common(gen)
    gen.set_defaults(fn=_cmd_gen_data)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the eval split")
    _add_common(ev)
    ev.add_argument("--checkpoint", metavar="PATH", help="checkpoint file to load")
    ev.set_defaults(fn=_cmd_eval)

    demo = sub.add_parser("anneal-demo", help="run the 1-D annealing demonstration")
    demo.add_argument("--config", metavar="PATH", help="JSON experiment config")
    demo.add_argument("--seed", type=int, metavar="N", help="run only this seed")
    demo.add_argument("--out", metavar="DIR", help="output directory")
    demo.set_defaults(fn=_cmd_anneal_demo, mode=None)

    summ = sub.add_parser("summarize", help="print median metrics for a run directory")
    summ.add_argument("--out", metavar="DIR", help="run directory with metrics_seed*.csv")
    summ.add_argument("--config", metavar="PATH", help="config whose output dir to summarize")
    summ.set_defaults(fn=_cmd_summarize)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
