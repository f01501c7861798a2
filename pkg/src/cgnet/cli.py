"""Command-line experiment runner.

Subcommands: train, evaluate, explain, intervene, sweep, reproduce.
Exit codes: 0 success, 2 configuration/usage errors, 1 runtime failures.
The output root defaults to ./runs and can be overridden by --out or the
CGL_OUT environment variable.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments as exp
from .config import (DATASETS, MODEL_KINDS, ConfigError, default_config,
                     load_config_file, replace_fields)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

# flag, RunConfig field, parser type
_OVERRIDE_FLAGS = (
    ("--layer-kind", "layer_kind", str),
    ("--conv-count", "conv_count", int),
    ("--hidden-units", "hidden_units", int),
    ("--concept-width", "concept_width", int),
    ("--learning-rate", "learning_rate", float),
    ("--epochs", "epochs", int),
    ("--batch-size", "batch_size", int),
    ("--tau", "tau", float),
    ("--epsilon", "epsilon", float),
    ("--baseline-k", "baseline_k", int),
    ("--representative-p", "representative_p", int),
    ("--ged-cap", "ged_cap", int),
    ("--data-seed", "data_seed", int),
    ("--split-fraction", "split_fraction", float),
    ("--subsample", "subsample", int),
)


def _add_config_flags(p):
    p.add_argument("--config", help="INI file with dataset-keyed sections")
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 42,19,76")
    p.add_argument("--out", help="output root (default ./runs or $CGL_OUT)")
    for flag, dest, typ in _OVERRIDE_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None,
                       help=argparse.SUPPRESS)


def _parse_seeds(raw):
    try:
        seeds = tuple(int(part) for part in str(raw).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad seed list {raw!r}") from exc
    if not seeds:
        raise ConfigError(f"bad seed list {raw!r}")
    return seeds


def _build_config(args):
    """defaults <- config file section <- explicit CLI flags."""
    cfg = default_config(args.dataset)
    if args.config:
        sections = load_config_file(args.config)
        if args.dataset in sections:
            cfg = sections[args.dataset]
    overrides = {}
    if getattr(args, "model", None):
        overrides["model"] = args.model
    for _flag, dest, _typ in _OVERRIDE_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            overrides[dest] = value
    if args.seeds:
        overrides["seeds"] = _parse_seeds(args.seeds)
    if args.out:
        overrides["out_dir"] = args.out
    return replace_fields(cfg, overrides)


def _say(msg):
    print(msg, flush=True)


def _cmd_train(args):
    cfg = _build_config(args)
    exp.cmd_train(cfg, progress=_say)
    _say(f"report: {exp.report_path(exp.run_dir(cfg))}")
    return EXIT_OK


def _cmd_evaluate(args):
    exp.cmd_evaluate(args.target, baseline=args.baseline,
                     out_root=args.out, progress=_say)
    return EXIT_OK


def _cmd_explain(args):
    result = exp.cmd_explain(args.checkpoint, out=args.out,
                             color_by_label=args.color_by_label)
    _say(f"wrote {len(result['manifest'])} concepts and "
         f"{len(result['formulas'])} class formulas under {result['dest']}")
    return EXIT_OK


def _cmd_intervene(args):
    curve = exp.cmd_intervene(args.target, out_root=args.out,
                              max_budget=args.max_budget, progress=_say)
    _say(f"accuracy {curve.mean[0]:.4f} -> {curve.mean[-1]:.4f} "
         f"over {int(curve.budgets[-1])} interventions")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = _build_config(args)
    result = exp.cmd_sweep(cfg, progress=_say)
    chosen = result["selected"]
    _say(f"selected hidden={chosen['hidden_units']} "
         f"lr={chosen['learning_rate']} (test {chosen['test_accuracy']:.4f})")
    return EXIT_OK


def _cmd_reproduce(args):
    datasets = None
    if args.datasets:
        datasets = [part.strip() for part in args.datasets.split(",") if part.strip()]
        unknown = [d for d in datasets if d not in DATASETS]
        if unknown:
            raise ConfigError(f"unknown datasets: {unknown}")
    seeds = _parse_seeds(args.seeds) if args.seeds else None
    bundle = exp.cmd_reproduce(out_root=args.out,
                               include_reddit=args.include_reddit,
                               full=args.full, datasets=datasets, seeds=seeds,
                               epochs=args.epochs, progress=_say)
    _say("")
    _say(bundle["comparison"])
    for failure in bundle["failures"]:
        _say(f"recorded failure: {failure['dataset']}/{failure['model']}: "
             f"{failure['error']}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cgnet",
        description="Train and evaluate concept graph networks; extract "
                    "concept and logic explanations; run interventions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one dataset/model across seeds")
    p.add_argument("--dataset", required=True, choices=DATASETS)
    p.add_argument("--model", choices=MODEL_KINDS, default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="recompute metrics for a run")
    p.add_argument("target", help="run directory or checkpoint .bin")
    p.add_argument("--baseline", choices=("gcexplainer",), default=None)
    p.add_argument("--out", help="output root override")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("explain", help="export concepts and formulas")
    p.add_argument("checkpoint", help="checkpoint .bin of a concept model")
    p.add_argument("--out", help="destination directory")
    p.add_argument("--color-by-label", action="store_true")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("intervene", help="oracle intervention accuracy curve")
    p.add_argument("target", help="run directory or checkpoint .bin")
    p.add_argument("--max-budget", type=int, default=None)
    p.add_argument("--out", help="output root override")
    p.set_defaults(func=_cmd_intervene)

    p = sub.add_parser("sweep", help="hidden-units x learning-rate grid search")
    p.add_argument("--dataset", required=True, choices=DATASETS)
    p.add_argument("--model", choices=MODEL_KINDS, default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("reproduce", help="full benchmark suite at desk scale")
    p.add_argument("--out", help="output root override")
    p.add_argument("--datasets", help="comma-separated subset to run")
    p.add_argument("--seeds", help="comma-separated seed override")
    p.add_argument("--epochs", type=int, default=None,
                   help="epoch override for quick passes")
    p.add_argument("--include-reddit", action="store_true")
    p.add_argument("--full", action="store_true",
                   help="disable the seeded reddit subsample cap")
    p.set_defaults(func=_cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:   # runtime failures get a distinct exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
