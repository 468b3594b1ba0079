"""Command line entry point.

Subcommands:
  generate    write the dictionary and resolved config for a run
  solve       run the classical solver baselines on the fixed test set
  train       train every model in the config, saving checkpoints and traces
  experiment  full protocol: baselines + models + results.csv
  diagnose    per-layer factorization reports for trained checkpoints
  plot        render SVG figures from an existing results.csv

A run is configured either by a JSON file (--config) or a named preset
(--preset); --seed and --out override the base seed and output directory.
"""

import argparse
import dataclasses
import pathlib
import sys

from . import networks
from .harness import (ExperimentConfig, PRESET_NAMES, ResultRow, ResultTable,
                      _experiment_inputs, _quantiles,
                      diagnose_factorization, preset, run_experiment)
from .problem import save_dictionary
from .solvers import gap_curves
from .training import train


def _add_common(parser):
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--preset", choices=PRESET_NAMES,
                        help="built-in config (ignored when --config is given)")
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--out", help="override the output directory")


def _resolve_config(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            # uniform reseed: base for the problem, offset per model cell
            cfg.problem = dataclasses.replace(cfg.problem, seed=args.seed)
            for i, spec in enumerate(cfg.models):
                spec.train = dataclasses.replace(spec.train,
                                                 seed=args.seed + 101 + i)
    elif args.preset:
        cfg = preset(args.preset, seed=args.seed, out_dir=args.out)
    else:
        raise SystemExit("one of --config or --preset is required")
    if args.out:
        cfg.output_dir = args.out
    return cfg


def _cmd_generate(args):
    cfg = _resolve_config(args)
    out = pathlib.Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    dictionary, _, test_batch, _, _ = _experiment_inputs(cfg)
    save_dictionary(dictionary, out / "dictionary.txt")
    print(f"wrote {out / 'dictionary.txt'} "
          f"(n={dictionary.n}, m={dictionary.m}, kind={dictionary.kind}); "
          f"test set {test_batch.count} samples, references certified")
    return 0


def _cmd_solve(args):
    cfg = _resolve_config(args)
    out = pathlib.Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    _, template, test_batch, _, f_star = _experiment_inputs(cfg)
    rows = []
    for kind, k_max in (("ista", cfg.baselines.ista_k_max),
                        ("fista", cfg.baselines.fista_k_max)):
        curves = gap_curves(template.D, cfg.problem.lam, test_batch.X, f_star,
                            kind, k_max, B=template.B, L=template.L)
        for k in range(1, k_max + 1):
            med, q25, q75 = _quantiles(curves[k])
            rows.append(ResultRow(model=kind, depth_or_iter=k,
                                  seed=cfg.problem.seed, f_gap_median=med,
                                  f_gap_q25=q25, f_gap_q75=q75))
    table = ResultTable(experiment_id=cfg.experiment_id, rows=rows)
    table.to_csv(out / "results.csv")
    print(f"wrote {out / 'results.csv'} ({len(rows)} baseline rows)")
    return 0


def _cmd_train(args):
    cfg = _resolve_config(args)
    out = pathlib.Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    dictionary, _, test_batch, _, _ = _experiment_inputs(cfg)
    save_dictionary(dictionary, out / "dictionary.txt")
    for spec in cfg.models:
        params, trace = train(spec.kind, dictionary, cfg.problem, spec.train,
                              spec.depth, test_batch=test_batch)
        tag = f"{spec.kind}_k{spec.depth}_seed{spec.train.seed}"
        networks.save_params(params, out / f"{tag}.npz", n=cfg.problem.n)
        trace.to_csv(out / f"train_{tag}.csv")
        print(f"{tag}: best test loss {trace.best_test_loss:.6e} "
              f"at step {trace.best_step}"
              + (" (diverged)" if trace.diverged else ""))
    return 0


def _cmd_experiment(args):
    cfg = _resolve_config(args)
    table = run_experiment(cfg)
    out = pathlib.Path(cfg.output_dir)
    print(f"wrote {out / 'results.csv'} ({len(table.rows)} rows)")
    return 0


def _cmd_diagnose(args):
    cfg = _resolve_config(args)
    reports = diagnose_factorization(cfg)
    for path in reports:
        print(f"wrote {path}")
    return 0


def _cmd_plot(args):
    from .plots import emit_plots
    cfg = _resolve_config(args)
    results = pathlib.Path(cfg.output_dir) / "results.csv"
    if not results.exists():
        raise FileNotFoundError(f"{results} not found; run `experiment` first")
    table = ResultTable.from_csv(results)
    for path in emit_plots(table, cfg.output_dir):
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "solve": _cmd_solve,
    "train": _cmd_train,
    "experiment": _cmd_experiment,
    "diagnose": _cmd_diagnose,
    "plot": _cmd_plot,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lassolab",
        description="sparse-coding acceleration laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        _add_common(p)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, RuntimeError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
