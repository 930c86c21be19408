"""Command-line entry point: synth-data, train, evaluate, campaign, analyze.

Factor flags carry the same names as the results CSV columns (est_type,
max_time, batch_size, seq_fit_len, seq_est_len, est_hidden_size) so campaign
tables line up column-for-column. The NSS_SEED environment variable overrides
the default seed; --seed wins over both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import analysis, experiments
from .data import (load_csv, save_csv, split_train_val, synth_integrator_system,
                   synth_system)
from .data import Normalizer
from .errors import CheckpointError, ContractError, DivergenceError, WindowError
from .estimators import ESTIMATOR_KINDS
from .evaluation import evaluate_model, write_trace_csv
from .ssmodel import ModelSpec
from .training import (Checkpoint, TrainConfig, load_checkpoint, save_checkpoint,
                       train, write_log_csv)

__all__ = ["main", "build_parser"]


def _default_seed() -> int:
    return int(os.environ.get("NSS_SEED", "0"))


def _add_factor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--est_type", choices=ESTIMATOR_KINDS, default="ZERO",
                   help="initial-state estimator (grid levels: FF, LSTM, ZERO, RAND)")
    p.add_argument("--max_time", type=float, default=300.0,
                   help="training wall-clock budget in seconds "
                        "(grid levels, e.g. 300, 1800, 3600)")
    p.add_argument("--batch_size", type=int, default=32,
                   help="subsequences per minibatch (grid levels, e.g. 32, 128, 512, 1032)")
    p.add_argument("--seq_fit_len", type=int, default=40,
                   help="fitting window length m_f (grid levels, e.g. 40, 80, 160, 320 "
                        "or 64, 256, 512)")
    p.add_argument("--seq_est_len", type=int, default=10,
                   help="estimation window length m_e (grid levels, e.g. 10, 20, 40, 80 "
                        "or 10, 40, 100)")
    p.add_argument("--est_hidden_size", type=int, default=15,
                   help="hidden nodes of the FF/LSTM estimator (grid levels, e.g. 10, 30)")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--u_cols", default=None,
                   help="comma-separated input column names (default: u0, u1, ...)")
    p.add_argument("--y_cols", default=None,
                   help="comma-separated output column names (default: y0, y1, ...)")


def _cols(arg: str | None) -> list[str] | None:
    return [c.strip() for c in arg.split(",")] if arg else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nssid",
        description="Neural state-space system identification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic benchmark record")
    p.add_argument("--kind", choices=("stable", "integrator"), default="stable",
                   help="stable random system or integrator-augmented system")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n_x", type=int, default=2)
    p.add_argument("--n_u", type=int, default=1)
    p.add_argument("--n_y", type=int, default=1)
    p.add_argument("--n", type=int, default=10000, help="record length")
    p.add_argument("--noise_std", type=float, default=0.01,
                   help="output noise relative to each channel's clean std")
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.add_argument("--test_out", default=None,
                   help="also write the record's contiguous tail as a test CSV")
    p.add_argument("--test_fraction", type=float, default=0.2,
                   help="tail fraction moved to --test_out")
    p.add_argument("--truth", default=None,
                   help="optional path for the ground-truth model checkpoint")

    p = sub.add_parser("train", help="train one model on a dataset")
    _add_data_flags(p)
    _add_factor_flags(p)
    p.add_argument("--n_x", type=int, default=2, help="model state dimension")
    p.add_argument("--model_hidden", type=int, default=15,
                   help="hidden nodes of the transition/output networks")
    p.add_argument("--no_skip", action="store_true",
                   help="drop the direct affine bypass of the networks")
    p.add_argument("--learning_rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val_fraction", type=float, default=0.2)
    p.add_argument("--val_stride", type=int, default=None)
    p.add_argument("--val_every", type=int, default=20)
    p.add_argument("--max_iters", type=int, default=None,
                   help="iteration cap; overrides --max_time when set")
    p.add_argument("--no_normalize", action="store_true",
                   help="train in raw physical units")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="training log CSV path")

    p = sub.add_parser("evaluate", help="score a checkpoint on a test dataset")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--init_policy", choices=("estimator", "zero-full"),
                   default="estimator")
    p.add_argument("--skip", type=int, default=0,
                   help="samples excluded from scoring (zero-full policy)")
    p.add_argument("--report", default=None, help="write the fit report as JSON")
    p.add_argument("--trace", default=None,
                   help="prefix for per-channel trace CSVs (t, y, y_sim, error)")

    p = sub.add_parser("campaign", help="run a factorial experiment campaign")
    p.add_argument("--config", required=True, help="campaign config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallelism", type=int, default=None,
                   help="worker processes (overrides the config file)")

    p = sub.add_parser("analyze", help="effects analysis of a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--response", default="fit_percent")
    p.add_argument("--factors", default=None,
                   help="comma-separated factors (default: all with >1 level)")
    p.add_argument("--filter", action="append", default=[],
                   metavar="FACTOR=VALUE", help="restrict records (repeatable)")
    p.add_argument("--interactions", action="append", default=[],
                   metavar="FACTOR_A:FACTOR_B", help="interaction pair (repeatable)")
    p.add_argument("--hist", action="store_true",
                   help="also emit the replication histogram of the response")
    return parser


def _cmd_synth_data(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.kind == "stable":
        ds, model = synth_system(seed, n_x=args.n_x, n_u=args.n_u, n_y=args.n_y,
                                 n=args.n, noise_std=args.noise_std)
    else:
        ds, model = synth_integrator_system(seed, n=args.n, noise_std=args.noise_std)
    if args.test_out:
        head, tail = split_train_val(ds, args.test_fraction)
        save_csv(head, args.out)
        save_csv(tail, args.test_out)
        written = f"{head.n}+{tail.n} samples to {args.out} and {args.test_out}"
    else:
        save_csv(ds, args.out)
        written = f"{ds.n} samples to {args.out}"
    if args.truth:
        ckpt = Checkpoint(model, None, Normalizer.identity(ds.n_u, ds.n_y),
                          TrainConfig(seed=seed), 0.0, 0, "")
        save_checkpoint(ckpt, args.truth)
    print(f"wrote {written} ({ds.n_u} inputs, {ds.n_y} outputs)")
    return 0


def _cmd_train(args) -> int:
    ds = load_csv(args.data, _cols(args.u_cols), _cols(args.y_cols))
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = TrainConfig(
        est_type=args.est_type, max_time=args.max_time, batch_size=args.batch_size,
        seq_fit_len=args.seq_fit_len, seq_est_len=args.seq_est_len,
        est_hidden_size=args.est_hidden_size, learning_rate=args.learning_rate,
        seed=seed, val_fraction=args.val_fraction, val_stride=args.val_stride,
        max_iters=args.max_iters, val_every=args.val_every,
        normalize=not args.no_normalize)
    spec = ModelSpec(args.n_x, ds.n_u, ds.n_y, hidden=args.model_hidden,
                     skip=not args.no_skip)
    tr, va = split_train_val(ds, cfg.val_fraction, min_len=cfg.m + 1)
    ckpt, log = train(spec, cfg, tr, va)
    save_checkpoint(ckpt, args.out)
    if args.log:
        write_log_csv(log, args.log)
    print(f"trained {len(log)} iterations; best validation loss "
          f"{ckpt.best_val_loss:.6g} at iteration {ckpt.iteration}; "
          f"checkpoint -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_csv(args.data, _cols(args.u_cols), _cols(args.y_cols))
    report = evaluate_model(ckpt, ds, init_policy=args.init_policy, skip=args.skip,
                            with_trace=args.trace is not None)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    if args.trace:
        write_trace_csv(report, args.trace)
    per_ch = ", ".join(f"{v:.2f}" for v in report.per_channel)
    print(f"FIT {report.fit_percent:.2f}% (per channel: {per_ch}); "
          f"RMSE {report.rmse:.6g} over {report.n_test} samples")
    return 0


def _cmd_campaign(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    train_ds = load_csv(spec["train_csv"], spec.get("u_cols"), spec.get("y_cols"))
    test_ds = load_csv(spec["test_csv"], spec.get("u_cols"), spec.get("y_cols"))
    model_d = spec.get("model", {})
    model_spec = ModelSpec(model_d.get("n_x", 2), train_ds.n_u, train_ds.n_y,
                           hidden=model_d.get("hidden", 15),
                           skip=model_d.get("skip", True))
    base = TrainConfig.from_dict(spec["base"]) if "base" in spec else None
    grid = experiments.FactorGrid(spec.get("factors", {}), spec.get("seeds", [0]))
    parallelism = args.parallelism if args.parallelism is not None \
        else int(spec.get("parallelism", 1))
    records = experiments.run_campaign(
        grid, train_ds, test_ds, model_spec, args.out, parallelism=parallelism,
        base=base, init_policy=spec.get("init_policy", "estimator"))
    ok = sum(1 for r in records if r.status == "ok")
    print(f"campaign complete: {len(records)} records ({ok} ok) in "
          f"{os.path.join(args.out, 'results.csv')}")
    return 0


def _parse_filter(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"bad --filter {item!r}; expected FACTOR=VALUE")
        key, value = item.split("=", 1)
        for cast in (int, float):
            try:
                value = cast(value)
                break
            except ValueError:
                continue
        out[key] = value
    return out


def _cmd_analyze(args) -> int:
    records = experiments.load_records(args.results)
    os.makedirs(args.out, exist_ok=True)
    filter_by = _parse_filter(args.filter)
    if args.factors:
        factors = [f.strip() for f in args.factors.split(",")]
    else:
        factors = [f for f in experiments.FACTOR_NAMES
                   if len({getattr(r, f) for r in records}) > 1]
    written = []
    for factor in factors:
        table = analysis.main_effects(records, factor, response=args.response,
                                      filter_by=filter_by)
        base = os.path.join(args.out, f"main_effects_{factor}")
        analysis.write_effects_csv(table, base + ".csv")
        analysis.plot_main_effects(table, base + ".svg")
        written.append(base + ".csv")
    for pair in args.interactions:
        fa, _, fb = pair.partition(":")
        grid = analysis.interactions(records, fa.strip(), fb.strip(),
                                     response=args.response, filter_by=filter_by)
        base = os.path.join(args.out, f"interaction_{fa.strip()}_{fb.strip()}")
        analysis.write_interactions_csv(grid, base + ".csv")
        analysis.plot_interactions(grid, base + ".svg")
        written.append(base + ".csv")
    if args.hist:
        stats = analysis.replication_stats(
            [r for r in records if r.status == "ok"], response=args.response)
        base = os.path.join(args.out, "replication_histogram")
        analysis.write_histogram_csv(stats, base + ".csv")
        analysis.plot_histogram(stats, base + ".svg", label=args.response)
        written.append(base + ".csv")
    att = analysis.attrition(records)
    print(f"analysis wrote {len(written)} tables to {args.out}; run statuses: {att}")
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "campaign": _cmd_campaign,
    "analyze": _cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError, ContractError, WindowError,
            DivergenceError, CheckpointError) as err:
        message = " ".join(str(err).split())
        print(f"error: {type(err).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
