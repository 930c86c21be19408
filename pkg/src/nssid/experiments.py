"""Full-factorial campaign enumeration and execution with persisted run records.

Campaigns cross the training-algorithm factors, execute one training run per
(configuration, seed) pair, score each trained model on the test record, and
append one row per run to a results CSV as runs finish. Already-recorded
pairs are skipped on restart, so an interrupted campaign is resumable.
"""

from __future__ import annotations

import csv
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from itertools import product

from .data import Dataset, split_train_val
from .errors import DivergenceError, WindowError
from .evaluation import evaluate_model
from .ssmodel import ModelSpec
from .training import TrainConfig, save_checkpoint, train

__all__ = ["FACTOR_NAMES", "FactorGrid", "RunRecord", "enumerate_grid",
           "run_single", "run_campaign", "replicate", "load_records",
           "RESULT_COLUMNS"]

# Canonical factor order; grids enumerate their Cartesian product in this order.
FACTOR_NAMES = ("est_type", "max_time", "batch_size", "seq_fit_len",
                "seq_est_len", "est_hidden_size")

RESULT_COLUMNS = ("est_type", "max_time", "batch_size", "seq_fit_len",
                  "seq_est_len", "est_hidden_size", "seed", "fit_percent",
                  "val_loss", "iters", "wall_s", "status", "checkpoint")


@dataclass
class FactorGrid:
    """Named factor levels plus the replicate seed list."""

    levels: dict[str, list] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        for name, values in self.levels.items():
            if name not in FACTOR_NAMES:
                raise ValueError(f"unknown factor {name!r}; expected one of {FACTOR_NAMES}")
            if not values:
                raise ValueError(f"factor {name!r} has no levels")
        if not self.seeds:
            raise ValueError("seed list must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("duplicate seed in seed list")


def enumerate_grid(grid: FactorGrid, base: TrainConfig | None = None) -> list[TrainConfig]:
    """Cartesian product of the grid's factor levels, lexicographic in the
    canonical factor order; absent factors keep the base configuration's value."""
    base = base if base is not None else TrainConfig()
    names = [f for f in FACTOR_NAMES if f in grid.levels]
    configs = []
    for combo in product(*(grid.levels[f] for f in names)):
        configs.append(replace(base, **dict(zip(names, combo))))
    return configs


@dataclass
class RunRecord:
    est_type: str
    max_time: float
    batch_size: int
    seq_fit_len: int
    seq_est_len: int
    est_hidden_size: int
    seed: int
    fit_percent: float
    val_loss: float
    iters: int
    wall_s: float
    status: str  # ok | diverged | infeasible
    checkpoint: str = ""

    def key(self) -> tuple:
        return (self.est_type, f"{self.max_time:g}", self.batch_size,
                self.seq_fit_len, self.seq_est_len, self.est_hidden_size, self.seed)


def _config_key(cfg: TrainConfig, seed: int) -> tuple:
    return (cfg.est_type, f"{cfg.max_time:g}", cfg.batch_size, cfg.seq_fit_len,
            cfg.seq_est_len, cfg.est_hidden_size, seed)


def _record_to_row(rec: RunRecord) -> list:
    d = asdict(rec)
    row = []
    for col in RESULT_COLUMNS:
        v = d[col]
        if isinstance(v, float) and math.isnan(v):
            row.append("")
        elif isinstance(v, float):
            row.append(f"{v:.17g}")
        else:
            row.append(v)
    return row


def load_records(path) -> list[RunRecord]:
    """Parse a results CSV back into typed records (missing numbers -> nan)."""
    records = []
    with open(str(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(RunRecord(
                est_type=row["est_type"],
                max_time=float(row["max_time"]),
                batch_size=int(row["batch_size"]),
                seq_fit_len=int(row["seq_fit_len"]),
                seq_est_len=int(row["seq_est_len"]),
                est_hidden_size=int(row["est_hidden_size"]),
                seed=int(row["seed"]),
                fit_percent=float(row["fit_percent"]) if row["fit_percent"] else math.nan,
                val_loss=float(row["val_loss"]) if row["val_loss"] else math.nan,
                iters=int(row["iters"]),
                wall_s=float(row["wall_s"]),
                status=row["status"],
                checkpoint=row.get("checkpoint", ""),
            ))
    return records


def _checkpoint_name(cfg: TrainConfig, seed: int) -> str:
    return (f"ckpt_{cfg.est_type}_t{cfg.max_time:g}_b{cfg.batch_size}"
            f"_mf{cfg.seq_fit_len}_me{cfg.seq_est_len}_h{cfg.est_hidden_size}"
            f"_s{seed}.json")


def run_single(config: TrainConfig, model_spec: ModelSpec, train_ds: Dataset,
               test_ds: Dataset, out_dir=None, init_policy: str = "estimator"
               ) -> RunRecord:
    """Train one configuration, evaluate it on the test record, and return the
    run's record; failures become a status instead of propagating."""
    t0 = time.monotonic()
    fit = math.nan
    val = math.nan
    iters = 0
    status = "ok"
    ckpt_path = ""
    try:
        tr, va = split_train_val(train_ds, config.val_fraction, min_len=config.m + 1)
        ckpt, log = train(model_spec, config, tr, va)
        iters = len(log)
        val = ckpt.best_val_loss
        report = evaluate_model(ckpt, test_ds, init_policy=init_policy)
        fit = report.fit_percent
        if out_dir is not None:
            ckpt_path = os.path.join(str(out_dir), _checkpoint_name(config, config.seed))
            save_checkpoint(ckpt, ckpt_path)
    except WindowError:
        status = "infeasible"
    except DivergenceError:
        status = "diverged"
    wall = time.monotonic() - t0
    return RunRecord(config.est_type, config.max_time, config.batch_size,
                     config.seq_fit_len, config.seq_est_len, config.est_hidden_size,
                     config.seed, fit, val, iters, wall, status, ckpt_path)


def _run_entry(args) -> RunRecord:
    return run_single(*args)


def run_campaign(grid: FactorGrid, train_ds: Dataset, test_ds: Dataset,
                 model_spec: ModelSpec, out_dir, parallelism: int = 1,
                 base: TrainConfig | None = None, init_policy: str = "estimator"
                 ) -> list[RunRecord]:
    """Execute the full grid x seeds, appending records to out_dir/results.csv.

    Long runs are scheduled first (max_time descending, then grid order).
    Restarting skips every (configuration, seed) pair already in the results
    file. With parallelism > 1, isolated worker processes run configurations
    concurrently; the parent is the only writer of the results file.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    os.makedirs(str(out_dir), exist_ok=True)
    results_path = os.path.join(str(out_dir), "results.csv")

    done: set[tuple] = set()
    existing: list[RunRecord] = []
    if os.path.exists(results_path):
        existing = load_records(results_path)
        done = {rec.key() for rec in existing}

    configs = enumerate_grid(grid, base)
    order = sorted(range(len(configs)), key=lambda i: (-configs[i].max_time, i))
    jobs = []
    for i in order:
        for seed in grid.seeds:
            cfg = replace(configs[i], seed=seed)
            if _config_key(cfg, seed) in done:
                continue
            jobs.append(cfg)

    if parallelism > 1 and any(cfg.max_iters is None for cfg in jobs):
        warnings.warn(
            "wall-clock training budgets combined with parallel workers skew "
            "timing comparisons between configurations; prefer parallelism=1 "
            "or max_iters budgets", UserWarning, stacklevel=2)

    new_records: list[RunRecord] = []
    write_header = not os.path.exists(results_path)

    def append(rec: RunRecord):
        nonlocal write_header
        with open(results_path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if write_header:
                writer.writerow(RESULT_COLUMNS)
                write_header = False
            writer.writerow(_record_to_row(rec))
        new_records.append(rec)

    if parallelism == 1:
        for cfg in jobs:
            append(run_single(cfg, model_spec, train_ds, test_ds, out_dir, init_policy))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_run_entry,
                                   (cfg, model_spec, train_ds, test_ds, out_dir,
                                    init_policy))
                       for cfg in jobs]
            for fut in as_completed(futures):
                append(fut.result())

    return existing + new_records


def replicate(config: TrainConfig, seeds: list[int], model_spec: ModelSpec,
              train_ds: Dataset, test_ds: Dataset, out_dir=None,
              init_policy: str = "estimator") -> list[RunRecord]:
    """Repeat one configuration across seeds (repeatability studies)."""
    if not seeds:
        raise ValueError("seed list must be nonempty")
    if len(set(seeds)) != len(seeds):
        raise ValueError("duplicate seed in seed list")
    records = []
    for seed in seeds:
        cfg = replace(config, seed=seed)
        records.append(run_single(cfg, model_spec, train_ds, test_ds, out_dir,
                                  init_policy))
    return records
