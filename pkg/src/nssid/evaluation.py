"""Open-loop test evaluation and the FIT goodness-of-fit index.

FIT = 100 * (1 - ||y - y_sim|| / ||y - mean(y)||), in percent: 100 is a
perfect simulation, 0 matches the mean predictor. All reported values are
computed in physical units after denormalization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractError
from .estimators import estimate
from .ssmodel import simulate
from .training import Checkpoint

__all__ = ["FitReport", "fit_index", "evaluate_model", "write_trace_csv"]

INIT_POLICIES = ("estimator", "zero-full")


def fit_index(y, y_sim) -> float:
    """Eq.-style normalized fit percentage for one channel."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_sim = np.asarray(y_sim, dtype=np.float64).ravel()
    if y.shape != y_sim.shape or y.size == 0:
        raise ValueError(f"fit_index needs equal nonzero lengths, got {y.shape} "
                         f"and {y_sim.shape}")
    denom = np.sqrt(np.sum((y - y.mean()) ** 2))
    if denom == 0.0:
        raise ContractError("FIT undefined: target signal is constant")
    return 100.0 * (1.0 - np.sqrt(np.sum((y - y_sim) ** 2)) / denom)


def _fit_stacked(y: np.ndarray, y_sim: np.ndarray) -> float:
    # Multi-channel variant: Frobenius residual norms, per-channel means.
    denom = np.sqrt(np.sum((y - y.mean(axis=0)) ** 2))
    if denom == 0.0:
        raise ContractError("FIT undefined: target signal is constant")
    return 100.0 * (1.0 - np.sqrt(np.sum((y - y_sim) ** 2)) / denom)


@dataclass
class FitReport:
    fit_percent: float            # stacked over channels (equals per_channel[0] for SISO)
    per_channel: list[float]
    rmse: float
    n_test: int
    trace: dict | None = None     # arrays: t, y, y_sim, error (physical units)

    def to_dict(self) -> dict:
        return {"fit_percent": self.fit_percent, "per_channel": self.per_channel,
                "rmse": self.rmse, "n_test": self.n_test}


def evaluate_model(ckpt: Checkpoint, test_ds: Dataset, init_policy: str = "estimator",
                   skip: int = 0, with_trace: bool = False) -> FitReport:
    """Open-loop simulation of a checkpointed model over a test record.

    init_policy "estimator": the checkpoint's estimator consumes the first m_e
    test samples and the FIT is computed over the remaining ones. Policy
    "zero-full": the rollout starts from the zero state at sample 0 and the
    first ``skip`` samples are excluded from scoring (useful to drop the
    transient of asymptotically stable systems).

    A RAND estimator draws from a generator seeded by the checkpoint's rng
    digest, so evaluation is deterministic given the checkpoint.
    """
    if init_policy not in INIT_POLICIES:
        raise ValueError(f"init_policy must be one of {INIT_POLICIES}")
    model = ckpt.model
    norm = ckpt.normalizer
    u_n = norm.norm_u(test_ds.u)
    y_n = norm.norm_y(test_ds.y)
    n = test_ds.n

    if init_policy == "estimator":
        if ckpt.estimator is None:
            raise ContractError("checkpoint has no estimator; use init_policy='zero-full'")
        m_e = ckpt.estimator.m_e
        if n <= m_e:
            raise ValueError(f"test record of {n} samples is not longer than m_e={m_e}")
        rng = None
        if ckpt.estimator.kind == "RAND":
            rng = np.random.default_rng(int(ckpt.rng_digest[:16] or "0", 16))
        x0 = estimate(ckpt.estimator, model, u_n[:m_e], y_n[:m_e], rng=rng)
        _, y_sim_n = simulate(model, x0, u_n[m_e:n - 1])
        start = m_e
    else:
        if not (0 <= skip < n):
            raise ValueError(f"skip must lie in [0, {n}), got {skip}")
        _, y_sim_n = simulate(model, np.zeros(model.n_x), u_n[: n - 1])
        y_sim_n = y_sim_n[skip:]
        start = skip

    y_sim = norm.denorm_y(y_sim_n)
    y_true = test_ds.y[start:]
    per_channel = [fit_index(y_true[:, c], y_sim[:, c]) for c in range(test_ds.n_y)]
    stacked = _fit_stacked(y_true, y_sim)
    rmse = float(np.sqrt(np.mean((y_true - y_sim) ** 2)))
    trace = None
    if with_trace:
        trace = {"t": np.arange(start, n), "y": y_true, "y_sim": y_sim,
                 "error": y_true - y_sim}
    return FitReport(stacked, per_channel, rmse, len(y_true), trace)


def write_trace_csv(report: FitReport, prefix) -> list[str]:
    """One file per channel with columns t, y, y_sim, error."""
    if report.trace is None:
        raise ContractError("report carries no trace; evaluate with with_trace=True")
    tr = report.trace
    paths = []
    for c in range(tr["y"].shape[1]):
        path = f"{prefix}_ch{c}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "y", "y_sim", "error"])
            for k in range(len(tr["t"])):
                writer.writerow([int(tr["t"][k]), f"{tr['y'][k, c]:.17g}",
                                 f"{tr['y_sim'][k, c]:.17g}",
                                 f"{tr['error'][k, c]:.17g}"])
        paths.append(path)
    return paths
