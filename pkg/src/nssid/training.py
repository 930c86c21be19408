"""Loss construction, Adam optimization, the fixed-budget training loop with
hold-out validation checkpointing, and checkpoint persistence.

The minibatch objective over b subsequences of length m = m_e + m_f is

    J = (1 / (b*m)) * sum_s sum_{j=m_e}^{m-1} ||y[i_s+j] - y_sim[i_s+j]||^2

with the initial state of each fitting rollout supplied by the estimator from
the leading m_e window. The 1/(b*m) constant is kept as-is even though the
inner sum has m_f terms, so the effective gradient scale shifts with m_e/m_f.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ParamStore, Tape, Var
from .data import Dataset, Normalizer, SubsequenceBatch, enumerate_windows, sample_batch
from .errors import (CheckpointError, ContractError, DivergenceError,
                     NumericalError, WindowError)
from .estimators import ESTIMATOR_KINDS, StateEstimator, build_estimator, estimate_graph
from .nets import LstmSpec, MlpSpec
from .ssmodel import (NeuralStateSpaceModel, build_model, output_graph,
                      sim_states_graph)

__all__ = ["TrainConfig", "AdamState", "adam_step", "minibatch_loss",
           "fitting_predictions", "full_sim_loss", "train", "Checkpoint", "LogRow",
           "save_checkpoint", "load_checkpoint", "write_log_csv",
           "CHECKPOINT_SCHEMA_VERSION"]

CHECKPOINT_SCHEMA_VERSION = 1
MAX_CONSECUTIVE_DIVERGED = 50


@dataclass
class TrainConfig:
    """Experiment factors plus loop controls.

    ``max_iters`` exists for reproducible tests and overrides the wall-clock
    budget when set; campaigns normally run on ``max_time`` seconds.
    """

    est_type: str = "ZERO"
    max_time: float = 300.0
    batch_size: int = 32
    seq_fit_len: int = 40
    seq_est_len: int = 10
    est_hidden_size: int = 15
    learning_rate: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    val_stride: int | None = None  # defaults to seq_fit_len
    max_iters: int | None = None
    val_every: int = 20
    normalize: bool = True

    def __post_init__(self):
        if self.est_type not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown est_type {self.est_type!r}")
        for name in ("batch_size", "seq_fit_len", "seq_est_len", "est_hidden_size",
                     "val_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in (0, 1)")
        if self.val_stride is not None and self.val_stride < 1:
            raise ValueError("val_stride must be >= 1")
        if self.max_iters is not None and self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    @property
    def m(self) -> int:
        return self.seq_est_len + self.seq_fit_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kwargs) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kwargs)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              learning_rate: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; the state is advanced in place."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        bad = np.where(~np.isfinite(grads))[0]
        raise NumericalError(f"non-finite gradient at flat indices {bad[:5].tolist()}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps), state


class _FlatParams:
    """Concatenated flat view over the stores the optimizer updates."""

    def __init__(self, stores: list[ParamStore]):
        self.stores = [s for s in stores if s is not None]

    @property
    def size(self) -> int:
        return sum(s.size for s in self.stores)

    def get(self) -> np.ndarray:
        return np.concatenate([s.flatten() for s in self.stores]) if self.stores \
            else np.zeros(0)

    def set(self, flat: np.ndarray) -> None:
        offset = 0
        for s in self.stores:
            s.assign_flat(flat[offset:offset + s.size])
            offset += s.size

    def grads(self, tape: Tape) -> np.ndarray:
        named = tape.param_grads()
        parts = []
        for s in self.stores:
            for name in s.names():
                g = named[name]
                if not np.all(np.isfinite(g)):
                    raise NumericalError(f"non-finite gradient for parameter {name!r}")
                parts.append(g.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


# -- losses ---------------------------------------------------------------------


def _fitting_graph(model: NeuralStateSpaceModel, estimator: StateEstimator,
                   batch: SubsequenceBatch, rng=None) -> tuple[Tape, list[Var]]:
    """Estimate each sequence's initial state and roll out the fitting window;
    returns the tape and the m_f per-step output nodes, each (b, n_y)."""
    if estimator.m_e != batch.m_e:
        raise ContractError(
            f"estimator window m_e={estimator.m_e} != batch window m_e={batch.m_e}")
    stores = [model.params] + ([estimator.params] if estimator.params is not None else [])
    tape = Tape(stores)
    try:
        x0 = estimate_graph(tape, estimator, model, batch.u_est, batch.y_est, rng=rng)
        states = sim_states_graph(tape, model, x0, batch.u_fit[:, : batch.m_f - 1])
    except DivergenceError as err:
        seq = err.sequence
        start = int(batch.start_indices[seq]) if seq is not None else None
        raise DivergenceError(
            str(err) + (f", start index {start}" if start is not None else ""),
            step=err.step, sequence=seq) from None
    return tape, [output_graph(tape, model, x_j) for x_j in states]


def minibatch_loss(model: NeuralStateSpaceModel, estimator: StateEstimator,
                   batch: SubsequenceBatch, rng=None) -> tuple[Var, Tape]:
    """Estimator-initialized truncated simulation loss over one batch.

    Data in ``batch`` must already be in the model's working (normalized)
    units. Returns the scalar loss node and its tape; the loss value is
    ``loss.value`` and gradients follow from ``tape.backward(loss)``.
    """
    tape, outputs = _fitting_graph(model, estimator, batch, rng)
    y_fit = batch.y_fit
    total = None
    for j, y_j in enumerate(outputs):
        resid = tape.sub(y_j, tape.const(y_fit[:, j], name=f"y[{j}]"))
        sq = tape.sum_sq(resid)
        total = sq if total is None else tape.add(total, sq)
    loss = tape.scale(total, 1.0 / (batch.b * batch.m), name="loss")
    return loss, tape


def fitting_predictions(model: NeuralStateSpaceModel, estimator: StateEstimator,
                        batch: SubsequenceBatch, rng=None) -> np.ndarray:
    """Fitting-window outputs (b, m_f, n_y) along the exact loss path."""
    _, outputs = _fitting_graph(model, estimator, batch, rng)
    return np.stack([o.value for o in outputs], axis=1)


def full_sim_loss(model: NeuralStateSpaceModel, x0, ds: Dataset
                  ) -> tuple[Var, Tape, Var]:
    """Simulation-error norm of a single rollout over the whole record.

    Returns (loss, tape, x0_node); after ``tape.backward(loss)`` the gradient
    with respect to the initial state is ``x0_node.grad``, so x0 can be used
    as an optimization variable alongside the model parameters.
    """
    tape = Tape(model.params)
    x0_var = tape.const(x0, name="x0")
    states = sim_states_graph(tape, model, x0_var, ds.u[: ds.n - 1])
    total = None
    for k, x_k in enumerate(states):
        resid = tape.sub(output_graph(tape, model, x_k),
                         tape.const(ds.y[k], name=f"y[{k}]"))
        sq = tape.sum_sq(resid)
        total = sq if total is None else tape.add(total, sq)
    return total, tape, x0_var


# -- training loop ----------------------------------------------------------------


@dataclass
class LogRow:
    iteration: int
    elapsed_s: float
    train_loss: float
    val_loss: float | None = None


@dataclass
class Checkpoint:
    model: NeuralStateSpaceModel
    estimator: StateEstimator | None
    normalizer: Normalizer
    config: TrainConfig
    best_val_loss: float
    iteration: int
    rng_digest: str = ""


def _rng_digest(rng) -> str:
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=int)
    return hashlib.sha256(state.encode()).hexdigest()


def _seed_list(seed: int, stream: int) -> list[int]:
    return [int(seed) & (2 ** 64 - 1), stream]


def _validation_loss(model, estimator, val_split: Dataset, cfg: TrainConfig) -> float:
    stride = cfg.val_stride if cfg.val_stride is not None else cfg.seq_fit_len
    windows = enumerate_windows(val_split, cfg.seq_est_len, cfg.seq_fit_len, stride)
    # Fresh generator with a fixed seed per call: RAND estimates are then
    # identical across evaluations and checkpoint selection stays noise-free.
    rng = np.random.default_rng(_seed_list(cfg.seed, 901))
    loss, _ = minibatch_loss(model, estimator, windows, rng=rng)
    return float(loss.value)


def train(model_or_spec, config: TrainConfig, train_split: Dataset,
          val_split: Dataset, estimator: StateEstimator | None = None
          ) -> tuple[Checkpoint, list[LogRow]]:
    """Optimize model (and estimator) parameters on subsequence batches.

    ``model_or_spec`` is a ModelSpec (the model is then built from
    ``config.seed``) or a prebuilt NeuralStateSpaceModel. Splits arrive in
    physical units; normalization statistics are fit on the training split
    (skipped when ``config.normalize`` is false). The loop runs until
    ``config.max_time`` seconds elapse (or exactly ``config.max_iters``
    iterations when set), evaluating the deterministic validation loss every
    ``config.val_every`` iterations and keeping the best parameters.

    Returns the best-validation checkpoint and the per-iteration log.
    """
    cfg = config
    m = cfg.m
    for name, split in (("train", train_split), ("validation", val_split)):
        if split.n < m + 1:
            raise WindowError(
                f"{name} split of {split.n} samples cannot host an m={m} window")

    if isinstance(model_or_spec, NeuralStateSpaceModel):
        model = model_or_spec
    else:
        model = build_model(model_or_spec, seed=_seed_list(cfg.seed, 1))
    if estimator is None:
        estimator = build_estimator(cfg.est_type, cfg.seq_est_len, model.n_x,
                                    model.n_u, model.n_y, cfg.est_hidden_size,
                                    seed=_seed_list(cfg.seed, 2))

    normalizer = Normalizer.fit(train_split) if cfg.normalize else \
        Normalizer.identity(train_split.n_u, train_split.n_y)
    tr = normalizer.apply(train_split)
    va = normalizer.apply(val_split)

    flat = _FlatParams([model.params, estimator.params])
    adam = AdamState.zeros(flat.size)
    rng = np.random.default_rng(_seed_list(cfg.seed, 3))

    best_val = np.inf
    best_params = flat.get()
    best_iteration = 0
    log: list[LogRow] = []
    diverged_streak = 0
    iteration = 0
    start = time.monotonic()

    while True:
        if cfg.max_iters is not None:
            if iteration >= cfg.max_iters:
                break
        elif time.monotonic() - start >= cfg.max_time:
            break

        val_loss = None
        if iteration % cfg.val_every == 0:
            try:
                val_loss = _validation_loss(model, estimator, va, cfg)
            except DivergenceError:
                val_loss = float("inf")  # no checkpoint from a diverged pass
            if val_loss < best_val:
                best_val = val_loss
                best_params = flat.get()
                best_iteration = iteration

        batch = sample_batch(tr, cfg.seq_est_len, cfg.seq_fit_len, cfg.batch_size, rng)
        try:
            loss, tape = minibatch_loss(model, estimator, batch, rng=rng)
        except DivergenceError:
            diverged_streak += 1
            if diverged_streak > MAX_CONSECUTIVE_DIVERGED:
                raise DivergenceError(
                    f"aborting after {diverged_streak} consecutive diverged batches")
            log.append(LogRow(iteration, time.monotonic() - start, float("nan"), val_loss))
            iteration += 1
            continue
        diverged_streak = 0
        tape.backward(loss)
        grads = flat.grads(tape)
        new_params, adam = adam_step(adam, flat.get(), grads, cfg.learning_rate)
        flat.set(new_params)
        log.append(LogRow(iteration, time.monotonic() - start, float(loss.value), val_loss))
        iteration += 1

    # Final validation pass so improvements after the last periodic check count.
    try:
        final_val = _validation_loss(model, estimator, va, cfg)
    except DivergenceError:
        final_val = float("inf")
    if final_val < best_val:
        best_val = final_val
        best_params = flat.get()
        best_iteration = iteration

    flat.set(best_params)
    ckpt = Checkpoint(model, estimator, normalizer, cfg, float(best_val),
                      best_iteration, _rng_digest(rng))
    return ckpt, log


def write_log_csv(log: list[LogRow], path) -> None:
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "elapsed_s", "train_loss", "val_loss"])
        for row in log:
            writer.writerow([row.iteration, f"{row.elapsed_s:.3f}",
                             f"{row.train_loss:.17g}",
                             "" if row.val_loss is None else f"{row.val_loss:.17g}"])


# -- checkpoint persistence --------------------------------------------------------


def _params_to_json(store: ParamStore) -> dict:
    return {name: {"shape": list(arr.shape),
                   "data": [f"{v:.17g}" for v in arr.ravel()]}
            for name, arr in store.items()}


def _params_from_json(d: dict) -> ParamStore:
    store = ParamStore()
    for name, entry in d.items():
        values = np.array([float(s) for s in entry["data"]], dtype=np.float64)
        store.add(name, values.reshape(entry["shape"]))
    return store


def _mlp_spec_to_json(spec: MlpSpec) -> dict:
    return {"type": "mlp", "in_dim": spec.in_dim, "hidden_dim": spec.hidden_dim,
            "out_dim": spec.out_dim, "skip": spec.skip}


def _spec_from_json(d: dict):
    if d["type"] == "mlp":
        return MlpSpec(d["in_dim"], d["hidden_dim"], d["out_dim"], d["skip"])
    if d["type"] == "lstm":
        return LstmSpec(d["in_dim"], d["hidden_dim"], d["out_dim"])
    raise CheckpointError(f"unknown network spec type {d['type']!r}")


def _checksum(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write a self-verifying JSON checkpoint (17-significant-digit decimals)."""
    est = ckpt.estimator
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": ckpt.config.to_dict(),
        "normalizer": ckpt.normalizer.to_dict(),
        "model": {
            "n_x": ckpt.model.n_x, "n_u": ckpt.model.n_u, "n_y": ckpt.model.n_y,
            "f_spec": _mlp_spec_to_json(ckpt.model.f_spec),
            "g_spec": _mlp_spec_to_json(ckpt.model.g_spec),
            "params": _params_to_json(ckpt.model.params),
        },
        "estimator": None if est is None else {
            "kind": est.kind, "m_e": est.m_e, "hidden_size": est.hidden_size,
            "spec": None if est.spec is None else (
                _mlp_spec_to_json(est.spec) if isinstance(est.spec, MlpSpec)
                else {"type": "lstm", "in_dim": est.spec.in_dim,
                      "hidden_dim": est.spec.hidden_dim, "out_dim": est.spec.out_dim}),
            "params": None if est.params is None else _params_to_json(est.params),
        },
        "best_val_loss": ckpt.best_val_loss,
        "iteration": ckpt.iteration,
        "rng_digest": ckpt.rng_digest,
    }
    payload["checksum"] = _checksum({k: v for k, v in payload.items()})
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_checkpoint(path) -> Checkpoint:
    """Reload a checkpoint, verifying schema version and integrity checksum."""
    with open(str(path), "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise CheckpointError(f"{path}: not a checkpoint file ({err})") from None
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint schema version {version!r} "
            f"(expected {CHECKPOINT_SCHEMA_VERSION})")
    stored = payload.pop("checksum", None)
    if stored != _checksum(payload):
        raise CheckpointError("checkpoint checksum mismatch: file corrupted or edited")
    model_d = payload["model"]
    model = NeuralStateSpaceModel(
        model_d["n_x"], model_d["n_u"], model_d["n_y"],
        _spec_from_json(model_d["f_spec"]), _spec_from_json(model_d["g_spec"]),
        _params_from_json(model_d["params"]))
    est_d = payload["estimator"]
    estimator = None
    if est_d is not None:
        estimator = StateEstimator(
            est_d["kind"], est_d["m_e"], est_d["hidden_size"],
            None if est_d["spec"] is None else _spec_from_json(est_d["spec"]),
            None if est_d["params"] is None else _params_from_json(est_d["params"]))
    return Checkpoint(model, estimator, Normalizer.from_dict(payload["normalizer"]),
                      TrainConfig.from_dict(payload["config"]),
                      payload["best_val_loss"], payload["iteration"],
                      payload["rng_digest"])
