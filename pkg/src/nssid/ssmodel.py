"""Neural state-space model: one-step transition and open-loop simulation.

x_{k+1} = f([x_k; u_k]) and y_k = g(x_k), with f and g single-hidden-layer
MLPs. The output is strictly proper: g sees the state only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape, Var
from .errors import ContractError, DivergenceError
from .nets import MlpSpec, init_params, mlp_apply

__all__ = ["ModelSpec", "NeuralStateSpaceModel", "build_model", "step", "simulate",
           "batched_rollout", "step_graph", "output_graph", "sim_states_graph",
           "STATE_LIMIT"]

# Rollouts abort once any state entry exceeds this magnitude; early training on
# unstable parameterizations can overflow silently otherwise.
STATE_LIMIT = 1e6


@dataclass(frozen=True)
class ModelSpec:
    """Structural description: dimensions plus MLP width and bypass flag."""

    n_x: int
    n_u: int
    n_y: int
    hidden: int = 15
    skip: bool = True


@dataclass
class NeuralStateSpaceModel:
    n_x: int
    n_u: int
    n_y: int
    f_spec: MlpSpec
    g_spec: MlpSpec
    params: ParamStore  # keys "f.*" and "g.*"

    def __post_init__(self):
        if self.f_spec.in_dim != self.n_x + self.n_u or self.f_spec.out_dim != self.n_x:
            raise ValueError(
                f"transition net must map {self.n_x + self.n_u} -> {self.n_x}, "
                f"got {self.f_spec.in_dim} -> {self.f_spec.out_dim}"
            )
        if self.g_spec.in_dim != self.n_x or self.g_spec.out_dim != self.n_y:
            raise ValueError(
                f"output net must map {self.n_x} -> {self.n_y}, "
                f"got {self.g_spec.in_dim} -> {self.g_spec.out_dim}"
            )

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.n_x, self.n_u, self.n_y, self.f_spec.hidden_dim,
                         self.f_spec.skip)

    def copy(self) -> "NeuralStateSpaceModel":
        return NeuralStateSpaceModel(self.n_x, self.n_u, self.n_y, self.f_spec,
                                     self.g_spec, self.params.copy())


def _seed_entropy(seed, stream: int):
    if isinstance(seed, (int, np.integer)):
        return [int(seed) & (2 ** 64 - 1), stream]
    return list(seed) + [stream]


def build_model(spec: ModelSpec, seed=0) -> NeuralStateSpaceModel:
    """Instantiate a model with seeded parameters (see nets.init_params)."""
    f_spec = MlpSpec(spec.n_x + spec.n_u, spec.hidden, spec.n_x, skip=spec.skip)
    g_spec = MlpSpec(spec.n_x, spec.hidden, spec.n_y, skip=spec.skip)
    store = ParamStore()
    init_params(f_spec, _seed_entropy(seed, 0), prefix="f.", into=store)
    init_params(g_spec, _seed_entropy(seed, 1), prefix="g.", into=store)
    return NeuralStateSpaceModel(spec.n_x, spec.n_u, spec.n_y, f_spec, g_spec, store)


# -- graph builders (shared by simulation and training losses) -------------


def step_graph(tape: Tape, model: NeuralStateSpaceModel, x: Var, u: Var) -> Var:
    return mlp_apply(tape, model.f_spec, tape.concat([x, u]), prefix="f.")


def output_graph(tape: Tape, model: NeuralStateSpaceModel, x: Var) -> Var:
    return mlp_apply(tape, model.g_spec, x, prefix="g.")


def _check_state(value: np.ndarray, step_index: int) -> None:
    finite = np.isfinite(value)
    if np.all(finite) and np.max(np.abs(value)) <= STATE_LIMIT:
        return
    if value.ndim == 2:
        bad = np.where(~(finite.all(axis=1) & (np.abs(value).max(axis=1) <= STATE_LIMIT)))[0]
        row = int(bad[0]) if bad.size else None
    else:
        row = None
    raise DivergenceError(
        f"state exceeded magnitude {STATE_LIMIT:g} at step {step_index}"
        + (f" (sequence {row})" if row is not None else ""),
        step=step_index, sequence=row,
    )


def sim_states_graph(tape: Tape, model: NeuralStateSpaceModel, x0: Var,
                     u_steps: np.ndarray) -> list[Var]:
    """States [x0, x1, ..., xH] for H = len(u_steps) transition inputs.

    ``u_steps`` has shape (H, n_u) or (batch, H, n_u) matching x0's batching.
    Raises DivergenceError (with step index) on guard violation.
    """
    _check_state(x0.value, 0)
    states = [x0]
    h = u_steps.shape[-2]
    x = x0
    for k in range(h):
        u_k = tape.const(u_steps[..., k, :], name=f"u[{k}]")
        x = step_graph(tape, model, x, u_k)
        _check_state(x.value, k + 1)
        states.append(x)
    return states


# -- plain-array operations -------------------------------------------------


def step(model: NeuralStateSpaceModel, x, u) -> np.ndarray:
    """One transition x_{k+1} = f([x; u]) on plain arrays."""
    tape = Tape(model.params)
    return step_graph(tape, model, tape.const(x, name="x"), tape.const(u, name="u")).value


def simulate(model: NeuralStateSpaceModel, x_init, u) -> tuple[np.ndarray, np.ndarray]:
    """Open-loop rollout from ``x_init`` under inputs ``u`` of shape (H, n_u).

    Returns (states, outputs) of shapes (H+1, n_x) and (H+1, n_y): the initial
    state and its output are included, and each of the H inputs advances the
    state once.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1, model.n_u)
    tape = Tape(model.params)
    states = sim_states_graph(tape, model, tape.const(x_init, name="x0"), u)
    outputs = [output_graph(tape, model, s) for s in states]
    return (np.stack([s.value for s in states]),
            np.stack([o.value for o in outputs]))


def batched_rollout(model: NeuralStateSpaceModel, x_init, u) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rollout over a batch; elementwise identical to per-item simulate.

    ``x_init`` has shape (B, n_x); ``u`` shape (B, H, n_u) or a list of equal
    length windows. Returns (states (B, H+1, n_x), outputs (B, H+1, n_y)).
    """
    if isinstance(u, (list, tuple)):
        lengths = {np.asarray(w).shape[0] for w in u}
        if len(lengths) > 1:
            raise ContractError(f"ragged batch: window lengths {sorted(lengths)}")
    u = np.asarray(u, dtype=np.float64)
    x_init = np.asarray(x_init, dtype=np.float64)
    if x_init.ndim != 2 or u.ndim != 3 or u.shape[0] != x_init.shape[0]:
        raise ContractError(
            f"batch sizes disagree: x_init {x_init.shape}, u {u.shape}"
        )
    tape = Tape(model.params)
    states = sim_states_graph(tape, model, tape.const(x_init, name="x0"), u)
    outputs = [output_graph(tape, model, s) for s in states]
    return (np.stack([s.value for s in states], axis=1),
            np.stack([o.value for o in outputs], axis=1))
