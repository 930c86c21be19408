"""Initial-state estimation strategies.

Each estimator maps an m_e-step window of past inputs/outputs to the state at
the window end, where the fitting rollout starts:

* FF    - MLP over the flattened window (direct affine bypass included).
* LSTM  - recurrent pass over the window, final hidden state projected.
* ZERO  - simulate the model across the window starting from the zero state.
* RAND  - same, starting from a standard-Gaussian draw.

ZERO and RAND never look at the output window.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape, Var
from .errors import ContractError, ShapeError
from .nets import LstmSpec, MlpSpec, init_params, lstm_apply, mlp_apply
from .ssmodel import NeuralStateSpaceModel, step_graph

__all__ = ["ESTIMATOR_KINDS", "StateEstimator", "build_estimator", "estimate",
           "estimate_graph"]

ESTIMATOR_KINDS = ("FF", "LSTM", "ZERO", "RAND")


@dataclass
class StateEstimator:
    kind: str
    m_e: int
    hidden_size: int = 15
    spec: MlpSpec | LstmSpec | None = None
    params: ParamStore | None = None  # keys "est.*"

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; "
                             f"expected one of {ESTIMATOR_KINDS}")
        if self.m_e < 1:
            raise ValueError(f"estimation window length must be >= 1, got {self.m_e}")


def build_estimator(kind: str, m_e: int, n_x: int, n_u: int, n_y: int,
                    hidden_size: int = 15, seed=0) -> StateEstimator:
    """Construct an estimator for a model with the given dimensions.

    Warns (without rejecting) when m_e < n_x: the window then carries fewer
    samples than state variables and reconstruction may be underdetermined.
    """
    if m_e < n_x:
        warnings.warn(
            f"estimation window m_e={m_e} is shorter than the state dimension "
            f"n_x={n_x}; state reconstruction from the window may be underdetermined",
            UserWarning, stacklevel=2,
        )
    if kind == "FF":
        spec = MlpSpec(m_e * (n_u + n_y), hidden_size, n_x, skip=True)
        params = init_params(spec, seed, prefix="est.")
        return StateEstimator(kind, m_e, hidden_size, spec, params)
    if kind == "LSTM":
        spec = LstmSpec(n_u + n_y, hidden_size, n_x)
        params = init_params(spec, seed, prefix="est.")
        return StateEstimator(kind, m_e, hidden_size, spec, params)
    return StateEstimator(kind, m_e, hidden_size)


def _check_windows(est: StateEstimator, u_win: np.ndarray, y_win: np.ndarray) -> None:
    if u_win.shape[-2] != est.m_e or y_win.shape[-2] != est.m_e:
        raise ShapeError(
            f"window length mismatch: estimator expects m_e={est.m_e}, "
            f"got u {u_win.shape[-2]} and y {y_win.shape[-2]} steps"
        )
    if u_win.shape[:-2] != y_win.shape[:-2]:
        raise ShapeError(
            f"u and y windows have different batch shapes: "
            f"{u_win.shape[:-2]} vs {y_win.shape[:-2]}"
        )


def _flatten_window(u_win: np.ndarray, y_win: np.ndarray) -> np.ndarray:
    # Time-major interleave: [u_0, y_0, u_1, y_1, ...] along the last axis.
    m_e = u_win.shape[-2]
    parts = []
    for t in range(m_e):
        parts.append(u_win[..., t, :])
        parts.append(y_win[..., t, :])
    return np.concatenate(parts, axis=-1)


def estimate_graph(tape: Tape, est: StateEstimator, model: NeuralStateSpaceModel,
                   u_win, y_win, rng=None) -> Var:
    """Build the estimate onto an existing tape; returns the state node.

    ``u_win``/``y_win`` are arrays of shape (m_e, ch) or (batch, m_e, ch).
    ``rng`` is consulted only by RAND (one standard-normal draw for the whole
    batch, so a fixed generator state makes the estimate deterministic).
    """
    u_win = np.asarray(u_win, dtype=np.float64)
    y_win = np.asarray(y_win, dtype=np.float64)
    _check_windows(est, u_win, y_win)
    lead = u_win.shape[:-2]

    if est.kind in ("FF", "LSTM"):
        if est.params is None:
            raise ContractError(f"{est.kind} estimator has no parameters")

    if est.kind == "FF":
        features = tape.const(_flatten_window(u_win, y_win), name="est.window")
        return mlp_apply(tape, est.spec, features, prefix="est.")

    if est.kind == "LSTM":
        steps = [tape.const(np.concatenate([u_win[..., t, :], y_win[..., t, :]], axis=-1),
                            name=f"est.in[{t}]")
                 for t in range(est.m_e)]
        return lstm_apply(tape, est.spec, steps, prefix="est.")

    # Dummy estimators: simulate the model itself across the window.
    if est.kind == "ZERO":
        x = tape.const(np.zeros(lead + (model.n_x,)), name="est.x0")
    else:  # RAND
        if rng is None:
            rng = np.random.default_rng()
        x = tape.const(rng.standard_normal(lead + (model.n_x,)), name="est.x0")
    for t in range(est.m_e):
        x = step_graph(tape, model, x, tape.const(u_win[..., t, :], name=f"est.u[{t}]"))
    return x


def estimate(est: StateEstimator, model: NeuralStateSpaceModel, u_win, y_win,
             rng=None) -> np.ndarray:
    """Estimate the state at the window end on plain (m_e, ch) arrays."""
    tape = Tape([model.params] + ([est.params] if est.params is not None else []))
    return estimate_graph(tape, est, model, u_win, y_win, rng=rng).value
