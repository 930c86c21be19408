"""Network layers assembled from tape primitives.

Two shapes are supported everywhere: a single sample ``(in_dim,)`` or a row
batch ``(batch, in_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape, Var
from .errors import ContractError

__all__ = ["MlpSpec", "LstmSpec", "init_params", "mlp_apply", "mlp_forward",
           "lstm_apply", "lstm_forward"]


@dataclass(frozen=True)
class MlpSpec:
    """Single-hidden-layer tanh MLP, optionally with a direct affine bypass.

    output = W2 tanh(W1 x + b1) + b2 + (Ws x if skip).
    """

    in_dim: int
    hidden_dim: int
    out_dim: int
    skip: bool = False

    def __post_init__(self):
        for field in ("in_dim", "hidden_dim", "out_dim"):
            if getattr(self, field) < 1:
                raise ValueError(f"MlpSpec.{field} must be >= 1")

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {
            "w1": (self.hidden_dim, self.in_dim),
            "b1": (self.hidden_dim,),
            "w2": (self.out_dim, self.hidden_dim),
            "b2": (self.out_dim,),
        }
        if self.skip:
            shapes["ws"] = (self.out_dim, self.in_dim)
        return shapes


@dataclass(frozen=True)
class LstmSpec:
    """Single-layer LSTM with an affine projection of the final hidden state.

    Gate blocks are stacked in the order input, forget, candidate, output;
    the recurrence starts from zero hidden and cell state.
    """

    in_dim: int
    hidden_dim: int
    out_dim: int

    def __post_init__(self):
        for field in ("in_dim", "hidden_dim", "out_dim"):
            if getattr(self, field) < 1:
                raise ValueError(f"LstmSpec.{field} must be >= 1")

    def param_shapes(self) -> dict[str, tuple]:
        h = self.hidden_dim
        return {
            "wx": (4 * h, self.in_dim),
            "wh": (4 * h, h),
            "b": (4 * h,),
            "wp": (self.out_dim, h),
            "bp": (self.out_dim,),
        }


def init_params(spec, seed, prefix: str = "", into: ParamStore | None = None) -> ParamStore:
    """Seeded initialization: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    biases zero.

    ``seed`` may be an int or a sequence of ints (numpy SeedSequence entropy).
    Draw order follows ``spec.param_shapes()`` insertion order, so the seed
    fully determines every value.
    """
    rng = np.random.default_rng(seed)
    store = into if into is not None else ParamStore()
    for name, shape in spec.param_shapes().items():
        if name.startswith("w"):
            bound = 1.0 / np.sqrt(shape[-1])
            store.add(prefix + name, rng.uniform(-bound, bound, size=shape))
        else:
            store.add(prefix + name, np.zeros(shape))
    return store


def mlp_apply(tape: Tape, spec: MlpSpec, x: Var, prefix: str = "") -> Var:
    """Build the MLP onto an existing tape; returns the output node."""
    w1, b1 = tape.param(prefix + "w1"), tape.param(prefix + "b1")
    w2, b2 = tape.param(prefix + "w2"), tape.param(prefix + "b2")
    hidden = tape.tanh(tape.affine(x, w1, b1, name=prefix + "layer1"))
    out = tape.affine(hidden, w2, b2, name=prefix + "layer2")
    if spec.skip:
        out = tape.add(out, tape.affine(x, tape.param(prefix + "ws"), name=prefix + "skip"))
    return out


def mlp_forward(spec: MlpSpec, params: ParamStore, x, prefix: str = "") -> np.ndarray:
    """Evaluate the MLP on plain arrays (tape-per-evaluation)."""
    tape = Tape(params)
    return mlp_apply(tape, spec, tape.const(x, name="x"), prefix=prefix).value


def lstm_apply(tape: Tape, spec: LstmSpec, xs, prefix: str = "") -> Var:
    """Run the cell left-to-right over a sequence of input nodes.

    ``xs`` is a non-empty sequence of Vars, each ``(in_dim,)`` or
    ``(batch, in_dim)``; returns the projection of the final hidden state.
    """
    xs = list(xs)
    if not xs:
        raise ContractError("lstm_apply requires a non-empty input sequence")
    h_dim = spec.hidden_dim
    wx, wh, b = tape.param(prefix + "wx"), tape.param(prefix + "wh"), tape.param(prefix + "b")
    lead = xs[0].value.shape[:-1]
    h = tape.const(np.zeros(lead + (h_dim,)), name=prefix + "h0")
    c = tape.const(np.zeros(lead + (h_dim,)), name=prefix + "c0")
    for t, x_t in enumerate(xs):
        z = tape.add(tape.affine(x_t, wx, b, name=f"{prefix}zx[{t}]"),
                     tape.affine(h, wh, name=f"{prefix}zh[{t}]"))
        gi = tape.sigmoid(tape.slice_last(z, 0, h_dim))
        gf = tape.sigmoid(tape.slice_last(z, h_dim, 2 * h_dim))
        gc = tape.tanh(tape.slice_last(z, 2 * h_dim, 3 * h_dim))
        go = tape.sigmoid(tape.slice_last(z, 3 * h_dim, 4 * h_dim))
        c = tape.add(tape.mul(gf, c), tape.mul(gi, gc))
        h = tape.mul(go, tape.tanh(c))
    return tape.affine(h, tape.param(prefix + "wp"), tape.param(prefix + "bp"),
                       name=prefix + "proj")


def lstm_forward(spec: LstmSpec, params: ParamStore, xs, prefix: str = "") -> np.ndarray:
    """Evaluate the LSTM on a plain (steps, in_dim) array or list of samples."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[0] == 0:
        raise ContractError("lstm_forward requires a non-empty input sequence")
    tape = Tape(params)
    steps = [tape.const(xs[t], name=f"x[{t}]") for t in range(xs.shape[0])]
    return lstm_apply(tape, spec, steps, prefix=prefix).value
