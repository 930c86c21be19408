"""Tape-based reverse-mode automatic differentiation for small dense networks.

Values are float64 numpy arrays: scalars, vectors, or row-batched matrices
(first axis = batch). The primitive set is deliberately closed — affine map,
tanh, sigmoid, elementwise add/multiply, concatenation, slicing along the
last axis, and sum/mean-of-squares reductions — so every backward rule is
enumerable and testable. Layers and losses compose these primitives.

A fresh tape is built per evaluation (define-by-run, eager values); a single
tape must not be shared across concurrent writers, but independent tapes may
be built and differentiated concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError, ShapeError

__all__ = [
    "ParamStore",
    "Tape",
    "Var",
    "forward",
    "backward",
    "grad_check",
    "compare_grads",
    "GradCheckReport",
]


class ParamStore:
    """Named float64 parameter arrays with a stable flattening order.

    Names are unique; flatten/unflatten round-trips exactly (same insertion
    order, same shapes).
    """

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        if arr.shape != self._arrays[name].shape:
            raise ShapeError(
                f"parameter {name!r}: cannot assign shape {arr.shape} "
                f"over shape {self._arrays[name].shape}"
            )
        self._arrays[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def size(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def spans(self) -> dict[str, tuple[int, int]]:
        """Flat index map: name -> (start, stop) into the flattened vector."""
        spans, offset = {}, 0
        for name, arr in self._arrays.items():
            spans[name] = (offset, offset + arr.size)
            offset += arr.size
        return spans

    def flatten(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self._arrays.values()])

    def assign_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ShapeError(
                f"flat vector has shape {flat.shape}, store holds {self.size} entries"
            )
        for name, (start, stop) in self.spans().items():
            self._arrays[name] = flat[start:stop].reshape(self._arrays[name].shape).copy()

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, arr in self._arrays.items():
            dup.add(name, arr)
        return dup


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.idx]

    @property
    def shape(self) -> tuple:
        return self.tape._values[self.idx].shape

    @property
    def name(self) -> str:
        return self.tape._names[self.idx]

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad(self)

    def __repr__(self):
        return f"Var({self.name}, shape={self.shape})"


class Tape:
    """Ordered record of primitive operations with values and adjoints.

    Node ordering is topological by construction (inputs are pushed before
    the ops that consume them). ``params`` is one ParamStore or a sequence of
    stores; parameter leafs are created lazily on first access and their
    adjoints are collected by :meth:`param_grads`.

    ``dtype`` is float64 everywhere in the product; grad_check widens its
    finite-difference evaluations to longdouble so the oracle's rounding
    noise sits well below the comparison tolerance.
    """

    def __init__(self, params=None, dtype=np.float64):
        self.dtype = dtype
        if params is None:
            stores = ()
        elif isinstance(params, ParamStore):
            stores = (params,)
        else:
            stores = tuple(params)
        seen: set[str] = set()
        for store in stores:
            dup = seen.intersection(store.names())
            if dup:
                raise ValueError(f"parameter names bound twice: {sorted(dup)}")
            seen.update(store.names())
        self._stores = stores
        self._ops: list[tuple] = []  # (op, input indices, aux)
        self._values: list[np.ndarray] = []
        self._names: list[str] = []
        self._adjoints: list[np.ndarray] | None = None
        self._param_nodes: dict[str, int] = {}

    # -- construction -----------------------------------------------------

    def _as(self, value) -> np.ndarray:
        return np.asarray(value, dtype=self.dtype)

    def _push(self, op: str, value: np.ndarray, inputs: tuple = (), aux=None,
              name: str | None = None) -> Var:
        idx = len(self._ops)
        self._ops.append((op, inputs, aux))
        self._values.append(value)
        self._names.append(name if name is not None else f"{op}#{idx}")
        self._adjoints = None  # new nodes invalidate a previous backward pass
        return Var(self, idx)

    def const(self, value, name: str | None = None) -> Var:
        return self._push("const", self._as(value), name=name)

    def param(self, name: str) -> Var:
        if name in self._param_nodes:
            return Var(self, self._param_nodes[name])
        for store in self._stores:
            if name in store:
                var = self._push("param", self._as(store[name]), aux=name, name=name)
                self._param_nodes[name] = var.idx
                return var
        raise KeyError(f"parameter {name!r} not found in bound stores")

    # -- primitives --------------------------------------------------------

    def affine(self, x: Var, w: Var, b: Var | None = None, name: str | None = None) -> Var:
        """y = x W^T + b with x of shape (in,) or (batch, in), w (out, in), b (out,)."""
        xv, wv = x.value, w.value
        label = name if name is not None else f"affine#{len(self._ops)}"
        if wv.ndim != 2:
            raise ShapeError(f"affine node '{label}': weight must be 2-D, got {wv.shape}")
        if xv.ndim not in (1, 2) or xv.shape[-1] != wv.shape[1]:
            raise ShapeError(
                f"affine node '{label}': input shape {xv.shape} incompatible "
                f"with weight shape {wv.shape}"
            )
        if b is not None and b.value.shape != (wv.shape[0],):
            raise ShapeError(
                f"affine node '{label}': bias shape {b.value.shape} != ({wv.shape[0]},)"
            )
        # einsum keeps each output row bit-identical regardless of batch size,
        # which the rollout bit-identity contracts rely on (BLAS matmul does not).
        if xv.ndim == 1:
            out = np.einsum("i,oi->o", xv, wv)
        else:
            out = np.einsum("bi,oi->bo", xv, wv)
        if b is not None:
            out = out + b.value
        inputs = (x.idx, w.idx) if b is None else (x.idx, w.idx, b.idx)
        return self._push("affine", out, inputs, name=label)

    def tanh(self, x: Var, name: str | None = None) -> Var:
        return self._push("tanh", np.tanh(x.value), (x.idx,), name=name)

    def sigmoid(self, x: Var, name: str | None = None) -> Var:
        return self._push("sigmoid", 1.0 / (1.0 + np.exp(-x.value)), (x.idx,), name=name)

    def _binary(self, op: str, a: Var, b: Var, value, name):
        if a.value.shape != b.value.shape:
            raise ShapeError(
                f"{op} node '{name or op}': operand shapes {a.value.shape} "
                f"and {b.value.shape} differ"
            )
        return self._push(op, value, (a.idx, b.idx), name=name)

    def add(self, a: Var, b: Var, name: str | None = None) -> Var:
        return self._binary("add", a, b, a.value + b.value, name)

    def mul(self, a: Var, b: Var, name: str | None = None) -> Var:
        return self._binary("mul", a, b, a.value * b.value, name)

    def scale(self, x: Var, c: float, name: str | None = None) -> Var:
        """Elementwise multiply by a python scalar constant."""
        c = float(c)
        return self._push("scale", c * x.value, (x.idx,), aux=c, name=name)

    def sub(self, a: Var, b: Var, name: str | None = None) -> Var:
        return self.add(a, self.scale(b, -1.0), name=name)

    def concat(self, parts, name: str | None = None) -> Var:
        parts = list(parts)
        if not parts:
            raise ShapeError("concat requires at least one input")
        lead = parts[0].value.shape[:-1]
        for p in parts[1:]:
            if p.value.shape[:-1] != lead:
                raise ShapeError(
                    f"concat node '{name or 'concat'}': leading dims differ "
                    f"({lead} vs {p.value.shape[:-1]})"
                )
        value = np.concatenate([p.value for p in parts], axis=-1)
        widths = tuple(p.value.shape[-1] for p in parts)
        return self._push("concat", value, tuple(p.idx for p in parts), aux=widths, name=name)

    def slice_last(self, x: Var, start: int, stop: int, name: str | None = None) -> Var:
        if not (0 <= start <= stop <= x.value.shape[-1]):
            raise ShapeError(
                f"slice node '{name or 'slice'}': [{start}:{stop}] out of range "
                f"for last dim {x.value.shape[-1]}"
            )
        return self._push("slice", x.value[..., start:stop].copy(), (x.idx,),
                          aux=(start, stop), name=name)

    def sum_sq(self, x: Var, name: str | None = None) -> Var:
        return self._push("sum_sq", np.asarray(np.sum(x.value * x.value)), (x.idx,), name=name)

    def mean_sq(self, x: Var, name: str | None = None) -> Var:
        return self._push("mean_sq", np.asarray(np.mean(x.value * x.value)), (x.idx,), name=name)

    # -- reverse pass -------------------------------------------------------

    def backward(self, out: Var, seed: float = 1.0) -> None:
        """Accumulate adjoints of ``out`` with respect to every node.

        ``out`` must be scalar. Adjoints are linear in ``seed``.
        """
        if out.tape is not self:
            raise ContractError("output node belongs to a different tape")
        if out.value.shape != ():
            raise ContractError(
                f"backward requires a scalar output node, got shape {out.value.shape} "
                f"at '{out.name}'"
            )
        adj = [np.zeros_like(v) for v in self._values]
        adj[out.idx] = np.asarray(float(seed), dtype=self.dtype)
        for idx in range(len(self._ops) - 1, -1, -1):
            op, inputs, aux = self._ops[idx]
            d = adj[idx]
            if op in ("const", "param"):
                continue
            if op == "affine":
                x, w = self._values[inputs[0]], self._values[inputs[1]]
                if x.ndim == 1:
                    adj[inputs[0]] += d @ w
                    adj[inputs[1]] += np.outer(d, x)
                    if len(inputs) == 3:
                        adj[inputs[2]] += d
                else:
                    adj[inputs[0]] += d @ w
                    adj[inputs[1]] += d.T @ x
                    if len(inputs) == 3:
                        adj[inputs[2]] += d.sum(axis=0)
            elif op == "tanh":
                y = self._values[idx]
                adj[inputs[0]] += d * (1.0 - y * y)
            elif op == "sigmoid":
                y = self._values[idx]
                adj[inputs[0]] += d * y * (1.0 - y)
            elif op == "add":
                adj[inputs[0]] += d
                adj[inputs[1]] += d
            elif op == "mul":
                adj[inputs[0]] += d * self._values[inputs[1]]
                adj[inputs[1]] += d * self._values[inputs[0]]
            elif op == "scale":
                adj[inputs[0]] += aux * d
            elif op == "concat":
                offset = 0
                for child, width in zip(inputs, aux):
                    adj[child] += d[..., offset:offset + width]
                    offset += width
            elif op == "slice":
                start, stop = aux
                adj[inputs[0]][..., start:stop] += d
            elif op == "sum_sq":
                adj[inputs[0]] += 2.0 * d * self._values[inputs[0]]
            elif op == "mean_sq":
                x = self._values[inputs[0]]
                adj[inputs[0]] += (2.0 / x.size) * d * x
            else:  # pragma: no cover - closed primitive set
                raise ContractError(f"no backward rule for op {op!r}")
        self._adjoints = adj

    def grad(self, var: Var) -> np.ndarray:
        if self._adjoints is None:
            raise ContractError("backward has not been run on this tape")
        return self._adjoints[var.idx]

    def param_grads(self) -> dict[str, np.ndarray]:
        """Adjoints for every parameter in the bound stores (zeros if unused)."""
        if self._adjoints is None:
            raise ContractError("backward has not been run on this tape")
        grads: dict[str, np.ndarray] = {}
        for store in self._stores:
            for name, arr in store.items():
                idx = self._param_nodes.get(name)
                grads[name] = self._adjoints[idx].copy() if idx is not None \
                    else np.zeros_like(arr)
        return grads

    def assert_finite(self) -> None:
        for idx, value in enumerate(self._values):
            if not np.all(np.isfinite(value)):
                raise NumericalError(f"non-finite value at node '{self._names[idx]}'")

    def __len__(self) -> int:
        return len(self._ops)


# -- module-level driver API ---------------------------------------------


def forward(graph, params, inputs: dict | None = None, dtype=np.float64):
    """Evaluate a graph description on a fresh tape.

    ``graph`` is a callable ``graph(tape, **input_vars) -> Var`` (or a tuple
    of Vars); ``inputs`` maps input names to arrays that enter the tape as
    constants. Returns ``(output, tape)`` where output mirrors the graph's
    return value; array values are available as ``output.value``.
    """
    tape = Tape(params, dtype=dtype)
    in_vars = {k: tape.const(v, name=k) for k, v in (inputs or {}).items()}
    out = graph(tape, **in_vars)
    return out, tape


def backward(tape: Tape, out: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
    """Run the reverse pass and return adjoints for all bound parameters."""
    tape.backward(out, seed=seed)
    return tape.param_grads()


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    tolerance: float
    passed: bool


def compare_grads(analytic: dict, numeric: dict, tolerance: float) -> GradCheckReport:
    """Elementwise relative comparison with denominator max(|a|, |b|, 1e-12)."""
    worst, worst_param, worst_index = 0.0, "", -1
    for name in analytic:
        a = np.asarray(analytic[name]).ravel()
        n = np.asarray(numeric[name]).ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
        rel = np.abs(a - n) / denom
        k = int(np.argmax(rel)) if rel.size else 0
        if rel.size and rel[k] > worst:
            worst, worst_param, worst_index = float(rel[k]), name, k
    return GradCheckReport(worst, worst_param, worst_index, tolerance, worst < tolerance)


def _eval_scalar(graph, params, inputs, dtype) -> np.floating:
    out, tape = forward(graph, params, inputs, dtype=dtype)
    tape.assert_finite()
    if out.value.shape != ():
        raise ShapeError(f"grad_check requires a scalar graph output, got {out.value.shape}")
    return out.value[()]


def grad_check(graph, params, inputs: dict | None = None, fd_step: float = 1e-6,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare backward adjoints against central finite differences.

    ``params`` is one ParamStore or a sequence of stores; every entry of every
    store is perturbed by ±fd_step and the maximum relative error over all
    entries is reported. The perturbed evaluations run in longdouble so the
    oracle's rounding error (~eps*|f|/step) stays far below the comparison
    tolerance even for small-magnitude gradient entries; on platforms where
    longdouble is float64 the oracle is merely noisier.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be > 0")
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    wide = np.longdouble
    stores = [params] if isinstance(params, ParamStore) else list(params)
    out, tape = forward(graph, stores, inputs)
    tape.assert_finite()
    analytic = backward(tape, out)
    numeric: dict[str, np.ndarray] = {}
    for s, store in enumerate(stores):
        for name, arr in store.items():
            g = np.zeros_like(arr)
            for k in range(arr.size):
                pert = list(stores)
                pert[s] = store.copy()
                bumped = pert[s][name].copy()
                bumped.flat[k] += fd_step
                theta_plus = bumped.flat[k]
                pert[s][name] = bumped
                fp = _eval_scalar(graph, pert, inputs, wide)
                bumped.flat[k] -= 2.0 * fd_step
                theta_minus = bumped.flat[k]
                pert[s][name] = bumped
                fm = _eval_scalar(graph, pert, inputs, wide)
                # use the realized float64 step, not the nominal one
                g.flat[k] = float((fp - fm) / (wide(theta_plus) - wide(theta_minus)))
            numeric[name] = g
    return compare_grads(analytic, numeric, tolerance)
