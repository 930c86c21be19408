"""Dataset ingestion, normalization, splitting, window extraction, and
synthetic benchmark generation.

Datasets hold aligned input/output records in physical units; training code
works on normalized copies produced by :class:`Normalizer`.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore
from .errors import WindowError
from .nets import MlpSpec
from .ssmodel import ModelSpec, NeuralStateSpaceModel, build_model, simulate

__all__ = ["Dataset", "Normalizer", "SubsequenceBatch", "load_csv", "save_csv",
           "split_train_val", "sample_batch", "enumerate_windows", "synth_system",
           "synth_integrator_system"]


@dataclass
class Dataset:
    """Aligned input/output record: u (n, n_u) and y (n, n_y), physical units."""

    u: np.ndarray
    y: np.ndarray
    sample_rate: float | None = None
    name: str = ""

    def __post_init__(self):
        def as_record(a):
            a = np.asarray(a, dtype=np.float64)
            if a.ndim == 1:
                a = a[:, None]  # single channel
            if a.ndim != 2:
                raise ValueError(f"records must be 1-D or 2-D, got shape {a.shape}")
            return a

        self.u = as_record(self.u)
        self.y = as_record(self.y)
        if len(self.u) != len(self.y):
            raise ValueError(
                f"u and y lengths differ: {len(self.u)} vs {len(self.y)}")
        if len(self.u) < 1:
            raise ValueError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    def slice(self, start: int, stop: int, label: str = "") -> "Dataset":
        return Dataset(self.u[start:stop].copy(), self.y[start:stop].copy(),
                       self.sample_rate, self.name + label)


@dataclass
class Normalizer:
    """Channelwise standardization statistics (computed on the training split).

    Uses the population standard deviation; degenerate channels get std 1 so
    normalization stays invertible.
    """

    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "Normalizer":
        def stats(a):
            mean = a.mean(axis=0)
            std = a.std(axis=0)
            std = np.where(std == 0.0, 1.0, std)
            return mean, std

        u_mean, u_std = stats(ds.u)
        y_mean, y_std = stats(ds.y)
        return cls(u_mean, u_std, y_mean, y_std)

    @classmethod
    def identity(cls, n_u: int, n_y: int) -> "Normalizer":
        return cls(np.zeros(n_u), np.ones(n_u), np.zeros(n_y), np.ones(n_y))

    def norm_u(self, u):
        return (np.asarray(u, dtype=np.float64) - self.u_mean) / self.u_std

    def norm_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def denorm_y(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset(self.norm_u(ds.u), self.norm_y(ds.y), ds.sample_rate, ds.name)

    def to_dict(self) -> dict:
        return {"u_mean": self.u_mean.tolist(), "u_std": self.u_std.tolist(),
                "y_mean": self.y_mean.tolist(), "y_std": self.y_std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=np.float64)
                     for k in ("u_mean", "u_std", "y_mean", "y_std")))


# -- CSV ingestion -----------------------------------------------------------


def _default_channels(header: list[str], prefix: str) -> list[str]:
    pat = re.compile(rf"^{prefix}(\d+)$")
    found = [(int(m.group(1)), col) for col in header if (m := pat.match(col))]
    return [col for _, col in sorted(found)]


def load_csv(path, u_cols=None, y_cols=None, name: str | None = None) -> Dataset:
    """Read a dataset from a headed CSV file.

    Column defaults are u0..u{n_u-1} / y0..y{n_y-1}. Errors name the missing
    column or the offending row/column for unparsable cells; rows whose length
    differs from the header are rejected.
    """
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if u_cols is None:
            u_cols = _default_channels(header, "u")
        if y_cols is None:
            y_cols = _default_channels(header, "y")
        if not u_cols or not y_cols:
            raise ValueError(f"{path}: could not find input/output columns in header {header}")
        for col in list(u_cols) + list(y_cols):
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r}")
        positions = {col: header.index(col) for col in list(u_cols) + list(y_cols)}
        u_rows, y_rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {line_no} has {len(row)} cells, header has {len(header)}")
            def parse(col):
                cell = row[positions[col]]
                try:
                    return float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {line_no}, column {col!r}: "
                        f"could not parse {cell!r}") from None
            u_rows.append([parse(c) for c in u_cols])
            y_rows.append([parse(c) for c in y_cols])
    if not u_rows:
        raise ValueError(f"{path}: no data rows")
    return Dataset(np.array(u_rows), np.array(y_rows),
                   name=name if name is not None else path)


def save_csv(ds: Dataset, path) -> None:
    """Write with 17 significant digits so reloading is bit-exact."""
    header = [f"u{i}" for i in range(ds.n_u)] + [f"y{i}" for i in range(ds.n_y)]
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(ds.n):
            writer.writerow([f"{v:.17g}" for v in ds.u[k]] +
                            [f"{v:.17g}" for v in ds.y[k]])


# -- splitting and windows ----------------------------------------------------


def split_train_val(ds: Dataset, val_fraction: float, min_len: int = 1
                    ) -> tuple[Dataset, Dataset]:
    """Contiguous split: prefix for training, final fraction held out."""
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = int(round(ds.n * val_fraction))
    n_train = ds.n - n_val
    if n_train < min_len or n_val < min_len:
        raise WindowError(
            f"split of {ds.n} samples at fraction {val_fraction} gives "
            f"{n_train}/{n_val}; both sides need at least {min_len} samples")
    return ds.slice(0, n_train, "[train]"), ds.slice(n_train, ds.n, "[val]")


@dataclass
class SubsequenceBatch:
    """b subsequences of a split: estimation window [i, i+m_e), fitting window
    [i+m_e, i+m_e+m_f)."""

    u: np.ndarray = field(repr=False)  # full split arrays the windows index into
    y: np.ndarray = field(repr=False)
    start_indices: np.ndarray
    m_e: int
    m_f: int

    @property
    def b(self) -> int:
        return len(self.start_indices)

    @property
    def m(self) -> int:
        return self.m_e + self.m_f

    def _gather(self, a: np.ndarray, offset: int, length: int) -> np.ndarray:
        idx = self.start_indices[:, None] + offset + np.arange(length)[None, :]
        return a[idx]

    @property
    def u_est(self) -> np.ndarray:
        return self._gather(self.u, 0, self.m_e)

    @property
    def y_est(self) -> np.ndarray:
        return self._gather(self.y, 0, self.m_e)

    @property
    def u_fit(self) -> np.ndarray:
        return self._gather(self.u, self.m_e, self.m_f)

    @property
    def y_fit(self) -> np.ndarray:
        return self._gather(self.y, self.m_e, self.m_f)


def _check_window_feasible(n_split: int, m: int) -> None:
    if n_split < m + 1:
        raise WindowError(
            f"split of {n_split} samples cannot host an m={m} window "
            f"(needs at least {m + 1} samples)")


def sample_batch(split: Dataset, m_e: int, m_f: int, b: int, rng) -> SubsequenceBatch:
    """Draw b start indices uniformly (with replacement) from {0..n-m-1}."""
    m = m_e + m_f
    _check_window_feasible(split.n, m)
    starts = rng.integers(0, split.n - m, size=b)
    return SubsequenceBatch(split.u, split.y, np.asarray(starts), m_e, m_f)


def enumerate_windows(split: Dataset, m_e: int, m_f: int, stride: int = 1
                      ) -> SubsequenceBatch:
    """Deterministic strided coverage; stride 1 gives all n-m start indices."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    m = m_e + m_f
    _check_window_feasible(split.n, m)
    starts = np.arange(0, split.n - m, stride)
    return SubsequenceBatch(split.u, split.y, starts, m_e, m_f)


# -- synthetic benchmarks ------------------------------------------------------


def _relative_noise(rng, y_clean: np.ndarray, noise_std: float) -> np.ndarray:
    scale = y_clean.std(axis=0)
    scale = np.where(scale == 0.0, 1.0, scale)
    return noise_std * scale * rng.standard_normal(y_clean.shape)


def synth_system(seed: int, n_x: int = 2, n_u: int = 1, n_y: int = 1,
                 n: int = 10000, noise_std: float = 0.01,
                 spectral_radius: float = 0.85,
                 ) -> tuple[Dataset, NeuralStateSpaceModel]:
    """Generate a record from a random stable neural state-space system.

    The transition bypass matrix's state block is rescaled to the requested
    spectral radius (< 0.97, asymptotic stability) and the hidden tanh paths
    are damped so the skip dynamics dominate. The record starts from the zero
    state under seeded Gaussian inputs; ``noise_std`` is the additive output
    noise level relative to each channel's clean standard deviation
    (0.01 = 1% noise). Returns the dataset and the generating model.
    """
    if min(n_x, n_u, n_y, n) < 1:
        raise ValueError("dimensions and length must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if not (0 < spectral_radius <= 0.97):
        raise ValueError("spectral_radius must lie in (0, 0.97]")
    masked = int(seed) & (2 ** 64 - 1)
    model = build_model(ModelSpec(n_x, n_u, n_y, hidden=8, skip=True),
                        seed=[masked, 11])
    p = model.params
    p["f.w2"] = p["f.w2"] * 0.3
    p["g.w2"] = p["g.w2"] * 0.3
    ws = p["f.ws"].copy()
    a = ws[:, :n_x]
    rho = float(np.max(np.abs(np.linalg.eigvals(a))))
    if rho > 1e-12:
        a *= spectral_radius / rho
    ws[:, :n_x] = a
    p["f.ws"] = ws
    rng = np.random.default_rng([masked, 12])
    u = rng.standard_normal((n, n_u))
    _, y_clean = simulate(model, np.zeros(n_x), u[:-1])
    y = y_clean + _relative_noise(rng, y_clean, noise_std)
    return Dataset(u, y, name=f"synth[{seed}]"), model


def synth_integrator_system(seed: int, n: int = 6000, noise_std: float = 0.01,
                            coupling: float = 0.1, pole: float = 0.8,
                            input_gain: float = 0.5,
                            ) -> tuple[Dataset, NeuralStateSpaceModel]:
    """Generate a record from a system with a pure accumulator state channel.

    x1' = x1 + coupling*x2 (the accumulator), x2' = pole*x2 + input_gain*u,
    y = x1. Initial-state errors in x1 never decay, which separates trained
    window estimators from zero/random initialization. The excitation is
    differenced white noise (zero spectral density at DC) so the accumulated
    output stays stationary and the test tail lives in the training range;
    the accumulator structure, and with it the non-decaying initial-state
    error, is untouched.
    """
    if n < 1:
        raise ValueError("record length must be >= 1")
    f_spec = MlpSpec(3, 4, 2, skip=True)
    g_spec = MlpSpec(2, 4, 1, skip=True)
    store = ParamStore()
    for prefix, spec in (("f.", f_spec), ("g.", g_spec)):
        for pname, shape in spec.param_shapes().items():
            store.add(prefix + pname, np.zeros(shape))
    store["f.ws"] = np.array([[1.0, coupling, 0.0],
                              [0.0, pole, input_gain]])
    store["g.ws"] = np.array([[1.0, 0.0]])
    model = NeuralStateSpaceModel(2, 1, 1, f_spec, g_spec, store)
    rng = np.random.default_rng([int(seed) & (2 ** 64 - 1), 21])
    w = rng.standard_normal((n + 1, 1))
    u = np.diff(w, axis=0)
    _, y_clean = simulate(model, np.zeros(2), u[:-1])
    y = y_clean + _relative_noise(rng, y_clean, noise_std)
    return Dataset(u, y, name=f"synth-integrator[{seed}]"), model
