"""Partially observed multivariate time series, lagged causal graphs, and their file formats.

Conventions used throughout the package:

* ``values`` and ``mask`` are ``(T, d)`` arrays, ``mask[t, i]`` is True when
  ``X_i`` was observed at step ``t``.
* Lag tensors are ``(L, d, d)`` and indexed ``[lag - 1, target, source]``, so
  row ``i`` of a lag slice lists the parents of variable ``i``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

FORMAT_VERSION = 1
_CSV_VERSION_LINE = f"# format_version: {FORMAT_VERSION}"


class DataFormatError(ValueError):
    """Raised when a dataset or graph file cannot be parsed or validated."""


def _default_names(d: int) -> list[str]:
    return [f"X{i + 1}" for i in range(d)]


@dataclass(frozen=True)
class TimeSeriesDataset:
    """A ``T x d`` series with an observation mask.

    Entries with ``mask == False`` are unknown; whatever number is stored there
    is kept only for bookkeeping (e.g. the synthetic ground truth) and is never
    read by the estimators.
    """

    values: np.ndarray
    mask: np.ndarray
    var_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D (T, d), got shape {values.shape}")
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
        T, d = values.shape
        if T < 1 or d < 1:
            raise ValueError("empty dataset")
        names = list(self.var_names) if self.var_names else _default_names(d)
        if len(names) != d:
            raise ValueError(f"expected {d} variable names, got {len(names)}")
        if len(set(names)) != d:
            raise ValueError("variable names must be unique")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "var_names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def missing_rate(self) -> float:
        return float(1.0 - self.mask.mean())

    def observed_values(self) -> np.ndarray:
        """Copy of ``values`` with unknown entries set to NaN."""
        out = self.values.copy()
        out[~self.mask] = np.nan
        return out

    def with_mask(self, mask: np.ndarray) -> "TimeSeriesDataset":
        return TimeSeriesDataset(self.values, mask, self.var_names)

    def with_values(self, values: np.ndarray) -> "TimeSeriesDataset":
        return TimeSeriesDataset(values, self.mask, self.var_names)


@dataclass(frozen=True)
class LagWeightTensor:
    """Continuous lagged causal strengths, ``weights[lag - 1, target, source]``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 3 or w.shape[1] != w.shape[2] or w.shape[0] < 1:
            raise ValueError(f"weights must have shape (L, d, d), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def max_lag(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, max_lag: int, d: int) -> "LagWeightTensor":
        return cls(np.zeros((max_lag, d, d)))


def summarize(adjacency: np.ndarray) -> np.ndarray:
    """Collapse a ``(L, d, d)`` lag adjacency into the ``(d, d)`` summary graph.

    ``summary[i, j]`` is True iff ``j`` drives ``i`` at some lag; the diagonal
    holds self-loops.
    """
    adjacency = np.asarray(adjacency, dtype=bool)
    if adjacency.ndim != 3 or adjacency.shape[0] < 1:
        raise ValueError(f"adjacency must have shape (L, d, d) with L >= 1, got {adjacency.shape}")
    return adjacency.any(axis=0)


@dataclass(frozen=True)
class LagGraph:
    adjacency: np.ndarray
    var_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 3 or adj.shape[1] != adj.shape[2] or adj.shape[0] < 1:
            raise ValueError(f"adjacency must have shape (L, d, d), got {adj.shape}")
        names = list(self.var_names) if self.var_names else _default_names(adj.shape[1])
        if len(names) != adj.shape[1] or len(set(names)) != len(names):
            raise ValueError("var_names must list d unique names")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "var_names", names)

    @property
    def summary(self) -> np.ndarray:
        return summarize(self.adjacency)

    @property
    def max_lag(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.adjacency.shape[1]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum())

    def parents(self, target: int) -> list[tuple[int, int]]:
        """``(source, lag)`` pairs feeding ``target``, ordered by lag then source."""
        lags, sources = np.nonzero(self.adjacency[:, target, :])
        return [(int(j), int(tau) + 1) for tau, j in zip(lags, sources)]

    def edges(self) -> list[tuple[int, int, int]]:
        """All ``(target, source, lag)`` triples."""
        lags, targets, sources = np.nonzero(self.adjacency)
        return [(int(i), int(j), int(tau) + 1) for tau, i, j in zip(lags, targets, sources)]

    @classmethod
    def empty(cls, max_lag: int, d: int, var_names: Optional[Sequence[str]] = None) -> "LagGraph":
        return cls(np.zeros((max_lag, d, d), dtype=bool), list(var_names or []))


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean exogenous noise: parametric or an empirical residual pool."""

    family: str
    scale: float = 1.0
    residual_pool: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.family in ("gaussian", "laplace"):
            if not self.scale > 0:
                raise ValueError(f"{self.family} noise requires scale > 0")
        elif self.family == "empirical":
            if self.residual_pool is None or len(self.residual_pool) == 0:
                raise ValueError("empirical noise requires a non-empty residual pool")
            pool = np.asarray(self.residual_pool, dtype=float)
            pool = pool - pool.mean()
            pool.setflags(write=False)
            object.__setattr__(self, "residual_pool", pool)
        else:
            raise ValueError(f"unknown noise family {self.family!r}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "gaussian":
            return rng.normal(0.0, self.scale, size)
        if self.family == "laplace":
            return rng.laplace(0.0, self.scale, size)
        return self.residual_pool[rng.integers(0, len(self.residual_pool), size)]

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Bootstrap draw driven by pre-generated uniforms in [0, 1)."""
        if self.family != "empirical":
            raise ValueError("from_uniform is only defined for empirical noise")
        n = len(self.residual_pool)
        idx = np.minimum((np.asarray(u) * n).astype(np.int64), n - 1)
        return self.residual_pool[idx]


# --------------------------------------------------------------------------- CSV


def _format_float(x: float) -> str:
    return repr(float(x))


def save_csv(dataset: TimeSeriesDataset, path) -> None:
    """Write ``dataset`` as CSV; unobserved entries become empty cells."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(_CSV_VERSION_LINE + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(dataset.var_names)
            for row, mrow in zip(dataset.values, dataset.mask):
                writer.writerow([_format_float(v) if m else "" for v, m in zip(row, mrow)])
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def load_csv(path) -> TimeSeriesDataset:
    """Read a CSV written by :func:`save_csv` (or any compatible file).

    Lines starting with ``#`` are comments. The first non-comment line is the
    header; an empty cell marks a missing entry.
    """
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise DataFormatError(f"{path}: empty dataset")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataFormatError(f"{path}: empty dataset")
    d = len(header)
    values = np.zeros((len(body), d))
    mask = np.zeros((len(body), d), dtype=bool)
    for t, row in enumerate(body):
        if len(row) != d:
            raise DataFormatError(
                f"{path}: data row {t + 1} has {len(row)} cells, expected {d}"
            )
        for i, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: cannot parse {cell!r} at data row {t + 1}, column {i + 1} ({header[i]})"
                ) from None
            if not math.isfinite(v):
                raise DataFormatError(
                    f"{path}: non-finite value {cell!r} at data row {t + 1}, column {i + 1}"
                )
            values[t, i] = v
            mask[t, i] = True
    return TimeSeriesDataset(values, mask, header)


# ------------------------------------------------------------------------ graphs


def graph_to_dict(graph: LagGraph) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "max_lag": graph.max_lag,
        "var_names": list(graph.var_names),
        "edges": [
            {"target": graph.var_names[i], "source": graph.var_names[j], "lag": lag}
            for i, j, lag in graph.edges()
        ],
    }


def graph_from_dict(payload: dict, where: str = "graph") -> LagGraph:
    try:
        max_lag = int(payload["max_lag"])
        names = [str(n) for n in payload["var_names"]]
        edges = payload.get("edges", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: missing or invalid field ({exc})") from None
    if max_lag < 1:
        raise DataFormatError(f"{where}: max_lag must be >= 1")
    index = {n: k for k, n in enumerate(names)}
    if len(index) != len(names):
        raise DataFormatError(f"{where}: duplicate variable names")
    adj = np.zeros((max_lag, len(names), len(names)), dtype=bool)
    for e in edges:
        try:
            target, source, lag = e["target"], e["source"], int(e["lag"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{where}: malformed edge {e!r} ({exc})") from None
        if not 1 <= lag <= max_lag:
            raise DataFormatError(f"{where}: edge lag {lag} outside [1, {max_lag}]")
        for name in (target, source):
            if name not in index:
                raise DataFormatError(f"{where}: unknown variable {name!r}")
        adj[lag - 1, index[target], index[source]] = True
    return LagGraph(adj, names)


def save_graph(graph: LagGraph, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(graph_to_dict(graph), indent=2) + "\n", encoding="utf-8")


def load_graph(path) -> LagGraph:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    return graph_from_dict(payload, str(path))


def save_weights(weights: LagWeightTensor, var_names: Sequence[str], path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "max_lag": weights.max_lag,
        "var_names": list(var_names),
        "weights": weights.weights.tolist(),
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_weights(path) -> tuple[LagWeightTensor, list[str]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return LagWeightTensor(np.asarray(payload["weights"], dtype=float)), list(payload["var_names"])
