"""Synthetic lagged additive-noise benchmarks with MCAR missingness."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import LagGraph, LagWeightTensor, NoiseModel, TimeSeriesDataset

FUNCTION_TYPES = ("LR", "SIN", "TANH", "SIGMOID")
NOISE_FAMILIES = ("gaussian", "laplace")
STABILITY_RADIUS = 0.9
DIVERGENCE_LIMIT = 1e8
MAX_MASK_RETRIES = 1000

_NONLINEARITIES = {
    "LR": lambda x: x,
    "SIN": np.sin,
    "TANH": np.tanh,
    "SIGMOID": lambda x: 1.0 / (1.0 + np.exp(-x)),
}


class ConfigError(ValueError):
    pass


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    num_vars: int = 10
    num_edges: int = 10
    max_lag: int = 2
    function_type: str = "LR"
    noise_family: str = "gaussian"
    noise_scale: float = 1.0
    series_length: int = 1000
    missing_rate: float = 0.0
    seed: int = 0
    weight_range: tuple[float, float] = (0.3, 0.9)

    def __post_init__(self):
        object.__setattr__(self, "function_type", str(self.function_type).upper())
        object.__setattr__(self, "noise_family", str(self.noise_family).lower())
        object.__setattr__(self, "weight_range", tuple(float(w) for w in self.weight_range))

    def validate(self) -> None:
        if self.num_vars < 1:
            raise ConfigError("num_vars must be >= 1")
        if self.max_lag < 1:
            raise ConfigError("max_lag must be >= 1")
        if not 0 <= self.num_edges <= self.max_lag * self.num_vars**2:
            raise ConfigError(
                f"num_edges={self.num_edges} exceeds the {self.max_lag * self.num_vars ** 2} "
                "available lagged slots"
            )
        if self.function_type not in FUNCTION_TYPES:
            raise ConfigError(f"function_type must be one of {FUNCTION_TYPES}")
        if self.noise_family not in NOISE_FAMILIES:
            raise ConfigError(f"noise_family must be one of {NOISE_FAMILIES}")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        if self.series_length <= self.max_lag:
            raise ConfigError("series_length must exceed max_lag")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        low, high = self.weight_range
        if not 0 < low < high:
            raise ConfigError("weight_range must satisfy 0 < low < high")

    @property
    def name(self) -> str:
        return (
            f"{self.function_type}-{self.noise_family}-{self.num_vars}-"
            f"{self.num_edges}-{self.max_lag}"
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weight_range"] = list(self.weight_range)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "SyntheticConfig":
        payload = dict(payload)
        name = payload.pop("name", None)
        base = cls.from_name(name) if name else cls()
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config fields: {sorted(unknown)}")
        return replace(base, **payload)

    @classmethod
    def from_name(cls, name: str, **overrides) -> "SyntheticConfig":
        """Parse ``TANH-laplace-10-20-2`` or the ``10-10-LR-gaussian-2`` alias."""
        parts = name.strip().split("-")
        m1 = re.fullmatch(r"([A-Za-z]+)-([A-Za-z]+)-(\d+)-(\d+)-(\d+)", name.strip())
        m2 = re.fullmatch(r"(\d+)-(\d+)-([A-Za-z]+)-([A-Za-z]+)-(\d+)", name.strip())
        if m1:
            fn, noise, d, e, lag = m1.groups()
        elif m2:
            d, e, fn, noise, lag = m2.groups()
        else:
            raise ConfigError(f"cannot parse configuration name {name!r} ({len(parts)} fields)")
        cfg = cls(
            num_vars=int(d),
            num_edges=int(e),
            max_lag=int(lag),
            function_type=fn,
            noise_family=noise,
        )
        cfg = replace(cfg, **overrides)
        cfg.validate()
        return cfg


def load_config(path) -> SyntheticConfig:
    cfg = SyntheticConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    cfg.validate()
    return cfg


def _rng(seed: int, stream: int) -> np.random.Generator:
    # Independent streams per purpose so changing one stage never shifts another.
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def companion_matrix(weights: np.ndarray) -> np.ndarray:
    L, d, _ = weights.shape
    comp = np.zeros((L * d, L * d))
    comp[:d, :] = np.concatenate(list(weights), axis=1)
    if L > 1:
        comp[d:, : (L - 1) * d] = np.eye((L - 1) * d)
    return comp


def spectral_radius(weights: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(weights)))))


def _stable_scale(weights: np.ndarray) -> float:
    """Largest uniform factor in (0, 1] keeping the companion spectral radius <= 0.9.

    With L > 1 the radius is not linear in the factor, hence the bisection.
    """
    if spectral_radius(weights) <= STABILITY_RADIUS:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if spectral_radius(mid * weights) <= STABILITY_RADIUS:
            lo = mid
        else:
            hi = mid
    return lo


def generate_lag_graph(config: SyntheticConfig) -> tuple[LagGraph, LagWeightTensor]:
    """Erdős–Rényi lagged graph with exactly ``num_edges`` edges and stable weights.

    Edges are drawn uniformly without replacement from the ``L * d * d``
    (lag, target, source) slots. Magnitudes are uniform on ``weight_range``
    with a random sign; the whole tensor is then shrunk so the companion
    matrix has spectral radius at most 0.9.
    """
    config.validate()
    L, d, e = config.max_lag, config.num_vars, config.num_edges
    rng = _rng(config.seed, 0)
    slots = rng.choice(L * d * d, size=e, replace=False)
    adj = np.zeros(L * d * d, dtype=bool)
    adj[slots] = True
    adj = adj.reshape(L, d, d)

    low, high = config.weight_range
    w = np.zeros((L, d, d))
    magnitudes = rng.uniform(low, high, size=e)
    signs = np.where(rng.random(e) < 0.5, -1.0, 1.0)
    w.reshape(-1)[np.sort(slots)] = magnitudes * signs
    if e:
        w *= _stable_scale(w)
    names = [f"X{i + 1}" for i in range(d)]
    return LagGraph(adj, names), LagWeightTensor(w)


def simulate_series(
    graph: LagGraph, weights: LagWeightTensor, config: SyntheticConfig
) -> TimeSeriesDataset:
    """Run the lagged ANM forward and return a fully observed series.

    ``X_i^t = sum_tau sum_j W[tau, i, j] * f(X_j^{t-tau}) + eps_i^t`` with ``f``
    applied to each parent before weighting. The first ``L`` steps are pure
    noise and ``10 * L`` burn-in steps are discarded.
    """
    config.validate()
    L, d = weights.max_lag, weights.d
    if graph.adjacency.shape != weights.weights.shape:
        raise ConfigError("graph and weight shapes differ")
    W = np.where(graph.adjacency, weights.weights, 0.0)
    f = _NONLINEARITIES[config.function_type]
    burn = 10 * L
    total = config.series_length + burn
    rng = _rng(config.seed, 1)
    if config.noise_scale > 0:
        eps = NoiseModel(config.noise_family, config.noise_scale).sample(rng, (total, d))
    else:
        eps = np.zeros((total, d))

    x = np.zeros((total, d))
    x[:L] = eps[:L]
    fx = np.zeros((total, d))
    fx[:L] = f(x[:L])
    stacked = np.concatenate(list(W), axis=1)  # (d, L*d), block tau-1 = W[tau-1]
    for t in range(L, total):
        window = fx[t - L : t][::-1].reshape(-1)  # lag 1 first
        x[t] = stacked @ window + eps[t]
        fx[t] = f(x[t])
        if not np.all(np.abs(x[t]) <= DIVERGENCE_LIMIT):
            raise StabilityError(
                f"trajectory diverged at step {t}; rescale the weights to reduce the spectral radius"
            )
    values = x[burn:]
    return TimeSeriesDataset(values, np.ones_like(values, dtype=bool), graph.var_names)


def apply_mcar_mask(dataset: TimeSeriesDataset, missing_rate: float, seed: int) -> TimeSeriesDataset:
    """Hide each entry independently with probability ``missing_rate``.

    Every column keeps at least one observed entry; the mask is redrawn
    (up to 1000 times) when a column would be emptied.
    """
    if not 0 <= missing_rate < 1:
        raise ConfigError("missing_rate must lie in [0, 1)")
    if missing_rate == 0:
        return dataset
    rng = _rng(seed, 2)
    for _ in range(MAX_MASK_RETRIES):
        hidden = rng.random(dataset.values.shape) < missing_rate
        mask = dataset.mask & ~hidden
        if mask.any(axis=0).all():
            return dataset.with_mask(mask)
    raise ConfigError("variable fully unobserved after 1000 mask draws")


def make_dataset(config: SyntheticConfig) -> tuple[LagGraph, LagWeightTensor, TimeSeriesDataset, TimeSeriesDataset]:
    """Graph, weights, the full series, and its masked copy for one config."""
    graph, weights = generate_lag_graph(config)
    full = simulate_series(graph, weights, config)
    masked = apply_mcar_mask(full, config.missing_rate, config.seed)
    return graph, weights, full, masked
