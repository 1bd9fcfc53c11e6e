"""Random Fourier features for the Gaussian RBF kernel.

``k(x, x') = exp(-||x - x'||^2 / (2 sigma^2))`` is approximated by
``z(x) . z(x')`` with ``z_k(x) = sqrt(2/p) cos(w_k . x + b_k)``,
``w_k ~ N(0, I / sigma^2)`` and ``b_k ~ U[0, 2 pi)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .dataset import TimeSeriesDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelFeatureMap:
    frequencies: np.ndarray  # (p, D)
    offsets: np.ndarray  # (p,)
    bandwidth: float
    seed: Optional[int] = None

    @property
    def num_features(self) -> int:
        return self.frequencies.shape[0]

    @property
    def input_dim(self) -> int:
        return self.frequencies.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return embed(self, x)

    def to_dict(self) -> dict:
        return {
            "kind": "rbf",
            "frequencies": self.frequencies.tolist(),
            "offsets": self.offsets.tolist(),
            "bandwidth": self.bandwidth,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "KernelFeatureMap":
        return cls(
            np.asarray(payload["frequencies"], dtype=float),
            np.asarray(payload["offsets"], dtype=float),
            float(payload["bandwidth"]),
            payload.get("seed"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class IdentityMap:
    """The degenerate kernel: features are the inputs themselves."""

    input_dim: int

    @property
    def num_features(self) -> int:
        return self.input_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return embed(self, x)

    def to_dict(self) -> dict:
        return {"kind": "identity", "input_dim": self.input_dim}


def build_feature_map(input_dim: int, num_features: int, bandwidth: float, seed: int) -> KernelFeatureMap:
    if num_features < 1:
        raise ValueError("num_features must be >= 1")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be > 0")
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    freqs = rng.normal(0.0, 1.0 / bandwidth, size=(num_features, input_dim))
    offsets = rng.uniform(0.0, 2 * np.pi, size=num_features)
    freqs.setflags(write=False)
    offsets.setflags(write=False)
    return KernelFeatureMap(freqs, offsets, float(bandwidth), seed)


def embed(fmap, x: np.ndarray) -> np.ndarray:
    """Map a ``D``-vector (or an ``(N, D)`` batch) to its features."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != fmap.input_dim:
        raise ValueError(f"expected input dimension {fmap.input_dim}, got {x.shape[-1]}")
    if isinstance(fmap, IdentityMap):
        return x.copy()
    p = fmap.num_features
    return np.sqrt(2.0 / p) * np.cos(x @ fmap.frequencies.T + fmap.offsets)


def rbf_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    sq = np.sum((np.asarray(x) - np.asarray(y)) ** 2, axis=-1)
    return np.exp(-sq / (2.0 * bandwidth**2))


def sensitivity(fmap) -> np.ndarray:
    """Input-sensitivity matrix of shape ``(p, D)``.

    Row ``k`` is ``|w_k| * sigma`` normalized to sum to one; all-zero rows get
    ``1 / D``. The identity map yields the identity matrix.
    """
    if isinstance(fmap, IdentityMap):
        return np.eye(fmap.input_dim)
    raw = np.abs(fmap.frequencies) * fmap.bandwidth
    sums = raw.sum(axis=1, keepdims=True)
    D = fmap.input_dim
    out = np.where(sums > 0, raw / np.where(sums > 0, sums, 1.0), 1.0 / D)
    return out


def median_bandwidth(dataset, max_rows: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance between rows.

    Accepts a :class:`TimeSeriesDataset` (its stored values are used as-is, so
    pass a completed dataset) or a plain ``(N, D)`` array. Falls back to 1.0
    when every sampled row is identical.
    """
    x = dataset.values if isinstance(dataset, TimeSeriesDataset) else np.asarray(dataset, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("median_bandwidth needs at least two rows")
    if x.shape[0] > max_rows:
        rng = np.random.default_rng(seed)
        x = x[np.sort(rng.choice(x.shape[0], size=max_rows, replace=False))]
    sigma = float(np.median(pdist(x)))
    if not sigma > 0:
        log.warning("all sampled rows are identical; falling back to bandwidth 1.0")
        return 1.0
    return sigma
