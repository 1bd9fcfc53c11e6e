"""CAM-style backward elimination of lagged parents with nested-model F-tests."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, stats

from .kernelmap import build_feature_map, embed, median_bandwidth

log = logging.getLogger(__name__)


class PruningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PruneSettings:
    alpha: float = 1e-3  # drop when p-value exceeds this
    min_rss_gain: float = 1e-3  # drop when removal raises RSS by less than this fraction
    ridge: float = 0.0
    features_per_parent: int = 1  # 1 means the raw (linear) column


def _parent_block(column: np.ndarray, n_features: int, seed: int) -> np.ndarray:
    if n_features == 1:
        return column[:, None]
    # Raw column plus random features, so a linear effect never costs power.
    sigma = median_bandwidth(column[:, None], seed=seed)
    fmap = build_feature_map(1, n_features - 1, sigma, seed)
    return np.concatenate([column[:, None], embed(fmap, column[:, None])], axis=1)


def _standardize_columns(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.mean(axis=0)
    sd = Z.std(axis=0)
    return Z / np.where(sd > 0, sd, 1.0)


def prune_target(
    y: np.ndarray,
    blocks: list[np.ndarray],
    settings: PruneSettings,
) -> list[bool]:
    """Backward elimination over parent blocks for one target.

    ``blocks[k]`` is the ``(N, q_k)`` feature block of candidate parent ``k``.
    At each round the full model over the surviving blocks is refit (with an
    intercept) and the least significant block is removed if its F-test
    p-value exceeds ``settings.alpha`` or its removal raises the residual sum
    of squares by less than ``settings.min_rss_gain`` of the full RSS.
    Returns one keep-flag per block.
    """
    N = y.shape[0]
    keep = [True] * len(blocks)
    if not blocks:
        return keep
    Zs = [_standardize_columns(b) for b in blocks]
    yc = y - y.mean()
    while any(keep):
        idx = [k for k in range(len(blocks)) if keep[k]]
        Z = np.concatenate([Zs[k] for k in idx], axis=1)
        width = Z.shape[1]
        df_resid = N - width - 1
        if df_resid <= 0:
            warnings.warn(
                f"{len(idx)} candidate parents with {width} columns exceed the {N} samples; "
                "skipping pruning for this target",
                PruningWarning,
                stacklevel=3,
            )
            return keep
        gram = Z.T @ Z + settings.ridge * N * np.eye(width)
        zty = Z.T @ yc
        try:
            inv = linalg.inv(gram, check_finite=False)
        except linalg.LinAlgError:
            inv = linalg.pinv(gram)
        coef = inv @ zty
        rss_full = max(float(yc @ yc - coef @ zty), 0.0)
        sigma2 = rss_full / df_resid

        worst, worst_p, worst_gain = None, -1.0, np.inf
        start = 0
        for k in idx:
            q = Zs[k].shape[1]
            sl = slice(start, start + q)
            start += q
            b = coef[sl]
            sub = inv[sl, sl]
            try:
                gain = float(b @ linalg.solve(sub, b, assume_a="pos", check_finite=False))
            except (linalg.LinAlgError, ValueError):
                gain = float(b @ linalg.pinv(sub) @ b)
            gain = max(gain, 0.0)
            if sigma2 > 0:
                pval = float(stats.f.sf(gain / q / sigma2, q, df_resid))
            else:
                pval = 0.0 if gain > 0 else 1.0
            rel_gain = gain / rss_full if rss_full > 0 else (np.inf if gain > 0 else 0.0)
            weak = pval > settings.alpha or rel_gain < settings.min_rss_gain
            # Rank removable candidates by p-value, then by smallest RSS gain.
            if weak and (pval > worst_p or (pval == worst_p and gain < worst_gain)):
                worst, worst_p, worst_gain = k, pval, gain
        if worst is None:
            break
        keep[worst] = False
    return keep


def prune_graph(
    values: np.ndarray,
    adjacency: np.ndarray,
    settings: PruneSettings,
    seed: int = 0,
    row_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Prune a ``(L, d, d)`` adjacency against completed ``values`` of shape ``(T, d)``.

    ``row_mask[t, i]`` (same shape as ``values``) restricts the test for
    target ``i`` to the time steps where it is True.
    """
    L, d, _ = adjacency.shape
    T = values.shape[0]
    out = adjacency.copy()
    y_all = values[L:]
    cache: dict[tuple[int, int], np.ndarray] = {}
    for i in range(d):
        lags, sources = np.nonzero(adjacency[:, i, :])
        if len(lags) == 0:
            continue
        blocks = []
        for tau0, j in zip(lags, sources):
            key = (int(j), int(tau0))
            if key not in cache:
                column = values[L - tau0 - 1 : T - tau0 - 1, j]
                cache[key] = _parent_block(column, settings.features_per_parent, seed + int(j))
            blocks.append(cache[key])
        rows = slice(None) if row_mask is None else row_mask[L:, i]
        keep = prune_target(y_all[rows, i], [b[rows] for b in blocks], settings)
        for (tau0, j), k in zip(zip(lags, sources), keep):
            out[tau0, i, j] = k
    return out
