"""Directed-graph scores: precision/recall/F1 over edges and structural Hamming distance."""

from __future__ import annotations

import numpy as np


def _check(estimated, truth) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(estimated, dtype=bool)
    tru = np.asarray(truth, dtype=bool)
    if est.shape != tru.shape:
        raise ValueError(f"graph shapes differ: {est.shape} vs {tru.shape}")
    return est, tru


def edge_counts(estimated, truth) -> tuple[int, int, int]:
    """(TP, FP, FN) over directed entries, diagonal included."""
    est, tru = _check(estimated, truth)
    tp = int(np.sum(est & tru))
    fp = int(np.sum(est & ~tru))
    fn = int(np.sum(~est & tru))
    return tp, fp, fn


def f1_score(estimated, truth) -> tuple[float, float, float]:
    """Return ``(f1, precision, recall)``; any 0/0 ratio is taken as 0."""
    tp, fp, fn = edge_counts(estimated, truth)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, precision, recall


def reversed_edges(estimated, truth) -> int:
    """Pairs ``{i, j}`` holding a single edge in each graph, pointing opposite ways."""
    est, tru = _check(estimated, truth)
    est = _flatten_lags(est)
    tru = _flatten_lags(tru)
    off = ~np.eye(est.shape[0], dtype=bool)
    single_est = est & ~est.T
    single_tru = tru & ~tru.T
    flipped = single_est & single_tru.T & off
    return int(flipped.sum())


def _flatten_lags(g: np.ndarray) -> np.ndarray:
    if g.ndim == 2:
        return g
    raise ValueError("expected a square (d, d) graph")


def shd(estimated, truth) -> int:
    """Minimum number of edge additions, deletions and reversals turning one graph into the other.

    Works on ``(d, d)`` matrices; self-loops on the diagonal count as ordinary
    additions/deletions. Lagged ``(L, d, d)`` tensors are compared per lag.
    """
    est, tru = _check(estimated, truth)
    if est.ndim == 3:
        return sum(shd(a, b) for a, b in zip(est, tru))
    if est.ndim != 2 or est.shape[0] != est.shape[1]:
        raise ValueError("expected square adjacency matrices")
    mismatches = int(np.sum(est != tru))
    return mismatches - reversed_edges(est, tru)
