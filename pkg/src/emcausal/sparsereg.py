"""Lasso by cyclic coordinate descent, lagged design matrices, and weight projection.

All solvers minimise, per target column,

    1/(2N) ||y - X b - b0||^2 + lam * ||b||_1

on standardized columns (and standardized target) unless standardization is
switched off, in which case the raw design is used as given.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numba
import numpy as np

from .dataset import LagWeightTensor, TimeSeriesDataset
from .kernelmap import IdentityMap, embed

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.05
LAMBDA_GRID = (0.01, 0.05, 0.1, 0.2)
_CONST_TOL = 1e-12


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class RegressionProblem:
    design: np.ndarray  # (N, M)
    targets: np.ndarray  # (N, n_targets)
    lam: Union[float, np.ndarray] = DEFAULT_LAMBDA
    max_lag: int = 1
    standardize: bool = True
    fit_intercept: bool = True
    block_width: Optional[int] = None  # columns per lag block

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if self.design.ndim != 2 or self.design.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"design {self.design.shape} and targets {self.targets.shape} disagree on N"
            )
        if self.design.shape[0] < 1:
            raise ValueError("regression problem has no rows")
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("lambda must be >= 0")

    @property
    def n_samples(self) -> int:
        return self.design.shape[0]

    @property
    def lambdas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.lam, dtype=float), (self.targets.shape[1],))


@dataclass
class FittedModel:
    coefficients: np.ndarray  # (n_targets, M), original units
    intercepts: np.ndarray  # (n_targets,)
    residuals: np.ndarray  # (N, n_targets)
    objective_traces: list = field(default_factory=list)
    lambdas: Optional[np.ndarray] = None
    n_sweeps: Optional[np.ndarray] = None
    converged: bool = True

    @property
    def objective_trace(self) -> np.ndarray:
        """Total objective per sweep, summed over targets (finished targets hold their last value)."""
        if not self.objective_traces:
            return np.zeros(0)
        n = max(len(tr) for tr in self.objective_traces)
        total = np.zeros(n)
        for tr in self.objective_traces:
            tr = np.asarray(tr)
            if len(tr) == 0:
                continue
            total[: len(tr)] += tr
            total[len(tr) :] += tr[-1]
        return total

    @property
    def objective(self) -> float:
        tr = self.objective_trace
        return float(tr[-1]) if len(tr) else 0.0

    def predict(self, design: np.ndarray) -> np.ndarray:
        return np.asarray(design) @ self.coefficients.T + self.intercepts

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "intercepts": self.intercepts.tolist(),
            "objective": self.objective,
            "lambdas": None if self.lambdas is None else self.lambdas.tolist(),
            "converged": self.converged,
        }


@numba.njit(cache=True)
def _soft(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


@numba.njit(cache=True)
def _objective(c, yy, lam, b, gb):
    quad = 0.0
    l1 = 0.0
    for j in range(b.shape[0]):
        quad += b[j] * (gb[j] - 2.0 * c[j])
        l1 += abs(b[j])
    return 0.5 * (yy + quad) + lam * l1


@numba.njit(cache=True)
def _sweep(G, c, lam, b, gb, coords):
    """One cyclic pass over ``coords``; returns the largest coefficient change."""
    max_change = 0.0
    for j in coords:
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        old = b[j]
        rho = c[j] - gb[j] + gjj * old
        new = _soft(rho, lam) / gjj
        delta = new - old
        if delta != 0.0:
            b[j] = new
            for k in range(b.shape[0]):
                gb[k] += G[k, j] * delta
            if abs(delta) > max_change:
                max_change = abs(delta)
    return max_change


@numba.njit(cache=True)
def _cd_lasso(G, c, yy, lam, b, tol, max_sweeps):
    """Covariance-update coordinate descent with active-set cycling.

    ``G = X^T X / N``, ``c = X^T y / N``, ``yy = y^T y / N``. ``b`` is updated in
    place. Returns (objective trace, sweeps used, converged flag).
    """
    M = b.shape[0]
    gb = G @ b
    trace = np.empty(max_sweeps + 1)
    trace[0] = _objective(c, yy, lam, b, gb)
    n = 0
    all_coords = np.arange(M)
    converged = False
    while n < max_sweeps:
        change = _sweep(G, c, lam, b, gb, all_coords)
        n += 1
        trace[n] = _objective(c, yy, lam, b, gb)
        if change < tol:
            converged = True
            break
        active = np.nonzero(b)[0]
        while n < max_sweeps:
            change = _sweep(G, c, lam, b, gb, active)
            n += 1
            trace[n] = _objective(c, yy, lam, b, gb)
            if change < tol:
                break
    return trace[: n + 1], n, converged


def _standardize(problem: RegressionProblem):
    X, Y = problem.design, problem.targets
    N = X.shape[0]
    if problem.fit_intercept:
        x_mean = X.mean(axis=0)
        y_mean = Y.mean(axis=0)
    else:
        x_mean = np.zeros(X.shape[1])
        y_mean = np.zeros(Y.shape[1])
    Xc = X - x_mean
    Yc = Y - y_mean
    if problem.standardize:
        x_scale = np.sqrt(np.mean(Xc**2, axis=0))
        y_scale = np.sqrt(np.mean(Yc**2, axis=0))
        const = x_scale <= _CONST_TOL * np.maximum(1.0, np.abs(x_mean))
        x_scale = np.where(const, 1.0, x_scale)
        Xs = Xc / x_scale
        Xs[:, const] = 0.0
        y_scale = np.where(y_scale > 0, y_scale, 1.0)
        Ys = Yc / y_scale
    else:
        x_scale = np.ones(X.shape[1])
        y_scale = np.ones(Y.shape[1])
        Xs, Ys = Xc, Yc
    return Xs, Ys, x_mean, y_mean, x_scale, y_scale


def solve_lasso(
    problem: RegressionProblem,
    tol: float = 1e-6,
    max_sweeps: int = 10_000,
) -> FittedModel:
    """Fit every target column by coordinate descent with soft-thresholding.

    Convergence is declared when a full sweep changes no (standardized)
    coefficient by more than ``tol``. Hitting ``max_sweeps`` emits a
    :class:`ConvergenceWarning` and returns the last iterate.
    """
    X = problem.design
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(problem.targets)):
        raise ValueError("regression problem contains non-finite entries")
    N, M = X.shape
    Xs, Ys, x_mean, y_mean, x_scale, y_scale = _standardize(problem)
    G = np.ascontiguousarray(Xs.T @ Xs / N)
    C = Xs.T @ Ys / N
    lams = problem.lambdas
    n_targets = Ys.shape[1]
    coefs_s = np.zeros((n_targets, M))
    traces, sweeps = [], np.zeros(n_targets, dtype=int)
    all_converged = True
    for i in range(n_targets):
        b = np.zeros(M)
        yy = float(Ys[:, i] @ Ys[:, i] / N)
        trace, n, ok = _cd_lasso(G, np.ascontiguousarray(C[:, i]), yy, float(lams[i]), b, tol, max_sweeps)
        if not ok:
            all_converged = False
            warnings.warn(
                f"coordinate descent hit {max_sweeps} sweeps for target {i}; returning last iterate",
                ConvergenceWarning,
                stacklevel=2,
            )
        coefs_s[i] = b
        traces.append(trace)
        sweeps[i] = n
    coefs = coefs_s * y_scale[:, None] / x_scale[None, :]
    intercepts = y_mean - coefs @ x_mean
    residuals = problem.targets - (X @ coefs.T + intercepts)
    return FittedModel(
        coefficients=coefs,
        intercepts=intercepts,
        residuals=residuals,
        objective_traces=traces,
        lambdas=np.array(lams, dtype=float),
        n_sweeps=sweeps,
        converged=all_converged,
    )


def lasso_objective(problem: RegressionProblem, coefficients: np.ndarray, intercepts: np.ndarray) -> float:
    """Penalized loss summed over targets, in the solver's (standardized) units."""
    Xs, Ys, x_mean, y_mean, x_scale, y_scale = _standardize(problem)
    N = Xs.shape[0]
    coefs_s = np.asarray(coefficients) * x_scale[None, :] / y_scale[:, None]
    resid = Ys - Xs @ coefs_s.T
    return float(np.sum(resid**2) / (2 * N) + np.sum(problem.lambdas * np.abs(coefs_s).sum(axis=1)))


# ------------------------------------------------------------------ design matrices


def _require_complete(dataset: TimeSeriesDataset, max_lag: int) -> np.ndarray:
    if not dataset.mask.all():
        raise ValueError("dataset has unknown entries; complete it before building a design")
    if dataset.T <= max_lag:
        raise ValueError("series shorter than lag order")
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    return dataset.values


def lagged_blocks(values: np.ndarray, max_lag: int) -> list[np.ndarray]:
    """``[X^{t-1}, ..., X^{t-L}]`` for ``t = L .. T-1``, each ``(T - L, d)``."""
    T = values.shape[0]
    return [values[max_lag - tau : T - tau] for tau in range(1, max_lag + 1)]


def build_linear_problem(dataset: TimeSeriesDataset, max_lag: int, lam=DEFAULT_LAMBDA) -> RegressionProblem:
    values = _require_complete(dataset, max_lag)
    design = np.concatenate(lagged_blocks(values, max_lag), axis=1)
    return RegressionProblem(
        design, values[max_lag:].copy(), lam, max_lag, block_width=dataset.d
    )


def build_kernel_problem(dataset: TimeSeriesDataset, max_lag: int, lam, fmap) -> RegressionProblem:
    """Design whose lag block ``tau`` holds the features of ``X^{t-tau}``."""
    values = _require_complete(dataset, max_lag)
    if fmap.input_dim != dataset.d:
        raise ValueError(f"feature map expects {fmap.input_dim} inputs, dataset has {dataset.d}")
    blocks = [embed(fmap, b) for b in lagged_blocks(values, max_lag)]
    design = np.concatenate(blocks, axis=1)
    return RegressionProblem(
        design, values[max_lag:].copy(), lam, max_lag, block_width=fmap.num_features
    )


def project_weights(
    model: FittedModel,
    phi: Optional[np.ndarray],
    max_lag: int,
    d: int,
    signed: Optional[bool] = None,
) -> LagWeightTensor:
    """Map fitted coefficients to a ``(L, d, d)`` input-space weight tensor.

    With ``phi=None`` (linear design) the coefficients are reshaped as is.
    Otherwise ``W[tau, i, j] = sum_k |coef[i, tau*p + k]| * phi[k, j]``;
    pass ``signed=True`` to skip the absolute value.
    """
    coef = np.asarray(model.coefficients)
    if coef.shape[0] != d:
        raise ValueError(f"expected {d} target rows, got {coef.shape[0]}")
    if phi is None:
        if coef.shape[1] != max_lag * d:
            raise ValueError(f"linear coefficients must have width {max_lag * d}, got {coef.shape[1]}")
        return LagWeightTensor(coef.reshape(d, max_lag, d).transpose(1, 0, 2))
    phi = np.asarray(phi, dtype=float)
    p = phi.shape[0]
    if phi.shape[1] != d or coef.shape[1] != max_lag * p:
        raise ValueError(
            f"shape mismatch: coefficients {coef.shape}, sensitivity {phi.shape}, L={max_lag}"
        )
    signed = False if signed is None else signed
    blocks = coef.reshape(d, max_lag, p).transpose(1, 0, 2)  # (L, d, p)
    if not signed:
        blocks = np.abs(blocks)
    return LagWeightTensor(blocks @ phi)


def select_lambda(
    problem: RegressionProblem,
    grid: Sequence[float] = LAMBDA_GRID,
    holdout: float = 0.2,
) -> np.ndarray:
    """Per-target lambda minimising squared error on the last ``holdout`` share of rows."""
    N = problem.n_samples
    n_test = max(1, int(round(holdout * N)))
    if N - n_test < 2:
        return np.full(problem.targets.shape[1], float(grid[0]))
    train = replace(problem, design=problem.design[:-n_test], targets=problem.targets[:-n_test])
    test_X, test_Y = problem.design[-n_test:], problem.targets[-n_test:]
    errors = []
    for lam in grid:
        fit = solve_lasso(replace(train, lam=float(lam)))
        errors.append(np.mean((test_Y - fit.predict(test_X)) ** 2, axis=0))
    best = np.argmin(np.vstack(errors), axis=0)
    return np.asarray(grid, dtype=float)[best]
