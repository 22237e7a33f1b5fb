"""Path costs, importance weights and variance diagnostics.

Each simulated path carries the cost

    S = Phi(X(t1)) + sum_k [V(t_k, X_k) + 1/2 u_k'u_k] dt + sum_k u_k'dW_k

with every quadrature left-point (Ito).  Normalized weights alpha =
exp(-S)/mean exp(-S) turn averages under the sampling policy into estimates
under the optimally-controlled law; -log mean exp(-S) estimates the optimal
cost-to-go regardless of the sampling policy, while the plain mean of S
measures the sampling policy itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .sde import ControlProblem, PathEnsemble, Policy

__all__ = [
    "CostRecord",
    "WeightSet",
    "DegenerateEnsembleError",
    "path_costs",
    "weights",
    "value_estimate",
    "expected_cost",
    "variance_bounds",
    "batch_standard_error",
]


class DegenerateEnsembleError(RuntimeError):
    """Every path has infinite cost, so all weights vanish."""


@dataclass(frozen=True)
class CostRecord:
    """Per-path cost records, stored as parallel arrays over paths.

    total = terminal + running + quadratic + stochastic, summed in exactly
    that order so the decomposition reconstructs total bit for bit.
    """

    terminal: np.ndarray
    running: np.ndarray
    quadratic: np.ndarray
    stochastic: np.ndarray
    total: np.ndarray

    def __len__(self):
        return self.total.shape[0]


@dataclass(frozen=True)
class WeightSet:
    """Normalized path weights with their dispersion summaries.

    mean(weights) = 1 up to rounding; ess_fraction = 1/mean(alpha^2);
    variance = mean(alpha^2) - 1 (population form, so ess = 1/(variance+1)).
    """

    weights: np.ndarray
    log_normalizer: float
    ess_fraction: float
    variance: float


def _log_mean_exp_neg(S: np.ndarray) -> Tuple[float, np.ndarray]:
    """log mean exp(-S) with a max shift, plus the unnormalized exp terms."""
    a = -np.asarray(S, float)
    if np.any(np.isnan(a)):
        raise ValueError("NaN path cost")
    amax = np.max(a[np.isfinite(a)]) if np.any(np.isfinite(a)) else -np.inf
    if not np.isfinite(amax):
        raise DegenerateEnsembleError("degenerate ensemble: all path costs are +inf")
    w = np.exp(a - amax)
    return amax + np.log(np.mean(w)), w


def path_costs(ensemble: PathEnsemble, problem: ControlProblem) -> CostRecord:
    """Evaluate the four cost parts and their total for every path."""
    if ensemble.grid != problem.grid:
        raise ValueError("ensemble grid does not match problem grid")
    n = ensemble.n_paths
    dt = problem.grid.dt
    times = problem.grid.times
    X, U, dW = ensemble.states, ensemble.controls, ensemble.noise

    terminal = np.broadcast_to(
        np.asarray(problem.terminal_cost(X[:, -1]), float).squeeze(), (n,)).copy()
    running = np.zeros(n)
    for k in range(problem.grid.n_steps):
        running += np.broadcast_to(
            np.asarray(problem.running_cost(times[k], X[:, k]), float).squeeze(), (n,))
    running *= dt
    quadratic = 0.5 * dt * np.einsum("nkm,nkm->n", U, U)
    stochastic = np.einsum("nkm,nkm->n", U, dW)
    total = terminal + running + quadratic + stochastic
    return CostRecord(terminal=terminal, running=running, quadratic=quadratic,
                      stochastic=stochastic, total=total)


def weights(costs: CostRecord) -> WeightSet:
    """Self-normalized weights alpha_i = exp(-S_i)/mean_j exp(-S_j)."""
    if len(costs) < 1:
        raise ValueError("need at least one path")
    log_norm, w = _log_mean_exp_neg(costs.total)
    alpha = w / np.mean(w)
    m2 = float(np.mean(alpha * alpha))
    return WeightSet(weights=alpha, log_normalizer=float(log_norm),
                     ess_fraction=1.0 / m2, variance=m2 - 1.0)


def value_estimate(costs: CostRecord) -> float:
    """Sampler-invariant estimate of the optimal cost-to-go: -log mean exp(-S)."""
    if len(costs) < 1:
        raise ValueError("need at least one path")
    log_norm, _ = _log_mean_exp_neg(costs.total)
    return -float(log_norm)


def expected_cost(costs: CostRecord) -> float:
    """Plain sample mean of S: the performance of the sampling policy itself."""
    if len(costs) < 1:
        raise ValueError("need at least one path")
    return float(np.mean(costs.total))


def variance_bounds(ensemble: PathEnsemble, problem: ControlProblem,
                    u_star: Policy) -> Tuple[float, float]:
    """Monte Carlo lower/upper bounds on Var(alpha) from a reference optimum.

    upper = sum_k dt * mean_i ||u*(t_k, X_ik) - u_ik||^2 alpha_i^2
    lower = sum_k dt * ||mean_i (u*(t_k, X_ik) - u_ik) alpha_i||^2
    """
    if ensemble.grid != problem.grid:
        raise ValueError("ensemble grid does not match problem grid")
    alpha = weights(path_costs(ensemble, problem)).weights
    dt = problem.grid.dt
    times = problem.grid.times
    n = ensemble.n_paths
    lower = 0.0
    upper = 0.0
    for k in range(problem.grid.n_steps):
        du = np.asarray(u_star.evaluate(times[k], ensemble.states[:, k]), float)
        du = du.reshape(n, ensemble.dim_w) - ensemble.controls[:, k]
        upper += dt * float(np.mean(np.sum(du * du, axis=1) * alpha * alpha))
        lower += dt * float(np.sum(np.mean(du * alpha[:, None], axis=0) ** 2))
    return lower, upper


def batch_standard_error(values: np.ndarray, statistic: Callable[[np.ndarray], float],
                         n_batches: int = 10) -> Tuple[float, float]:
    """(full-sample statistic, standard error) via contiguous path batches.

    The statistic is recomputed on each batch (weights renormalize locally),
    and the spread of batch values gives an assumption-light standard error.
    """
    values = np.asarray(values)
    full = float(statistic(values))
    parts = np.array_split(values, n_batches)
    stats = np.array([statistic(p) for p in parts if len(p) > 0])
    se = float(np.std(stats, ddof=1) / np.sqrt(len(stats)))
    return full, se
