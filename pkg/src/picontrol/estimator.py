"""Weighted path-ensemble estimators and feedback-coefficient fitting.

The (weighted) ensemble average <Y>(t_k) = mean_i alpha_i Y_i(t_k) estimates
expectations under the optimally-controlled law.  The correction estimator

    <(u* - u) f'>(t_k)  ~  mean_i alpha_i (dW_ik / dt) f(t_k, X_ik)'

turns stored noise into an estimate of how far the sampling control is from
optimal, and fitting A(t) h(t, x) amounts to per-node linear solves

    A_k (G_k G_k' + ridge I) = (U_k + D_k) G_k'

with G = <h f'>, U = <u f'>, D the correction term.  By default each
simulation node is solved independently with the single-step quotient; an
optional coarser control grid pools the moment sums over each control
interval, trading time resolution for far lower coefficient noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sde import BasisSet, ParametrizedPolicy, PathEnsemble, TimeGrid
from .cost import WeightSet

__all__ = [
    "MomentSeries",
    "FitResult",
    "SingularFitError",
    "weighted_average",
    "control_correction",
    "compute_moments",
    "fit_feedback",
]


class SingularFitError(RuntimeError):
    """Normal matrix numerically singular at some node; retry with ridge > 0."""

    def __init__(self, node: int, sigma_min: float):
        self.node = int(node)
        self.sigma_min = float(sigma_min)
        super().__init__(
            f"normal matrix singular at node {node} (smallest singular value "
            f"{sigma_min:.3e}); pass ridge > 0"
        )


@dataclass(frozen=True)
class MomentSeries:
    """Per-control-node moment matrices G = <h f'>, U = <u f'>, D (correction).

    Shapes: G (K, k_basis, l), U and D (K, dim_w, l); node_times (K,) are the
    left edges of the control intervals.
    """

    G: np.ndarray
    U: np.ndarray
    D: np.ndarray
    node_times: np.ndarray


@dataclass(frozen=True)
class FitResult:
    """Fitted coefficients A(t_k) with conditioning diagnostics.

    coefficients (K, dim_w, k_basis); sigma_min[k] is the smallest singular
    value of the regularized normal matrix at node k.
    """

    coefficients: np.ndarray
    sigma_min: np.ndarray
    ridge: np.ndarray
    ctrl_grid: TimeGrid
    basis: BasisSet

    def to_policy(self) -> ParametrizedPolicy:
        return ParametrizedPolicy(coefficients=self.coefficients, basis=self.basis,
                                  ctrl_grid=self.ctrl_grid)


def _check_weights(ensemble: PathEnsemble, ws: WeightSet):
    if ws.weights.shape[0] != ensemble.n_paths:
        raise ValueError("weights were not computed from this ensemble")


def weighted_average(ensemble: PathEnsemble, ws: WeightSet, f: Callable,
                     k: int) -> np.ndarray:
    """mean_i alpha_i f(t_k, X_ik); estimates <f>(t_k) under the optimal law."""
    _check_weights(ensemble, ws)
    if not 0 <= k <= ensemble.grid.n_steps:
        raise IndexError(f"node {k} outside 0..{ensemble.grid.n_steps}")
    t = ensemble.grid.times[k]
    fv = np.asarray(f(t, ensemble.states[:, k]), float).reshape(ensemble.n_paths, -1)
    return (ws.weights @ fv) / ensemble.n_paths


def control_correction(ensemble: PathEnsemble, ws: WeightSet, f: Callable,
                       k: int) -> np.ndarray:
    """Single-step realization of <(u* - u) f'>(t_k), shape (dim_w, l).

    The limit of <int_t^r f dW/(r - t)> as r -> t is taken over one
    integrator step: mean_i alpha_i (dW_ik/dt) f(t_k, X_ik)'.
    """
    _check_weights(ensemble, ws)
    if not 0 <= k < ensemble.grid.n_steps:
        raise IndexError(f"node {k} outside 0..{ensemble.grid.n_steps - 1}")
    t = ensemble.grid.times[k]
    n = ensemble.n_paths
    fv = np.asarray(f(t, ensemble.states[:, k]), float).reshape(n, -1)
    dW = ensemble.noise[:, k]
    return np.einsum("n,nm,nl->ml", ws.weights, dW, fv) / (n * ensemble.grid.dt)


def _interval_of_nodes(sim_grid: TimeGrid, ctrl_grid: TimeGrid) -> np.ndarray:
    """Map each simulation step node to the control interval containing it."""
    if not (np.isclose(ctrl_grid.t0, sim_grid.t0) and np.isclose(ctrl_grid.t1, sim_grid.t1)):
        raise ValueError("control grid must span the simulation horizon")
    if ctrl_grid.n_steps > sim_grid.n_steps:
        raise ValueError("control grid cannot be finer than the simulation grid")
    idx = np.array([ctrl_grid.node_index(t) for t in sim_grid.times[:-1]])
    if len(np.unique(idx)) != ctrl_grid.n_steps:
        raise ValueError("every control interval must contain a simulation node")
    return idx


def compute_moments(ensemble: PathEnsemble, ws: WeightSet, basis: BasisSet,
                    f: Optional[Callable] = None,
                    control_grid: Optional[TimeGrid] = None) -> MomentSeries:
    """Accumulate G, U, D at every control node.

    With control_grid=None each simulation node is its own control node and D
    uses the single-step quotient.  With a coarser control grid the three
    moment sums are averaged over all simulation steps inside each interval
    (for D this realizes the limit term as a short-window stochastic
    integral, unbiased at the fixed point and far less noisy).
    """
    _check_weights(ensemble, ws)
    if f is None:
        f = basis
    grid = ensemble.grid
    n, N = ensemble.n_paths, grid.n_steps
    ctrl = control_grid if control_grid is not None else grid
    owner = _interval_of_nodes(grid, ctrl)
    K = ctrl.n_steps
    alpha = ws.weights / n
    X, U_s, dW = ensemble.states, ensemble.controls, ensemble.noise

    t0 = grid.times[0]
    h0 = basis(t0, X[:, 0])
    f0 = np.asarray(f(t0, X[:, 0]), float).reshape(n, -1)
    kb, l = h0.shape[1], f0.shape[1]
    if l < kb:
        raise ValueError(f"need at least k_basis={kb} test functions, got l={l}")

    G = np.zeros((K, kb, l))
    U = np.zeros((K, ensemble.dim_w, l))
    D = np.zeros((K, ensemble.dim_w, l))
    counts = np.zeros(K)
    for k in range(N):
        t = grid.times[k]
        h = h0 if k == 0 else basis(t, X[:, k])
        fv = f0 if k == 0 else np.asarray(f(t, X[:, k]), float).reshape(n, -1)
        c = owner[k]
        G[c] += np.einsum("n,nk,nl->kl", alpha, h, fv)
        U[c] += np.einsum("n,nm,nl->ml", alpha, U_s[:, k], fv)
        D[c] += np.einsum("n,nm,nl->ml", alpha, dW[:, k], fv)
        counts[c] += 1
    G /= counts[:, None, None]
    U /= counts[:, None, None]
    D /= (counts * grid.dt)[:, None, None]
    return MomentSeries(G=G, U=U, D=D, node_times=ctrl.times[:-1].copy())


def fit_feedback(ensemble: PathEnsemble, ws: WeightSet, basis: BasisSet,
                 f: Optional[Callable] = None, ridge: Optional[float] = None,
                 control_grid: Optional[TimeGrid] = None) -> FitResult:
    """Fit A(t) in u(t,x) = A(t) h(t,x) by per-node regularized normal equations.

    ridge=None applies the default 1e-8 * trace(G G')/k_basis per node;
    ridge=0 demands a well-conditioned system and raises SingularFitError
    when the smallest singular value drops below 1e-12.
    """
    moments = compute_moments(ensemble, ws, basis, f, control_grid)
    K, kb, _ = moments.G.shape
    m = moments.U.shape[1]
    ctrl = control_grid if control_grid is not None else ensemble.grid
    coeffs = np.empty((K, m, kb))
    sig_min = np.empty(K)
    ridges = np.empty(K)
    eye = np.eye(kb)
    for k in range(K):
        Gk = moments.G[k]
        M = Gk @ Gk.T
        rk = 1e-8 * np.trace(M) / kb if ridge is None else float(ridge)
        M_reg = M + rk * eye
        s = np.linalg.svd(M_reg, compute_uv=False)
        sig_min[k] = s[-1]
        if rk == 0.0 and sig_min[k] < 1e-12:
            raise SingularFitError(k, sig_min[k])
        rhs = (moments.U[k] + moments.D[k]) @ Gk.T
        A = np.linalg.solve(M_reg, rhs.T).T
        if not np.all(np.isfinite(A)):
            raise SingularFitError(k, sig_min[k])
        coeffs[k] = A
        ridges[k] = rk
    return FitResult(coefficients=coeffs, sigma_min=sig_min, ridge=ridges,
                     ctrl_grid=ctrl, basis=basis)
