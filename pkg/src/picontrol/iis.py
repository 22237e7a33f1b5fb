"""Iterative importance sampling: simulate, reweight, refit, repeat.

Each round samples fresh paths under the current policy (round 0 under the
zero policy unless a warm start is given), fits feedback coefficients from
the weighted ensemble, and optionally damps the update.  Better samplers
concentrate the weights less, so the effective sample fraction should climb
across rounds; the per-round reports track that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .sde import BasisSet, ControlProblem, ParametrizedPolicy, Policy, TimeGrid, ZeroPolicy, simulate
from .cost import (DegenerateEnsembleError, batch_standard_error, expected_cost,
                   path_costs, value_estimate, weights)
from .estimator import fit_feedback

__all__ = [
    "IISConfig",
    "IterationReport",
    "round_seeds",
    "run",
    "evaluate_policy",
]


@dataclass(frozen=True)
class IISConfig:
    """Settings for the fitting loop.

    control_interval sets the coefficient time resolution: None fits every
    simulation node independently; a positive value pools moments over
    control intervals of that width (must tile the horizon).
    """

    n_paths: int
    n_rounds: int
    seed: int
    ridge: Optional[float] = None
    damping: float = 1.0
    control_interval: Optional[float] = None

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")

    def control_grid(self, sim_grid: TimeGrid) -> Optional[TimeGrid]:
        if self.control_interval is None:
            return None
        span = sim_grid.t1 - sim_grid.t0
        n_ctrl = int(round(span / self.control_interval))
        if n_ctrl < 1 or not np.isclose(n_ctrl * self.control_interval, span):
            raise ValueError(
                f"control_interval {self.control_interval} does not tile "
                f"horizon {span}"
            )
        return TimeGrid(sim_grid.t0, sim_grid.t1, n_ctrl)


@dataclass(frozen=True)
class IterationReport:
    """Diagnostics of one round's sampling ensemble plus the refit coefficients."""

    round_index: int
    expected_cost: float
    variance: float
    ess_fraction: float
    value: float
    coefficients: np.ndarray


def round_seeds(master_seed: int, count: int) -> List[int]:
    """Independent per-round sub-seeds derived from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def run(problem: ControlProblem, basis: BasisSet, f: Optional[Callable],
        config: IISConfig, warm_start: Optional[Policy] = None,
        ) -> Tuple[ParametrizedPolicy, List[IterationReport]]:
    """Run the fitting loop; returns the final policy and per-round reports.

    A degenerate round (every weight zero) aborts with the partial reports
    attached to the raised error as `.reports`.
    """
    ctrl_grid = config.control_grid(problem.grid)
    seeds = round_seeds(config.seed, config.n_rounds)
    policy: Policy = warm_start if warm_start is not None else ZeroPolicy(problem.dim_w)
    reports: List[IterationReport] = []
    A_prev: Optional[np.ndarray] = None
    final: Optional[ParametrizedPolicy] = None
    for r in range(config.n_rounds):
        ensemble = simulate(problem, policy, config.n_paths, seeds[r])
        costs = path_costs(ensemble, problem)
        try:
            ws = weights(costs)
        except DegenerateEnsembleError as exc:
            err = DegenerateEnsembleError(f"round {r}: {exc}")
            err.reports = reports
            err.round_index = r
            raise err from exc
        fit = fit_feedback(ensemble, ws, basis, f, config.ridge, ctrl_grid)
        A_new = fit.coefficients
        if A_prev is not None and config.damping < 1.0:
            A_new = (1.0 - config.damping) * A_prev + config.damping * A_new
        final = ParametrizedPolicy(coefficients=A_new, basis=basis,
                                   ctrl_grid=fit.ctrl_grid)
        reports.append(IterationReport(
            round_index=r,
            expected_cost=expected_cost(costs),
            variance=ws.variance,
            ess_fraction=ws.ess_fraction,
            value=value_estimate(costs),
            coefficients=A_new.copy(),
        ))
        policy = final
        A_prev = A_new
    return final, reports


def evaluate_policy(problem: ControlProblem, policy: Policy, n_paths: int,
                    seed: int) -> dict:
    """Out-of-sample performance summary of a policy on fresh paths."""
    ensemble = simulate(problem, policy, n_paths, seed)
    costs = path_costs(ensemble, problem)
    ws = weights(costs)
    es, es_se = batch_standard_error(costs.total, np.mean)
    return {
        "expected_cost": es,
        "expected_cost_se": es_se,
        "value": value_estimate(costs),
        "variance": ws.variance,
        "ess_fraction": ws.ess_fraction,
        "n_paths": n_paths,
        "seed": seed,
    }
