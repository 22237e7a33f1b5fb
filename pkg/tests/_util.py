"""Shared builders for small test problems."""

import numpy as np

from picontrol.sde import ControlProblem, TimeGrid


def free_problem(dim: int = 1, n_steps: int = 10, t0: float = 0.0, t1: float = 1.0,
                 x0: float = 0.0, running=None, terminal=None) -> ControlProblem:
    """Driftless unit-diffusion problem: dX = (u dt + dW), costs default to 0."""

    def drift(t, x):
        return np.zeros_like(x)

    def diffusion(t, x):
        return np.broadcast_to(np.eye(dim), (x.shape[0], dim, dim))

    return ControlProblem(
        dim_x=dim, dim_w=dim, drift=drift, diffusion=diffusion,
        running_cost=running if running is not None else (lambda t, x: 0.0),
        terminal_cost=terminal if terminal is not None else (lambda x: 0.0),
        x0=np.full(dim, x0), grid=TimeGrid(t0, t1, n_steps),
    )


def frozen_problem(x0: float = 0.5, n_steps: int = 10) -> ControlProblem:
    """Zero drift and zero diffusion: the state never moves."""

    def drift(t, x):
        return np.zeros_like(x)

    def diffusion(t, x):
        return np.zeros(x.shape + (1,))

    return ControlProblem(dim_x=1, dim_w=1, drift=drift, diffusion=diffusion,
                          running_cost=lambda t, x: 0.0, terminal_cost=lambda x: 0.0,
                          x0=np.array([x0]), grid=TimeGrid(0.0, 1.0, n_steps))
