"""Controlled diffusions and Euler-Maruyama path simulation.

State dynamics follow

    dX = b(t, X) dt + sigma(t, X) (u(t, X) dt + dW)

discretized with the explicit Euler scheme, control and coefficients held at
the left endpoint of each step.  Noise is drawn from counter-based per-path
RNG streams so ensembles are bit-reproducible regardless of how path
generation is scheduled across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TimeGrid",
    "ControlProblem",
    "BasisSet",
    "Policy",
    "ZeroPolicy",
    "AnalyticPolicy",
    "ParametrizedPolicy",
    "PathEnsemble",
    "SimulationError",
    "simulate",
    "replay",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = t0 + k dt, k = 0..n_steps, with t_{n_steps} = t1 exactly."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if self.n_steps < 1:
            raise ValueError(f"need n_steps >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        # endpoint pinned to t1; interior nodes from the linspace, not repeated adds
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    def node_index(self, t: float) -> int:
        """Left node of the step containing t (piecewise-constant lookup)."""
        k = int(np.floor((t - self.t0) / self.dt + 1e-9))
        return min(max(k, 0), self.n_steps - 1)


@dataclass(frozen=True)
class ControlProblem:
    """Dynamics, costs, horizon and initial state of one control problem.

    drift(t, x) -> array like x; diffusion(t, x) -> (..., dim_x, dim_w);
    running_cost(t, x) -> scalar per path; terminal_cost(x) -> scalar per path.
    All callables must accept x batched as (n_paths, dim_x).
    """

    dim_x: int
    dim_w: int
    drift: Callable
    diffusion: Callable
    running_cost: Callable
    terminal_cost: Callable
    x0: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(
            self, "x0", np.broadcast_to(np.asarray(self.x0, float), (self.dim_x,)).copy()
        )


@dataclass(frozen=True)
class BasisSet:
    """k_basis state-feedback basis functions h(t, x) -> (n_paths, k_basis)."""

    k_basis: int
    eval: Callable
    name: str = ""

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        h = np.asarray(self.eval(t, x), float)
        if h.shape[-1] != self.k_basis:
            raise ValueError(f"basis returned {h.shape[-1]} features, declared {self.k_basis}")
        return h


class Policy:
    """A control law u(t, x).  Subclasses: ZeroPolicy, AnalyticPolicy, ParametrizedPolicy."""

    policy_id: str = "policy"

    def evaluate(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroPolicy(Policy):
    dim_w: int = 1
    policy_id: str = "zero"

    def evaluate(self, t, x):
        return np.zeros((x.shape[0], self.dim_w))


@dataclass(frozen=True)
class AnalyticPolicy(Policy):
    """Closed-form control; func(t, x_batch) -> (n_paths,) or (n_paths, dim_w)."""

    func: Callable
    dim_w: int = 1
    name: str = "analytic"

    @property
    def policy_id(self):
        return f"analytic:{self.name}"

    def evaluate(self, t, x):
        u = np.asarray(self.func(t, x), float)
        return u.reshape(x.shape[0], self.dim_w)


@dataclass(frozen=True)
class ParametrizedPolicy(Policy):
    """u(t, x) = A(t) h(t, x) with A piecewise-constant on its own time grid.

    coefficients has shape (ctrl_grid.n_steps, dim_w, k_basis); evaluation at t
    uses the coefficient of the left node of the interval containing t.
    """

    coefficients: np.ndarray
    basis: BasisSet
    ctrl_grid: TimeGrid

    def __post_init__(self):
        A = np.asarray(self.coefficients, float)
        if A.ndim != 3 or A.shape[0] != self.ctrl_grid.n_steps or A.shape[2] != self.basis.k_basis:
            raise ValueError(
                f"coefficients shape {A.shape} does not match "
                f"(n_nodes={self.ctrl_grid.n_steps}, dim_w, k_basis={self.basis.k_basis})"
            )
        if not np.all(np.isfinite(A)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "coefficients", A)

    @property
    def dim_w(self):
        return self.coefficients.shape[1]

    @property
    def policy_id(self):
        return f"parametrized:{self.basis.name or self.basis.k_basis}n{self.coefficients.shape[0]}"

    def evaluate(self, t, x):
        A = self.coefficients[self.ctrl_grid.node_index(t)]
        h = self.basis(t, x)
        return h @ A.T


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated trajectories with their driving noise and applied controls.

    states: (n_paths, n_steps + 1, dim_x), noise: (n_paths, n_steps, dim_w)
    Brownian increments, controls: (n_paths, n_steps, dim_w) as used during
    simulation.  Immutable; safe to share across threads.
    """

    states: np.ndarray
    noise: np.ndarray
    controls: np.ndarray
    grid: TimeGrid
    policy_id: str

    def __post_init__(self):
        for name in ("states", "noise", "controls"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim_x(self) -> int:
        return self.states.shape[2]

    @property
    def dim_w(self) -> int:
        return self.noise.shape[2]


class SimulationError(RuntimeError):
    """Non-finite state or control during integration."""

    def __init__(self, path_index: int, step: int, what: str):
        self.path_index = int(path_index)
        self.step = int(step)
        super().__init__(f"non-finite {what} at path {path_index}, step {step}")


def _path_noise(seed: int, n_paths: int, n_steps: int, dim_w: int, dt: float,
                n_workers: int = 1) -> np.ndarray:
    """Brownian increments from one Philox stream per path, keyed (seed, path).

    The per-path streams make the result independent of worker count and of
    how paths are batched; workers only fill disjoint slices.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    out = np.empty((n_paths, n_steps, dim_w))
    scale = np.sqrt(dt)

    def fill(lo, hi):
        for i in range(lo, hi):
            gen = np.random.Generator(np.random.Philox(key=np.array([seed, i], dtype=np.uint64)))
            out[i] = gen.standard_normal((n_steps, dim_w))
        out[lo:hi] *= scale

    if n_workers <= 1:
        fill(0, n_paths)
    else:
        chunk = -(-n_paths // n_workers)
        bounds = [(j * chunk, min((j + 1) * chunk, n_paths)) for j in range(n_workers)]
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            list(ex.map(lambda b: fill(*b), [b for b in bounds if b[0] < b[1]]))
    return out


def _first_bad(arr: np.ndarray):
    flat_path = np.argmin(np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1))
    return int(flat_path)


def _integrate(problem: ControlProblem, policy: Policy, noise: np.ndarray):
    """Euler-Maruyama recursion over a given noise array; returns (states, controls)."""
    grid = problem.grid
    n, N, m = noise.shape
    if N != grid.n_steps or m != problem.dim_w:
        raise ValueError(f"noise shape {noise.shape} does not match grid/problem")
    dt = grid.dt
    times = grid.times
    states = np.empty((n, N + 1, problem.dim_x))
    controls = np.empty((n, N, m))
    x = np.broadcast_to(problem.x0, (n, problem.dim_x)).copy()
    states[:, 0] = x
    for k in range(N):
        t = times[k]
        u = np.asarray(policy.evaluate(t, x), float).reshape(n, m)
        if not np.all(np.isfinite(u)):
            raise SimulationError(_first_bad(u), k, "control")
        b = np.broadcast_to(np.asarray(problem.drift(t, x), float), (n, problem.dim_x))
        sig = np.broadcast_to(
            np.asarray(problem.diffusion(t, x), float), (n, problem.dim_x, m)
        )
        x = x + b * dt + np.einsum("nij,nj->ni", sig, u * dt + noise[:, k])
        if not np.all(np.isfinite(x)):
            raise SimulationError(_first_bad(x), k, "state")
        states[:, k + 1] = x
        controls[:, k] = u
    return states, controls


def simulate(problem: ControlProblem, policy: Policy, n_paths: int, seed: int,
             n_workers: int = 1) -> PathEnsemble:
    """Simulate n_paths trajectories of the controlled SDE under `policy`.

    Increments are drawn from per-path counter-based streams derived from
    (seed, path index), so two runs with the same seed agree bit for bit for
    any n_workers.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    noise = _path_noise(seed, n_paths, problem.grid.n_steps, problem.dim_w,
                        problem.grid.dt, n_workers)
    states, controls = _integrate(problem, policy, noise)
    return PathEnsemble(states=states, noise=noise, controls=controls,
                        grid=problem.grid, policy_id=policy.policy_id)


def replay(problem: ControlProblem, policy: Policy, noise: np.ndarray) -> PathEnsemble:
    """Re-run the Euler recursion on an explicit noise array.

    Used to verify that stored increments reproduce stored states, and for
    common-noise comparisons across step sizes.
    """
    states, controls = _integrate(problem, policy, np.asarray(noise, float))
    return PathEnsemble(states=states, noise=np.asarray(noise, float), controls=controls,
                        grid=problem.grid, policy_id=policy.policy_id)
