"""Seeded multistart maximization of black-box objectives on a bounded box.

The local method is derivative-free simplex descent by default, with an
optional finite-difference quasi-Newton mode.  Restarts are independent:
the first starts at the box center, the rest at uniform seeded draws, so a
run is reproducible from its config alone and the incumbent after ``k``
restarts is a prefix-stable function of the seed.

Parameters flagged periodic (phases) wrap modulo their interval instead of
clamping; the objective only ever sees in-box points either way.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ContractError

_XATOL = 1e-7


@dataclass(frozen=True)
class OptimizerConfig:
    bounds: tuple[tuple[float, float], ...]
    restarts: int = 20
    max_evals: int = 2000
    tolerance: float = 1e-10
    seed: int = 0
    periodic: tuple[bool, ...] | None = None
    method: str = "nelder-mead"
    workers: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise ContractError("restarts must be >= 1")
        if self.tolerance <= 0:
            raise ContractError("tolerance must be positive")
        if self.max_evals < 1:
            raise ContractError("max_evals must be >= 1")
        if self.method not in ("nelder-mead", "quasi-newton"):
            raise ContractError(f"unknown method {self.method!r}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not bounds:
            raise ContractError("bounds must not be empty")
        for lo, hi in bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ContractError(f"bad bound ({lo}, {hi})")
        periodic = self.periodic
        if periodic is None:
            periodic = (False,) * len(bounds)
        periodic = tuple(bool(p) for p in periodic)
        if len(periodic) != len(bounds):
            raise ContractError("periodic mask length must match bounds")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "periodic", periodic)

    @property
    def dimension(self) -> int:
        return len(self.bounds)


@dataclass(frozen=True)
class OptTrace:
    restart_best: tuple[float, ...]
    restart_evals: tuple[int, ...]
    restart_converged: tuple[bool, ...]
    best_index: int

    def __post_init__(self):
        if self.restart_best and max(self.restart_best) != self.restart_best[self.best_index]:
            raise ContractError("trace best_index does not point at the maximum")


class _BoxedObjective:
    """Wraps the user objective: wrap/clip into the box, negate, hard-fail on
    non-finite values.  Picklable so restarts can run in worker processes."""

    def __init__(self, objective, lo, hi, periodic):
        self.objective = objective
        self.lo = lo
        self.hi = hi
        self.periodic = periodic

    def box(self, x: np.ndarray) -> np.ndarray:
        y = np.clip(x, self.lo, self.hi)
        if self.periodic.any():
            span = self.hi - self.lo
            wrapped = self.lo + np.mod(x - self.lo, span)
            y = np.where(self.periodic, wrapped, y)
        return y

    def __call__(self, x: np.ndarray) -> float:
        y = self.box(np.asarray(x, dtype=float))
        value = float(self.objective(y))
        if not np.isfinite(value):
            raise ContractError(f"objective returned {value!r} at {y.tolist()}")
        return -value


def _run_restart(args):
    boxed, x0, config = args
    scipy_bounds = [
        (None, None) if p else b for p, b in zip(config.periodic, config.bounds)
    ]
    if config.method == "nelder-mead":
        result = minimize(
            boxed,
            x0,
            method="Nelder-Mead",
            bounds=scipy_bounds,
            options={
                "maxfev": config.max_evals,
                "fatol": config.tolerance,
                "xatol": _XATOL,
            },
        )
    else:
        result = minimize(
            boxed,
            x0,
            method="L-BFGS-B",
            bounds=scipy_bounds,
            options={"maxfun": config.max_evals, "ftol": config.tolerance},
        )
    return boxed.box(result.x), -float(result.fun), int(result.nfev), bool(result.success)


def initial_points(config: OptimizerConfig) -> np.ndarray:
    """Box center first, then uniform seeded draws."""
    lo = np.array([b[0] for b in config.bounds])
    hi = np.array([b[1] for b in config.bounds])
    rng = np.random.default_rng(config.seed)
    starts = lo + rng.random((config.restarts, config.dimension)) * (hi - lo)
    starts[0] = (lo + hi) / 2.0
    return starts


def maximize(
    objective: Callable[[np.ndarray], float], config: OptimizerConfig
) -> tuple[np.ndarray, float, OptTrace]:
    """Best point and value over all restarts, with the per-restart trace."""
    lo = np.array([b[0] for b in config.bounds])
    hi = np.array([b[1] for b in config.bounds])
    boxed = _BoxedObjective(objective, lo, hi, np.asarray(config.periodic))
    starts = initial_points(config)
    jobs = [(boxed, starts[r], config) for r in range(config.restarts)]

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_run_restart, jobs))
    else:
        outcomes = [_run_restart(job) for job in jobs]

    values = [v for _, v, _, _ in outcomes]
    best = int(np.argmax(values))
    trace = OptTrace(
        restart_best=tuple(values),
        restart_evals=tuple(n for _, _, n, _ in outcomes),
        restart_converged=tuple(c for _, _, _, c in outcomes),
        best_index=best,
    )
    return outcomes[best][0], values[best], trace
