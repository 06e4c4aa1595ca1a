# tubegrid/tools/integrator.py
"""
Fixed-step classical Runge-Kutta integration with scheduled input changes.

Inputs are sampled once per step and held over all four stages; event
times are snapped to the nearest grid index so a reference change always
lands on a step boundary.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from grid.errors import CPLSingularityError, SimulationDivergence

logger = logging.getLogger(__name__)

# a single clamp larger than this is worth a warning
CLAMP_WARN = 1e-9

Rhs = Callable[[float, np.ndarray, Any], np.ndarray]


@dataclass
class Solution:
    """Grid times, states (one row per time) and the inputs held over each step"""

    times: np.ndarray
    states: np.ndarray
    inputs: List[Any] = field(default_factory=list)
    event_indices: List[int] = field(default_factory=list)
    epochs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    max_clamp: float = 0.0

    @property
    def steps(self) -> int:
        return max(len(self.times) - 1, 0)


def step_count(t_span: Tuple[float, float], dt: float) -> int:
    span = t_span[1] - t_span[0]
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        logger.debug(f"horizon {span} is not a multiple of dt={dt}; using {n} steps")
    return n


def rk4_step(rhs: Rhs, t: float, x: np.ndarray, dt: float, u: Any) -> np.ndarray:
    k1 = rhs(t, x, u)
    k2 = rhs(t + dt / 2, x + 0.5 * dt * k1, u)
    k3 = rhs(t + dt / 2, x + 0.5 * dt * k2, u)
    k4 = rhs(t + dt, x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(rhs: Rhs, x0: np.ndarray, t_span: Tuple[float, float], dt: float,
              event_schedule: Sequence[float] = (),
              inputs: Optional[Callable[[float, int], Any]] = None,
              projector: Optional[Callable[[np.ndarray], float]] = None) -> Solution:
    """
    Integrate rhs(t, x, u) from t_span[0] to t_span[1] with fixed step dt.

    inputs(t, epoch) supplies u for the step starting at t, where epoch counts
    the scheduled events already passed. projector(x) may correct x in place
    after each step and returns the size of the correction.
    A zero-length span gives an empty solution.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state is not finite")
    t0 = float(t_span[0])
    n_steps = step_count(t_span, dt)
    if n_steps <= 0:
        return Solution(times=np.zeros(0), states=np.zeros((0, x.size)))

    event_idx = sorted(int(round((float(te) - t0) / dt)) for te in event_schedule)
    times = t0 + dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    epochs = np.searchsorted(np.asarray(event_idx, dtype=int), np.arange(n_steps + 1), side="right")
    held: List[Any] = []
    max_clamp = 0.0
    report_every = max(n_steps // 10, 1)

    for k in range(n_steps):
        t = times[k]
        u = inputs(t, int(epochs[k])) if inputs is not None else None
        held.append(u)
        try:
            x_next = rk4_step(rhs, t, x, dt, u)
        except CPLSingularityError as exc:
            raise SimulationDivergence(f"CPL singularity at t={t:.6g}: {exc}", t, x.copy()) from exc
        if not np.all(np.isfinite(x_next)):
            raise SimulationDivergence(f"state became non-finite after t={t:.6g}", t, x.copy())
        if projector is not None:
            clamp = projector(x_next)
            if clamp > 0.0:
                max_clamp = max(max_clamp, clamp)
                if clamp > CLAMP_WARN:
                    logger.warning(f"integrator state clamp {clamp:.3e} at t={t + dt:.6g}")
                else:
                    logger.debug(f"integrator state clamp {clamp:.3e} at t={t + dt:.6g}")
        x = x_next
        states[k + 1] = x
        if (k + 1) % report_every == 0:
            logger.debug(f"integrated {100 * (k + 1) // n_steps}% (t={times[k + 1]:.4g} s)")

    # input at the final grid point, so every row has one
    held.append(inputs(times[-1], int(epochs[-1])) if inputs is not None else None)
    return Solution(times=times, states=states, inputs=held, event_indices=event_idx,
                    epochs=epochs, max_clamp=max_clamp)


def convergence_ratio(rhs: Rhs, x0: np.ndarray, t_end: float, dt: float,
                      exact: np.ndarray) -> float:
    """Error ratio under step halving; about 16 for a fourth-order scheme"""
    coarse = integrate(rhs, x0, (0.0, t_end), dt).states[-1]
    fine = integrate(rhs, x0, (0.0, t_end), dt / 2).states[-1]
    return float(np.linalg.norm(coarse - exact) / np.linalg.norm(fine - exact))


def harmonic_energy_drift(omega: float = 2 * math.pi, dt: float = 1e-4) -> float:
    """Relative energy drift of x'' = -omega^2 x over one period"""
    def rhs(t, x, u):
        return np.array([x[1], -omega * omega * x[0]])

    def energy(s):
        return 0.5 * (s[1] ** 2 + omega ** 2 * s[0] ** 2)

    x0 = np.array([1.0, 0.0])
    x_end = integrate(rhs, x0, (0.0, 2 * math.pi / omega), dt).states[-1]
    return abs(energy(x_end) - energy(x0)) / energy(x0)
