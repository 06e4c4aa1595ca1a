# tubegrid/conductor/disturbance.py
"""
Bounded load-deviation generators.

Every profile is a pure function of time and seed, so two generators built
from the same profile produce identical sample paths. Samples are clamped
to the per-node bounds of the network.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from grid.dynamics import LoadDisturbance
from grid.netmodel import NetworkModel

logger = logging.getLogger(__name__)

KINDS = ("zero", "piecewise_random", "square_wave", "sinusoid")

# keeps grid times that land exactly on a dwell boundary in the new interval
_EDGE = 1e-9


@dataclass(frozen=True)
class DisturbanceProfile:
    kind: str = "square_wave"
    seed: int = 0
    dwell: float = 0.02
    amplitude: float = 1.0

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"amplitude fraction must be in [0, 1], got {self.amplitude}")
        if self.kind != "zero" and not self.dwell > 0:
            raise ValueError(f"dwell must be > 0, got {self.dwell}")


def make_disturbance(profile: DisturbanceProfile, model: NetworkModel) -> Callable[[float], LoadDisturbance]:
    """Return t -> LoadDisturbance for the given profile"""
    n = model.node_count
    bound_P = model.dP_max
    bound_Q = model.dQ_max
    a = profile.amplitude

    def clamp(dP, dQ) -> LoadDisturbance:
        return LoadDisturbance(np.clip(dP, -bound_P, bound_P), np.clip(dQ, -bound_Q, bound_Q))

    if profile.kind == "zero":
        def zero(t: float) -> LoadDisturbance:
            return LoadDisturbance.zeros(n)
        return zero

    if profile.kind == "square_wave":
        def square(t: float) -> LoadDisturbance:
            k = math.floor(t / profile.dwell + _EDGE)
            sign = 1.0 if k % 2 == 0 else -1.0
            return clamp(sign * a * bound_P, sign * a * bound_Q)
        return square

    if profile.kind == "sinusoid":
        def sinusoid(t: float) -> LoadDisturbance:
            s = math.sin(math.pi * t / profile.dwell)
            return clamp(s * a * bound_P, s * a * bound_Q)
        return sinusoid

    def piecewise_random(t: float) -> LoadDisturbance:
        k = math.floor(t / profile.dwell + _EDGE)
        rng = np.random.default_rng([profile.seed, k])
        draw = rng.uniform(-1.0, 1.0, size=(2, n))
        return clamp(draw[0] * a * bound_P, draw[1] * a * bound_Q)
    return piecewise_random
