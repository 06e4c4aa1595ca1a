# tubegrid/grid/cpl.py
"""
Constant power load current injection in the d-q frame.
Kept separate so both the plant model and the nominal controller can use it.
"""

import numpy as np

from grid.errors import CPLSingularityError

# Below this squared magnitude the CPL model is undefined (V^2)
SINGULARITY_THRESHOLD = 1e-6


def cpl_currents(v_d, v_q, P, Q, threshold: float = SINGULARITY_THRESHOLD):
    """
    Vectorized CPL current (g_d, g_q) for any broadcastable arrays.

    Raises CPLSingularityError naming the offending node indices (last axis).
    """
    mag_sq = v_d * v_d + v_q * v_q
    bad = mag_sq <= threshold
    if np.any(bad):
        nodes = np.unique(np.nonzero(np.atleast_1d(bad))[-1])
        raise CPLSingularityError(nodes, float(np.min(mag_sq)), threshold)
    scale = (2.0 / 3.0) / mag_sq
    g_d = scale * (v_d * P + v_q * Q)
    g_q = scale * (v_q * P - v_d * Q)
    return g_d, g_q


def cpl_current(v_i, P: float, Q: float, node: int = 0,
                threshold: float = SINGULARITY_THRESHOLD) -> np.ndarray:
    """CPL current of a single node; v_i is the (d, q) voltage pair"""
    v_d, v_q = float(v_i[0]), float(v_i[1])
    if v_d * v_d + v_q * v_q <= threshold:
        raise CPLSingularityError([node], v_d * v_d + v_q * v_q, threshold)
    g_d, g_q = cpl_currents(v_d, v_q, P, Q, threshold)
    return np.array([g_d, g_q])
