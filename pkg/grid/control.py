# tubegrid/grid/control.py
"""
Control laws and gain design.

Two layers: an error feedback -K e around a nominal injection, and a
nominal law with saturating d-integrator and q-channel decoupling.
Design follows three steps: error gain from the boundary condition on the
safe set, a set-inclusion check, then K_d and M from the nominal bounds.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from grid.cpl import cpl_currents
from grid.errors import DesignError, GainError
from grid.netmodel import NetworkModel

logger = logging.getLogger(__name__)

DEFAULT_SAFETY = 1.05
DEFAULT_BETA_SAMPLES = 1000
DEFAULT_INTEGRATOR_GAIN = 50.0
DEFAULT_GAIN_FLOOR = 1.0

GAIN_FIELDS = ("K", "K_d", "K_q", "k_Id", "k_Iq", "M", "e_bar", "delta")


def _vec(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise GainError(f"{name}: expected {n} values, got shape {arr.shape}")
    return arr.copy()


@dataclass(frozen=True, eq=False)
class GainSet:
    """Per-node controller parameters; z_tilde_m is derived as M / K_d"""

    K: np.ndarray
    K_d: np.ndarray
    K_q: np.ndarray
    k_Id: np.ndarray
    k_Iq: np.ndarray
    M: np.ndarray
    e_bar: np.ndarray
    delta: np.ndarray

    @classmethod
    def build(cls, n: int, K, K_d, k_Id, k_Iq, e_bar, delta,
              K_q=None, M=None, z_tilde_m=None) -> "GainSet":
        """Broadcast scalars; exactly one of M and z_tilde_m must be given"""
        if (M is None) == (z_tilde_m is None):
            raise GainError("give exactly one of M and z_tilde_m")
        K_d = _vec(K_d, n, "K_d")
        if M is None:
            M = _vec(z_tilde_m, n, "z_tilde_m") * K_d
        gains = cls(
            K=_vec(K, n, "K"),
            K_d=K_d,
            K_q=_vec(K_d if K_q is None else K_q, n, "K_q"),
            k_Id=_vec(k_Id, n, "k_Id"),
            k_Iq=_vec(k_Iq, n, "k_Iq"),
            M=_vec(M, n, "M"),
            e_bar=_vec(e_bar, n, "e_bar"),
            delta=_vec(delta, n, "delta"),
        )
        gains.validate()
        return gains

    @property
    def node_count(self) -> int:
        return self.K.shape[0]

    @property
    def z_tilde_m(self) -> np.ndarray:
        return self.M / self.K_d

    def validate(self) -> None:
        problems = []
        for name in GAIN_FIELDS:
            values = getattr(self, name)
            if values.shape != (self.node_count,):
                problems.append(f"{name} has shape {values.shape}")
            elif np.any(~(values > 0)) or not np.all(np.isfinite(values)):
                problems.append(f"{name} must be finite and > 0, got {values.tolist()}")
        if problems:
            raise GainError("; ".join(problems))

    def with_values(self, **changes) -> "GainSet":
        data = {name: getattr(self, name) for name in GAIN_FIELDS}
        for name, value in changes.items():
            if name not in data:
                raise GainError(f"unknown gain {name!r}")
            data[name] = _vec(value, self.node_count, name)
        gains = GainSet(**data)
        gains.validate()
        return gains

    def to_dict(self) -> Dict[str, List[float]]:
        data = {name: getattr(self, name).tolist() for name in GAIN_FIELDS}
        data["z_tilde_m"] = self.z_tilde_m.tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], n: Optional[int] = None) -> "GainSet":
        missing = [name for name in GAIN_FIELDS if name not in data]
        if missing:
            raise GainError(f"gain set is missing {missing}")
        if n is None:
            n = len(np.atleast_1d(data["K"]))
        gains = cls(**{name: _vec(data[name], n, name) for name in GAIN_FIELDS})
        gains.validate()
        if "z_tilde_m" in data:
            stored = _vec(data["z_tilde_m"], n, "z_tilde_m")
            if not np.allclose(stored, gains.z_tilde_m, rtol=1e-12, atol=0.0):
                raise GainError("z_tilde_m does not equal M / K_d")
        return gains


@dataclass(frozen=True, eq=False)
class ReferenceSchedule:
    """Piecewise-constant shifted d-references; breakpoints (t, refs) with t[0] = 0"""

    times: Tuple[float, ...]
    values: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.times:
            raise GainError("reference schedule is empty")
        if self.times[0] != 0.0:
            raise GainError(f"first reference breakpoint must be at t=0, got {self.times[0]}")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise GainError(f"reference times must be strictly increasing: {list(self.times)}")
        shapes = {v.shape for v in self.values}
        if len(shapes) != 1 or len(self.values) != len(self.times):
            raise GainError("every reference breakpoint needs one value per node")

    @classmethod
    def from_breakpoints(cls, breakpoints: Sequence[Tuple[float, Sequence[float]]]) -> "ReferenceSchedule":
        times = tuple(float(t) for t, _ in breakpoints)
        values = tuple(np.asarray(v, dtype=float) for _, v in breakpoints)
        return cls(times, values)

    @classmethod
    def from_rms(cls, breakpoints, rated_voltage: np.ndarray) -> "ReferenceSchedule":
        """Convert unshifted (RMS) references to the shifted frame"""
        return cls.from_breakpoints([(t, np.asarray(v, dtype=float) - rated_voltage)
                                     for t, v in breakpoints])

    @classmethod
    def constant(cls, refs) -> "ReferenceSchedule":
        return cls.from_breakpoints([(0.0, refs)])

    @property
    def node_count(self) -> int:
        return self.values[0].shape[0]

    @property
    def event_times(self) -> Tuple[float, ...]:
        """Reference change instants after t=0"""
        return self.times[1:]

    def epoch_index(self, t: float) -> int:
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def at(self, t: float) -> np.ndarray:
        return self.values[max(self.epoch_index(t), 0)]

    def epoch(self, k: int) -> np.ndarray:
        return self.values[k]

    def to_dict(self, rated_voltage: Optional[np.ndarray] = None) -> List[Dict[str, Any]]:
        rows = []
        for t, v in zip(self.times, self.values):
            row = {"t": t, "shifted": v.tolist()}
            if rated_voltage is not None:
                row["rms"] = (v + rated_voltage).tolist()
            rows.append(row)
        return rows


def error_feedback(e: np.ndarray, i_inj_nominal: np.ndarray, K) -> np.ndarray:
    """Injected current -K e + nominal injection, K applied per node on both channels"""
    n = e.shape[0] // 2
    K2 = np.tile(np.broadcast_to(np.asarray(K, dtype=float), (n,)), 2)
    return -K2 * e + i_inj_nominal


def nominal_feedback(z_tilde_i, sigma_i, ref_i, gains: GainSet, model: NetworkModel, node: int) -> np.ndarray:
    """
    Nominal injection of one node.

    The q-channel cancels the frequency cross-coupling and the reactive CPL
    current so that C dz_q/dt = -(K_q + L) z_q + sigma_q. ref_i acts only
    through the integrators and is accepted for a uniform signature.
    """
    z_d = float(z_tilde_i[0]) + float(model.rated_voltage[node])
    z_q = float(z_tilde_i[1])
    _, g_q = cpl_currents(np.array([z_d]), np.array([z_q]),
                          model.P_bar[node], model.Q_bar[node])
    wC = model.grid_frequency * model.capacitance[node]
    i_d = -gains.K_d[node] * z_tilde_i[0] + gains.M[node] * sigma_i[0]
    i_q = -gains.K_q[node] * z_q + sigma_i[1] + wC * z_d + float(g_q[0])
    return np.array([i_d, i_q])


def nominal_injection(model: NetworkModel, gains: GainSet, z_tilde: np.ndarray,
                      sigma_d: np.ndarray, sigma_q: np.ndarray) -> np.ndarray:
    """nominal_feedback for every node at once (2n-vector)"""
    n = model.node_count
    z_d = z_tilde[:n] + model.rated_voltage
    z_q = z_tilde[n:]
    _, g_q = cpl_currents(z_d, z_q, model.P_bar, model.Q_bar)
    wC = model.grid_frequency * model.capacitance
    return np.concatenate([
        -gains.K_d * z_tilde[:n] + gains.M * sigma_d,
        -gains.K_q * z_q + sigma_q + wC * z_d + g_q,
    ])


def integrator_rhs(z_tilde_i, sigma_i, ref_i: float, gains: GainSet, node: int = 0) -> np.ndarray:
    s_d = float(sigma_i[0])
    sd_dot = gains.k_Id[node] * (1.0 - s_d * s_d) * (ref_i - z_tilde_i[0])
    sq_dot = -gains.k_Iq[node] * z_tilde_i[1]
    return np.array([sd_dot, sq_dot])


def integrator_rates(z_tilde: np.ndarray, sigma_d: np.ndarray, refs: np.ndarray,
                     gains: GainSet) -> Tuple[np.ndarray, np.ndarray]:
    n = sigma_d.shape[0]
    sd_dot = gains.k_Id * (1.0 - sigma_d * sigma_d) * (refs - z_tilde[:n])
    sq_dot = -gains.k_Iq * z_tilde[n:]
    return sd_dot, sq_dot


# --------------------------------------------------------------------------
# Gain bounds
# --------------------------------------------------------------------------

def safe_set_threshold(e_bar):
    """Smallest admissible nominal d-voltage: e_bar + sqrt(e_bar)"""
    e_bar = np.asarray(e_bar, dtype=float)
    return e_bar + np.sqrt(e_bar)


def error_gain_bound(e_bar, z_d, P_bar, Q_bar, dP_max, dQ_max):
    """Error gain lower bound at nominal d-voltage z_d (vectorized)"""
    e_bar = np.asarray(e_bar, dtype=float)
    z_d = np.asarray(z_d, dtype=float)
    numerator = (((1.0 + z_d) / z_d) * P_bar + 2.0 * Q_bar
                 + ((e_bar + z_d) / e_bar) * dP_max + (z_d / e_bar) * dQ_max)
    return numerator / (3.0 * beta_denominator(e_bar, z_d))


def beta_denominator(e_bar, z_d):
    """(e_bar - z_d)^2 - e_bar; positive exactly when z_d > e_bar + sqrt(e_bar) for z_d > e_bar"""
    e_bar = np.asarray(e_bar, dtype=float)
    return (e_bar - np.asarray(z_d, dtype=float)) ** 2 - e_bar


def linearization_gain_bound(P_bar, z_hat_d):
    """K_d lower bound for a Hurwitz linearization at unshifted voltage z_hat_d"""
    return (2.0 / 3.0) * np.asarray(P_bar, dtype=float) / np.asarray(z_hat_d, dtype=float) ** 2


def invariance_gain_bound(P_bar, z_o, z_tilde_m, delta):
    """K_d lower bound keeping the nominal interval invariant"""
    P_bar = np.asarray(P_bar, dtype=float)
    return (2.0 / 3.0) * P_bar / (delta * (z_o - z_tilde_m - delta))


def nominal_gain_bound(P_bar, z_o, z_tilde_m, delta):
    """Combined K_d bound: max of the squared-extent term and invariance_gain_bound"""
    extent_term = (2.0 / 3.0) * np.asarray(P_bar, dtype=float) / (z_tilde_m + delta) ** 2
    return np.maximum(extent_term, invariance_gain_bound(P_bar, z_o, z_tilde_m, delta))


def nominal_range(model: NetworkModel, z_tilde_m, delta) -> Tuple[np.ndarray, np.ndarray]:
    """Unshifted nominal d-interval [z_o - z_m - delta, z_o + z_m] per node"""
    z_o = model.rated_voltage
    return z_o - z_tilde_m - delta, z_o + z_tilde_m


def network_coupling_gain(model: NetworkModel, e_bar) -> np.ndarray:
    """Extra error gain at each node covering neighbours whose tubes are wider than its own"""
    e_bar = _vec(e_bar, model.node_count, "e_bar")
    weights = -model.laplacian.copy()
    np.fill_diagonal(weights, 0.0)
    root = np.sqrt(e_bar)
    return np.maximum(weights @ root / root - weights.sum(axis=1), 0.0)


def design_error_gain(model: NetworkModel, e_bar, z_range: Tuple[Any, Any],
                      samples: int = DEFAULT_BETA_SAMPLES, safety: float = DEFAULT_SAFETY,
                      floor: float = DEFAULT_GAIN_FLOOR) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Error gain K_i = safety * (max beta_i over a dense grid of z_range
    + network_coupling_gain_i).

    Raises DesignError when the beta denominator is not positive somewhere
    on the grid (nominal voltage too close to the safe-set threshold).
    """
    n = model.node_count
    e_bar = _vec(e_bar, n, "e_bar")
    lo = _vec(z_range[0], n, "z_range low")
    hi = _vec(z_range[1], n, "z_range high")
    grid = np.linspace(lo, hi, samples, axis=-1)           # (n, samples)
    den = beta_denominator(e_bar[:, None], grid)
    if np.any(~(den > 0)):
        bad = sorted(set(np.nonzero(~(den > 0))[0].tolist()))
        raise DesignError(
            f"error gain denominator not positive on the nominal range at node(s) {bad}; "
            f"need z_d > e_bar + sqrt(e_bar) = {safe_set_threshold(e_bar)[bad].tolist()}"
        )
    beta = error_gain_bound(e_bar[:, None], grid, model.P_bar[:, None], model.Q_bar[:, None],
                       model.dP_max[:, None], model.dQ_max[:, None])
    worst = np.argmax(beta, axis=1)
    beta_max = beta[np.arange(n), worst]
    coupling = network_coupling_gain(model, e_bar)
    K = np.maximum((beta_max + coupling) * safety, floor)

    fine = np.linspace(lo, hi, 10 * samples, axis=-1)
    beta_fine = error_gain_bound(e_bar[:, None], fine, model.P_bar[:, None], model.Q_bar[:, None],
                               model.dP_max[:, None], model.dQ_max[:, None])
    fine_margin = K - (beta_fine.max(axis=1) + coupling)

    report = {
        "beta_max": beta_max.tolist(),
        "coupling_gain": coupling.tolist(),
        "z_worst": grid[np.arange(n), worst].tolist(),
        "K": K.tolist(),
        "fine_grid_margin": fine_margin.tolist(),
        "safety": safety,
        "samples": samples,
    }
    logger.debug(f"error gain design: beta_max={beta_max.tolist()} K={K.tolist()}")
    return K, report


def design_nominal_gains(model: NetworkModel, z_tilde_m, delta, ref_hat=None,
                         safety: float = DEFAULT_SAFETY, K_d_floor: float = DEFAULT_GAIN_FLOOR,
                         K_q=None, k_Id=DEFAULT_INTEGRATOR_GAIN,
                         k_Iq=DEFAULT_INTEGRATOR_GAIN) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """K_d from the combined nominal bound, M = z_tilde_m K_d, fixed-positive K_q/k_Id/k_Iq"""
    n = model.node_count
    z_m = _vec(z_tilde_m, n, "z_tilde_m")
    delta = _vec(delta, n, "delta")
    z_o = model.rated_voltage
    if np.any(~(delta > 0)):
        raise DesignError(f"delta must be > 0, got {delta.tolist()}")
    if np.any(~(z_m > 0)):
        raise DesignError(f"z_tilde_m must be > 0, got {z_m.tolist()}")
    low = z_o - z_m - delta
    if np.any(~(low > 0)):
        raise DesignError(f"nominal interval reaches non-positive voltage: z_o - z_m - delta = {low.tolist()}")

    bound = nominal_gain_bound(model.P_bar, z_o, z_m, delta)
    K_d = np.maximum(bound * safety, K_d_floor)
    M = z_m * K_d

    # linearization check at the worst point of the interval, and at the references if given
    p2_worst = linearization_gain_bound(model.P_bar, low)
    report = {
        "bound": bound.tolist(),
        "invariance_bound": invariance_gain_bound(model.P_bar, z_o, z_m, delta).tolist(),
        "linearization_bound_worst": p2_worst.tolist(),
        "K_d": K_d.tolist(),
        "M": M.tolist(),
        "floor_active": (bound * safety < K_d_floor).tolist(),
    }
    if ref_hat is not None:
        report["linearization_bound_at_ref"] = linearization_gain_bound(model.P_bar, np.asarray(ref_hat) + z_o).tolist()

    gains = {
        "K_d": K_d,
        "M": M,
        "K_q": K_d.copy() if K_q is None else _vec(K_q, n, "K_q"),
        "k_Id": _vec(k_Id, n, "k_Id"),
        "k_Iq": _vec(k_Iq, n, "k_Iq"),
    }
    return gains, report


@dataclass
class DesignOptions:
    safety: float = DEFAULT_SAFETY
    samples: int = DEFAULT_BETA_SAMPLES
    K_floor: float = DEFAULT_GAIN_FLOOR
    K_d_floor: float = DEFAULT_GAIN_FLOOR
    K_q: Optional[float] = None
    k_Id: float = DEFAULT_INTEGRATOR_GAIN
    k_Iq: float = DEFAULT_INTEGRATOR_GAIN


@dataclass
class DesignResult:
    """Designed gains (None when any design certificate failed) plus evidence"""

    gains: Optional[GainSet]
    certificates: List[Any] = field(default_factory=list)
    report: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.gains is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "gains": self.gains.to_dict() if self.gains is not None else None,
            "certificates": [c.to_dict() for c in self.certificates],
            "report": self.report,
        }


def design_all(model: NetworkModel, e_bar, z_tilde_m, delta, refs=None,
               options: Optional[DesignOptions] = None) -> DesignResult:
    """
    Run the full design procedure and fail closed.

    Infeasible geometry or a failing threshold margin returns the failing
    certificates with gains=None instead of raising.
    """
    from grid import certify

    options = options or DesignOptions()
    n = model.node_count
    e_bar = _vec(e_bar, n, "e_bar")
    z_m = _vec(z_tilde_m, n, "z_tilde_m")
    delta = _vec(delta, n, "delta")
    logger.info(f"🔧 Designing gains for {n} node(s): e_bar={e_bar.tolist()}")

    z_lo, z_hi = nominal_range(model, z_m, delta)
    certificates = [
        certify.threshold_margin(e_bar, (z_lo, z_hi)),
        certify.inclusion_check_geometry(model, e_bar, z_m, delta),
    ]
    report: Dict[str, Any] = {"nominal_range": {"low": z_lo.tolist(), "high": z_hi.tolist()}}

    failed = [c for c in certificates if not c.passed]
    if failed:
        names = ", ".join(c.name for c in failed)
        logger.error(f"❌ Design infeasible: {names}")
        return DesignResult(gains=None, certificates=certificates, report=report)

    try:
        K, k_report = design_error_gain(model, e_bar, (z_lo, z_hi), options.samples,
                                        options.safety, options.K_floor)
        nominal, n_report = design_nominal_gains(
            model, z_m, delta, ref_hat=refs, safety=options.safety,
            K_d_floor=options.K_d_floor, K_q=options.K_q, k_Id=options.k_Id, k_Iq=options.k_Iq,
        )
    except DesignError as exc:
        logger.error(f"❌ Design infeasible: {exc}")
        report["error"] = str(exc)
        return DesignResult(gains=None, certificates=certificates, report=report)

    report["error_gain"] = k_report
    report["nominal_gain"] = n_report
    certificates.append(certify.Certificate(
        name="error_gain_fine_grid",
        passed=bool(np.min(k_report["fine_grid_margin"]) > 0),
        margin=float(np.min(k_report["fine_grid_margin"])),
        detail={"beta_max": k_report["beta_max"]},
    ))
    kd_margin = nominal["K_d"] - np.maximum(np.asarray(n_report["bound"]),
                                            np.asarray(n_report["linearization_bound_worst"]))
    certificates.append(certify.Certificate(
        name="nominal_gain_bounds",
        passed=bool(np.min(kd_margin) > 0),
        margin=float(np.min(kd_margin)),
        detail={"K_d": n_report["K_d"]},
    ))
    if not all(c.passed for c in certificates):
        return DesignResult(gains=None, certificates=certificates, report=report)

    gains = GainSet.build(n, K=K, K_d=nominal["K_d"], K_q=nominal["K_q"], k_Id=nominal["k_Id"],
                          k_Iq=nominal["k_Iq"], e_bar=e_bar, delta=delta, M=nominal["M"])
    logger.info(f"✅ Gains designed: K={np.round(gains.K, 4).tolist()} K_d={np.round(gains.K_d, 4).tolist()}")
    return DesignResult(gains=gains, certificates=certificates, report=report)
