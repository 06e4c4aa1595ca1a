# tubegrid/grid/dynamics.py
"""
Right-hand sides of the microgrid models.

Stacking convention: every 2n-vector is [d_1 .. d_n, q_1 .. q_n] and every
line vector is [d_1 .. d_m, q_1 .. q_m]. Time derivatives are in V/s and A/s.
The cascade state vector is [z_tilde (2n), e (2n), sigma_d (n), sigma_q (n)].
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from grid.control import GainSet, integrator_rates, nominal_injection
from grid.cpl import SINGULARITY_THRESHOLD, cpl_current, cpl_currents
from grid.errors import IntegratorStateError
from grid.netmodel import NetworkModel

logger = logging.getLogger(__name__)

__all__ = [
    "TrueState", "CascadeState", "LoadDisturbance", "CascadeInput",
    "cpl_current", "node_field", "full_rhs", "reduced_rhs", "shifted_nominal_rhs",
    "error_rhs", "printed_error_rhs", "error_rhs_mismatch", "cascade_rhs",
    "CascadeVectorField", "FullCascadeVectorField", "full_cascade_rhs",
    "reconstruct_true", "v_rms",
]

# |sigma_d| beyond 1 + this raises; smaller clamps are graded per run
SIGMA_TOLERANCE = 1e-6


def _split(x: np.ndarray, n: int):
    return x[:n], x[n:2 * n]


@dataclass
class TrueState:
    """Node voltages and line currents of the full model"""

    v: np.ndarray
    i_line: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([self.v, self.i_line])


@dataclass
class CascadeState:
    """Shifted nominal voltage, error, and both integrator banks"""

    z_tilde: np.ndarray
    e: np.ndarray
    sigma_d: np.ndarray
    sigma_q: np.ndarray

    @property
    def node_count(self) -> int:
        return self.sigma_d.shape[0]

    def pack(self) -> np.ndarray:
        return np.concatenate([self.z_tilde, self.e, self.sigma_d, self.sigma_q])

    @classmethod
    def unpack(cls, x: np.ndarray, n: int) -> "CascadeState":
        x = np.asarray(x, dtype=float)
        return cls(
            z_tilde=x[:2 * n].copy(),
            e=x[2 * n:4 * n].copy(),
            sigma_d=x[4 * n:5 * n].copy(),
            sigma_q=x[5 * n:6 * n].copy(),
        )

    @classmethod
    def zeros(cls, n: int) -> "CascadeState":
        return cls(np.zeros(2 * n), np.zeros(2 * n), np.zeros(n), np.zeros(n))


@dataclass
class LoadDisturbance:
    """Deviation of each load from its nominal (P_bar, Q_bar)"""

    dP: np.ndarray
    dQ: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "LoadDisturbance":
        return cls(np.zeros(n), np.zeros(n))

    def within(self, model: NetworkModel, atol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.dP) <= model.dP_max + atol)
                    and np.all(np.abs(self.dQ) <= model.dQ_max + atol))


class CascadeInput(NamedTuple):
    """Inputs held constant over one integration step"""

    refs: np.ndarray   # shifted d-references, one per node
    dP: np.ndarray
    dQ: np.ndarray


def node_field(model: NetworkModel, v: np.ndarray, i_inj: np.ndarray, P, Q,
               threshold: float = SINGULARITY_THRESHOLD) -> np.ndarray:
    """Decoupled per-node part of the voltage dynamics (no network coupling)"""
    n = model.node_count
    v_d, v_q = _split(v, n)
    i_d, i_q = _split(i_inj, n)
    g_d, g_q = cpl_currents(v_d, v_q, P, Q, threshold)
    C = model.capacitance
    w = model.grid_frequency
    return np.concatenate([
        (i_d + w * C * v_q - g_d) / C,
        (i_q - w * C * v_d - g_q) / C,
    ])


def reduced_rhs(model: NetworkModel, v: np.ndarray, i_inj: np.ndarray, P=None, Q=None) -> np.ndarray:
    """Voltage dynamics with line currents replaced by the Laplacian coupling"""
    n = model.node_count
    P = model.P_bar if P is None else P
    Q = model.Q_bar if Q is None else Q
    lap = model.laplacian
    v_d, v_q = _split(v, n)
    coupling = np.concatenate([lap @ v_d, lap @ v_q]) / np.tile(model.capacitance, 2)
    return node_field(model, v, i_inj, P, Q) - coupling


def full_rhs(model: NetworkModel, state: TrueState, i_inj: np.ndarray, P=None, Q=None) -> TrueState:
    """Voltage and line-current dynamics with lines as states"""
    n, m = model.node_count, model.edge_count
    P = model.P_bar if P is None else P
    Q = model.Q_bar if Q is None else Q
    B = model.incidence
    v_d, v_q = _split(state.v, n)
    I_d, I_q = state.i_line[:m], state.i_line[m:]
    C = np.tile(model.capacitance, 2)
    coupling = np.concatenate([B.T @ I_d, B.T @ I_q]) / C
    v_dot = node_field(model, state.v, i_inj, P, Q) - coupling

    r = model.line_resistance
    L = model.line_inductance
    w = model.grid_frequency
    I_d_dot = (-r * I_d + w * L * I_q + B @ v_d) / L
    I_q_dot = (-r * I_q - w * L * I_d + B @ v_q) / L
    return TrueState(v=v_dot, i_line=np.concatenate([I_d_dot, I_q_dot]))


def shifted_nominal_rhs(model: NetworkModel, z_tilde: np.ndarray, i_inj_tilde: np.ndarray) -> np.ndarray:
    """Nominal dynamics in coordinates shifted by the rated vector; loads at (P_bar, Q_bar)"""
    return reduced_rhs(model, z_tilde + model.z_o, i_inj_tilde, model.P_bar, model.Q_bar)


def error_rhs(model: NetworkModel, e: np.ndarray, z: np.ndarray,
              disturbance: LoadDisturbance, K) -> np.ndarray:
    """
    Error dynamics as the difference of the true and nominal vector fields.

    z is the unshifted nominal voltage. The nominal injection enters both
    fields identically and cancels, so only -K e remains as the input.
    """
    K2 = np.tile(np.broadcast_to(np.asarray(K, dtype=float), (model.node_count,)), 2)
    v_dot = reduced_rhs(model, e + z, -K2 * e,
                        model.P_bar + disturbance.dP, model.Q_bar + disturbance.dQ)
    z_dot = reduced_rhs(model, z, np.zeros_like(z), model.P_bar, model.Q_bar)
    return v_dot - z_dot


def printed_error_rhs(model: NetworkModel, e: np.ndarray, z_d: np.ndarray,
                      disturbance: LoadDisturbance, K) -> np.ndarray:
    """Closed-form rational error model for z_q = 0, kept as a cross-check"""
    n = model.node_count
    e_d, e_q = _split(e, n)
    K = np.broadcast_to(np.asarray(K, dtype=float), (n,))
    C = model.capacitance
    w = model.grid_frequency
    lap = model.laplacian
    P, Q = model.P_bar, model.Q_bar
    dP, dQ = disturbance.dP, disturbance.dQ

    vd = e_d + z_d
    mag = vd * vd + e_q * e_q
    d_load = (P * (e_d * vd + e_q ** 2) / (z_d * mag)
              + (dP * vd + dQ * e_q - Q * e_q) / mag)
    q_load = (-Q * (e_d * (e_d - z_d) - e_q ** 2) / (z_d * mag)
              + (-dQ * vd + dP * e_q + P * e_q) / mag)
    ed_dot = (-K * e_d + w * C * e_q - lap @ e_d - (2.0 / 3.0) * d_load) / C
    eq_dot = (-K * e_q - w * C * e_d - lap @ e_q - (2.0 / 3.0) * q_load) / C
    return np.concatenate([ed_dot, eq_dot])


def error_rhs_mismatch(model: NetworkModel, e: np.ndarray, z_d: np.ndarray,
                       disturbance: LoadDisturbance, K, rtol: float = 1e-9) -> dict:
    """Compare the difference form with the closed-form rational one"""
    z = np.concatenate([z_d, np.zeros(model.node_count)])
    exact = error_rhs(model, e, z, disturbance, K)
    printed = printed_error_rhs(model, e, z_d, disturbance, K)
    scale = np.maximum(np.maximum(np.abs(exact), np.abs(printed)), 1e-300)
    rel = np.abs(exact - printed) / scale
    return {
        "count": int(np.sum(rel > rtol)),
        "components": int(rel.size),
        "max_relative": float(np.max(rel)) if rel.size else 0.0,
    }


def _check_sigma(sigma_d: np.ndarray) -> None:
    over = np.abs(sigma_d) > 1.0 + SIGMA_TOLERANCE
    if np.any(over):
        nodes = np.nonzero(over)[0].tolist()
        raise IntegratorStateError(
            f"sigma_d left [-1, 1] at node(s) {nodes}: {sigma_d[over].tolist()}"
        )


def cascade_rhs(model: NetworkModel, state: CascadeState, gains: GainSet,
                refs: np.ndarray, disturbance: Optional[LoadDisturbance] = None) -> CascadeState:
    """Time derivative of the closed-loop nominal/error cascade"""
    n = model.node_count
    _check_sigma(state.sigma_d)
    if disturbance is None:
        disturbance = LoadDisturbance.zeros(n)
    i_tilde = nominal_injection(model, gains, state.z_tilde, state.sigma_d, state.sigma_q)
    z_tilde_dot = shifted_nominal_rhs(model, state.z_tilde, i_tilde)
    e_dot = error_rhs(model, state.e, state.z_tilde + model.z_o, disturbance, gains.K)
    sd_dot, sq_dot = integrator_rates(state.z_tilde, state.sigma_d, refs, gains)
    return CascadeState(z_tilde=z_tilde_dot, e=e_dot, sigma_d=sd_dot, sigma_q=sq_dot)


class CascadeVectorField:
    """
    Flat-vector closed loop for the integrator.

    Same equations as cascade_rhs, with model and gain constants gathered
    once so each RK4 stage is a handful of numpy operations.
    """

    def __init__(self, model: NetworkModel, gains: GainSet):
        self.model = model
        self.gains = gains
        self.n = model.node_count
        self.C = model.capacitance
        self.wC = model.grid_frequency * model.capacitance
        self.lap = model.laplacian
        self.P = model.P_bar
        self.Q = model.Q_bar
        self.z_o = model.rated_voltage
        self.K = gains.K
        self.K_d = gains.K_d
        self.K_q = gains.K_q
        self.M = gains.M
        self.k_Id = gains.k_Id
        self.k_Iq = gains.k_Iq

    @property
    def size(self) -> int:
        return 6 * self.n

    def _parts(self, x):
        n = self.n
        return (x[..., :n], x[..., n:2 * n], x[..., 2 * n:3 * n], x[..., 3 * n:4 * n],
                x[..., 4 * n:5 * n], x[..., 5 * n:6 * n])

    def nominal_input(self, x: np.ndarray) -> np.ndarray:
        """Nominal injection (2n) at state x; x may also be a (steps, 6n) array"""
        zt_d, zt_q, _, _, s_d, s_q = self._parts(x)
        z_d = zt_d + self.z_o
        _, gq = cpl_currents(z_d, zt_q, self.P, self.Q)
        return np.concatenate([
            -self.K_d * zt_d + self.M * s_d,
            -self.K_q * zt_q + s_q + self.wC * z_d + gq,
        ], axis=-1)

    def injection(self, x: np.ndarray) -> np.ndarray:
        """Total injected current -K e + nominal injection"""
        e = x[..., 2 * self.n:4 * self.n]
        return -np.tile(self.K, 2) * e + self.nominal_input(x)

    def __call__(self, t: float, x: np.ndarray, u: CascadeInput) -> np.ndarray:
        zt_d, zt_q, e_d, e_q, s_d, s_q = self._parts(x)
        C, wC, lap = self.C, self.wC, self.lap
        z_d = zt_d + self.z_o
        z_q = zt_q
        gd, gq = cpl_currents(z_d, z_q, self.P, self.Q)

        i_d = -self.K_d * zt_d + self.M * s_d
        i_q = -self.K_q * zt_q + s_q + wC * z_d + gq
        zd_dot = (i_d + wC * z_q - lap @ z_d - gd) / C
        zq_dot = (i_q - wC * z_d - lap @ z_q - gq) / C

        vd_true, vq_true = e_d + z_d, e_q + z_q
        Gd, Gq = cpl_currents(vd_true, vq_true, self.P + u.dP, self.Q + u.dQ)
        ed_dot = (-self.K * e_d + wC * e_q - lap @ e_d - (Gd - gd)) / C
        eq_dot = (-self.K * e_q - wC * e_d - lap @ e_q - (Gq - gq)) / C

        sd_dot = self.k_Id * (1.0 - s_d * s_d) * (u.refs - zt_d)
        sq_dot = -self.k_Iq * zt_q
        return np.concatenate([zd_dot, zq_dot, ed_dot, eq_dot, sd_dot, sq_dot])

    def project(self, x: np.ndarray) -> float:
        """Clamp sigma_d onto [-1, 1] in place; returns the largest correction"""
        n = self.n
        s_d = x[4 * n:5 * n]
        over = np.abs(s_d) - 1.0
        worst = float(np.max(over, initial=0.0))
        if worst > SIGMA_TOLERANCE:
            raise IntegratorStateError(f"sigma_d left [-1, 1] by {worst:.3e}")
        if worst > 0.0:
            np.clip(s_d, -1.0, 1.0, out=s_d)
        return max(worst, 0.0)


def full_cascade_rhs(model: NetworkModel, x: np.ndarray, gains: GainSet,
                     refs: np.ndarray, disturbance: Optional[LoadDisturbance] = None) -> np.ndarray:
    """
    Controller closed around the full model (lines as states).

    State layout: [v (2n), I_E (2m), z_tilde (2n), sigma_d (n), sigma_q (n)].
    """
    n, m = model.node_count, model.edge_count
    if disturbance is None:
        disturbance = LoadDisturbance.zeros(n)
    v = x[:2 * n]
    i_line = x[2 * n:2 * n + 2 * m]
    off = 2 * n + 2 * m
    z_tilde = x[off:off + 2 * n]
    sigma_d = x[off + 2 * n:off + 3 * n]
    sigma_q = x[off + 3 * n:off + 4 * n]
    _check_sigma(sigma_d)

    i_tilde = nominal_injection(model, gains, z_tilde, sigma_d, sigma_q)
    e = v - (z_tilde + model.z_o)
    i_inj = -np.tile(gains.K, 2) * e + i_tilde
    true_dot = full_rhs(model, TrueState(v, i_line), i_inj,
                        model.P_bar + disturbance.dP, model.Q_bar + disturbance.dQ)
    z_dot = shifted_nominal_rhs(model, z_tilde, i_tilde)
    sd_dot, sq_dot = integrator_rates(z_tilde, sigma_d, refs, gains)
    return np.concatenate([true_dot.v, true_dot.i_line, z_dot, sd_dot, sq_dot])


class FullCascadeVectorField:
    """Integrator-facing wrapper around full_cascade_rhs"""

    def __init__(self, model: NetworkModel, gains: GainSet):
        self.model = model
        self.gains = gains
        self.n = model.node_count
        self.m = model.edge_count

    @property
    def size(self) -> int:
        return 6 * self.n + 2 * self.m

    def sigma_slice(self) -> slice:
        off = 4 * self.n + 2 * self.m
        return slice(off, off + self.n)

    def __call__(self, t: float, x: np.ndarray, u: CascadeInput) -> np.ndarray:
        return full_cascade_rhs(self.model, x, self.gains, u.refs, LoadDisturbance(u.dP, u.dQ))

    def project(self, x: np.ndarray) -> float:
        s_d = x[self.sigma_slice()]
        worst = float(np.max(np.abs(s_d) - 1.0, initial=0.0))
        if worst > SIGMA_TOLERANCE:
            raise IntegratorStateError(f"sigma_d left [-1, 1] by {worst:.3e}")
        if worst > 0.0:
            np.clip(s_d, -1.0, 1.0, out=s_d)
        return max(worst, 0.0)


def reconstruct_true(state: CascadeState, z_o: np.ndarray) -> np.ndarray:
    return state.e + state.z_tilde + z_o


def v_rms(v: np.ndarray) -> np.ndarray:
    """Per-node d-q magnitude; equals |v_d| when v_q = 0"""
    n = v.shape[-1] // 2
    return np.hypot(v[..., :n], v[..., n:])
