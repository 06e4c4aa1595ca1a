# tubegrid/grid/certify.py
"""
Numerical certificates for a designed controller.

Each check returns a Certificate instead of raising: passed is True exactly
when margin > 0, and a failing certificate always names a witness. Bundles
collect the verdict-bearing checks plus informative ones that are reported
but never enter the overall verdict.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from grid.control import (GainSet, ReferenceSchedule, integrator_rates, safe_set_threshold,
                          nominal_injection, nominal_range, linearization_gain_bound)
from grid.cpl import cpl_currents
from grid.dynamics import (CascadeState, LoadDisturbance, cascade_rhs, error_rhs,
                           error_rhs_mismatch, shifted_nominal_rhs)
from grid.errors import CPLSingularityError, EquilibriumError
from grid.netmodel import NetworkModel, NodeSets, node_sets, node_sets_from

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULT_BOUNDARY_ANGLES = 720
DEFAULT_RANDOM_DISTURBANCES = 32
DEFAULT_Z_SAMPLES = 11
EQUILIBRIUM_TOLERANCE = 1e-8
MAX_NEWTON_ITERATIONS = 400
NEWTON_DAMPING = 0.5


def _jsonable(value):
    """Plain JSON types; non-finite floats become null"""
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class Certificate:
    """Verdict, signed margin and worst-case witness of one condition"""

    name: str
    passed: bool
    margin: float
    witness: Optional[Dict[str, Any]] = None
    detail: Dict[str, Any] = field(default_factory=dict)
    informative: bool = False
    sub_certificates: List["Certificate"] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "name": self.name,
            "pass": bool(self.passed),
            "margin": _jsonable(float(self.margin)),
            "witness": _jsonable(self.witness),
            "informative": self.informative,
        }
        if data["margin"] is None:
            reason = (self.witness or {}).get("reason") or (self.witness or {}).get("error")
            data["margin_reason"] = reason or "unbounded"
        if self.detail:
            data["detail"] = _jsonable(self.detail)
        if self.sub_certificates:
            data["sub_certificates"] = [c.to_dict() for c in self.sub_certificates]
        return data


def _verdict(name: str, margin: float, witness=None, detail=None, informative=False) -> Certificate:
    margin = float(margin)
    passed = bool(np.isfinite(margin) and margin > 0)
    if not passed and witness is None:
        witness = {"margin": margin}
    return Certificate(name=name, passed=passed, margin=margin, witness=witness,
                       detail=detail or {}, informative=informative)


@dataclass
class CertificateBundle:
    certificates: List[Certificate] = field(default_factory=list)
    equilibria: List["EquilibriumPoint"] = field(default_factory=list)
    region_of_attraction: Optional[Dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        binding = [c for c in self.certificates if not c.informative]
        return bool(binding) and all(c.passed for c in binding)

    def failing(self) -> List[Certificate]:
        return [c for c in self.certificates if not c.informative and not c.passed]

    def get(self, name: str) -> Optional[Certificate]:
        for cert in self.certificates:
            if cert.name == name:
                return cert
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "pass": self.passed,
            "certificates": [c.to_dict() for c in self.certificates],
            "equilibria": [eq.to_dict() for eq in self.equilibria],
            "region_of_attraction": self.region_of_attraction,
        }

    def summary_table(self) -> str:
        lines = [
            "=" * 72,
            "CERTIFICATE SUMMARY",
            "=" * 72,
            f"{'condition':<32} {'verdict':<8} {'margin':>14}  note",
            "-" * 72,
        ]
        for cert in self.certificates:
            verdict = "PASS" if cert.passed else "FAIL"
            note = "informative" if cert.informative else ""
            lines.append(f"{cert.name:<32} {verdict:<8} {cert.margin:>14.6g}  {note}")
            for sub in cert.sub_certificates:
                sub_verdict = "pass" if sub.passed else "fail"
                lines.append(f"  - {sub.name:<28} {sub_verdict:<8} {sub.margin:>14.6g}  informative")
        lines.append("-" * 72)
        lines.append(f"OVERALL: {'PASS' if self.passed else 'FAIL'}")
        if self.region_of_attraction:
            lines.append(f"Region of attraction estimate: interior of V "
                         f"(centre {self.region_of_attraction['center']}, "
                         f"radius {self.region_of_attraction['radius']})")
        lines.append("=" * 72)
        return "\n".join(lines)


# --------------------------------------------------------------------------
# Safe set
# --------------------------------------------------------------------------

def threshold_margin(e_bar, z_range: Tuple[Any, Any], grid_points: int = 41) -> Certificate:
    """
    Margin of the nominal d-voltage above e_bar + sqrt(e_bar).

    Also checks that the rational denominator z((e_d + z)^2 + e_d) stays
    positive over the safe disk times the nominal range.
    """
    e_bar = np.atleast_1d(np.asarray(e_bar, dtype=float))
    lo = np.atleast_1d(np.asarray(z_range[0], dtype=float))
    hi = np.atleast_1d(np.asarray(z_range[1], dtype=float))
    e_bar, lo, hi = np.broadcast_arrays(e_bar, lo, hi)
    threshold = safe_set_threshold(e_bar)
    slack = lo - threshold
    node = int(np.argmin(slack))

    den_min = np.inf
    for i in range(e_bar.shape[0]):
        z = np.linspace(lo[i], hi[i], grid_points)[:, None, None]
        radius = np.sqrt(e_bar[i]) * np.linspace(0.0, 1.0, 9)[None, :, None]
        angle = np.linspace(0.0, 2 * np.pi, 73)[None, None, :]
        e_d = radius * np.cos(angle)
        den = z * ((e_d + z) ** 2 + e_d)
        den_min = min(den_min, float(den.min()))

    witness = None
    if not slack[node] > 0:
        witness = {"node": node, "z_d": float(lo[node]), "threshold": float(threshold[node])}
    return _verdict("nominal_threshold", slack[node], witness, {
        "threshold": threshold.tolist(),
        "alpha_den_min": den_min,
        "alpha_den_positive": bool(den_min > 0),
    })


def alpha_eval(e_i, z_i, disturbance, K: float, loads) -> Tuple[float, float]:
    """Rational boundary surrogate (alpha_nom, alpha_den) as a polynomial in (e_d, e_q)"""
    e_d, e_q = float(e_i[0]), float(e_i[1])
    z = float(np.atleast_1d(z_i)[0])
    dP, dQ = disturbance
    P, Q = loads
    a_nom = (e_d ** 4 * (-3 * K * z)
             + e_d ** 3 * (-6 * K * z ** 2 + 2 * P)
             + e_d ** 2 * e_q ** 2 * (-3 * K * z)
             + e_d ** 2 * e_q * (-3 * K * z + 2 * Q)
             + e_d ** 2 * (-3 * K * z ** 3 + 2 * P * z - 2 * dP * z)
             + e_d * e_q ** 2 * (-6 * K * z ** 2 + 2 * P)
             + e_d * e_q * (-4 * Q * z)
             + e_q ** 2 * (-3 * K * z ** 3 - 2 * P * z - 2 * dP * z)
             + e_q ** 3 * (-3 * K * z - 2 * Q)
             + e_d * (-2 * dP * z ** 2)
             + e_q * (2 * dQ * z ** 2))
    a_den = z * ((e_d + z) ** 2 + e_d)
    return a_nom, a_den


def _disturbance_set(model: NetworkModel, node: int, n_random: int, seed: int) -> np.ndarray:
    """Box vertices of the disturbance bounds plus seeded interior draws, shape (k, 2)"""
    bounds = model.disturbance_bounds[node]
    corners = np.array([[sp, sq] for sp in (1.0, -1.0) for sq in (1.0, -1.0)]) * bounds
    rng = np.random.default_rng([seed, node])
    interior = rng.uniform(-1.0, 1.0, size=(n_random, 2)) * bounds
    return np.vstack([corners, interior])


def _default_z_samples(model: NetworkModel, gains: GainSet, count: int) -> np.ndarray:
    lo, hi = nominal_range(model, gains.z_tilde_m, gains.delta)
    return np.linspace(lo, hi, count, axis=-1)


def coupling_bound(model: NetworkModel, e_bar) -> np.ndarray:
    """Largest value of -2 e_i^T (L e)_i / C_i with |e_i|^2 = e_bar_i and |e_j|^2 <= e_bar_j"""
    e_bar = np.broadcast_to(np.asarray(e_bar, dtype=float), (model.node_count,))
    root = np.sqrt(e_bar)
    weights = -model.laplacian.copy()
    np.fill_diagonal(weights, 0.0)
    return 2.0 * (weights @ root * root - weights.sum(axis=1) * e_bar) / model.capacitance


def worst_neighbour_errors(model: NetworkModel, e_bar, node: int, e_node) -> np.ndarray:
    """Stacked error with e_node at node and every other error on its rim, aligned with e_node"""
    n = model.node_count
    e_bar = np.broadcast_to(np.asarray(e_bar, dtype=float), (n,))
    e_node = np.asarray(e_node, dtype=float)
    direction = e_node / np.linalg.norm(e_node)
    e = np.zeros(2 * n)
    e[:n] = np.sqrt(e_bar) * direction[0]
    e[n:] = np.sqrt(e_bar) * direction[1]
    e[node], e[n + node] = e_node
    return e


def _witness_inner_product(model: NetworkModel, gains: GainSet, witness: Dict[str, Any]) -> float:
    n = model.node_count
    i = witness["node"]
    e = worst_neighbour_errors(model, gains.e_bar, i, witness["e"])
    z = np.concatenate([np.full(n, witness["z_d"]), np.zeros(n)])
    dP, dQ = np.zeros(n), np.zeros(n)
    dP[i], dQ[i] = witness["dP"], witness["dQ"]
    e_dot = error_rhs(model, e, z, LoadDisturbance(dP, dQ), gains.K)
    return float(2.0 * (e[i] * e_dot[i] + e[n + i] * e_dot[n + i]))


def boundary_invariance_check(model: NetworkModel, gains: GainSet, z_samples=None,
                              n_boundary: int = DEFAULT_BOUNDARY_ANGLES,
                              n_disturbance: int = DEFAULT_RANDOM_DISTURBANCES,
                              seed: int = 0) -> Certificate:
    """
    Worst-case 2 e^T de/dt over the boundary of each safe disk.

    The coupling -(L e)_i is bounded with every neighbour error on the rim
    of its own disk and aligned with e_i, which adds
    2 sum_j w_ij (sqrt(e_bar_i e_bar_j) - e_bar_i) / C_i to node i; the
    term vanishes when all e_bar are equal. The worst sample is re-evaluated
    through error_rhs with that neighbour placement.
    z_samples are unshifted nominal d-voltages; a 1-D array is used for
    every node, a 2-D array gives one row per node.
    """
    n = model.node_count
    if z_samples is None:
        z_samples = _default_z_samples(model, gains, DEFAULT_Z_SAMPLES)
    z_samples = np.asarray(z_samples, dtype=float)
    if z_samples.ndim <= 1:
        z_samples = np.broadcast_to(np.atleast_1d(z_samples), (n, np.atleast_1d(z_samples).size))

    angles = np.linspace(0.0, 2 * np.pi, n_boundary, endpoint=False)
    coupling = coupling_bound(model, gains.e_bar)
    worst_value = -np.inf
    witness: Dict[str, Any] = {}
    per_node = []
    for i in range(n):
        radius = np.sqrt(gains.e_bar[i])
        C = model.capacitance[i]
        wC = model.grid_frequency * C
        P, Q = model.P_bar[i], model.Q_bar[i]
        dist = _disturbance_set(model, i, n_disturbance, seed)

        z = z_samples[i][:, None, None]                      # (nz, 1, 1)
        e_d = (radius * np.cos(angles))[None, :, None]       # (1, na, 1)
        e_q = (radius * np.sin(angles))[None, :, None]
        dP = dist[:, 0][None, None, :]                       # (1, 1, nd)
        dQ = dist[:, 1][None, None, :]
        try:
            g_d, g_q = cpl_currents(z, np.zeros_like(z), P, Q)
            G_d, G_q = cpl_currents(e_d + z, e_q + np.zeros_like(z), P + dP, Q + dQ)
        except CPLSingularityError as exc:
            return _verdict("boundary_invariance", -np.inf,
                            {"node": i, "reason": "cpl_singularity", "error": str(exc)})

        ed_dot = (-gains.K[i] * e_d + wC * e_q - (G_d - g_d)) / C
        eq_dot = (-gains.K[i] * e_q - wC * e_d - (G_q - g_q)) / C
        inner = 2.0 * (e_d * ed_dot + e_q * eq_dot) + coupling[i]   # (nz, na, nd)

        k = np.unravel_index(int(np.argmax(inner)), inner.shape)
        node_worst = float(inner[k])
        per_node.append(-node_worst)
        if node_worst > worst_value:
            worst_value = node_worst
            iz, ia, idist = k
            witness = {
                "node": i,
                "z_d": float(z_samples[i][iz]),
                "angle": float(angles[ia]),
                "e": [float(radius * np.cos(angles[ia])), float(radius * np.sin(angles[ia]))],
                "dP": float(dist[idist, 0]),
                "dQ": float(dist[idist, 1]),
                "inner_product": node_worst,
                "coupling_bound": float(coupling[i]),
            }

    if witness:
        witness["error_rhs_inner_product"] = _witness_inner_product(model, gains, witness)
    margin = -worst_value
    cert = _verdict("boundary_invariance", margin, witness, {
        "per_node_margin": per_node,
        "coupling_bound": coupling.tolist(),
        "samples_per_node": int(z_samples.shape[1] * n_boundary * (4 + n_disturbance)),
    })
    # the worst sample is reported either way
    cert.witness = witness
    log = logger.info if cert.passed else logger.warning
    log(f"boundary invariance: margin {margin:.6g} ({'pass' if cert.passed else 'fail'})")
    return cert


def alpha_surrogate_check(model: NetworkModel, gains: GainSet, z_samples=None,
                          n_boundary: int = 72) -> Certificate:
    """Informative: minimum of -alpha_nom/alpha_den over boundary samples and box vertices"""
    n = model.node_count
    if z_samples is None:
        z_samples = _default_z_samples(model, gains, 5)
    z_samples = np.asarray(z_samples, dtype=float)
    if z_samples.ndim <= 1:
        z_samples = np.broadcast_to(np.atleast_1d(z_samples), (n, np.atleast_1d(z_samples).size))
    angles = np.linspace(0.0, 2 * np.pi, n_boundary, endpoint=False)
    best = np.inf
    witness = None
    for i in range(n):
        r = np.sqrt(gains.e_bar[i])
        corners = _disturbance_set(model, i, 0, 0)
        for z in z_samples[i]:
            for a in angles:
                e = (r * np.cos(a), r * np.sin(a))
                for dP, dQ in corners:
                    num, den = alpha_eval(e, z, (dP, dQ), gains.K[i],
                                          (model.P_bar[i], model.Q_bar[i]))
                    value = -num / den
                    if value < best:
                        best = value
                        witness = {"node": i, "z_d": float(z), "e": list(e),
                                   "dP": float(dP), "dQ": float(dQ)}
    return _verdict("alpha_surrogate", best, witness, informative=True)


def inclusion_check(sets: Sequence[NodeSets]) -> Certificate:
    """Strict containment of the safe disk swept along the nominal interval inside V"""
    slacks = []
    worst = None
    for s in sets:
        upper = (s.v_center + s.v_radius) - (s.z_o + s.z_upper + s.safe_radius)
        lower = (s.z_o + s.z_lower - s.safe_radius) - (s.v_center - s.v_radius)
        slacks.append({"node": s.node, "upper": upper, "lower": lower})
        for side, value in (("upper", upper), ("lower", lower)):
            if worst is None or value < worst[0]:
                worst = (value, s.node, side)
    margin, node, side = worst
    witness = None if margin > 0 else {"node": node, "side": side, "slack": margin}
    return _verdict("set_inclusion", margin, witness, {"slack": slacks})


def inclusion_check_geometry(model: NetworkModel, e_bar, z_tilde_m, delta) -> Certificate:
    return inclusion_check(node_sets_from(model, e_bar, z_tilde_m, delta))


def error_model_check(model: NetworkModel, gains: GainSet, samples: int = 200, seed: int = 0,
                      rtol: float = 1e-9) -> Certificate:
    """
    Informative: error_rhs against the closed-form rational error model.

    States are drawn inside the safe disks over the nominal range, with
    load deviations inside their bounds. Mismatches are reported, never raised.
    """
    n = model.node_count
    rng = np.random.default_rng(seed)
    lo, hi = nominal_range(model, gains.z_tilde_m, gains.delta)
    radius = np.sqrt(gains.e_bar)
    count = components = 0
    worst = 0.0
    witness = None
    for _ in range(samples):
        z_d = rng.uniform(lo, hi)
        r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
        angle = rng.uniform(0.0, 2 * np.pi, n)
        e = np.concatenate([r * np.cos(angle), r * np.sin(angle)])
        bounds = model.disturbance_bounds
        dist = LoadDisturbance(rng.uniform(-1.0, 1.0, n) * bounds[:, 0],
                               rng.uniform(-1.0, 1.0, n) * bounds[:, 1])
        report = error_rhs_mismatch(model, e, z_d, dist, gains.K, rtol)
        count += report["count"]
        components += report["components"]
        if report["max_relative"] > worst:
            worst = report["max_relative"]
            witness = {"z_d": z_d.tolist(), "e": e.tolist(), "max_relative": worst}
    logger.info(f"error model cross-check: {count} of {components} components differ by > {rtol:g}")
    return _verdict("error_model_agreement", rtol - worst, witness, {
        "count": count,
        "components": components,
        "max_relative": worst,
        "samples": samples,
    }, informative=True)


def lipschitz_margin(model: NetworkModel, gains: GainSet) -> Certificate:
    """Informative: distance of the tube around the nominal range from the CPL singularity"""
    lo, _ = nominal_range(model, gains.z_tilde_m, gains.delta)
    distance = lo - np.sqrt(gains.e_bar)
    node = int(np.argmin(distance))
    return _verdict("lipschitz_margin", distance[node], {"node": node},
                    {"per_node": distance.tolist()}, informative=True)


# --------------------------------------------------------------------------
# Equilibrium and linearization
# --------------------------------------------------------------------------

@dataclass
class EquilibriumPoint:
    z_hat_d: np.ndarray          # shifted
    sigma_hat_d: np.ndarray
    residual: float
    refs: np.ndarray
    saturated: np.ndarray        # per node: 0 interior, +1 / -1 saturated side
    iterations: int = 0

    @property
    def interior(self) -> bool:
        return not bool(np.any(self.saturated))

    def unshifted(self, model: NetworkModel) -> np.ndarray:
        return self.z_hat_d + model.rated_voltage

    def state(self) -> CascadeState:
        n = self.z_hat_d.shape[0]
        return CascadeState(
            z_tilde=np.concatenate([self.z_hat_d, np.zeros(n)]),
            e=np.zeros(2 * n),
            sigma_d=self.sigma_hat_d.copy(),
            sigma_q=np.zeros(n),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "z_hat_d": self.z_hat_d.tolist(),
            "sigma_hat_d": self.sigma_hat_d.tolist(),
            "residual": self.residual,
            "refs": self.refs.tolist(),
            "saturated": self.saturated.astype(int).tolist(),
            "iterations": self.iterations,
        }


def _d_balance(model: NetworkModel, gains: GainSet, z_tilde_d, sigma_d) -> np.ndarray:
    """C dz_d/dt on the q = 0 subspace with zero error"""
    z_d = z_tilde_d + model.rated_voltage
    g_d, _ = cpl_currents(z_d, np.zeros_like(z_d), model.P_bar, model.Q_bar)
    return -gains.K_d * z_tilde_d + gains.M * sigma_d - model.laplacian @ z_d - g_d


def solve_equilibrium(model: NetworkModel, gains: GainSet, refs,
                      tol: float = EQUILIBRIUM_TOLERANCE,
                      max_iter: int = MAX_NEWTON_ITERATIONS) -> EquilibriumPoint:
    """
    Newton on the nominal d-balance, damped by NEWTON_DAMPING and halved
    again while the residual grows, with an active set for sigma_d.

    Interior nodes sit at their reference with sigma_d solved; nodes whose
    sigma_d would leave (-1, 1) are pinned at +/-1 with z_tilde_d solved.
    A pinned node is released when its integrator would drive it inward.
    """
    n = model.node_count
    refs = np.asarray(refs, dtype=float)
    lap = model.laplacian
    C = model.capacitance
    saturated = np.zeros(n)
    z = refs.copy()
    sigma = np.zeros(n)
    iterations = 0
    seen = set()

    while True:
        # Newton on the current active set
        f = _d_balance(model, gains, z, sigma)
        while np.max(np.abs(f / C)) > 1e-3 * tol:
            if iterations >= max_iter:
                raise EquilibriumError(
                    f"equilibrium did not converge in {max_iter} iterations "
                    f"(residual {np.max(np.abs(f / C)):.3e})"
                )
            iterations += 1
            z_d = z + model.rated_voltage
            dg = -(2.0 / 3.0) * model.P_bar / z_d ** 2          # d g_d / d z_d on q = 0
            jac = np.zeros((n, n))
            for i in range(n):
                if saturated[i]:
                    jac[:, i] = -lap[:, i]
                    jac[i, i] += -gains.K_d[i] - dg[i]
                else:
                    jac[i, i] = gains.M[i]
            step = np.linalg.solve(jac, -f)
            lam = NEWTON_DAMPING
            base = np.max(np.abs(f))
            while True:
                z_new, s_new = z.copy(), sigma.copy()
                z_new[saturated != 0] += lam * step[saturated != 0]
                s_new[saturated == 0] += lam * step[saturated == 0]
                f_new = _d_balance(model, gains, z_new, s_new)
                if np.max(np.abs(f_new)) < base or lam < 1e-6:
                    break
                lam *= 0.5
            if np.max(np.abs(f_new)) >= base:
                break       # roundoff floor reached
            tiny = np.max(np.abs(step)) <= 1e-14 * (1.0 + np.max(np.abs(z)))
            z, sigma, f = z_new, s_new, f_new
            if tiny:
                break

        # active-set update
        changed = False
        for i in range(n):
            if not saturated[i] and abs(sigma[i]) >= 1.0:
                saturated[i] = np.sign(sigma[i])
                sigma[i] = saturated[i]
                changed = True
            elif saturated[i] and saturated[i] * (refs[i] - z[i]) < 0:
                saturated[i] = 0
                z[i] = refs[i]
                changed = True
        key = tuple(saturated.tolist())
        if not changed:
            break
        if key in seen:
            raise EquilibriumError(f"active set cycles between {sorted(seen)}")
        seen.add(key)

    state = CascadeState(
        z_tilde=np.concatenate([z, np.zeros(n)]), e=np.zeros(2 * n),
        sigma_d=sigma.copy(), sigma_q=np.zeros(n),
    )
    rhs = cascade_rhs(model, state, gains, refs).pack()
    residual = float(np.max(np.abs(rhs)))
    if not residual < tol:
        raise EquilibriumError(f"equilibrium residual {residual:.3e} >= {tol:.1e}")
    if np.any(saturated):
        logger.info(f"equilibrium saturated at node(s) {np.nonzero(saturated)[0].tolist()}")
    return EquilibriumPoint(z_hat_d=z, sigma_hat_d=sigma, residual=residual, refs=refs,
                            saturated=saturated, iterations=iterations)


def build_jacobian(model: NetworkModel, gains: GainSet, equilibrium: EquilibriumPoint) -> np.ndarray:
    """
    Linearization of the nominal closed loop, state order (z_d, sigma_d, z_q, sigma_q).

    Every voltage row is divided by C; the d/q coupling is omega_g - (2/3)Q/(C z^2)
    at the unshifted equilibrium voltage.
    """
    if np.any(np.abs(equilibrium.sigma_hat_d) >= 1.0):
        raise EquilibriumError("sigma_d at the boundary of [-1, 1]: linearization is degenerate")
    n = model.node_count
    C = model.capacitance
    lap = model.laplacian
    z_hat = equilibrium.unshifted(model)
    s_hat = equilibrium.sigma_hat_d
    I = np.eye(n)

    J = np.zeros((4 * n, 4 * n))
    d, sd, q, sq = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n), slice(3 * n, 4 * n)
    J[d, d] = (-np.diag(gains.K_d) - lap + np.diag(2.0 * model.P_bar / (3.0 * z_hat ** 2))) / C[:, None]
    J[d, sd] = np.diag(gains.M / C)
    J[d, q] = np.diag(model.grid_frequency - 2.0 * model.Q_bar / (3.0 * C * z_hat ** 2))
    J[sd, d] = -np.diag(gains.k_Id * (1.0 - s_hat ** 2))
    J[sd, sd] = -np.diag(2.0 * gains.k_Id * s_hat * (equilibrium.refs - equilibrium.z_hat_d))
    J[q, q] = (-np.diag(gains.K_q) - lap) / C[:, None]
    J[q, sq] = I / C[:, None]
    J[sq, q] = -np.diag(gains.k_Iq)
    return J


def nominal_closed_loop(model: NetworkModel, gains: GainSet, x: np.ndarray, refs) -> np.ndarray:
    """Nominal cascade on (z_d, sigma_d, z_q, sigma_q) with zero error"""
    n = model.node_count
    z_tilde = np.concatenate([x[:n], x[2 * n:3 * n]])
    sigma_d, sigma_q = x[n:2 * n], x[3 * n:]
    i_tilde = nominal_injection(model, gains, z_tilde, sigma_d, sigma_q)
    z_dot = shifted_nominal_rhs(model, z_tilde, i_tilde)
    sd_dot, sq_dot = integrator_rates(z_tilde, sigma_d, np.asarray(refs, dtype=float), gains)
    return np.concatenate([z_dot[:n], sd_dot, z_dot[n:], sq_dot])


def fd_jacobian(model: NetworkModel, gains: GainSet, equilibrium: EquilibriumPoint,
                step: float = 1e-5) -> np.ndarray:
    """Central differences of nominal_closed_loop, step scaled by max(1, |x_j|)"""
    n = model.node_count
    x0 = np.concatenate([equilibrium.z_hat_d, equilibrium.sigma_hat_d, np.zeros(n), np.zeros(n)])
    J = np.zeros((4 * n, 4 * n))
    for j in range(4 * n):
        h = step * max(1.0, abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (nominal_closed_loop(model, gains, xp, equilibrium.refs)
                   - nominal_closed_loop(model, gains, xm, equilibrium.refs)) / (2 * h)
    return J


def jacobian_agreement(J: np.ndarray, J_fd: np.ndarray, rtol: float = 1e-4) -> Certificate:
    """Informative: analytic vs finite-difference Jacobian"""
    scale = float(np.max(np.abs(J))) or 1.0
    err = np.abs(J - J_fd) - (rtol * np.abs(J) + 1e-6 * scale)
    k = np.unravel_index(int(np.argmax(err)), err.shape)
    rel = float(np.max(np.abs(J - J_fd)) / scale)
    return _verdict("jacobian_fd_agreement", -float(err[k]),
                    {"entry": [int(k[0]), int(k[1])], "analytic": float(J[k]), "fd": float(J_fd[k])},
                    {"max_scaled_error": rel}, informative=True)


def closed_form_gain_check(model: NetworkModel, gains: GainSet, equilibrium: EquilibriumPoint) -> Certificate:
    bound = linearization_gain_bound(model.P_bar, equilibrium.unshifted(model))
    slack = gains.K_d - bound
    node = int(np.argmin(slack))
    return _verdict("nominal_gain_closed_form", slack[node], {"node": node},
                    {"bound": bound.tolist()}, informative=True)


def qep_check(model: NetworkModel, gains: GainSet, equilibrium: EquilibriumPoint) -> Certificate:
    """Informative: positive definiteness of both QEP coefficients"""
    z_hat = equilibrium.unshifted(model)
    A = np.diag(gains.K_d) + model.laplacian - np.diag(2.0 * model.P_bar / (3.0 * z_hat ** 2))
    B = gains.M * gains.k_Id * (1.0 - equilibrium.sigma_hat_d ** 2)
    a_min = float(np.min(np.linalg.eigvalsh(0.5 * (A + A.T))))
    b_min = float(np.min(B))
    return _verdict("qep_definiteness", min(a_min, b_min), None,
                    {"A_min_eig": a_min, "B_min": b_min}, informative=True)


def hurwitz_check(J: np.ndarray, name: str = "hurwitz") -> Certificate:
    """Margin is minus the largest real part of the spectrum"""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"hurwitz_check needs a square matrix, got shape {J.shape}")
    try:
        eigenvalues = np.linalg.eigvals(J)
    except np.linalg.LinAlgError as exc:
        return _verdict(name, -np.inf, {"reason": "eigensolver", "error": str(exc)})
    k = int(np.argmax(eigenvalues.real))
    margin = -float(eigenvalues.real[k])
    return _verdict(name, margin,
                    {"eigenvalue": [float(eigenvalues[k].real), float(eigenvalues[k].imag)]},
                    {"spectral_abscissa": -margin, "size": J.shape[0]})


def equilibrium_closed_form_check(model: NetworkModel, gains: GainSet,
                                  equilibrium: EquilibriumPoint) -> Certificate:
    """
    Informative: sigma_d from the rearranged balance vs the numeric root.

    The compact closed form with the inverse of (K_d + L) applied to the
    reference is only comparable without lines and loads; its deviation in
    that limit is reported alongside.
    """
    interior = equilibrium.saturated == 0
    z_hat = equilibrium.z_hat_d
    z_d = equilibrium.unshifted(model)
    g_d, _ = cpl_currents(z_d, np.zeros_like(z_d), model.P_bar, model.Q_bar)
    rearranged = (gains.K_d * z_hat + model.laplacian @ z_d + g_d) / gains.M
    err = float(np.max(np.abs(rearranged - equilibrium.sigma_hat_d)[interior], initial=0.0))

    compact = np.linalg.solve(np.diag(gains.K_d), z_hat) / gains.M
    limit_root = gains.K_d * z_hat / gains.M
    compact_dev = float(np.max(np.abs(compact - limit_root), initial=0.0))
    return _verdict("equilibrium_closed_form", 1e-6 - err, None, {
        "rearranged_max_error": err,
        "compact_form_deviation_no_lines_no_loads": compact_dev,
    }, informative=True)


# --------------------------------------------------------------------------
# Everything together
# --------------------------------------------------------------------------

@dataclass
class CertifyOptions:
    n_boundary: int = DEFAULT_BOUNDARY_ANGLES
    n_disturbance: int = DEFAULT_RANDOM_DISTURBANCES
    z_samples: int = DEFAULT_Z_SAMPLES
    seed: int = 0


def _epochs(refs: Union[ReferenceSchedule, np.ndarray, Sequence[float]]) -> List[np.ndarray]:
    if isinstance(refs, ReferenceSchedule):
        return list(refs.values)
    return [np.asarray(refs, dtype=float)]


def certify_all(model: NetworkModel, gains: GainSet, refs,
                options: Optional[CertifyOptions] = None) -> CertificateBundle:
    """Run every check; overall pass is the conjunction of the binding ones"""
    options = options or CertifyOptions()
    logger.info(f"🔎 Certifying {model.node_count}-node network")
    bundle = CertificateBundle()
    z_lo, z_hi = nominal_range(model, gains.z_tilde_m, gains.delta)

    bundle.certificates.append(threshold_margin(gains.e_bar, (z_lo, z_hi)))
    z_samples = np.linspace(z_lo, z_hi, options.z_samples, axis=-1)
    bundle.certificates.append(boundary_invariance_check(
        model, gains, z_samples, options.n_boundary, options.n_disturbance, options.seed))
    bundle.certificates.append(inclusion_check(node_sets(model, gains)))

    stability: List[Certificate] = []
    for k, epoch_refs in enumerate(_epochs(refs)):
        try:
            eq = solve_equilibrium(model, gains, epoch_refs)
        except (EquilibriumError, CPLSingularityError, np.linalg.LinAlgError) as exc:
            stability.append(_verdict(f"equilibrium_epoch_{k}", -np.inf,
                                      {"epoch": k, "error": str(exc)}))
            continue
        bundle.equilibria.append(eq)
        if not eq.interior:
            cert = _verdict(f"equilibrium_epoch_{k}", -1.0,
                            {"epoch": k, "saturated_nodes": np.nonzero(eq.saturated)[0].tolist()},
                            {"z_hat_rms": eq.unshifted(model).tolist()}, informative=True)
            stability.append(cert)
            continue
        J = build_jacobian(model, gains, eq)
        cert = hurwitz_check(J, name=f"hurwitz_epoch_{k}")
        cert.sub_certificates = [
            closed_form_gain_check(model, gains, eq),
            qep_check(model, gains, eq),
            jacobian_agreement(J, fd_jacobian(model, gains, eq)),
            equilibrium_closed_form_check(model, gains, eq),
        ]
        stability.append(cert)

    binding = [c for c in stability if not c.informative]
    if not any(c.name.startswith("hurwitz") for c in binding):
        binding_fail = _verdict("hurwitz", -np.inf, {"reason": "no interior equilibrium to linearize"})
        stability.append(binding_fail)
    bundle.certificates.extend(stability)

    bundle.certificates.append(lipschitz_margin(model, gains))
    bundle.certificates.append(alpha_surrogate_check(model, gains))
    bundle.certificates.append(error_model_check(model, gains, seed=options.seed))

    if bundle.passed:
        bundle.region_of_attraction = {
            "center": model.center.tolist(),
            "radius": model.constraint.tolist(),
            "open": True,
        }
        logger.info("✅ All certificates pass")
    else:
        names = ", ".join(c.name for c in bundle.failing())
        logger.warning(f"❌ Certification failed: {names}")
    return bundle
