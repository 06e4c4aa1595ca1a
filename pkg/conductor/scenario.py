# tubegrid/conductor/scenario.py
"""
Scenario execution: resolve gains, certify, integrate the cascade and
summarize the run. compare_models runs the reduced closed loop next to
the full model with dynamic lines.
"""

import logging
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from conductor.config import RunConfig
from conductor.disturbance import make_disturbance
from grid.certify import CertificateBundle, CertifyOptions, certify_all, solve_equilibrium
from grid.control import DesignResult, GainSet, ReferenceSchedule, design_all
from grid.dynamics import (CascadeInput, CascadeState, CascadeVectorField, FullCascadeVectorField,
                           v_rms)
from grid.errors import CertificationError, DesignError, NetworkError
from grid.netmodel import NetworkModel, exact_line_equilibrium, line_equilibrium, validate_network
from tools.integrator import Solution, integrate
from tools.metrics_collector import MetricsCollector

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """Cascade states on a uniform grid plus everything derived from them"""

    times: np.ndarray
    states: np.ndarray
    dP: np.ndarray
    dQ: np.ndarray
    epochs: np.ndarray
    events: List[Tuple[float, int]]
    rated_voltage: np.ndarray
    e_bar: np.ndarray
    injection: np.ndarray
    max_clamp: float = 0.0

    @property
    def node_count(self) -> int:
        return self.rated_voltage.shape[0]

    @property
    def length(self) -> int:
        return self.times.shape[0]

    def _cols(self, a: int, b: int) -> np.ndarray:
        n = self.node_count
        return self.states[:, a * n:b * n]

    @property
    def z_tilde(self) -> np.ndarray:
        return self._cols(0, 2)

    @property
    def e(self) -> np.ndarray:
        return self._cols(2, 4)

    @property
    def sigma_d(self) -> np.ndarray:
        return self._cols(4, 5)

    @property
    def sigma_q(self) -> np.ndarray:
        return self._cols(5, 6)

    @property
    def z(self) -> np.ndarray:
        """Unshifted nominal voltage"""
        return self.z_tilde + np.concatenate([self.rated_voltage, np.zeros(self.node_count)])

    @property
    def v(self) -> np.ndarray:
        return self.e + self.z

    @property
    def e_norm(self) -> np.ndarray:
        n = self.node_count
        e = self.e
        return np.hypot(e[:, :n], e[:, n:])

    @property
    def b(self) -> np.ndarray:
        """Barrier e_bar - e^T e per node"""
        return self.e_bar - self.e_norm ** 2

    @property
    def v_rms(self) -> np.ndarray:
        return v_rms(self.v)

    @property
    def z_rms(self) -> np.ndarray:
        return v_rms(self.z)

    def state_at(self, k: int) -> CascadeState:
        return CascadeState.unpack(self.states[k], self.node_count)

    @classmethod
    def from_solution(cls, sol: Solution, model: NetworkModel, gains: GainSet,
                      vector_field: CascadeVectorField) -> "Trajectory":
        n = model.node_count
        if sol.times.size == 0:
            empty = np.zeros((0, n))
            return cls(times=sol.times, states=sol.states, dP=empty, dQ=empty,
                       epochs=np.zeros(0, dtype=int), events=[], rated_voltage=model.rated_voltage,
                       e_bar=gains.e_bar, injection=np.zeros((0, 2 * n)))
        dP = np.array([u.dP for u in sol.inputs])
        dQ = np.array([u.dQ for u in sol.inputs])
        events = [(float(sol.times[idx]), k + 1) for k, idx in enumerate(sol.event_indices)
                  if idx < sol.times.size]
        return cls(times=sol.times, states=sol.states, dP=dP, dQ=dQ, epochs=sol.epochs,
                   events=events, rated_voltage=model.rated_voltage, e_bar=gains.e_bar,
                   injection=vector_field.injection(sol.states), max_clamp=sol.max_clamp)


@dataclass
class ScenarioResult:
    trajectory: Trajectory
    report: Dict[str, Any]
    gains: GainSet
    bundle: Optional[CertificateBundle] = None
    design: Optional[DesignResult] = None


def prepare_model(config: RunConfig) -> NetworkModel:
    model = config.build_model()
    issues = validate_network(model)
    if issues:
        raise NetworkError("invalid network: " + "; ".join(issues))
    return model


def resolve_gains(config: RunConfig, model: NetworkModel,
                  schedule: ReferenceSchedule) -> Tuple[GainSet, Optional[DesignResult]]:
    """Explicit gains as given, or run the design procedure (fails closed)"""
    if config.gains.explicit is not None:
        return config.gains.explicit.to_gainset(model.node_count), None
    auto = config.gains.auto
    result = design_all(model, auto.e_bar, auto.z_tilde_m, auto.delta,
                        refs=schedule.values[0], options=auto.options())
    if not result.passed:
        failing = [c.name for c in result.certificates if not c.passed and not c.informative]
        reason = ", ".join(failing) if failing else str(result.report.get("error"))
        raise DesignError(f"gain design infeasible: {reason}", result.certificates)
    return result.gains, result


def certify_config(config: RunConfig, model: NetworkModel, gains: GainSet,
                   schedule: ReferenceSchedule) -> CertificateBundle:
    options = CertifyOptions(n_boundary=config.certify.n_boundary,
                             n_disturbance=config.certify.n_disturbance,
                             z_samples=config.certify.z_samples, seed=config.sim.seed)
    return certify_all(model, gains, schedule, options)


def initial_state(config: RunConfig, model: NetworkModel, gains: GainSet,
                  schedule: ReferenceSchedule) -> CascadeState:
    """Rated voltage with zero integrators, or the first epoch's equilibrium"""
    n = model.node_count
    if config.sim.initial_state == "equilibrium":
        return solve_equilibrium(model, gains, schedule.values[0]).state()
    return CascadeState.zeros(n)


def _inputs(config: RunConfig, model: NetworkModel, schedule: ReferenceSchedule):
    disturbance = make_disturbance(config.disturbance_profile(), model)

    def inputs(t: float, epoch: int) -> CascadeInput:
        d = disturbance(t)
        return CascadeInput(schedule.epoch(epoch), d.dP, d.dQ)
    return inputs


def run_scenario(config: RunConfig, gains: Optional[GainSet] = None,
                 bundle: Optional[CertificateBundle] = None) -> ScenarioResult:
    """
    Integrate the closed loop for one scenario.

    Gains must pass certification unless sim.allow_uncertified is set; a
    supplied bundle is trusted instead of re-running the checks.
    """
    model = prepare_model(config)
    schedule = config.reference_schedule(model)
    design = None
    if gains is None:
        gains, design = resolve_gains(config, model, schedule)

    if bundle is None:
        bundle = certify_config(config, model, gains, schedule)
    if not bundle.passed:
        names = ", ".join(c.name for c in bundle.failing())
        if not config.sim.allow_uncertified:
            raise CertificationError(f"gains failed certification: {names}", bundle)
        logger.warning(f"⚠️ Running with uncertified gains (failing: {names})")

    vector_field = CascadeVectorField(model, gains)
    x0 = initial_state(config, model, gains, schedule).pack()
    logger.info(f"🚀 Simulating {config.name!r}: t_end={config.sim.t_end}s dt={config.sim.dt}s")
    started = time.time()
    sol = integrate(vector_field, x0, (0.0, config.sim.t_end), config.sim.dt,
                    schedule.event_times, _inputs(config, model, schedule), vector_field.project)
    trajectory = Trajectory.from_solution(sol, model, gains, vector_field)

    collector = MetricsCollector(model, gains, config.sim.settle_tolerance)
    collector.set_run_info({
        "scenario": config.name,
        "nodes": model.node_count,
        "dt": config.sim.dt,
        "t_end": config.sim.t_end,
        "seed": config.sim.seed,
        "disturbance": config.disturbance.kind,
        "gains_mode": "explicit" if config.gains.explicit is not None else "auto",
        "certified": bool(bundle is not None and bundle.passed),
        "wall_time_s": round(time.time() - started, 3),
    })
    collector.add_trajectory(trajectory)
    report = collector.generate_report()
    grade = report["performance_assessment"]["grade"]
    marker = "✅" if report["performance_assessment"]["passed"] else "❌"
    logger.info(f"{marker} Simulation finished: grade {grade}, "
                f"{report['constraint_violations']['count']} constraint violation(s)")
    return ScenarioResult(trajectory, report, gains, bundle, design)


def compare_models(config: RunConfig, gains: Optional[GainSet] = None) -> Dict[str, Any]:
    """
    Reduced closed loop against the full model with dynamic lines.

    The full model starts with its line currents at their algebraic
    equilibrium. Agreement is only expected without lines; with lines the
    discrepancies are reported.
    """
    model = prepare_model(config)
    schedule = config.reference_schedule(model)
    if gains is None:
        gains, _ = resolve_gains(config, model, schedule)
    n, m = model.node_count, model.edge_count

    reduced = CascadeVectorField(model, gains)
    full = FullCascadeVectorField(model, gains)
    start = initial_state(config, model, gains, schedule)
    v0 = start.e + start.z_tilde + model.z_o
    x0_full = np.concatenate([v0, exact_line_equilibrium(model, v0), start.z_tilde,
                              start.sigma_d, start.sigma_q])

    inputs = _inputs(config, model, schedule)
    span = (0.0, config.sim.t_end)
    logger.info(f"🔁 Comparing reduced and full models over {config.sim.t_end}s")
    sol_r = integrate(reduced, start.pack(), span, config.sim.dt, schedule.event_times, inputs, reduced.project)
    sol_f = integrate(full, x0_full, span, config.sim.dt, schedule.event_times, inputs, full.project)
    if sol_r.times.size == 0:
        return {"schema_version": 1, "steps": 0, "agreement_asserted": m == 0}

    traj = Trajectory.from_solution(sol_r, model, gains, reduced)
    v_red = traj.v
    v_full = sol_f.states[:, :2 * n]
    gap = np.hypot(v_red[:, :n] - v_full[:, :n], v_red[:, n:] - v_full[:, n:])
    i_end = sol_f.states[-1, 2 * n:2 * n + 2 * m]
    v_end = v_full[-1]
    steady = gap[-1]
    report = {
        "schema_version": 1,
        "steps": int(sol_r.times.size),
        "steady_state_discrepancy": steady.tolist(),
        "transient_max_discrepancy": gap.max(axis=0).tolist(),
        "line_drift_from_equilibrium": float(np.max(np.abs(i_end - exact_line_equilibrium(model, v_end)),
                                                    initial=0.0)),
        "line_offset_from_substitution": float(np.max(np.abs(i_end - line_equilibrium(model, v_end)),
                                                      initial=0.0)),
        "agreement_asserted": m == 0,
    }
    if m == 0:
        report["steady_state_agrees"] = bool(np.max(steady) <= 1e-6)
    logger.info(f"steady-state discrepancy max {np.max(steady):.3e} V, "
                f"transient max {np.max(gap):.3e} V")
    return report
