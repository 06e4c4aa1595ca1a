# tubegrid/tools/metrics_collector.py
"""
Run metrics for closed-loop simulations
Summarizes barrier values, constraint excursions, tube width and energy into a graded report
"""

import logging
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# numerical slack on barrier and q-channel checks
BARRIER_SLACK = 1e-6
Q_CHANNEL_TOLERANCE = 1e-9
# largest sigma_d roundoff clamp a run may need
CLAMP_LIMIT = 1e-9


class MetricsCollector:
    """Collect and grade the metrics of one simulated trajectory"""

    def __init__(self, model, gains, settle_tolerance: float = 0.05):
        self.model = model
        self.gains = gains
        self.settle_tolerance = settle_tolerance
        self.run_info: Dict[str, Any] = {}
        self.trajectory = None

    def set_run_info(self, info: Dict[str, Any]):
        """Set scenario information"""
        self.run_info = info

    def add_trajectory(self, trajectory):
        self.trajectory = trajectory

    def calculate_barrier_metrics(self) -> Dict[str, Any]:
        traj = self.trajectory
        if traj.length == 0:
            return {"min_barrier": [], "tube_width_max": [], "safe_set_exit": False}
        min_b = traj.b.min(axis=0)
        return {
            "min_barrier": min_b.tolist(),
            "tube_width_max": traj.e_norm.max(axis=0).tolist(),
            "tube_radius": np.sqrt(self.gains.e_bar).tolist(),
            "safe_set_exit": bool(np.any(min_b < -BARRIER_SLACK)),
        }

    def calculate_constraint_metrics(self) -> Dict[str, Any]:
        """Excursion of the true voltage from the constraint disk (negative = inside)"""
        traj = self.trajectory
        n = self.model.node_count
        if traj.length == 0:
            return {"count": 0, "per_node": [0] * n, "worst_excursion": [], "min_slack": None}
        v = traj.v
        distance = np.hypot(v[:, :n] - self.model.center, v[:, n:])
        excursion = distance - self.model.constraint
        per_node = (excursion > 0).sum(axis=0)
        return {
            "count": int(per_node.sum()),
            "per_node": per_node.tolist(),
            "worst_excursion": excursion.max(axis=0).tolist(),
            "min_slack": float(-excursion.max()),
        }

    def calculate_settling(self) -> Dict[str, Any]:
        """Time after the last reference change until the nominal RMS stays near its final value"""
        traj = self.trajectory
        if traj.length == 0:
            return {"settling_time": [], "since": None}
        since = traj.events[-1][0] if traj.events else float(traj.times[0])
        z = traj.z_rms
        final = z[-1]
        outside = np.abs(z - final) > self.settle_tolerance
        after = traj.times >= since
        settling = []
        for i in range(self.model.node_count):
            idx = np.nonzero(outside[:, i] & after)[0]
            settling.append(0.0 if idx.size == 0 else float(traj.times[idx[-1]] - since))
        return {"settling_time": settling, "since": since, "tolerance": self.settle_tolerance}

    def calculate_energy(self) -> Dict[str, Any]:
        traj = self.trajectory
        n = self.model.node_count
        if traj.length < 2:
            return {"injection_l2": [0.0] * n, "final_stored": 0.0}
        i_inj = traj.injection
        power = i_inj[:, :n] ** 2 + i_inj[:, n:] ** 2
        dt = np.diff(traj.times)[:, None]
        l2 = (0.5 * (power[1:] + power[:-1]) * dt).sum(axis=0)
        v_end = traj.v[-1]
        stored = 0.5 * float(np.sum(self.model.capacitance * (v_end[:n] ** 2 + v_end[n:] ** 2)))
        return {"injection_l2": l2.tolist(), "final_stored": stored}

    def calculate_nominal_metrics(self) -> Dict[str, Any]:
        traj = self.trajectory
        if traj.length == 0:
            return {"q_channel_invariant": True}
        max_zq = np.abs(traj.z_tilde[:, self.model.node_count:]).max(axis=0)
        max_sq = np.abs(traj.sigma_q).max(axis=0)
        return {
            "final_nominal_rms": traj.z_rms[-1].tolist(),
            "final_sigma_d": traj.sigma_d[-1].tolist(),
            "max_abs_z_q": max_zq.tolist(),
            "max_abs_sigma_q": max_sq.tolist(),
            "q_channel_invariant": bool(max_zq.max() <= Q_CHANNEL_TOLERANCE
                                        and max_sq.max() <= Q_CHANNEL_TOLERANCE),
            "max_sigma_clamp": traj.max_clamp,
            "integrator_invariant": bool(traj.max_clamp <= CLAMP_LIMIT),
        }

    def generate_report(self) -> Dict[str, Any]:
        """Generate complete run report"""
        barrier = self.calculate_barrier_metrics()
        constraints = self.calculate_constraint_metrics()

        # Performance assessment
        min_b = min(barrier["min_barrier"], default=0.0)
        e_bar = float(np.min(self.gains.e_bar))
        min_slack = constraints["min_slack"]
        nominal = self.calculate_nominal_metrics()
        if (constraints["count"] > 0 or barrier["safe_set_exit"]
                or not nominal.get("integrator_invariant", True)):
            grade = "VIOLATED"
        elif min_b < 0.05 * e_bar or (min_slack is not None and min_slack < 0.05):
            grade = "MARGINAL"
        else:
            grade = "CLEAN"

        logger.debug(f"run graded {grade}: min barrier {min_b:.6g}, {constraints['count']} violation(s)")
        return {
            "schema_version": SCHEMA_VERSION,
            "run_info": self.run_info,
            "steps": self.trajectory.length,
            "barrier": barrier,
            "constraint_violations": constraints,
            "settling": self.calculate_settling(),
            "nominal": nominal,
            "energy": self.calculate_energy(),
            "performance_assessment": {
                "grade": grade,
                "passed": grade != "VIOLATED",
            },
        }

    def print_summary(self, report: Dict[str, Any]):
        """Print summary to console"""
        barrier = report.get("barrier", {})
        constraints = report.get("constraint_violations", {})
        assessment = report.get("performance_assessment", {})
        print("\n" + "=" * 80)
        print("⚡ TUBEGRID SIMULATION SUMMARY")
        print("=" * 80)
        print(f"\n✅ Steps: {report.get('steps', 0)}")
        print(f"✅ Constraint violations: {constraints.get('count', 0)}")
        if barrier.get("min_barrier"):
            print(f"✅ Min barrier value: {min(barrier['min_barrier']):.6g}")
            print(f"✅ Max tube width: {max(barrier['tube_width_max']):.6g} V")
        print(f"✅ Grade: {assessment.get('grade', 'N/A')}")
        print("\n" + "=" * 80 + "\n")


def _fmt(values, spec: str = ".6g") -> str:
    if values is None:
        return "N/A"
    return "  ".join(format(float(v), spec) for v in values)


def format_text_report(report: Dict[str, Any]) -> str:
    """Formatted text rendering of a run report"""
    info = report.get("run_info", {})
    barrier = report.get("barrier", {})
    constraints = report.get("constraint_violations", {})
    nominal = report.get("nominal", {})
    settling = report.get("settling", {})
    energy = report.get("energy", {})
    assessment = report.get("performance_assessment", {})

    lines = ["=" * 80, "⚡ TUBEGRID - CLOSED-LOOP SIMULATION REPORT", "=" * 80, ""]
    lines += ["RUN CONFIGURATION", "-" * 80]
    for key in ("scenario", "nodes", "dt", "t_end", "seed", "disturbance", "gains_mode"):
        lines.append(f"{key}: {info.get(key, 'N/A')}")
    lines.append(f"steps: {report.get('steps', 0)}")
    lines.append("")

    lines += ["SAFE SET", "-" * 80]
    lines.append(f"Min barrier per node: {_fmt(barrier.get('min_barrier'))}")
    lines.append(f"Max tube width [V]:   {_fmt(barrier.get('tube_width_max'))}")
    lines.append(f"Tube radius [V]:      {_fmt(barrier.get('tube_radius'))}")
    lines.append(f"Safe-set exit: {'⚠️ YES' if barrier.get('safe_set_exit') else '✅ NO'}")
    lines.append("")

    lines += ["VOLTAGE CONSTRAINTS", "-" * 80]
    lines.append(f"Violations (node-steps): {constraints.get('count', 0)}")
    lines.append(f"Worst excursion [V]:     {_fmt(constraints.get('worst_excursion'))}")
    lines.append("")

    lines += ["NOMINAL SUBSYSTEM", "-" * 80]
    lines.append(f"Final nominal RMS [V]: {_fmt(nominal.get('final_nominal_rms'), '.4f')}")
    lines.append(f"Final sigma_d:         {_fmt(nominal.get('final_sigma_d'), '.4f')}")
    lines.append(f"Settling time [s]:     {_fmt(settling.get('settling_time'), '.4f')}")
    lines.append(f"q-channel invariant: {'✅ YES' if nominal.get('q_channel_invariant') else '⚠️ NO'}")
    lines.append(f"Max sigma_d clamp:   {nominal.get('max_sigma_clamp', 0.0):.3g}")
    lines.append("")

    lines += ["ENERGY", "-" * 80]
    lines.append(f"Injection L2 [A^2 s]: {_fmt(energy.get('injection_l2'))}")
    lines.append(f"Final stored [J]:     {energy.get('final_stored', 0.0):.6g}")
    lines.append("")

    lines += ["PERFORMANCE ASSESSMENT", "-" * 80]
    lines.append(f"Grade: {assessment.get('grade', 'N/A')}")
    lines.append(f"Run Passed: {'✅ YES' if assessment.get('passed', False) else '❌ NO'}")
    lines += ["", "=" * 80, "END OF REPORT", "=" * 80, ""]
    return "\n".join(lines)
