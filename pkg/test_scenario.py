#!/usr/bin/env python3
"""
Scenario runs end to end: passive and two-node closed loops, reproducible
CSV output, reduced vs full model comparison, and the six-node reference run
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conductor.config import load_config, parse_config
from conductor.scenario import compare_models, run_scenario
from grid.control import GainSet
from grid.dynamics import CascadeInput, CascadeVectorField
from grid.netmodel import NetworkModel
from tools.integrator import integrate
from tools.report_writer import emit_outputs, write_trajectory_csv

CONFIG = Path(__file__).parent / "config" / "scenarios.yaml"

PASSIVE = """
name: passive_short
network:
  node_count: 2
  edges: [[1, 2]]
  line_resistance: 0.5
  line_inductance: 0.02
gains:
  auto: {e_bar: 0.2, z_tilde_m: 5.0, delta: 0.5}
disturbance: {kind: zero}
sim: {dt: 1.0e-4, t_end: 0.01}
certify: {n_boundary: 90, n_disturbance: 4, z_samples: 5}
"""

SINGLE_NODE = """
name: single_node
network:
  node_count: 1
  nominal_P: 500.0
  nominal_Q: 400.0
  dP_max: 500.0
  dQ_max: 400.0
  constraint_center: 109.5
gains:
  auto: {e_bar: 0.2, z_tilde_m: 5.0, delta: 1.0, K_d_floor: 80.0}
references:
  - {t: 0.0, rms: [108.0]}
  - {t: 0.01, rms: [111.0]}
disturbance: {kind: square_wave, dwell: 0.005}
sim: {dt: 1.0e-5, t_end: 0.02, initial_state: equilibrium}
"""


def two_node(out_dir: Path, **overrides):
    params = dict(t_end=0.02, out_dir=str(out_dir))
    params.update(overrides)
    return load_config(CONFIG, "two_node").with_overrides(**params)


def test_passive_run_stays_at_rest():
    result = run_scenario(parse_config(PASSIVE))
    traj = result.trajectory
    assert traj.length == 101
    assert_allclose(traj.e, np.zeros_like(traj.e), atol=1e-12)
    assert_allclose(traj.v_rms, np.full((101, 2), 110.0), atol=1e-9)
    assert result.bundle.passed
    assert result.report["performance_assessment"]["grade"] == "CLEAN"
    assert result.report["nominal"]["q_channel_invariant"]


def test_two_node_run_stays_in_tube(tmp_path):
    result = run_scenario(two_node(tmp_path))
    report = result.report
    assert report["constraint_violations"]["count"] == 0
    assert not report["barrier"]["safe_set_exit"]
    assert min(report["barrier"]["min_barrier"]) >= -1e-6
    assert result.trajectory.events == []
    assert report["performance_assessment"]["passed"]


def test_two_node_boundary_references(tmp_path):
    config = two_node(tmp_path, t_end=0.19)
    assert config.sim.initial_state == "rated"
    result = run_scenario(config)
    traj = result.trajectory
    assert traj.events == [(pytest.approx(0.1), 1)]
    assert_allclose(traj.z_rms[0], [110.0, 110.0])

    # nominal voltages stay in [104, 115], the true ones in the tube around them
    assert traj.z_rms.min() >= 104.0 - 1e-6
    assert traj.z_rms.max() <= 115.0 + 1e-6
    assert traj.e_norm.max() <= np.sqrt(0.2) + 1e-6
    assert np.abs(traj.v_rms - traj.z_rms).max() <= np.sqrt(0.2) + 1e-6
    assert traj.z_rms[-1, 0] < 105.5 and traj.z_rms[-1, 1] > 114.5
    assert result.report["performance_assessment"]["passed"]
    print(f"✓ two-node run settles at {np.round(traj.z_rms[-1], 3).tolist()} V")


def test_csv_is_reproducible(tmp_path):
    first = run_scenario(two_node(tmp_path, seed=3))
    second = run_scenario(two_node(tmp_path, seed=3))
    write_trajectory_csv(first.trajectory, tmp_path / "a.csv", stride=10)
    write_trajectory_csv(second.trajectory, tmp_path / "b.csv", stride=10)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    other = run_scenario(two_node(tmp_path, seed=4))
    write_trajectory_csv(other.trajectory, tmp_path / "c.csv", stride=10)
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_emitted_artifacts(tmp_path):
    config = two_node(tmp_path)
    result = run_scenario(config)
    files = emit_outputs(result.trajectory, result.report, tmp_path, model=config.build_model(), stride=10)
    lines = Path(files["csv"]).read_text().splitlines()
    assert lines[0] == "t,node,v_d,v_q,v_rms,z_d,z_q,sigma_d,sigma_q,e_norm,b,dP,dQ"
    # 2001 grid points, every 10th kept, two nodes each
    assert len(lines) == 1 + 2 * 201
    assert lines[1].split(",")[1] == "1" and lines[2].split(",")[1] == "2"
    assert Path(files["json"]).exists() and Path(files["text"]).exists()
    assert len(files["plot_data"]) == 14


def test_references_switch_on_schedule(tmp_path):
    result = run_scenario(two_node(tmp_path, t_end=0.12))
    traj = result.trajectory
    assert traj.events == [(pytest.approx(0.1), 1)]
    assert traj.epochs[0] == 0 and traj.epochs[-1] == 1


def test_zero_horizon_gives_header_only(tmp_path):
    config = two_node(tmp_path, t_end=0.0)
    result = run_scenario(config)
    assert result.trajectory.length == 0
    assert result.report["steps"] == 0
    rows = write_trajectory_csv(result.trajectory, tmp_path / "empty.csv")
    assert rows == 0
    assert len((tmp_path / "empty.csv").read_text().splitlines()) == 1


def test_reduced_and_full_agree_without_lines():
    report = compare_models(parse_config(SINGLE_NODE))
    assert report["agreement_asserted"]
    assert report["steady_state_agrees"]
    assert max(report["steady_state_discrepancy"]) <= 1e-6


def test_comparison_reports_line_effects(tmp_path):
    report = compare_models(two_node(tmp_path))
    assert not report["agreement_asserted"]
    assert "steady_state_agrees" not in report
    assert len(report["transient_max_discrepancy"]) == 2
    assert report["line_drift_from_equilibrium"] >= 0.0
    print(f"✓ reduced vs full steady-state gap: {max(report['steady_state_discrepancy']):.3e} V")


def test_error_norm_decays_without_loads():
    model = NetworkModel.build(node_count=2, edges=[(0, 1)])
    gains = GainSet.build(2, K=1.0, K_d=1.0, k_Id=50.0, k_Iq=50.0, e_bar=0.2, delta=0.5, z_tilde_m=5.0)
    field = CascadeVectorField(model, gains)
    x0 = np.zeros(field.size)
    x0[4:8] = [0.3, 0.3, 0.1, 0.1]           # same error at both nodes, no coupling
    u = CascadeInput(np.zeros(2), np.zeros(2), np.zeros(2))
    sol = integrate(field, x0, (0.0, 1e-3), 1e-6, inputs=lambda t, epoch: u)
    e_end = sol.states[-1, 4:8]
    rate = gains.K[0] / model.capacitance[0]
    assert_allclose(np.hypot(e_end[:2], e_end[2:]), np.hypot(0.3, 0.1) * np.exp(-rate * 1e-3), rtol=1e-6)


@pytest.mark.slow
def test_six_node_reference_run(tmp_path):
    config = load_config(CONFIG, "six_node").with_overrides(out_dir=str(tmp_path))
    result = run_scenario(config)
    traj = result.trajectory
    report = result.report

    assert report["constraint_violations"]["count"] == 0
    assert traj.b.min() >= -1e-6
    assert abs(traj.z_rms[-1, 5] - 115.0) <= 0.1
    assert abs(traj.sigma_d[-1, 5]) >= 0.95
    assert traj.e_norm.max() <= np.sqrt(0.2) + 1e-6
    print(f"✓ node 6 final nominal {traj.z_rms[-1, 5]:.4f} V, sigma_d {traj.sigma_d[-1, 5]:.4f}")


def main():
    """Run all tests"""
    print("=" * 70)
    print("SCENARIO TESTS")
    print("=" * 70)
    tmp = Path(tempfile.mkdtemp(prefix="tubegrid-test-"))
    try:
        test_passive_run_stays_at_rest()
        test_two_node_run_stays_in_tube(tmp)
        test_two_node_boundary_references(tmp)
        test_csv_is_reproducible(tmp)
        test_emitted_artifacts(tmp / "artifacts")
        test_references_switch_on_schedule(tmp)
        test_zero_horizon_gives_header_only(tmp)
        test_reduced_and_full_agree_without_lines()
        test_comparison_reports_line_effects(tmp)
        test_error_norm_decays_without_loads()
        if "--slow" in sys.argv:
            test_six_node_reference_run(tmp / "six_node")
        print("✅ ALL TESTS PASSED")
        return 0
    except AssertionError as e:
        print(f"\n❌ TEST FAILED: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
