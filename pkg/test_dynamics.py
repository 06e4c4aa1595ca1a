#!/usr/bin/env python3
"""
Tests for CPL currents and the plant, nominal, error and cascade vector fields
"""

import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from grid.control import GainSet
from grid.cpl import cpl_current, cpl_currents
from grid.dynamics import (CascadeInput, CascadeState, CascadeVectorField, LoadDisturbance, TrueState,
                           cascade_rhs, error_rhs, error_rhs_mismatch, full_rhs, node_field,
                           reconstruct_true, reduced_rhs, shifted_nominal_rhs, v_rms)
from grid.errors import CPLSingularityError, IntegratorStateError
from grid.netmodel import NetworkModel, line_equilibrium, six_node_topology

OMEGA = 2 * np.pi * 50


def single_node(**kw) -> NetworkModel:
    return NetworkModel.build(node_count=1, edges=[], **kw)


def meshed(P=500.0, Q=400.0) -> NetworkModel:
    return NetworkModel.build(node_count=6, edges=six_node_topology(), line_resistance=0.5,
                              line_inductance=0.02, nominal_P=P, nominal_Q=Q,
                              dP_max=500.0, dQ_max=400.0, constraint_center=109.5)


def gains_for(n: int, K=14.5, K_d=80.0) -> GainSet:
    return GainSet.build(n, K=K, K_d=K_d, k_Id=50.0, k_Iq=50.0, e_bar=0.2, delta=1.0, z_tilde_m=5.0)


def random_voltage(rng, n, center=110.0):
    return np.concatenate([center + 3 * rng.normal(size=n), 2 * rng.normal(size=n)])


# --------------------------------------------------------------------------
# CPL
# --------------------------------------------------------------------------

def test_cpl_hand_values():
    assert_allclose(cpl_current((100.0, 0.0), 500.0, 400.0), [10 / 3, -8 / 3], rtol=1e-12)
    assert_allclose(cpl_current((0.0, 100.0), 500.0, 0.0), [0.0, 10 / 3], atol=1e-12)
    assert_allclose(cpl_current((110.0, 0.0), 0.0, 0.0), [0.0, 0.0])


def test_cpl_power_identity():
    rng = np.random.default_rng(0)
    v_d = rng.uniform(-150, 150, size=200)
    v_q = rng.uniform(-150, 150, size=200)
    P = rng.uniform(0, 1000, size=200)
    g_d, g_q = cpl_currents(v_d, v_q, P, rng.uniform(-500, 500, size=200))
    assert_allclose(1.5 * (v_d * g_d + v_q * g_q), P, rtol=1e-10, atol=1e-9)


def test_cpl_singularity_names_node():
    with pytest.raises(CPLSingularityError) as info:
        cpl_currents(np.array([110.0, 0.0, 110.0]), np.zeros(3), 500.0, 400.0)
    assert info.value.nodes == (1,)
    with pytest.raises(CPLSingularityError):
        cpl_current((0.0, 0.0), 500.0, 0.0, node=4)


# --------------------------------------------------------------------------
# Plant
# --------------------------------------------------------------------------

def test_full_rhs_single_node_matched_injection():
    model = single_node(nominal_P=500.0, nominal_Q=400.0)
    v = np.array([110.0, 0.0])
    i_inj = cpl_current(v, 500.0, 400.0)
    dot = full_rhs(model, TrueState(v, np.zeros(0)), i_inj)
    assert_allclose(dot.v[0], 0.0, atol=1e-9)
    assert_allclose(dot.v[1], -OMEGA * 110.0, rtol=1e-12)


def test_line_block_at_rest():
    model = NetworkModel.build(node_count=2, edges=[(0, 1)], line_resistance=0.5, line_inductance=0.02)
    v = np.array([110.0, 110.0, 0.0, 0.0])
    dot = full_rhs(model, TrueState(v, np.zeros(2)), np.zeros(4))
    assert_allclose(dot.i_line, np.zeros(2), atol=1e-12)


def test_line_block_matches_scalar_form():
    model = meshed()
    rng = np.random.default_rng(1)
    v = random_voltage(rng, 6)
    m = model.edge_count
    i_line = rng.normal(size=2 * m)
    dot = full_rhs(model, TrueState(v, i_line), np.zeros(12))
    for k, (i, j) in enumerate(model.edges):
        r, L = model.line_resistance[k], model.line_inductance[k]
        I_d, I_q = i_line[k], i_line[m + k]
        dv_d = v[i] - v[j]
        dv_q = v[6 + i] - v[6 + j]
        assert_allclose(dot.i_line[k], (-r * I_d + OMEGA * L * I_q + dv_d) / L, rtol=1e-12)
        assert_allclose(dot.i_line[m + k], (-r * I_q - OMEGA * L * I_d + dv_q) / L, rtol=1e-12)


def test_reduced_matches_full_for_isolated_node():
    model = single_node(nominal_P=300.0, nominal_Q=100.0)
    v = np.array([108.0, 1.5])
    i_inj = np.array([2.0, -1.0])
    assert_allclose(reduced_rhs(model, v, i_inj), full_rhs(model, TrueState(v, np.zeros(0)), i_inj).v)


def test_reduced_matches_full_at_line_substitution():
    model = meshed()
    rng = np.random.default_rng(2)
    v = random_voltage(rng, 6)
    i_inj = rng.normal(size=12)
    full = full_rhs(model, TrueState(v, line_equilibrium(model, v)), i_inj).v
    assert_allclose(reduced_rhs(model, v, i_inj), full, rtol=1e-10, atol=1e-8)


def test_equal_voltages_do_not_couple():
    model = NetworkModel.build(node_count=2, edges=[(0, 1)], line_resistance=0.5, line_inductance=0.02)
    v = np.array([110.0, 110.0, 0.0, 0.0])
    i_inj = np.array([1.0, 1.0, 0.0, 0.0])
    assert_allclose(reduced_rhs(model, v, i_inj), node_field(model, v, i_inj, 0.0, 0.0), atol=1e-9)


# --------------------------------------------------------------------------
# Nominal and error
# --------------------------------------------------------------------------

def test_nominal_linear_decay():
    model = single_node(grid_frequency=0.0)
    z_tilde = np.array([-2.0, 0.5])
    K_d = 40.0
    dot = shifted_nominal_rhs(model, z_tilde, -K_d * z_tilde)
    assert_allclose(dot, -(K_d / model.capacitance[0]) * z_tilde, rtol=1e-12)


def test_nominal_shift_identity():
    model = meshed()
    rng = np.random.default_rng(4)
    z_tilde = np.concatenate([rng.normal(size=6), 0.1 * rng.normal(size=6)])
    i_tilde = rng.normal(size=12)
    assert_allclose(shifted_nominal_rhs(model, z_tilde, i_tilde),
                    reduced_rhs(model, z_tilde + model.z_o, i_tilde, model.P_bar, model.Q_bar))


def test_error_zero_at_coincidence():
    model = meshed()
    z = random_voltage(np.random.default_rng(5), 6)
    dot = error_rhs(model, np.zeros(12), z, LoadDisturbance.zeros(6), 14.5)
    assert_allclose(dot, np.zeros(12), atol=1e-9)


def test_error_linear_when_unloaded():
    model = single_node()
    e = np.array([0.3, -0.1])
    K = 6.0
    C = model.capacitance[0]
    dot = error_rhs(model, e, np.array([110.0, 0.0]), LoadDisturbance.zeros(1), K)
    expected = np.array([-K / C * e[0] + OMEGA * e[1], -K / C * e[1] - OMEGA * e[0]])
    assert_allclose(dot, expected, rtol=1e-10)


def test_error_difference_form_against_direct_evaluation():
    model = meshed()
    rng = np.random.default_rng(6)
    lap = model.laplacian
    C = model.capacitance
    K = np.full(6, 14.5)
    worst = 0.0
    for _ in range(1000):
        z = random_voltage(rng, 6)
        e = 0.3 * rng.normal(size=12)
        dist = LoadDisturbance(rng.uniform(-500, 500, 6), rng.uniform(-400, 400, 6))
        v = e + z
        G_d, G_q = cpl_currents(v[:6], v[6:], model.P_bar + dist.dP, model.Q_bar + dist.dQ)
        g_d, g_q = cpl_currents(z[:6], z[6:], model.P_bar, model.Q_bar)
        ed = (-K * e[:6] + OMEGA * C * e[6:] - lap @ e[:6] - (G_d - g_d)) / C
        eq = (-K * e[6:] - OMEGA * C * e[:6] - lap @ e[6:] - (G_q - g_q)) / C
        direct = np.concatenate([ed, eq])
        got = error_rhs(model, e, z, dist, K)
        worst = max(worst, float(np.max(np.abs(got - direct)) / max(np.max(np.abs(direct)), 1.0)))
    assert worst < 1e-12
    print(f"✓ difference form agrees to {worst:.2e} relative")


def test_closed_form_error_model_cross_check():
    rng = np.random.default_rng(7)
    unloaded = meshed(P=0.0, Q=0.0)
    loaded = meshed()
    counts = 0
    for _ in range(100):
        z_d = 110 + 3 * rng.normal(size=6)
        e = 0.4 * rng.uniform(-1, 1, size=12)
        dist = LoadDisturbance(rng.uniform(-500, 500, 6), rng.uniform(-400, 400, 6))
        clean = error_rhs_mismatch(unloaded, e, z_d, dist, 14.5)
        assert clean["count"] == 0, clean
        report = error_rhs_mismatch(loaded, e, z_d, dist, 14.5)
        assert report["components"] == 12
        counts += report["count"]
    print(f"✓ closed-form mismatches with nominal loads: {counts} of 1200 components")


# --------------------------------------------------------------------------
# Cascade
# --------------------------------------------------------------------------

def test_q_channel_invariant_subspace():
    model = meshed()
    gains = gains_for(6)
    rng = np.random.default_rng(8)
    state = CascadeState(z_tilde=np.concatenate([rng.normal(size=6), np.zeros(6)]),
                         e=0.2 * rng.normal(size=12), sigma_d=rng.uniform(-0.9, 0.9, 6),
                         sigma_q=np.zeros(6))
    dot = cascade_rhs(model, state, gains, np.zeros(6))
    assert_allclose(dot.z_tilde[6:], np.zeros(6), atol=1e-8)
    assert_allclose(dot.sigma_q, np.zeros(6), atol=0.0)


def test_saturated_integrator_is_stationary():
    model = meshed()
    gains = gains_for(6)
    state = CascadeState.zeros(6)
    state.sigma_d[:] = [1, -1, 1, -1, 1, -1]
    dot = cascade_rhs(model, state, gains, np.full(6, 3.0))
    assert_allclose(dot.sigma_d, np.zeros(6), atol=0.0)


def test_integrator_state_outside_range_rejected():
    model = meshed()
    state = CascadeState.zeros(6)
    state.sigma_d[2] = 1.01
    with pytest.raises(IntegratorStateError):
        cascade_rhs(model, state, gains_for(6), np.zeros(6))


def test_vector_field_matches_cascade_rhs():
    model = meshed()
    gains = gains_for(6)
    rng = np.random.default_rng(9)
    state = CascadeState(z_tilde=rng.normal(size=12), e=0.2 * rng.normal(size=12),
                         sigma_d=rng.uniform(-0.9, 0.9, 6), sigma_q=rng.normal(size=6))
    refs = rng.normal(size=6)
    dist = LoadDisturbance(rng.uniform(-500, 500, 6), rng.uniform(-400, 400, 6))
    field = CascadeVectorField(model, gains)
    fast = field(0.0, state.pack(), CascadeInput(refs, dist.dP, dist.dQ))
    slow = cascade_rhs(model, state, gains, refs, dist).pack()
    assert_allclose(fast, slow, rtol=1e-9, atol=1e-6)


def test_projector_clamps_roundoff_only():
    field = CascadeVectorField(meshed(), gains_for(6))
    x = np.zeros(36)
    x[24] = 1.0 + 1e-12
    assert field.project(x) > 0
    assert x[24] == 1.0
    x[25] = -1.1
    with pytest.raises(IntegratorStateError):
        field.project(x)


def test_reconstruct_true_and_rms():
    state = CascadeState(z_tilde=np.array([-1.0, 0.0]), e=np.array([0.1, 0.0]),
                         sigma_d=np.zeros(1), sigma_q=np.zeros(1))
    v = reconstruct_true(state, np.array([110.0, 0.0]))
    assert_allclose(v, [109.1, 0.0])
    assert_allclose(v_rms(np.array([3.0, 4.0])), [5.0])
    assert_allclose(v_rms(v), [109.1])


def main():
    """Run all tests"""
    print("=" * 70)
    print("DYNAMICS TESTS")
    print("=" * 70)
    tests = [obj for name, obj in sorted(globals().items()) if name.startswith("test_") and callable(obj)]
    try:
        for test in tests:
            test()
            print(f"✓ {test.__name__}")
        print("✅ ALL TESTS PASSED")
        return 0
    except AssertionError as e:
        print(f"\n❌ TEST FAILED: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
