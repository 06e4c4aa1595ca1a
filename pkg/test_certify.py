#!/usr/bin/env python3
"""
Tests for the certificates: safe-set threshold, boundary invariance, set
inclusion, equilibria and Hurwitz stability
"""

import json
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from grid.certify import (MAX_NEWTON_ITERATIONS, CertifyOptions, alpha_eval, boundary_invariance_check,
                          build_jacobian, certify_all, coupling_bound, equilibrium_closed_form_check,
                          error_model_check, fd_jacobian, hurwitz_check, inclusion_check,
                          jacobian_agreement, lipschitz_margin, solve_equilibrium, threshold_margin)
from grid.control import GainSet, ReferenceSchedule, nominal_injection
from grid.dynamics import LoadDisturbance, TrueState, cascade_rhs, error_rhs, full_rhs
from grid.netmodel import NetworkModel, line_equilibrium, node_sets_from, six_node_topology

RMS_EPOCHS = [
    (0.0, [106.5, 108.0, 109.5, 111.5, 113.0, 114.5]),
    (0.2, [105.0, 106.5, 108.0, 109.5, 111.0, 112.5]),
    (0.4, [109.0, 110.5, 112.0, 113.5, 115.0, 116.0]),
]


def six_node_model() -> NetworkModel:
    return NetworkModel.build(node_count=6, edges=six_node_topology(), line_resistance=0.5,
                              line_inductance=0.02, nominal_P=500.0, nominal_Q=400.0,
                              dP_max=500.0, dQ_max=400.0, v_max=6.0, constraint_center=109.5)


def six_node_gains(K=15.3) -> GainSet:
    return GainSet.build(6, K=K, K_d=80.0, k_Id=50.0, k_Iq=50.0, e_bar=0.2, delta=1.0, z_tilde_m=5.0)


def schedule() -> ReferenceSchedule:
    return ReferenceSchedule.from_rms(RMS_EPOCHS, np.full(6, 110.0))


# --------------------------------------------------------------------------
# Safe set
# --------------------------------------------------------------------------

def test_threshold_margin():
    cert = threshold_margin(0.2, (104.0, 115.0))
    assert cert.passed
    assert_allclose(cert.margin, 104.0 - 0.2 - np.sqrt(0.2), rtol=1e-12)
    assert cert.detail["alpha_den_positive"]
    assert_allclose(cert.detail["threshold"], [0.2 + np.sqrt(0.2)])

    failing = threshold_margin(2.0, (3.0, 5.0))
    assert not failing.passed
    assert_allclose(failing.witness["threshold"], 3.414, atol=1e-3)


def test_alpha_surrogate_values():
    num, den = alpha_eval((0.0, 0.0), 110.0, (500.0, 400.0), 14.0, (500.0, 400.0))
    assert num == 0.0
    assert den == 1_331_000.0


def test_passive_boundary_margin():
    model = NetworkModel.build(node_count=2, edges=[(0, 1)])
    gains = GainSet.build(2, K=1.0, K_d=1.0, k_Id=50.0, k_Iq=50.0, e_bar=0.2, delta=0.5, z_tilde_m=5.0)
    cert = boundary_invariance_check(model, gains, np.array([105.0, 110.0]), n_boundary=64,
                                     n_disturbance=4)
    assert cert.passed
    assert_allclose(cert.margin, 2 * 1.0 * 0.2 / model.capacitance[0], rtol=1e-9)


def test_boundary_invariance_designed_gain():
    cert = boundary_invariance_check(six_node_model(), six_node_gains(), n_boundary=180, n_disturbance=8)
    assert cert.passed
    assert cert.witness["node"] in range(6)
    assert cert.detail["per_node_margin"][0] > 0


def test_boundary_invariance_fails_with_witness():
    cert = boundary_invariance_check(six_node_model(), six_node_gains(K=0.5), n_boundary=180, n_disturbance=8)
    assert not cert.passed
    assert cert.witness["inner_product"] > 0
    assert set(cert.witness) >= {"node", "z_d", "e", "dP", "dQ"}


def test_set_inclusion_margin():
    cert = inclusion_check(node_sets_from(six_node_model(), 0.2, 5.0, 1.0))
    assert cert.passed
    assert_allclose(cert.margin, 0.0528, atol=1e-4)

    tight = inclusion_check(node_sets_from(six_node_model(), 0.2, 5.0, 1.5))
    assert not tight.passed
    assert tight.witness["side"] == "lower"


# --------------------------------------------------------------------------
# Equilibria and stability
# --------------------------------------------------------------------------

def test_hurwitz_examples():
    cert = hurwitz_check(np.diag([-1.0, -2.0]))
    assert cert.passed
    assert_allclose(cert.margin, 1.0)
    rotation = hurwitz_check(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert not rotation.passed
    with pytest.raises(ValueError):
        hurwitz_check(np.zeros((2, 3)))


def test_interior_equilibrium():
    model = six_node_model()
    gains = six_node_gains()
    refs = schedule().epoch(0)
    eq = solve_equilibrium(model, gains, refs)
    assert eq.interior
    assert eq.residual < 1e-8
    assert_allclose(eq.z_hat_d, refs, atol=1e-9)
    assert np.all(np.abs(eq.sigma_hat_d) < 1.0)
    rhs = cascade_rhs(model, eq.state(), gains, refs).pack()
    assert np.max(np.abs(rhs)) < 1e-8


def test_jacobian_matches_finite_differences():
    model = six_node_model()
    gains = six_node_gains()
    eq = solve_equilibrium(model, gains, schedule().epoch(1))
    J = build_jacobian(model, gains, eq)
    agreement = jacobian_agreement(J, fd_jacobian(model, gains, eq))
    assert agreement.passed, agreement.witness
    assert hurwitz_check(J).passed


def test_saturated_equilibrium_in_last_epoch():
    model = six_node_model()
    eq = solve_equilibrium(model, six_node_gains(), schedule().epoch(2))
    assert not eq.interior
    assert eq.saturated[5] == 1
    assert eq.sigma_hat_d[5] == 1.0
    assert_allclose(eq.unshifted(model)[5], 114.945, atol=0.01)
    print(f"✓ node 6 settles at {eq.unshifted(model)[5]:.4f} V with its integrator saturated")


def test_informative_checks():
    model = six_node_model()
    gains = six_node_gains()
    lipschitz = lipschitz_margin(model, gains)
    assert lipschitz.informative and lipschitz.passed
    assert_allclose(lipschitz.margin, 104.0 - np.sqrt(0.2))

    eq = solve_equilibrium(model, gains, schedule().epoch(0))
    closed_form = equilibrium_closed_form_check(model, gains, eq)
    assert closed_form.informative
    assert closed_form.detail["rearranged_max_error"] < 1e-6


def two_node_uneven_tubes():
    # one line of weight 1 / (omega L - r) = 100
    model = NetworkModel.build(node_count=2, edges=[(0, 1)], line_resistance=0.05,
                               line_inductance=0.06 / (100 * np.pi))
    gains = GainSet.build(2, K=1.0, K_d=1.0, k_Id=50.0, k_Iq=50.0, e_bar=[0.2, 2.0], delta=0.5,
                          z_tilde_m=5.0)
    return model, gains


def test_uneven_tubes_break_boundary_invariance():
    model, gains = two_node_uneven_tubes()
    assert_allclose(-model.laplacian[0, 1], 100.0, rtol=1e-9)

    # node 1 on the rim of its disk, node 2 inside its own larger disk
    e = np.array([np.sqrt(0.2), np.sqrt(2.0), 0.0, 0.0])
    z = np.array([110.0, 110.0, 0.0, 0.0])
    e_dot = error_rhs(model, e, z, LoadDisturbance.zeros(2), gains.K)
    outward = 2.0 * e[0] * e_dot[0]
    assert outward > 0

    cert = boundary_invariance_check(model, gains, np.array([110.0]), n_boundary=64, n_disturbance=4)
    assert not cert.passed
    assert cert.witness["node"] == 0
    assert_allclose(-cert.margin, outward, rtol=1e-9)
    assert_allclose(cert.witness["error_rhs_inner_product"], cert.witness["inner_product"], rtol=1e-9)
    print(f"✓ uneven tubes: outward rate {outward:.6g} caught by the boundary check")


def test_coupling_bound_vanishes_for_equal_tubes():
    assert_allclose(coupling_bound(six_node_model(), 0.2), np.zeros(6), atol=1e-9)
    model, gains = two_node_uneven_tubes()
    bound = coupling_bound(model, gains.e_bar)
    assert bound[0] > 0 > bound[1]
    assert_allclose(bound[0], 2 * 100.0 * (np.sqrt(0.4) - 0.2) / model.capacitance[0], rtol=1e-9)


def test_boundary_margin_shrinks_with_larger_deviations():
    base = boundary_invariance_check(six_node_model(), six_node_gains(), n_boundary=90, n_disturbance=0)
    for scale in ({"dP_max": 600.0}, {"dQ_max": 500.0}, {"dP_max": 700.0, "dQ_max": 600.0}):
        params = dict(node_count=6, edges=six_node_topology(), line_resistance=0.5, line_inductance=0.02,
                      nominal_P=500.0, nominal_Q=400.0, dP_max=500.0, dQ_max=400.0, v_max=6.0,
                      constraint_center=109.5)
        params.update(scale)
        wider = boundary_invariance_check(NetworkModel.build(**params), six_node_gains(),
                                          n_boundary=90, n_disturbance=0)
        assert wider.margin <= base.margin + 1e-9, scale


def test_hurwitz_margin_survives_orthogonal_similarity():
    model = six_node_model()
    gains = six_node_gains()
    J = build_jacobian(model, gains, solve_equilibrium(model, gains, schedule().epoch(0)))
    base = hurwitz_check(J)
    rng = np.random.default_rng(11)
    for _ in range(3):
        Q, _ = np.linalg.qr(rng.normal(size=J.shape))
        rotated = hurwitz_check(Q @ J @ Q.T)
        assert rotated.passed
        assert_allclose(rotated.margin, base.margin, rtol=1e-6, atol=1e-8 * np.linalg.norm(J))


def test_hurwitz_damped_oscillator():
    cert = hurwitz_check(np.array([[-1.0, 1.0], [-1.0, 0.0]]))
    assert cert.passed
    assert_allclose(cert.margin, 0.5)


def test_equilibrium_holds_in_full_model():
    model = six_node_model()
    gains = six_node_gains()
    for k in range(2):
        eq = solve_equilibrium(model, gains, schedule().epoch(k))
        state = eq.state()
        v = state.z_tilde + model.z_o
        i_inj = nominal_injection(model, gains, state.z_tilde, state.sigma_d, state.sigma_q)
        rates = full_rhs(model, TrueState(v=v, i_line=line_equilibrium(model, v)), i_inj)
        assert np.max(np.abs(rates.v)) < 1e-6, k


def test_newton_steps_are_damped():
    model = six_node_model()
    eq = solve_equilibrium(model, six_node_gains(), schedule().epoch(0))
    # the balance is linear in sigma_d here; an undamped step would finish in one
    assert 1 < eq.iterations < MAX_NEWTON_ITERATIONS
    assert eq.residual < 1e-8


def test_unbounded_margins_stay_valid_json():
    model = NetworkModel.build(node_count=1, edges=[], nominal_P=500.0, nominal_Q=400.0,
                               dP_max=500.0, dQ_max=400.0, v_max=6.0, constraint_center=109.5)
    gains = GainSet.build(1, K=15.3, K_d=80.0, k_Id=50.0, k_Iq=50.0, e_bar=0.2, delta=1.0, z_tilde_m=5.0)
    bundle = certify_all(model, gains, np.array([8.0]),
                         CertifyOptions(n_boundary=90, n_disturbance=4, z_samples=3))
    assert not bundle.passed
    assert [c.name for c in bundle.failing()] == ["hurwitz"]
    data = json.loads(json.dumps(bundle.to_dict(), allow_nan=False))
    entry = next(c for c in data["certificates"] if c["name"] == "hurwitz")
    assert entry["margin"] is None
    assert entry["margin_reason"] == "no interior equilibrium to linearize"


def test_error_model_cross_check():
    unloaded = NetworkModel.build(node_count=6, edges=six_node_topology(), line_resistance=0.5,
                                  line_inductance=0.02, dP_max=500.0, dQ_max=400.0,
                                  constraint_center=109.5)
    clean = error_model_check(unloaded, six_node_gains(), samples=20)
    assert clean.informative and clean.passed
    assert clean.detail["count"] == 0
    assert clean.detail["components"] == 20 * 12

    loaded = error_model_check(six_node_model(), six_node_gains(), samples=20)
    assert loaded.informative
    assert loaded.detail["components"] == 20 * 12
    print(f"✓ closed-form error model differs in {loaded.detail['count']} of 240 components under load")


def test_certify_all_six_node():
    bundle = certify_all(six_node_model(), six_node_gains(), schedule(),
                         CertifyOptions(n_boundary=180, n_disturbance=8, z_samples=5))
    assert bundle.passed, [c.name for c in bundle.failing()]
    names = [c.name for c in bundle.certificates]
    assert "hurwitz_epoch_0" in names and "hurwitz_epoch_1" in names
    assert bundle.get("equilibrium_epoch_2").informative
    assert bundle.region_of_attraction["radius"] == [6.0] * 6
    agreement = bundle.get("error_model_agreement")
    assert agreement.informative and agreement.detail["components"] > 0
    data = json.loads(json.dumps(bundle.to_dict(), allow_nan=False))
    assert data["pass"] is True
    assert "OVERALL: PASS" in bundle.summary_table()


def test_certify_all_reports_single_failure_when_gain_halved():
    bundle = certify_all(six_node_model(), six_node_gains(K=7.3), schedule(),
                         CertifyOptions(n_boundary=180, n_disturbance=8, z_samples=5))
    assert not bundle.passed
    assert [c.name for c in bundle.failing()] == ["boundary_invariance"]


def main():
    """Run all tests"""
    print("=" * 70)
    print("CERTIFICATE TESTS")
    print("=" * 70)
    try:
        test_threshold_margin()
        test_alpha_surrogate_values()
        test_passive_boundary_margin()
        test_boundary_invariance_designed_gain()
        test_boundary_invariance_fails_with_witness()
        test_set_inclusion_margin()
        test_hurwitz_examples()
        test_interior_equilibrium()
        test_jacobian_matches_finite_differences()
        test_saturated_equilibrium_in_last_epoch()
        test_informative_checks()
        test_uneven_tubes_break_boundary_invariance()
        test_coupling_bound_vanishes_for_equal_tubes()
        test_boundary_margin_shrinks_with_larger_deviations()
        test_hurwitz_margin_survives_orthogonal_similarity()
        test_hurwitz_damped_oscillator()
        test_equilibrium_holds_in_full_model()
        test_newton_steps_are_damped()
        test_unbounded_margins_stay_valid_json()
        test_error_model_cross_check()
        test_certify_all_six_node()
        test_certify_all_reports_single_failure_when_gain_halved()
        print("✅ ALL TESTS PASSED")
        return 0
    except AssertionError as e:
        print(f"\n❌ TEST FAILED: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
