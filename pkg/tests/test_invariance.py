import json

import numpy as np
import pytest

from invlab import catalog
from invlab.invariance import (AuditBudget, BoundaryPoint, ScanError, Tolerances, boundary_scan,
                               condition_b_check, condition_c_check, condition_e_check,
                               deterministic_invariance_check, equivalence_audit,
                               mc_invariance_estimate, random_v_controls, truncate_control,
                               wong_zakai_invariance_estimate)
from invlab.paths import ConstantPolicy, TimeGrid, deterministic_field, ode_solve

ONE = np.ones(1)
SMALL = AuditBudget(mc_paths=32, wz_paths=8)


def on_halfspace(x2=0.3):
    K = catalog.halfspace()
    return K, BoundaryPoint(np.array([0.0, x2]), K.test_function())


def expr(b, sigma, n=2):
    return catalog.expression_system(n, len(sigma[0]), b, sigma, [[1.0]])


# --------------------------------------------------------------- scan


def test_scan_disk():
    pts = boundary_scan(catalog.ball(2), 2, 8, seed=1)
    assert len(pts) == 8
    assert all(abs(np.linalg.norm(p.x) - 1) <= 1e-10 for p in pts)


def test_scan_halfspace():
    pts = boundary_scan(catalog.halfspace(), 2, 6, seed=2)
    assert all(abs(p.x[0]) <= 1e-12 for p in pts)


def test_scan_degenerate_gradient():
    K = catalog.expression_set("x1^2", 2)
    with pytest.raises(ScanError):
        boundary_scan(K, 2, 4, seed=3)


def test_scan_reproducible():
    a = boundary_scan(catalog.ball(3), 3, 5, seed=4)
    b = boundary_scan(catalog.ball(3), 3, 5, seed=4)
    assert [p.to_list() for p in a] == [p.to_list() for p in b]


# ------------------------------------------------------------ conditions


def test_b_circle(circle, disk):
    for bp in boundary_scan(disk, 2, 8, seed=5):
        assert condition_b_check(circle, bp).passed


def test_b_tangent_noise():
    K, bp = on_halfspace()
    rep = condition_b_check(expr(["-1", "0"], [["0"], ["1"]]), bp)
    assert rep.passed and rep.witness["max_generator"] == pytest.approx(-1.0)


def test_b_crossing_noise():
    K, bp = on_halfspace()
    rep = condition_b_check(expr(["0", "0"], [["1"], ["0"]]), bp)
    assert not rep.checks["orthogonality"]
    assert rep.witness["max_orthogonality"] == pytest.approx(1.0)


def test_c_circle(circle, disk):
    rep = condition_c_check(circle, BoundaryPoint(np.array([1.0, 0.0]), disk.test_function()))
    assert rep.passed and rep.worst_violation <= 1e-12


def test_c_outward_drift():
    K = catalog.ball(2)
    sys = expr(["2*x1", "2*x2"], [["0"], ["0"]])  # b~ = Dg
    rep = condition_c_check(sys, BoundaryPoint(np.array([0.6, 0.8]), K.test_function()))
    assert not rep.checks["generator"] and rep.checks["orthogonality"]
    assert rep.worst_violation == pytest.approx(4.0)  # |Dg|^2 on the unit circle


def test_c_crossing():
    K, bp = on_halfspace()
    rep = condition_c_check(expr(["0", "0"], [["1"], ["0"]]), bp)
    assert not rep.checks["orthogonality"]


def test_c_tangent_pair_passes():
    # sigma^1 = (0, 1), sigma^2 = (0, x2): both tangent to {x1 = 0}
    K, bp = on_halfspace()
    rep = condition_c_check(expr(["0", "0"], [["0", "0"], ["1", "x2"]]), bp)
    assert rep.passed


def test_c_asymmetric_A_detected():
    # sigma^1 = (x2, 0), sigma^2 = (0, 1): orthogonal at the origin only, a_21 = 1, a_12 = 0
    K, bp = on_halfspace(0.0)
    rep = condition_c_check(expr(["0", "0"], [["x2", "0"], ["0", "1"]]), bp)
    assert rep.checks["orthogonality"] and not rep.checks["A_symmetric"]


def test_e_circle(circle, disk):
    rep = condition_e_check(circle, BoundaryPoint(np.array([0.0, -1.0]), disk.test_function()))
    assert rep.passed and rep.witness["v"] is None


def test_e_crossing_witness():
    K, bp = on_halfspace()
    rep = condition_e_check(expr(["0", "0"], [["1"], ["0"]]), bp)
    assert not rep.checks["bounded"]
    assert rep.witness["v"] == [1.0]


def test_e_inward_without_noise():
    K, bp = on_halfspace()
    assert condition_e_check(catalog.inward_drift(), bp, v_probe_radius=100.0).passed


def test_reports_are_json():
    K, bp = on_halfspace()
    for check in (condition_b_check, condition_c_check, condition_e_check):
        json.dumps(check(catalog.halfspace_crossing(), bp).to_dict(), allow_nan=False)


# ------------------------------------------------------- deterministic


def test_circle_rotation_stays(circle, disk):
    assert deterministic_invariance_check(circle, disk, [1.0, 0.0], ONE, lambda t: ONE) <= 1e-6


def test_inward_flow_stays():
    d = deterministic_invariance_check(catalog.inward_drift(), catalog.halfspace(), [0.0, 0.0], ONE,
                                       lambda t: ONE)
    assert d <= 1e-9


def test_outward_flow_escapes():
    sys = expr(["1", "0"], [["0"], ["0"]])
    d = deterministic_invariance_check(sys, catalog.halfspace(), [0.0, 0.0], ONE, lambda t: ONE)
    assert d == pytest.approx(1.0, abs=1e-9)


def test_truncation():
    v = lambda t: np.array([0.3, -0.2])  # noqa: E731
    np.testing.assert_array_equal(truncate_control(v, 1)(0.0), v(0.0))
    np.testing.assert_allclose(truncate_control(lambda t: np.array([3.0, 0.0]), 1)(0.0), [1.0, 0.0])
    with pytest.raises(ValueError):
        truncate_control(v, 0.5)


def test_truncated_trajectories_converge(circle):
    v = lambda t: np.array([3.0 * np.sin(5 * t)])  # noqa: E731
    grid = TimeGrid(1.0, 1e-3)

    def run(ctrl):
        return ode_solve(deterministic_field(circle, lambda t: ONE, ctrl), [1.0, 0.0], grid).states[0]

    full = run(v)
    gaps = [np.max(np.abs(run(truncate_control(v, n)) - full)) for n in (1, 2, 4)]
    assert gaps[0] > gaps[1] > gaps[2] == 0.0


def test_random_v_controls_shapes():
    ctrls = random_v_controls(2, 5, np.random.default_rng(0))
    assert len(ctrls) == 5
    assert all(np.asarray(c(0.3)).shape == (2,) for _, c in ctrls)
    assert np.linalg.norm(dict(ctrls)["truncated-1"](0.7)) <= 1 + 1e-12
    assert np.linalg.norm(dict(ctrls)["truncated-2"](0.7)) <= 2 + 1e-12


# -------------------------------------------------------- Monte Carlo


def test_mc_inward_zero():
    est = mc_invariance_estimate(catalog.inward_drift(), catalog.halfspace(), [0.0, 0.0],
                                 ConstantPolicy((1.0,)), N=50)
    assert est.max_checkpoint_mean <= 1e-9


def test_mc_circle_refines(circle, disk):
    coarse = mc_invariance_estimate(circle, disk, [1.0, 0.0], ConstantPolicy((1.0,)), dt=1e-3, N=500,
                                    seed=1)
    fine = mc_invariance_estimate(circle, disk, [1.0, 0.0], ConstantPolicy((1.0,)), dt=5e-4, N=500,
                                  seed=2)
    assert coarse.mean_final <= 0.05
    assert fine.mean_final < coarse.mean_final


def test_mc_crossing_escapes():
    est = mc_invariance_estimate(catalog.halfspace_crossing(), catalog.halfspace(), [0.0, 0.0],
                                 ConstantPolicy((1.0,)), N=500, seed=3)
    assert est.frac_exceed >= 0.3


def test_wz_estimates():
    circle = catalog.circle()
    assert wong_zakai_invariance_estimate(circle, catalog.ball(2), [1.0, 0.0], ONE, 8, 8, 0) <= 1e-5
    assert wong_zakai_invariance_estimate(catalog.inward_drift(), catalog.halfspace(), [0.0, 0.0],
                                          ONE, 8, 8, 0) <= 1e-9
    assert wong_zakai_invariance_estimate(catalog.halfspace_crossing(), catalog.halfspace(),
                                          [0.0, 0.0], ONE, 16, 16, 0) >= 0.1


# ------------------------------------------------------------- audit


def test_audit_circle():
    rep = equivalence_audit(catalog.circle(), catalog.ball(2), n_boundary=4, seed=7, budget=SMALL)
    assert rep.consistent and rep.invariant and rep.exit_code == 0
    assert rep.verdict == "invariant, all checks agree"
    assert all(all(p["flags"].values()) for p in rep.per_point)


def test_audit_crossing():
    rep = equivalence_audit(catalog.halfspace_crossing(), catalog.halfspace(), n_boundary=4, seed=7,
                            budget=SMALL)
    assert rep.verdict == "non-invariant, all checks agree"
    assert not any(any(p["flags"].values()) for p in rep.per_point)


def test_audit_inward_and_json():
    rep = equivalence_audit(catalog.inward_drift(), catalog.halfspace(), n_boundary=3, seed=1,
                            budget=SMALL)
    assert rep.invariant
    json.dumps(rep.to_dict(), allow_nan=False)


def test_audit_inconsistency_exit_code():
    # a too-strict Monte-Carlo tolerance makes the scheme error look like escape
    rep = equivalence_audit(catalog.circle(), catalog.ball(2), n_boundary=2, seed=7, budget=SMALL,
                            tols=Tolerances(mc=1e-12))
    assert not rep.consistent and rep.exit_code == 2
    assert rep.verdict.startswith("inconsistent")


def test_audit_threads_identical():
    sys, K = catalog.halfspace_tangent(), catalog.halfspace()
    a = equivalence_audit(sys, K, n_boundary=3, seed=5, budget=SMALL, threads=1).to_dict()
    b = equivalence_audit(sys, K, n_boundary=3, seed=5, budget=SMALL, threads=4).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_dual_systems_get_looser_default_tolerance(monkeypatch):
    monkeypatch.delenv("INVLAB_TOL", raising=False)
    sys = expr(["0", "0"], [["1"], ["0"]])
    assert Tolerances.for_system(sys).eq == 1e-4
    assert Tolerances.for_system(catalog.circle()).eq == 1e-8
    monkeypatch.setenv("INVLAB_TOL", "1e-6")
    assert Tolerances.for_system(sys).eq == 1e-6
