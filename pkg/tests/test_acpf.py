import math

import numpy as np
import pytest

from opfx.grid.acpf import OperatingPoint, PowerFlowModel, branch_flows, injections, jacobians, residuals
from opfx.grid.case_model import AdmittanceStructure, build_admittance


def point(net, v, theta, p_gen=None, q_gen=None):
    return OperatingPoint(
        v=list(v),
        theta=list(theta),
        p_gen=list(p_gen if p_gen is not None else [0.0] * net.n_gen),
        q_gen=list(q_gen if q_gen is not None else [0.0] * net.n_gen),
    )


class TestInjections:
    def test_flat_start_lossless_has_no_active_power(self, case5):
        Y = AdmittanceStructure.from_matrices(np.zeros((5, 5)), build_admittance(case5).B)
        x = point(case5, [1.0] * 5, [0.0] * 5)
        p, _ = injections(x, Y)
        np.testing.assert_allclose(p, 0.0, atol=1e-15)

    def test_hand_evaluated_two_bus(self):
        Y = AdmittanceStructure.from_matrices([[1.0, -1.0], [-1.0, 1.0]], [[-5.0, 5.0], [5.0, -5.0]])
        x = OperatingPoint(v=[1.1, 1.0], theta=[0.0, 0.0], p_gen=[], q_gen=[])
        p, q = injections(x, Y)
        assert p[0] == pytest.approx(0.11)
        assert q[0] == pytest.approx(0.55)


class TestBranchFlows:
    def test_symmetric_endpoints_carry_nothing(self, two_bus):
        x = point(two_bus, [1.02, 1.02], [0.05, 0.05])
        p_ij, _, p_ji, _ = branch_flows(x, two_bus.branches[0], two_bus)
        assert p_ij == pytest.approx(0.0, abs=1e-12)
        assert p_ji == pytest.approx(0.0, abs=1e-12)

    def test_lossless_line(self, two_bus):
        x = point(two_bus, [1.0, 1.0], [0.1, 0.0])
        p_ij, _, p_ji, _ = branch_flows(x, two_bus.branches[0], two_bus)
        assert p_ij == pytest.approx(10 * math.sin(0.1))
        assert p_ij == pytest.approx(0.9983, abs=1e-4)
        assert p_ij + p_ji == pytest.approx(0.0, abs=1e-12)

    def test_lossless_line_any_state(self, two_bus):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = point(two_bus, rng.uniform(0.9, 1.1, 2), rng.uniform(-0.3, 0.3, 2))
            p_ij, _, p_ji, _ = branch_flows(x, two_bus.branches[0], two_bus)
            assert p_ij + p_ji == pytest.approx(0.0, abs=1e-12)

    def test_matches_vectorised_branch_power(self, case5, interior_point):
        model = PowerFlowModel(case5)
        x = interior_point(model, np.random.default_rng(0))
        s_from, s_to = model.branch_power(x)
        op = OperatingPoint.from_vector(x, case5)
        for k, br in enumerate(case5.branches):
            p_ij, q_ij, p_ji, q_ji = branch_flows(op, br, case5)
            assert (p_ij, q_ij) == pytest.approx((s_from[k].real, s_from[k].imag), abs=1e-12)
            assert (p_ji, q_ji) == pytest.approx((s_to[k].real, s_to[k].imag), abs=1e-12)


class TestResiduals:
    def test_voltage_above_bound(self, case3):
        x = point(case3, [1.0, 1.15, 1.0], [0.0] * 3)
        report = residuals(x, case3)
        assert report.v_upper[1] == pytest.approx(-0.05)
        assert report.max_violation >= 0.05

    def test_slack_angle(self, case3):
        x = point(case3, [1.0] * 3, [0.1, 0.0, 0.0])
        assert residuals(x, case3).slack_angle[0] == pytest.approx(0.1)

    def test_zero_injection_identity(self, case5):
        buses = [bus.model_copy(update={"p_load": 0.0, "q_load": 0.0}) for bus in case5.buses]
        unloaded = case5.model_copy(update={"buses": buses})
        rng = np.random.default_rng(1)
        x = point(unloaded, rng.uniform(0.9, 1.1, 5), rng.uniform(-0.2, 0.2, 5))
        report = residuals(x, unloaded)
        p, q = injections(x, build_admittance(unloaded))
        np.testing.assert_allclose(report.balance_p, -p, atol=1e-12)
        np.testing.assert_allclose(report.balance_q, -q, atol=1e-12)

    def test_losses_match_branch_flows(self, case5):
        rng = np.random.default_rng(2)
        x = point(case5, rng.uniform(0.9, 1.1, 5), rng.uniform(-0.2, 0.2, 5))
        p, _ = injections(x, build_admittance(case5))
        losses = sum(
            flows[0] + flows[2] for flows in (branch_flows(x, br, case5) for br in case5.branches)
        )
        assert p.sum() == pytest.approx(losses, abs=1e-9)

    def test_thermal_rows_only_for_rated_branches(self, two_bus):
        report = residuals(point(two_bus, [1.0, 1.0], [0.0, 0.0]), two_bus)
        assert len(report.thermal_from) == 0
        assert len(report.angle_lower) == 1

    def test_thermal_slack_is_squared(self, two_bus):
        rated = two_bus.model_copy(update={"branches": [two_bus.branches[0].model_copy(update={"s_max": 0.5})]})
        x = point(rated, [1.0, 1.0], [0.1, 0.0])
        report = residuals(x, rated)
        p_ij, q_ij, _, _ = branch_flows(x, rated.branches[0], rated)
        assert report.thermal_from[0] == pytest.approx(0.25 - (p_ij**2 + q_ij**2))

    def test_dimension_mismatch(self, case3):
        with pytest.raises(ValueError):
            residuals(OperatingPoint(v=[1.0], theta=[0.0], p_gen=[], q_gen=[]), case3)


class TestJacobians:
    @pytest.mark.parametrize("case_name", ["case3", "case5"])
    def test_matches_finite_differences(self, case_name, request, interior_point, fd_jacobian):
        net = request.getfixturevalue(case_name)
        model = PowerFlowModel(net)
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = interior_point(model, rng)
            jac = jacobians(OperatingPoint.from_vector(x, net), net)
            fd_eq = fd_jacobian(lambda z: model.report(z).equalities, x)
            fd_ineq = fd_jacobian(lambda z: model.report(z).inequalities, x)
            np.testing.assert_allclose(jac.equality.toarray(), fd_eq, rtol=1e-5, atol=1e-5)
            np.testing.assert_allclose(jac.inequality.toarray(), fd_ineq, rtol=1e-5, atol=1e-5)

    def test_rated_branch_thermal_derivatives(self, two_bus, fd_jacobian):
        rated = two_bus.model_copy(update={"branches": [two_bus.branches[0].model_copy(update={"s_max": 0.5, "r": 0.02, "b": 0.1})]})
        model = PowerFlowModel(rated)
        x = np.array([1.03, 0.97, 0.0, -0.12, 0.6, 0.2])
        fd = fd_jacobian(model.branch_inequality_values, x)
        np.testing.assert_allclose(model.branch_inequality_jacobian(x).toarray(), fd, rtol=1e-5, atol=1e-6)

    def test_generator_columns(self, case5):
        model = PowerFlowModel(case5)
        jac = model.equality_jacobian(model.flat_start()).toarray()
        nb, ng = case5.n_bus, case5.n_gen
        gen_bus = case5.gen_bus_positions()
        for j in range(ng):
            column = jac[:nb, 2 * nb + j]
            expected = np.zeros(nb)
            expected[gen_bus[j]] = 1.0
            np.testing.assert_array_equal(column, expected)

    def test_structural_zeros_follow_neighbours(self, case5, interior_point):
        model = PowerFlowModel(case5)
        x = interior_point(model, np.random.default_rng(11))
        jac = model.equality_jacobian(x).toarray()
        nb = case5.n_bus
        neighbours = build_admittance(case5).neighbors
        for i in range(nb):
            for k in range(nb):
                if k not in neighbours[i]:
                    assert jac[i, nb + k] == 0.0
                    assert jac[i, k] == 0.0
