import math

import numpy as np
import pytest

from opfx.errors import CaseParseError, CaseReferenceError, SingularBranchError
from opfx.grid.case_model import (
    DEFAULT_ANGLE_LIMIT,
    AdmittanceStructure,
    Branch,
    Bus,
    Network,
    build_admittance,
    parse_case,
    validate,
)

TWO_BUS_CASE = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
    2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
    {gen_bus} 0 0 100 -100 1 100 1 200 0;
];
mpc.gencost = [
    2 0 0 2 10 0;
];
mpc.branch = [
    1 2 0.0 0.1 0.0 {rate} 0 0 0 0 1 {angmin} {angmax};
];
"""


def tiny_case(gen_bus=1, rate=0, angmin=0, angmax=0):
    return TWO_BUS_CASE.format(gen_bus=gen_bus, rate=rate, angmin=angmin, angmax=angmax)


class TestParseCase:
    def test_case3_counts(self, case3):
        assert (case3.n_bus, case3.n_gen, len(case3.branches)) == (3, 3, 3)

    def test_case5_counts(self, case5):
        assert (case5.n_bus, case5.n_gen, len(case5.branches)) == (5, 5, 6)

    def test_per_unit_conversion(self, case3):
        assert case3.base_mva == 100.0
        assert case3.slack_bus == 1
        assert case3.buses[0].p_load == pytest.approx(1.1)
        assert case3.buses[2].q_load == pytest.approx(0.5)
        assert case3.generators[0].p_max == pytest.approx(20.0)
        assert case3.branches[1].s_max == pytest.approx(0.5)
        assert case3.branches[0].angle_max == pytest.approx(math.radians(30))

    def test_multiple_generators_on_one_bus_kept(self, case5):
        assert [gen.bus for gen in case5.generators] == [1, 1, 3, 4, 5]
        assert case5.generator_bus_positions() == [0, 2, 3, 4]

    def test_unknown_generator_bus(self):
        with pytest.raises(CaseReferenceError, match="bus 99"):
            parse_case(tiny_case(gen_bus=99))

    def test_duplicate_bus_reports_line(self):
        text = tiny_case().replace("2 1 50 10", "1 1 50 10")
        with pytest.raises(CaseParseError) as err:
            parse_case(text)
        assert err.value.line == 6
        assert "duplicate bus 1" in str(err.value)

    def test_bad_number_reports_line(self):
        text = tiny_case().replace("0.1 0.0", "0.1x 0.0")
        with pytest.raises(CaseParseError) as err:
            parse_case(text)
        assert err.value.line == 15

    def test_unclosed_matrix(self):
        text = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n"
        with pytest.raises(CaseParseError, match="never closed"):
            parse_case(text)

    def test_zero_rating_and_angles_defaults(self):
        net = parse_case(tiny_case())
        assert net.branches[0].s_max == 0.0
        assert net.branches[0].angle_min == -DEFAULT_ANGLE_LIMIT
        assert net.branches[0].angle_max == DEFAULT_ANGLE_LIMIT

    def test_explicit_angle_limits_in_radians(self):
        net = parse_case(tiny_case(angmin=-20, angmax=15))
        assert net.branches[0].angle_min == pytest.approx(math.radians(-20))
        assert net.branches[0].angle_max == pytest.approx(math.radians(15))

    def test_json_round_trip(self, case5):
        assert Network.from_json(case5.to_json()) == case5
        assert Network.from_json(case5.to_json()).fingerprint() == case5.fingerprint()


class TestBuildAdmittance:
    def test_single_lossless_line(self):
        net = parse_case(tiny_case())
        Y = build_admittance(net)
        np.testing.assert_allclose(Y.B.toarray(), [[-10.0, 10.0], [10.0, -10.0]])
        np.testing.assert_allclose(Y.G.toarray(), np.zeros((2, 2)))
        assert Y.neighbors == (frozenset({0, 1}), frozenset({0, 1}))

    def test_empty_branch_list(self):
        net = Network(
            base_mva=100.0,
            slack_bus=1,
            buses=[
                Bus(index=1, bus_type=3, v_min=0.9, v_max=1.1, g_shunt=0.2),
                Bus(index=2, v_min=0.9, v_max=1.1),
            ],
            generators=[],
            branches=[],
        )
        Y = build_admittance(net)
        assert Y.neighbors == (frozenset({0}), frozenset({1}))
        np.testing.assert_allclose(Y.G.toarray(), [[0.2, 0.0], [0.0, 0.0]])

    def test_untapped_network_is_symmetric(self, case5):
        Y = build_admittance(case5)
        G, B = Y.G.toarray(), Y.B.toarray()
        np.testing.assert_allclose(G, G.T, atol=1e-12)
        np.testing.assert_allclose(B, B.T, atol=1e-12)

    def test_series_conductance_rows_sum_to_zero(self, case5):
        G = build_admittance(case5).G.toarray()
        for i in range(case5.n_bus):
            off_diagonal = G[i].sum() - G[i, i]
            assert G[i, i] == pytest.approx(-off_diagonal, abs=1e-9)

    def test_neighbors_follow_sparsity(self, case5):
        Y = build_admittance(case5)
        pattern = (abs(Y.ybus.toarray()) > 0)
        for i, neighbours in enumerate(Y.neighbors):
            assert neighbours == frozenset(np.flatnonzero(pattern[i]).tolist())

    def test_phase_shifter_breaks_symmetry(self):
        net = parse_case(tiny_case())
        shifted = net.model_copy(
            update={"branches": [net.branches[0].model_copy(update={"shift": 0.1, "tap": 1.05})]}
        )
        G = build_admittance(shifted).G.toarray()
        assert G[0, 1] == pytest.approx(-G[1, 0])
        assert G[0, 1] != pytest.approx(G[1, 0])

    def test_zero_impedance_rejected(self):
        net = parse_case(tiny_case())
        broken = net.model_copy(update={"branches": [Branch(from_bus=1, to_bus=2, r=0.0, x=0.0)]})
        with pytest.raises(SingularBranchError):
            build_admittance(broken)

    def test_from_matrices(self):
        Y = AdmittanceStructure.from_matrices(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.zeros((2, 2)))
        assert Y.n_bus == 2
        assert Y.neighbors == (frozenset({0, 1}), frozenset({0, 1}))


class TestValidate:
    def test_well_formed(self, case5):
        assert validate(case5) == []

    def test_inverted_voltage_bounds(self, case5):
        buses = [bus.model_copy() for bus in case5.buses]
        buses[2] = buses[2].model_copy(update={"v_min": 1.1, "v_max": 0.9})
        violations = validate(case5.model_copy(update={"buses": buses}))
        assert len(violations) == 1
        assert violations[0].element == "bus"
        assert violations[0].index == 3

    def test_two_slack_buses(self, case5):
        buses = [bus.model_copy() for bus in case5.buses]
        buses[0] = buses[0].model_copy(update={"bus_type": 3})
        violations = validate(case5.model_copy(update={"buses": buses}))
        assert len(violations) == 1
        assert violations[0].field == "slack_bus"
