import numpy as np
import pandas as pd
import pytest
from scipy.spatial.distance import cdist

from opfx.errors import ArtifactMismatchError
from opfx.grid.acpf import OperatingPoint, injections
from opfx.grid.case_model import build_admittance
from opfx.metrics.set_metrics import (
    DistanceTable,
    InjectionSet,
    NormKind,
    Progression,
    Score,
    directed_hausdorff,
    hausdorff,
    pick_best,
    prefix_hausdorff,
    progression,
    project,
    rank_points,
    score,
    score_frame,
)
from opfx.models.objective_catalog import default_catalog
from opfx.sampling.exhaustive_sampler import ExhaustiveConfig, ExhaustivePoint, ExhaustiveSet, run
from opfx.sampling.sequential_collector import CollectorConfig, collect


def brute_force_hausdorff(A, B):
    """Pairwise loop, one distance at a time"""

    def directed(X, Y):
        worst = 0.0
        for a in X:
            nearest = min(cdist(a[None, :], b[None, :])[0, 0] for b in Y)
            worst = max(worst, nearest)
        return worst

    return max(directed(A, B), directed(B, A))


def exhaustive_from_points(net, points, m=1, t=10):
    xe = ExhaustiveSet.empty(net, m, t)
    for x in points:
        xe.points.append(ExhaustivePoint(point=OperatingPoint.from_vector(np.asarray(x, dtype=float), net), partition=0))
    return xe


class TestHausdorff:
    def test_identical_sets(self):
        A = np.random.default_rng(0).normal(size=(7, 3))
        assert hausdorff(A, A) == 0.0

    def test_three_four_five(self):
        assert hausdorff(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == pytest.approx(5.0)

    def test_directed_is_asymmetric(self):
        A = np.array([[0.0], [10.0]])
        B = np.array([[0.0]])
        assert directed_hausdorff(B, A) == 0.0
        assert directed_hausdorff(A, B) == 10.0
        assert hausdorff(A, B) == 10.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            dim = int(rng.integers(1, 21))
            A = rng.normal(size=(rng.integers(1, 51), dim))
            B = rng.normal(size=(rng.integers(1, 51), dim))
            assert hausdorff(A, B) == brute_force_hausdorff(A, B)

    def test_metric_properties(self):
        rng = np.random.default_rng(2)
        A, B, C = (rng.normal(size=(5, 2)) for _ in range(3))
        assert hausdorff(A, B) == hausdorff(B, A)
        assert hausdorff(A, C) <= hausdorff(A, B) + hausdorff(B, C) + 1e-12

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            hausdorff(np.zeros((0, 2)), np.ones((1, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hausdorff(np.zeros((1, 2)), np.ones((1, 3)))


class TestPrefixHausdorff:
    def test_matches_per_prefix_recomputation(self):
        rng = np.random.default_rng(4)
        S, X = rng.normal(size=(12, 3)), rng.normal(size=(30, 3))
        curve, directed = prefix_hausdorff(S, X)
        for i in range(1, len(S) + 1):
            assert curve[i - 1] == pytest.approx(hausdorff(S[:i], X), abs=1e-12)
            assert directed[i - 1] == pytest.approx(directed_hausdorff(X, S[:i]), abs=1e-12)

    def test_directed_never_increases(self):
        rng = np.random.default_rng(5)
        _, directed = prefix_hausdorff(rng.normal(size=(20, 2)), rng.normal(size=(50, 2)))
        assert np.all(np.diff(directed) <= 0)

    def test_progression_from_artifacts(self, case3, make_library):
        rng = np.random.default_rng(6)
        lib = make_library(case3, rng.normal(size=(6, 12)))
        xe = exhaustive_from_points(case3, rng.normal(size=(9, 12)))
        prog = progression(lib, xe, NormKind.PQ)
        S = project(lib.matrix(), NormKind.PQ, 3, 3)
        X = project(xe.matrix(), NormKind.PQ, 3, 3)
        assert prog.hausdorff[-1] == pytest.approx(hausdorff(S, X))
        frame = prog.to_frame()
        assert list(frame.columns) == ["iteration", "H", "H_directed"]
        assert frame["iteration"].tolist() == [1, 2, 3, 4, 5, 6]

    def test_progression_rejects_other_network(self, case3, case5, make_library):
        lib = make_library(case3, np.ones((2, 12)))
        xe = exhaustive_from_points(case5, np.ones((2, 20)))
        with pytest.raises(ArtifactMismatchError):
            progression(lib, xe, NormKind.PQ)

    def test_round_trips_through_pydantic(self):
        prog = Progression(norm=NormKind.PV, hausdorff=[2.0, 1.0], directed=[2.0, 0.5])
        assert Progression.model_validate_json(prog.model_dump_json()) == prog


class TestProject:
    def test_generator_columns(self):
        x = np.arange(12, dtype=float)
        np.testing.assert_array_equal(project(x, NormKind.PQ, 3, 3), [[6, 7, 8, 9, 10, 11]])
        np.testing.assert_array_equal(project(x, NormKind.PV, 3, 3), [[6, 7, 8, 0, 1, 2]])
        np.testing.assert_array_equal(project(x, NormKind.VTHETA, 3, 3), [[0, 1, 2, 3, 4, 5]])
        np.testing.assert_array_equal(project(x, NormKind.THETA, 3, 3), [[3, 4, 5]])

    def test_bus_injections(self, case3):
        Y = build_admittance(case3)
        x = np.array([1.0, 1.02, 0.98, 0.0, 0.05, -0.04, 0, 0, 0, 0, 0, 0])
        projected = project(x, NormKind.PQ, 3, 3, InjectionSet.BUS, Y)
        p, q = injections(OperatingPoint.from_vector(x, case3), Y)
        np.testing.assert_allclose(projected[0], np.concatenate([p, q]), atol=1e-12)

    def test_bus_injections_need_admittance(self):
        with pytest.raises(ValueError):
            project(np.zeros(12), NormKind.P, 3, 3, InjectionSet.BUS)


class TestPickBest:
    def test_smallest_distance_wins(self):
        assert pick_best({"f36": 0.05, "f32": 0.31}) == ("f36", 0.05)

    def test_single_entry(self):
        assert pick_best({"f07": 1.5}) == ("f07", 1.5)

    def test_tie_goes_to_smaller_id(self):
        assert pick_best({"f38": 0.2, "f12": 0.2, "f20": 0.4}) == ("f12", 0.2)

    def test_unfinished_runs_skipped(self):
        assert pick_best({"f01": None, "f02": 3.0}) == ("f02", 3.0)
        with pytest.raises(ValueError):
            pick_best({"f01": None})

    def test_duplicate_row_rejected(self):
        table = DistanceTable()
        table.add("f36", "case3", NormKind.PQ, 0.05)
        table.add("f36", "case5", NormKind.PQ, 0.07)
        table.add("f36", "case3", NormKind.PV, 0.02)
        with pytest.raises(ValueError, match="f36 on case3"):
            table.add("f36", "case3", NormKind.PQ, 0.06)
        assert len(table.rows) == 3

    def test_table_slice(self):
        table = DistanceTable()
        table.add("f36", "case3", NormKind.PQ, 0.05)
        table.add("f32", "case3", NormKind.PQ, 0.31)
        assert pick_best(table) == ("f36", 0.05)
        table.add("f32", "case3", NormKind.PV, 0.01)
        with pytest.raises(ValueError):
            pick_best(table)
        assert table.best("case3", NormKind.PV) == ("f32", 0.01)


class TestRankPoints:
    def test_top_ten_then_nothing(self):
        values = {f"f{k:02d}": float(k) for k in range(1, 13)}
        points = rank_points(values)
        assert [points[f"f{k:02d}"] for k in range(1, 13)] == [10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, 0]

    def test_ties_share_rank(self):
        points = rank_points({"a": 1.0, "b": 1.0, "c": 2.0})
        assert points == {"a": 10, "b": 10, "c": 8}

    def test_dnf_earns_nothing(self):
        assert rank_points({"a": None, "b": 4.0}) == {"a": 0, "b": 10}


class TestScore:
    def test_sums_across_systems(self):
        first, second = DistanceTable(), DistanceTable()
        for objective, pq, pv in (("f36", 0.1, 0.3), ("f03", 0.2, 0.1)):
            first.add(objective, "case3", NormKind.PQ, pq)
            first.add(objective, "case3", NormKind.PV, pv)
        second.add("f36", "case5", NormKind.PQ, 0.5)
        second.add("f03", "case5", NormKind.PQ, None)
        scores = {s.objective: s for s in score([first, second])}
        assert (scores["f36"].pq, scores["f36"].pv, scores["f36"].overall) == (20, 9, 29)
        assert (scores["f03"].pq, scores["f03"].pv, scores["f03"].overall) == (9, 10, 19)

    def test_two_systems_keep_their_own_rows(self):
        first, second = DistanceTable(), DistanceTable()
        first.add("f36", "case3", NormKind.PQ, 0.1)
        first.add("f03", "case3", NormKind.PQ, 0.2)
        second.add("f36", "case5", NormKind.PQ, 0.5)
        second.add("f03", "case5", NormKind.PQ, 0.4)
        scores = {s.objective: s.pq for s in score([first, second])}
        assert scores == {"f36": 19, "f03": 19}
        assert sum(scores.values()) == 38

    def test_rows_sharing_a_label_are_rejected(self):
        first, second = DistanceTable(), DistanceTable()
        first.add("f36", "system", NormKind.PQ, 0.1)
        second.add("f36", "system", NormKind.PQ, 0.5)
        with pytest.raises(ValueError, match="duplicate"):
            score([first, second])

    def test_only_pq_and_pv_are_scored(self):
        table = DistanceTable()
        table.add("f01", "case3", NormKind.V, 1.0)
        with pytest.raises(ValueError, match="PQ and PV"):
            score(table, norms=(NormKind.PQ, NormKind.V))

    def test_empty_table_contributes_nothing(self):
        table = DistanceTable()
        table.add("f01", "case3", NormKind.PQ, 1.0)
        assert score([table, DistanceTable()]) == [Score(objective="f01", pq=10, pv=0)]

    def test_frame_layout(self):
        frame = score_frame([Score(objective="f01", pq=3, pv=9), Score(objective="f02", pq=5, pv=1)])
        assert list(frame.columns) == ["Func", "PQ score", "Func", "PV score", "Func", "Overall"]
        assert frame.iloc[:, 0].tolist() == ["f02", "f01"]
        assert frame.iloc[:, 2].tolist() == ["f01", "f02"]
        assert frame.iloc[:, 5].tolist() == [12, 6]

    def test_table_frame_round_trip(self):
        table = DistanceTable()
        table.add("f01", "case3", NormKind.PQ, 0.1)
        table.add("f02", "case3", NormKind.PQ, None)
        frame = table.to_frame()
        assert frame["value"].tolist() == ["0.1", "DNF"]
        restored = DistanceTable.from_frame(frame.astype(str))
        assert restored == table
        assert isinstance(frame, pd.DataFrame)


@pytest.fixture(scope="module")
def case3_exhaustive(case3):
    return run(case3, ExhaustiveConfig(m=3, t=5), show_progress=False)


@pytest.mark.slow
class TestAgainstExhaustiveSet:
    @pytest.mark.parametrize("objective_id", ["f36", "f03", "f32"])
    @pytest.mark.parametrize("norm", [NormKind.PQ, NormKind.PV, NormKind.VTHETA])
    def test_directed_distance_never_increases(self, case3, case3_exhaustive, objective_id, norm):
        lib = collect(case3, CollectorConfig(objective_id=objective_id, n=20), show_progress=False)
        prog = progression(lib, case3_exhaustive, norm)
        assert len(prog.directed) == len(lib)
        assert np.all(np.diff(prog.directed) <= 0)

    def test_log_objectives_beat_exp_objectives(self, case5):
        xe = run(case5, ExhaustiveConfig(m=4, t=20), show_progress=False)
        catalog = default_catalog()

        def final_distance(objective_id):
            lib = collect(case5, CollectorConfig(objective_id=objective_id, n=100), show_progress=False)
            return progression(lib, xe, NormKind.PQ).hausdorff[-1] if len(lib) > 1 else None

        log_family = {oid: final_distance(oid) for oid in ("f03", "f18", "f36", "f37", "f38")}
        exp_family = [final_distance(spec.id) for spec in catalog.specs() if spec.family == "exp"]
        finished = [d for d in exp_family if d is not None]
        assert finished
        beating = [oid for oid, d in log_family.items() if d is not None and d < min(finished)]
        assert len(beating) >= 4, log_family
