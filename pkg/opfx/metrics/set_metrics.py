"""
Set distances between solution libraries and exhaustive sets, and the function scoring
"""
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist

from opfx.errors import ArtifactMismatchError
from opfx.grid.case_model import AdmittanceStructure
from opfx.models.library import SolutionLibrary
from opfx.sampling.exhaustive_sampler import ExhaustiveSet

TOP_N = 10


class NormKind(str, Enum):
    P = "P"
    Q = "Q"
    V = "V"
    THETA = "Theta"
    PQ = "PQ"
    PV = "PV"
    VTHETA = "VTheta"


class InjectionSet(str, Enum):
    GENERATOR = "generator"
    BUS = "bus"


_COMPONENTS = {
    NormKind.P: ("p",),
    NormKind.Q: ("q",),
    NormKind.V: ("v",),
    NormKind.THETA: ("theta",),
    NormKind.PQ: ("p", "q"),
    NormKind.PV: ("p", "v"),
    NormKind.VTHETA: ("v", "theta"),
}


def project(
    points: np.ndarray,
    kind: NormKind,
    n_bus: int,
    n_gen: int,
    injection_set: InjectionSet = InjectionSet.GENERATOR,
    Y: Optional[AdmittanceStructure] = None,
) -> np.ndarray:
    """
    Columns of the decision vectors that a norm compares

    With the bus injection set, P and Q are the nodal injections of every bus,
    which needs the admittance structure ``Y``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = points[:, :n_bus]
    theta = points[:, n_bus : 2 * n_bus]
    if injection_set is InjectionSet.BUS:
        if Y is None:
            raise ValueError("bus injections need the network admittance")
        V = v * np.exp(1j * theta)
        S = V * np.conj((Y.ybus @ V.T).T)
        p, q = S.real, S.imag
    else:
        p = points[:, 2 * n_bus : 2 * n_bus + n_gen]
        q = points[:, 2 * n_bus + n_gen :]
    columns = {"p": p, "q": q, "v": v, "theta": theta}
    return np.hstack([columns[name] for name in _COMPONENTS[kind]])


def _check_sets(A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("Hausdorff distance needs two non-empty point sets")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"point sets have different dimensions ({A.shape[1]} vs {B.shape[1]})")
    return A, B


def directed_hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    """
    max over a in A of min over b in B of ||a - b||

    ``A`` and ``B`` are already projected onto a norm.
    """
    A, B = _check_sets(A, B)
    return float(np.max(np.min(cdist(A, B), axis=1)))


def hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    """Symmetric Hausdorff distance: the larger of both directed distances"""
    A, B = _check_sets(A, B)
    D = cdist(A, B)
    return float(max(np.max(np.min(D, axis=1)), np.max(np.min(D, axis=0))))


class Progression(BaseModel):
    """Hausdorff distance and exhaustive-to-library directed distance for every library prefix"""

    norm: NormKind
    hausdorff: List[float]
    directed: List[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "iteration": np.arange(1, len(self.hausdorff) + 1),
                "H": self.hausdorff,
                "H_directed": self.directed,
            }
        )


def prefix_hausdorff(library: np.ndarray, exhaustive: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Hausdorff curve over library prefixes

    Args:
        library: Projected library points in iteration order
        exhaustive: Projected exhaustive-set points

    Returns:
        (H per prefix, directed exhaustive -> prefix per prefix)
    """
    S, X = _check_sets(library, exhaustive)
    D = cdist(X, S)
    directed_xs = np.max(np.minimum.accumulate(D, axis=1), axis=0)
    directed_sx = np.maximum.accumulate(np.min(D, axis=0))
    return np.maximum(directed_sx, directed_xs), directed_xs


def progression(
    lib: SolutionLibrary,
    xe: ExhaustiveSet,
    kind: NormKind,
    injection_set: InjectionSet = InjectionSet.GENERATOR,
    Y: Optional[AdmittanceStructure] = None,
) -> Progression:
    """Hausdorff progression of a library, in iteration order, against an exhaustive set"""
    if lib.network_fingerprint != xe.network_fingerprint:
        raise ArtifactMismatchError("library and exhaustive set come from different networks")
    S = project(lib.matrix(), kind, lib.n_bus, lib.n_gen, injection_set, Y)
    X = project(xe.matrix(), kind, xe.n_bus, xe.n_gen, injection_set, Y)
    curve, directed = prefix_hausdorff(S, X)
    return Progression(norm=kind, hausdorff=curve.tolist(), directed=directed.tolist())


# -- tables and scoring -------------------------------------------------------

class DistanceRow(BaseModel):
    objective: str
    system: str
    norm: NormKind
    value: Optional[float] = Field(None, ge=0, description="None marks a run that did not finish")


class DistanceTable(BaseModel):
    rows: List[DistanceRow] = Field(default_factory=list)

    def add(self, objective: str, system: str, norm: NormKind, value: Optional[float]) -> None:
        """Append one row; a second row for the same (objective, system, norm) raises ValueError"""
        norm = NormKind(norm)
        if any(r.objective == objective and r.system == system and r.norm == norm for r in self.rows):
            raise ValueError(f"duplicate distance row for {objective} on {system} ({norm.value})")
        self.rows.append(DistanceRow(objective=objective, system=system, norm=norm, value=value))

    def systems(self) -> List[str]:
        return list(dict.fromkeys(row.system for row in self.rows))

    def norms(self) -> List[NormKind]:
        return list(dict.fromkeys(row.norm for row in self.rows))

    def slice(self, system: str, norm: NormKind) -> Dict[str, Optional[float]]:
        return {r.objective: r.value for r in self.rows if r.system == system and r.norm == norm}

    def best(self, system: str, norm: NormKind) -> Tuple[str, float]:
        return pick_best(self.slice(system, norm))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "objective": [r.objective for r in self.rows],
                "system": [r.system for r in self.rows],
                "norm": [r.norm.value for r in self.rows],
                "value": ["DNF" if r.value is None else repr(r.value) for r in self.rows],
            }
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "DistanceTable":
        table = cls()
        for row in df.itertuples(index=False):
            value = None if str(row.value) == "DNF" else float(row.value)
            table.add(str(row.objective), str(row.system), NormKind(row.norm), value)
        return table

    @classmethod
    def concat(cls, tables: Iterable["DistanceTable"]) -> "DistanceTable":
        merged = cls()
        for table in tables:
            for row in table.rows:
                merged.add(row.objective, row.system, row.norm, row.value)
        return merged


def pick_best(values: Union[DistanceTable, Mapping[str, Optional[float]]]) -> Tuple[str, float]:
    """
    Objective with the smallest distance; exact ties go to the lexicographically smaller id

    A DistanceTable must hold a single (system, norm) slice.
    """
    if isinstance(values, DistanceTable):
        slices = {(r.system, r.norm) for r in values.rows}
        if len(slices) != 1:
            raise ValueError(f"pick_best needs one (system, norm) slice, got {len(slices)}")
        values = values.slice(*slices.pop())
    finished = [(value, objective) for objective, value in values.items() if value is not None]
    if not finished:
        raise ValueError("no finished objective to pick from")
    value, objective = min(finished)
    return objective, value


def rank_points(values: Mapping[str, Optional[float]], top: int = TOP_N) -> Dict[str, int]:
    """
    Points for one ranking: rank r in 1..top earns top + 1 - r

    Ties share the better rank and the next rank is skipped. Unfinished runs earn nothing.
    """
    finished = sorted(v for v in values.values() if v is not None)
    points = {}
    for objective, value in values.items():
        if value is None:
            points[objective] = 0
            continue
        rank = 1 + sum(1 for other in finished if other < value)
        points[objective] = max(0, top + 1 - rank)
    return points


class Score(BaseModel):
    objective: str
    pq: int = 0
    pv: int = 0

    @property
    def overall(self) -> int:
        return self.pq + self.pv


def score(
    tables: Union[DistanceTable, Sequence[DistanceTable]],
    norms: Sequence[NormKind] = (NormKind.PQ, NormKind.PV),
) -> List[Score]:
    """Points per objective summed across systems; overall is PQ plus PV"""
    unsupported = [NormKind(n).value for n in norms if NormKind(n) not in (NormKind.PQ, NormKind.PV)]
    if unsupported:
        raise ValueError(f"scoring ranks PQ and PV only, got {unsupported}")
    norms = [NormKind(n) for n in norms]
    table = tables if isinstance(tables, DistanceTable) else DistanceTable.concat(tables)
    scores: Dict[str, Score] = {}
    for row in table.rows:
        scores.setdefault(row.objective, Score(objective=row.objective))
    for system in table.systems():
        for norm in norms:
            for objective, points in rank_points(table.slice(system, norm)).items():
                entry = scores[objective]
                if norm is NormKind.PQ:
                    entry.pq += points
                elif norm is NormKind.PV:
                    entry.pv += points
    return sorted(scores.values(), key=lambda s: (-s.overall, s.objective))


def score_frame(scores: Sequence[Score]) -> pd.DataFrame:
    """Three side-by-side rankings: PQ score, PV score and overall, each sorted descending"""
    by_pq = sorted(scores, key=lambda s: (-s.pq, s.objective))
    by_pv = sorted(scores, key=lambda s: (-s.pv, s.objective))
    by_all = sorted(scores, key=lambda s: (-s.overall, s.objective))
    frame = pd.DataFrame(
        {
            "Func_PQ": [s.objective for s in by_pq],
            "PQ score": [s.pq for s in by_pq],
            "Func_PV": [s.objective for s in by_pv],
            "PV score": [s.pv for s in by_pv],
            "Func": [s.objective for s in by_all],
            "Overall": [s.overall for s in by_all],
        }
    )
    frame.columns = ["Func", "PQ score", "Func", "PV score", "Func", "Overall"]
    return frame
