"""
Catalog of distance-to-library objective functions

Every objective has the shape::

    f(x) = sum_{j in library} sum_{g in groups} transform(metric(x_g, X_{g,j})) ** outer_power

Per library point the group terms are added left to right in ``groups`` order, and
the per-point totals are then reduced with ``np.sum``.
"""
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from opfx.errors import DuplicateObjectiveError, UnknownObjectiveError
from opfx.models.library import SolutionLibrary

GUARD_EPS = 1e-12
EXP_CLAMP = 50.0


class Metric(str, Enum):
    SQUARED_EUCLIDEAN = "squared-euclidean"
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    CUBED_DIFFERENCE = "cubed-difference"
    SQUARED_ABS_DIFFERENCE = "squared-abs-difference"
    MAX_DIFFERENCE = "max-difference"
    COSINE = "cosine"


class Transform(str, Enum):
    IDENTITY = "identity"
    LOG_E = "log_e"
    LOG_10 = "log_10"
    LOG_2 = "log_2"
    EXP = "exp"
    EXP_10 = "exp_10"
    EXP_2 = "exp_2"

    @property
    def is_log(self) -> bool:
        return self in (Transform.LOG_E, Transform.LOG_10, Transform.LOG_2)

    @property
    def is_exp(self) -> bool:
        return self in (Transform.EXP, Transform.EXP_10, Transform.EXP_2)


class Group(str, Enum):
    P_GEN = "P_gen"
    Q_GEN = "Q_gen"
    V_ALL = "V_all"
    THETA_ALL = "Theta_all"


class ObjectiveSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    metric: Metric
    transform: Transform
    groups: Tuple[Group, ...] = Field(..., min_length=1)
    outer_power: int = Field(1, ge=1)
    note: str = "sum over library points of transformed group terms"

    @field_validator("groups")
    @classmethod
    def _distinct_groups(cls, groups):
        if len(set(groups)) != len(groups):
            raise ValueError("variable groups must be distinct")
        return groups

    @property
    def family(self) -> str:
        if self.transform.is_log:
            return "log"
        if self.transform.is_exp:
            return "exp"
        return "identity"


def group_slice(group: Group, n_bus: int, n_gen: int) -> slice:
    """Location of a variable group inside the decision vector"""
    return {
        Group.V_ALL: slice(0, n_bus),
        Group.THETA_ALL: slice(n_bus, 2 * n_bus),
        Group.P_GEN: slice(2 * n_bus, 2 * n_bus + n_gen),
        Group.Q_GEN: slice(2 * n_bus + n_gen, 2 * n_bus + 2 * n_gen),
    }[group]


# -- metrics: value per library row and derivative w.r.t. x_g -----------------

def _metric(metric: Metric, xg: np.ndarray, Xg: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    D = xg[None, :] - Xg
    if metric is Metric.SQUARED_EUCLIDEAN:
        return np.sum(D * D, axis=1), 2.0 * D
    if metric is Metric.EUCLIDEAN:
        m = np.sqrt(np.sum(D * D, axis=1))
        safe = np.where(m > 0, m, 1.0)
        return m, np.where(m[:, None] > 0, D / safe[:, None], 0.0)
    if metric is Metric.MANHATTAN:
        return np.sum(np.abs(D), axis=1), np.sign(D)
    if metric is Metric.CUBED_DIFFERENCE:
        return np.sum(D * D * D, axis=1), 3.0 * D * D
    if metric is Metric.SQUARED_ABS_DIFFERENCE:
        U = xg[None, :] ** 2 - Xg**2
        m = np.sqrt(np.sum(np.abs(U), axis=1))
        safe = np.where(m > 0, m, 1.0)
        grad = np.sign(U) * xg[None, :] / safe[:, None]
        return m, np.where(m[:, None] > 0, grad, 0.0)
    if metric is Metric.MAX_DIFFERENCE:
        idx = np.argmax(D, axis=1)
        rows = np.arange(D.shape[0])
        grad = np.zeros_like(D)
        grad[rows, idx] = 1.0
        return D[rows, idx], grad
    if metric is Metric.COSINE:
        a = np.linalg.norm(xg)
        b = np.linalg.norm(Xg, axis=1)
        dot = Xg @ xg
        ok = (a > 0) & (b > 0)
        denom = np.where(ok, a * b, 1.0)
        c = np.where(ok, dot / denom, 0.0)
        dc = np.where(
            ok[:, None],
            Xg / denom[:, None] - (c / (a * a if a > 0 else 1.0))[:, None] * xg[None, :],
            0.0,
        )
        return 1.0 - c, -dc
    raise ValueError(f"unknown metric {metric}")


_LOGS: Dict[Transform, Tuple[Callable, float]] = {
    Transform.LOG_E: (np.log, 1.0),
    Transform.LOG_10: (np.log10, np.log(10.0)),
    Transform.LOG_2: (np.log2, np.log(2.0)),
}
_EXPS: Dict[Transform, float] = {
    Transform.EXP: 1.0,
    Transform.EXP_10: float(np.log(10.0)),
    Transform.EXP_2: float(np.log(2.0)),
}


def _transform(
    transform: Transform, m: np.ndarray, eps: float, clamp: float
) -> Tuple[np.ndarray, np.ndarray]:
    if transform is Transform.IDENTITY:
        return m, np.ones_like(m)
    if transform.is_log:
        fn, scale = _LOGS[transform]
        active = m > eps
        value = fn(np.maximum(m, eps))
        slope = np.where(active, 1.0 / (np.where(active, m, 1.0) * scale), 0.0)
        return value, slope
    rate = _EXPS[transform]
    exponent = m * rate
    clipped = exponent >= clamp
    value = np.exp(np.minimum(exponent, clamp))
    return value, np.where(clipped, 0.0, rate * value)


class BoundObjective:
    """Objective evaluator with the library points pre-split by group"""

    def __init__(
        self,
        spec: ObjectiveSpec,
        points: np.ndarray,
        n_bus: int,
        n_gen: int,
        eps: float = GUARD_EPS,
        clamp: float = EXP_CLAMP,
    ):
        if points.shape[0] == 0:
            raise ValueError("objective needs a non-empty library")
        self.spec = spec
        self.eps = eps
        self.clamp = clamp
        self.slices = [group_slice(g, n_bus, n_gen) for g in spec.groups]
        self.blocks = [np.asarray(points[:, s], dtype=float) for s in self.slices]
        self.width = 2 * n_bus + 2 * n_gen

    def _terms(self, x: np.ndarray):
        for s, block in zip(self.slices, self.blocks):
            m, dm = _metric(self.spec.metric, x[s], block)
            t, dt = _transform(self.spec.transform, m, self.eps, self.clamp)
            k = self.spec.outer_power
            if k != 1:
                dt = k * t ** (k - 1) * dt
                t = t**k
            yield s, t, dt, dm

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        per_point = None
        for _, t, _, _ in self._terms(x):
            per_point = t if per_point is None else per_point + t
        return float(np.sum(per_point))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        grad = np.zeros(self.width)
        for s, _, dt, dm in self._terms(x):
            grad[s] += dm.T @ dt
        return grad

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.value(x), self.gradient(x)


def bind(spec: ObjectiveSpec, lib: SolutionLibrary, eps: float = GUARD_EPS, clamp: float = EXP_CLAMP) -> BoundObjective:
    return BoundObjective(spec, lib.matrix(), lib.n_bus, lib.n_gen, eps, clamp)


def evaluate(spec: ObjectiveSpec, x: np.ndarray, lib: SolutionLibrary) -> float:
    """Objective value of ``x`` against the library"""
    return bind(spec, lib).value(x)


def gradient(spec: ObjectiveSpec, x: np.ndarray, lib: SolutionLibrary) -> np.ndarray:
    """Analytic gradient; zero where the log guard or exp clamp is active"""
    return bind(spec, lib).gradient(x)


# -- the catalog -------------------------------------------------------------

_M, _T, _G = Metric, Transform, Group
_PQ = (_G.P_GEN, _G.Q_GEN)
_V = (_G.V_ALL,)
_VT = (_G.V_ALL, _G.THETA_ALL)

# (id, metric, transform, groups, outer_power)
_BUILTIN = [
    ("f01", _M.SQUARED_EUCLIDEAN, _T.IDENTITY, _PQ, 1),
    ("f02", _M.CUBED_DIFFERENCE, _T.IDENTITY, _PQ, 1),
    ("f03", _M.SQUARED_EUCLIDEAN, _T.LOG_E, _PQ, 1),
    ("f04", _M.SQUARED_EUCLIDEAN, _T.LOG_10, _PQ, 1),
    ("f05", _M.SQUARED_EUCLIDEAN, _T.LOG_2, _PQ, 1),
    ("f06", _M.SQUARED_EUCLIDEAN, _T.EXP, _PQ, 1),
    ("f07", _M.SQUARED_EUCLIDEAN, _T.EXP_10, _PQ, 1),
    ("f08", _M.MANHATTAN, _T.LOG_E, _PQ, 1),
    ("f09", _M.MANHATTAN, _T.EXP, _PQ, 1),
    ("f10", _M.CUBED_DIFFERENCE, _T.EXP, _PQ, 1),
    ("f11", _M.SQUARED_ABS_DIFFERENCE, _T.IDENTITY, _PQ, 1),
    ("f12", _M.SQUARED_ABS_DIFFERENCE, _T.LOG_E, _PQ, 1),
    ("f13", _M.SQUARED_ABS_DIFFERENCE, _T.LOG_10, _PQ, 1),
    ("f14", _M.SQUARED_ABS_DIFFERENCE, _T.EXP, _PQ, 1),
    ("f15", _M.SQUARED_ABS_DIFFERENCE, _T.EXP_10, _PQ, 1),
    ("f16", _M.EUCLIDEAN, _T.IDENTITY, _PQ, 1),
    ("f17", _M.EUCLIDEAN, _T.LOG_E, _PQ, 1),
    ("f18", _M.EUCLIDEAN, _T.LOG_10, _PQ, 1),
    ("f19", _M.EUCLIDEAN, _T.LOG_2, _PQ, 1),
    ("f20", _M.EUCLIDEAN, _T.EXP, _PQ, 1),
    ("f21", _M.EUCLIDEAN, _T.EXP_10, _PQ, 1),
    ("f22", _M.EUCLIDEAN, _T.EXP_2, _PQ, 1),
    ("f23", _M.COSINE, _T.IDENTITY, _PQ, 1),
    ("f24", _M.MAX_DIFFERENCE, _T.LOG_E, _PQ, 1),
    ("f25", _M.EUCLIDEAN, _T.IDENTITY, _V, 1),
    ("f26", _M.EUCLIDEAN, _T.LOG_E, _V, 1),
    ("f27", _M.EUCLIDEAN, _T.LOG_10, _V, 1),
    ("f28", _M.EUCLIDEAN, _T.LOG_2, _V, 1),
    ("f29", _M.EUCLIDEAN, _T.EXP, _V, 1),
    ("f30", _M.MANHATTAN, _T.LOG_E, _V, 1),
    ("f31", _M.MANHATTAN, _T.LOG_10, _V, 1),
    ("f32", _M.MANHATTAN, _T.LOG_2, _V, 1),
    ("f33", _M.EUCLIDEAN, _T.LOG_E, _VT, 1),
    ("f34", _M.EUCLIDEAN, _T.LOG_2, _VT, 1),
    ("f35", _M.SQUARED_EUCLIDEAN, _T.EXP, _VT, 2),
    ("f36", _M.EUCLIDEAN, _T.LOG_E, (_G.V_ALL, _G.THETA_ALL, _G.P_GEN, _G.Q_GEN), 1),
    ("f37", _M.EUCLIDEAN, _T.LOG_E, (_G.P_GEN, _G.Q_GEN, _G.V_ALL), 1),
    ("f38", _M.MANHATTAN, _T.LOG_E, (_G.P_GEN, _G.Q_GEN, _G.V_ALL), 1),
    # combinations the numbered list does not cover
    ("g01", _M.EUCLIDEAN, _T.LOG_10, (_G.V_ALL, _G.THETA_ALL, _G.P_GEN, _G.Q_GEN), 1),
    ("g02", _M.EUCLIDEAN, _T.LOG_2, (_G.V_ALL, _G.THETA_ALL, _G.P_GEN, _G.Q_GEN), 1),
    ("g03", _M.MANHATTAN, _T.LOG_E, (_G.V_ALL, _G.THETA_ALL, _G.P_GEN, _G.Q_GEN), 1),
    ("g04", _M.SQUARED_EUCLIDEAN, _T.EXP_2, _PQ, 1),
    ("g05", _M.COSINE, _T.IDENTITY, _V, 1),
    ("g06", _M.SQUARED_EUCLIDEAN, _T.LOG_E, (_G.V_ALL, _G.THETA_ALL, _G.P_GEN, _G.Q_GEN), 1),
]


def normalize_id(objective_id: str) -> str:
    """``f3`` and ``F03`` both name ``f03``"""
    objective_id = objective_id.strip().lower()
    if len(objective_id) > 1 and objective_id[0] in "fg" and objective_id[1:].isdigit():
        return f"{objective_id[0]}{int(objective_id[1:]):02d}"
    return objective_id


class ObjectiveCatalog:
    """Registry of objective specs; extend only before a run starts"""

    def __init__(self, specs: Optional[List[ObjectiveSpec]] = None):
        self._specs: Dict[str, ObjectiveSpec] = {}
        for spec in specs or []:
            self.register(spec)

    @classmethod
    def builtin(cls) -> "ObjectiveCatalog":
        return cls(
            [
                ObjectiveSpec(id=oid, metric=metric, transform=transform, groups=groups, outer_power=power)
                for oid, metric, transform, groups, power in _BUILTIN
            ]
        )

    def register(self, spec: ObjectiveSpec) -> str:
        if spec.id in self._specs:
            raise DuplicateObjectiveError(f"objective id {spec.id!r} is already registered")
        self._specs[spec.id] = spec
        return spec.id

    def get(self, objective_id: str) -> ObjectiveSpec:
        key = normalize_id(objective_id)
        if key not in self._specs:
            key = objective_id
        try:
            return self._specs[key]
        except KeyError:
            raise UnknownObjectiveError(f"unknown objective {objective_id!r}") from None

    def __contains__(self, objective_id: str) -> bool:
        return normalize_id(objective_id) in self._specs or objective_id in self._specs

    def specs(self) -> List[ObjectiveSpec]:
        return list(self._specs.values())

    def manifest(self) -> List[dict]:
        return [spec.model_dump(mode="json") for spec in self._specs.values()]

    def register_yaml(self, path: Union[str, Path]) -> List[str]:
        """Register every spec listed under ``objectives:`` in a YAML file"""
        with open(path, "r", encoding="utf-8") as fh:
            document = yaml.safe_load(fh) or {}
        ids = []
        for raw in document.get("objectives", []):
            ids.append(self.register(ObjectiveSpec(**raw)))
        logger.info(f"Registered {len(ids)} objectives from {path}")
        return ids


_default_catalog = ObjectiveCatalog.builtin()


def default_catalog() -> ObjectiveCatalog:
    return _default_catalog


def catalog() -> List[ObjectiveSpec]:
    """All objective specs in registration order"""
    return _default_catalog.specs()


def get_objective(objective_id: str) -> ObjectiveSpec:
    return _default_catalog.get(objective_id)


def register(spec: ObjectiveSpec) -> str:
    """Add a spec to the default catalog"""
    return _default_catalog.register(spec)
