"""
Exhaustive rejection sampling over generator-voltage partitions

The generator-bus voltage hypercube is cut into ``m`` equal slices per generator bus.
Each of the resulting ``m**n`` boxes is probed for feasibility with a zero objective;
feasible boxes are then explored with up to ``T`` solves of the f03 repulsion
objective against every point found so far.
"""
import time
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from opfx.errors import PartitionCapError
from opfx.grid.acpf import OperatingPoint, PowerFlowModel
from opfx.grid.case_model import Network
from opfx.models.objective_catalog import EXP_CLAMP, GUARD_EPS, BoundObjective, default_catalog
from opfx.solvers.nlp_solver import SolveResult, SolverOptions, find_feasible, solve

EXPLORATION_OBJECTIVE_ID = "f03"
CONTAINMENT_SLACK = 1e-8


class VoltageBox(BaseModel):
    """One partition: voltage sub-ranges at the generator buses"""

    digits: List[int]
    bus_positions: List[int]
    lo: List[float]
    hi: List[float]

    @model_validator(mode="after")
    def _check_ranges(self):
        if not (len(self.digits) == len(self.bus_positions) == len(self.lo) == len(self.hi)):
            raise ValueError("digits, bus positions and ranges must have equal length")
        if any(lo > hi for lo, hi in zip(self.lo, self.hi)):
            raise ValueError("every voltage range needs lo <= hi")
        return self

    def ordinal(self, m: int) -> int:
        """Mixed-radix index; the first digit varies fastest"""
        return sum(d * m**k for k, d in enumerate(self.digits))

    def bounds(self, n_var: int) -> Tuple[np.ndarray, np.ndarray]:
        """Variable box over the full decision vector (only generator-bus voltages are tightened)"""
        lower = np.full(n_var, -np.inf)
        upper = np.full(n_var, np.inf)
        lower[self.bus_positions] = self.lo
        upper[self.bus_positions] = self.hi
        return lower, upper

    def contains(self, x: np.ndarray, slack: float = CONTAINMENT_SLACK) -> bool:
        v = np.asarray(x)[self.bus_positions]
        return bool(np.all(v >= np.asarray(self.lo) - slack) and np.all(v <= np.asarray(self.hi) + slack))


class ExhaustivePoint(BaseModel):
    point: OperatingPoint
    partition: int


class PartitionRecord(BaseModel):
    index: int
    digits: List[int]
    feasible: bool
    probe_status: str
    points: int = 0
    statuses: List[str] = Field(default_factory=list)
    solve_time: float = Field(0.0, exclude=True, description="Wall time; not part of the replay contract")


class ExhaustiveSet(BaseModel):
    network_fingerprint: str
    network_name: str = ""
    n_bus: int
    n_gen: int
    m: int
    t: int
    points: List[ExhaustivePoint] = Field(default_factory=list)
    partitions: List[PartitionRecord] = Field(default_factory=list)

    @classmethod
    def empty(cls, net: Network, m: int, t: int) -> "ExhaustiveSet":
        return cls(
            network_fingerprint=net.fingerprint(), network_name=net.name, n_bus=net.n_bus, n_gen=net.n_gen, m=m, t=t
        )

    def __len__(self) -> int:
        return len(self.points)

    def matrix(self) -> np.ndarray:
        width = 2 * self.n_bus + 2 * self.n_gen
        if not self.points:
            return np.zeros((0, width))
        return np.vstack([p.point.to_vector() for p in self.points])

    @property
    def feasible_fraction(self) -> float:
        if not self.partitions:
            return 0.0
        return sum(r.feasible for r in self.partitions) / len(self.partitions)


class ExhaustiveConfig(BaseModel):
    m: int = Field(..., ge=1, description="Divisions per generator bus")
    t: int = Field(..., ge=0, description="Exploration solves per feasible partition")
    partition_cap: int = Field(10**6, ge=1)
    duplicate_tol: float = Field(1e-6, ge=0)
    perturbation_scale: float = Field(1e-2, ge=0)
    seed: int = 0
    n_jobs: int = Field(1, ge=1)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    guard_eps: float = Field(GUARD_EPS, gt=0)
    exp_clamp: float = Field(EXP_CLAMP, gt=0)


def partition(net: Network, m: int, cap: int = 10**6) -> List[VoltageBox]:
    """
    Split the generator-voltage hypercube into ``m**n`` boxes

    Args:
        net: Network; ``n`` is its number of distinct generator buses
        m: Divisions per generator bus
        cap: Largest partition count accepted

    Returns:
        Boxes in mixed-radix order, first generator bus varying fastest
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    buses = net.generator_bus_positions()
    n = len(buses)
    count = m**n
    if count > cap:
        raise PartitionCapError(f"{m}^{n} = {count} partitions exceeds the cap of {cap}; use a smaller m")
    edges = [np.linspace(net.buses[b].v_min, net.buses[b].v_max, m + 1) for b in buses]
    boxes = []
    for ordinal in range(count):
        digits = [(ordinal // m**k) % m for k in range(n)]
        boxes.append(
            VoltageBox(
                digits=digits,
                bus_positions=buses,
                lo=[float(edges[k][d]) for k, d in enumerate(digits)],
                hi=[float(edges[k][d + 1]) for k, d in enumerate(digits)],
            )
        )
    return boxes


def _box_start(model: PowerFlowModel, box: VoltageBox) -> np.ndarray:
    """Box-midpoint generator voltages, zero angles, midpoint dispatch"""
    x = model.flat_start()
    x[box.bus_positions] = (np.asarray(box.lo) + np.asarray(box.hi)) / 2
    return x


def probe(net: Network, box: VoltageBox, opts: Optional[SolverOptions] = None, model: Optional[PowerFlowModel] = None) -> SolveResult:
    """Zero-objective solve restricted to ``box``; Optimal means the partition is feasible"""
    model = model or PowerFlowModel(net)
    box_lower, box_upper = box.bounds(model.n_var)
    return find_feasible(model.problem(box_lower=box_lower, box_upper=box_upper), _box_start(model, box), opts)


def _pq_distances(x: np.ndarray, points: np.ndarray, n_bus: int) -> np.ndarray:
    if points.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.norm(points[:, 2 * n_bus :] - x[2 * n_bus :], axis=1)


def explore(
    net: Network,
    box: VoltageBox,
    t: int,
    warm: ExhaustiveSet,
    cfg: Optional[ExhaustiveConfig] = None,
    probe_result: Optional[SolveResult] = None,
    model: Optional[PowerFlowModel] = None,
) -> List[OperatingPoint]:
    """
    Up to ``t`` repulsion solves inside a feasible box

    Every accepted point is appended to ``warm`` immediately, so later solves repel it.
    A point outside the box or within ``duplicate_tol`` of a known point is discarded but
    still uses up one of the ``t`` solves; a DNF ends the partition.
    Raises ValueError when the box is not feasible.
    """
    cfg = cfg or ExhaustiveConfig(m=warm.m, t=t)
    model = model or PowerFlowModel(net)
    if probe_result is None:
        probe_result = probe(net, box, cfg.solver, model)
    if probe_result.status.is_dnf:
        raise ValueError(f"partition {box.digits} is not feasible ({probe_result.status.value})")

    ordinal = box.ordinal(warm.m)
    spec = default_catalog().get(EXPLORATION_OBJECTIVE_ID)
    box_lower, box_upper = box.bounds(model.n_var)
    rng = np.random.default_rng(cfg.seed + ordinal)
    record = next((r for r in warm.partitions if r.index == ordinal), None)
    found: List[OperatingPoint] = []
    start = probe_result.x

    for _ in range(t):
        library = warm.matrix()
        if library.shape[0] == 0:
            x, status = probe_result.x, probe_result.status.value
        else:
            objective = BoundObjective(spec, library, warm.n_bus, warm.n_gen, cfg.guard_eps, cfg.exp_clamp)
            problem = model.problem(objective, box_lower, box_upper)
            jitter = rng.uniform(-1.0, 1.0, model.n_var) * cfg.perturbation_scale
            result = solve(problem, start + jitter, cfg.solver)
            status = result.status.value
            if record is not None:
                record.statuses.append(status)
            if result.status.is_dnf:
                logger.warning(f"Partition {ordinal}: {status}, stopping exploration")
                break
            x = result.x

        if not box.contains(x):
            logger.warning(f"Partition {ordinal}: solution left its box, discarded")
            continue
        if np.any(_pq_distances(x, library, net.n_bus) <= cfg.duplicate_tol):
            logger.debug(f"Partition {ordinal}: duplicate point discarded")
            continue
        point = OperatingPoint.from_vector(x, net)
        warm.points.append(ExhaustivePoint(point=point, partition=ordinal))
        found.append(point)
        start = x

    if record is not None:
        record.points += len(found)
    return found


def run(net: Network, cfg: ExhaustiveConfig, show_progress: bool = True) -> ExhaustiveSet:
    """Probe every partition, then explore the feasible ones in partition order"""
    boxes = partition(net, cfg.m, cfg.partition_cap)
    model = PowerFlowModel(net)
    xe = ExhaustiveSet.empty(net, cfg.m, cfg.t)
    logger.info(f"Exhaustive sampling of {net.name}: {len(boxes)} partitions, up to {cfg.t} points each")

    def timed_probe(box):
        started = time.perf_counter()
        return probe(net, box, cfg.solver, model), time.perf_counter() - started

    if cfg.n_jobs > 1:
        probes = Parallel(n_jobs=cfg.n_jobs)(delayed(timed_probe)(box) for box in boxes)
    else:
        probes = [timed_probe(box) for box in tqdm(boxes, desc="probe", disable=not show_progress)]

    for box, (result, elapsed) in zip(boxes, probes):
        xe.partitions.append(
            PartitionRecord(
                index=box.ordinal(cfg.m),
                digits=box.digits,
                feasible=not result.status.is_dnf,
                probe_status=result.status.value,
                solve_time=elapsed,
            )
        )

    feasible = [(box, result) for box, (result, _) in zip(boxes, probes) if not result.status.is_dnf]
    for box, result in tqdm(feasible, desc="explore", disable=not show_progress or cfg.t == 0):
        started = time.perf_counter()
        explore(net, box, cfg.t, xe, cfg, probe_result=result, model=model)
        xe.partitions[box.ordinal(cfg.m)].solve_time += time.perf_counter() - started

    logger.info(
        f"{len(feasible)}/{len(boxes)} partitions feasible ({xe.feasible_fraction:.1%}), {len(xe)} points"
    )
    return xe
