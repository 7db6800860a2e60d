"""
Sequential data collection

Grows a solution library by repeatedly maximising a distance-to-library objective
subject to the AC-OPF constraints, starting from a zero-objective feasible seed.
"""
from enum import Enum
from typing import Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from tenacity import Retrying, retry_if_result, stop_after_attempt
from tqdm import tqdm

from opfx.errors import SeedInfeasibleError, SolverAbort
from opfx.grid.acpf import PowerFlowModel
from opfx.grid.case_model import Network
from opfx.models.library import DnfEvent, Provenance, SolutionLibrary
from opfx.models.objective_catalog import EXP_CLAMP, GUARD_EPS, ObjectiveCatalog, bind, default_catalog
from opfx.solvers.nlp_solver import SolveResult, SolverOptions, find_feasible, solve

SEED_OBJECTIVE_ID = "zero"


class DnfPolicy(str, Enum):
    SKIP_AND_PERTURB = "skip-and-perturb"
    ABORT = "abort"


class CollectorConfig(BaseModel):
    objective_id: str
    n: int = Field(..., ge=1, description="Target number of library points")
    dnf_policy: DnfPolicy = DnfPolicy.SKIP_AND_PERTURB
    perturbation_scale: float = Field(1e-2, ge=0)
    seed: int = 0
    solver: SolverOptions = Field(default_factory=SolverOptions)
    guard_eps: float = Field(GUARD_EPS, gt=0)
    exp_clamp: float = Field(EXP_CLAMP, gt=0)


def seed_point(net: Network, opts: Optional[SolverOptions] = None, model: Optional[PowerFlowModel] = None) -> SolutionLibrary:
    """Library holding one zero-objective feasible point found from the flat start"""
    model = model or PowerFlowModel(net)
    result = find_feasible(model.problem(), model.flat_start(), opts)
    if result.status.is_dnf:
        logger.warning(f"No feasible seed for {net.name}: {result.status.value} ({result.message})")
        raise SeedInfeasibleError(f"{result.status.value}: no feasible point for {net.name}", result)
    provenance = Provenance(objective_id=SEED_OBJECTIVE_ID, iteration=0, status=result.status.value, objective_value=0.0)
    return SolutionLibrary.empty(net).append(result.x, net, provenance)


class SequentialCollector:
    """Runs the collection loop for one network and one objective"""

    def __init__(
        self,
        net: Network,
        cfg: CollectorConfig,
        catalog: Optional[ObjectiveCatalog] = None,
        show_progress: bool = True,
    ):
        self.net = net
        self.cfg = cfg
        self.spec = (catalog or default_catalog()).get(cfg.objective_id)
        self.model = PowerFlowModel(net)
        self.show_progress = show_progress

    def _start(self, lib: SolutionLibrary, rng: np.random.Generator) -> np.ndarray:
        """Last library point with every coordinate jittered"""
        x = lib.entries[-1].point.to_vector()
        if self.cfg.perturbation_scale > 0:
            x += rng.uniform(-1.0, 1.0, len(x)) * self.cfg.perturbation_scale
        return x

    def step(self, lib: SolutionLibrary, rng: Optional[np.random.Generator] = None) -> SolutionLibrary:
        """One maximisation against ``lib``; returns the grown library or one with a DNF event"""
        if len(lib) == 0:
            raise ValueError("step needs a non-empty library; call seed_point first")
        rng = rng if rng is not None else np.random.default_rng(self.cfg.seed + len(lib))
        objective = bind(self.spec, lib, self.cfg.guard_eps, self.cfg.exp_clamp)
        problem = self.model.problem(objective)
        attempts = {"n": 0}

        def attempt() -> SolveResult:
            attempts["n"] += 1
            return solve(problem, self._start(lib, rng), self.cfg.solver)

        retries = 2 if self.cfg.dnf_policy is DnfPolicy.SKIP_AND_PERTURB else 1
        result = Retrying(
            stop=stop_after_attempt(retries),
            retry=retry_if_result(lambda r: r.status.is_dnf),
            retry_error_callback=lambda state: state.outcome.result(),
        )(attempt)

        iteration = len(lib) + len(lib.dnf_events)
        if result.status.is_dnf:
            logger.warning(
                f"{self.spec.id} iteration {iteration}: {result.status.value} after {attempts['n']} attempts"
            )
            if self.cfg.dnf_policy is DnfPolicy.ABORT:
                raise SolverAbort(f"{self.spec.id} iteration {iteration}: {result.status.value}", result)
            event = DnfEvent(iteration=iteration, status=result.status.value, attempts=attempts["n"], message=result.message)
            return lib.with_dnf(event)

        provenance = Provenance(
            objective_id=self.spec.id,
            iteration=iteration,
            status=result.status.value,
            objective_value=objective.value(result.x),
        )
        return lib.append(result.x, self.net, provenance)

    def collect(self) -> SolutionLibrary:
        lib = seed_point(self.net, self.cfg.solver, self.model)
        lib = lib.model_copy(update={"objective_id": self.spec.id})
        rng = np.random.default_rng(self.cfg.seed)
        steps = self.cfg.n - 1
        with tqdm(total=steps, desc=f"{self.net.name} {self.spec.id}", disable=not self.show_progress or steps == 0) as bar:
            # every iteration either grows the library or records a DNF
            for _ in range(steps):
                lib = self.step(lib, rng)
                bar.update(1)
                bar.set_postfix(points=len(lib), dnf=len(lib.dnf_events))
        logger.info(
            f"Collected {len(lib)} points for {self.net.name} with {self.spec.id} ({len(lib.dnf_events)} DNF)"
        )
        return lib


def step(net: Network, lib: SolutionLibrary, cfg: CollectorConfig) -> SolutionLibrary:
    return SequentialCollector(net, cfg, show_progress=False).step(lib)


def collect(net: Network, cfg: CollectorConfig, show_progress: bool = True) -> SolutionLibrary:
    """Seed, then run ``cfg.n - 1`` steps; the result holds at most ``cfg.n`` points"""
    return SequentialCollector(net, cfg, show_progress=show_progress).collect()
