"""
Shared fixtures: bundled networks, small libraries and a finite-difference oracle
"""
from pathlib import Path

import numpy as np
import pytest

from opfx.grid.acpf import PowerFlowModel
from opfx.grid.case_model import Branch, Bus, Generator, Network, parse_case
from opfx.models.library import Provenance, SolutionLibrary

CASES_DIR = Path(__file__).resolve().parent.parent / "opfx" / "data" / "cases"
FD_STEP = 1e-6


@pytest.fixture(scope="session")
def cases_dir() -> Path:
    return CASES_DIR


@pytest.fixture(scope="session")
def case3_text() -> str:
    return (CASES_DIR / "case3.m").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def case5_text() -> str:
    return (CASES_DIR / "case5.m").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def case3(case3_text) -> Network:
    return parse_case(case3_text, name="case3")


@pytest.fixture(scope="session")
def case5(case5_text) -> Network:
    return parse_case(case5_text, name="case5")


@pytest.fixture
def two_bus() -> Network:
    """Slack bus 1 with a generator, load bus 2, one lossless line x = 0.1"""
    return Network(
        name="two_bus",
        base_mva=100.0,
        slack_bus=1,
        buses=[
            Bus(index=1, bus_type=3, v_min=0.9, v_max=1.1),
            Bus(index=2, bus_type=1, p_load=0.5, q_load=0.1, v_min=0.9, v_max=1.1),
        ],
        generators=[Generator(bus=1, p_min=0.0, p_max=2.0, q_min=-1.0, q_max=1.0)],
        branches=[Branch(from_bus=1, to_bus=2, r=0.0, x=0.1)],
    )


def random_interior_point(model: PowerFlowModel, rng: np.random.Generator) -> np.ndarray:
    """Point strictly inside the variable bounds, angles within +-0.2 rad"""
    lower, upper = model.bounds()
    x = model.flat_start()
    nb = model.n_bus
    finite = np.isfinite(lower) & np.isfinite(upper) & (upper > lower)
    span = np.where(finite, upper - lower, 0.0)
    x = np.where(finite, lower + span * rng.uniform(0.1, 0.9, len(x)), x)
    x[nb : 2 * nb] = rng.uniform(-0.2, 0.2, nb)
    return x


@pytest.fixture
def interior_point():
    return random_interior_point


def central_difference(fun, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Jacobian of a vector (or scalar) function by central differences, one column per coordinate"""
    x = np.asarray(x, dtype=float)
    base = np.atleast_1d(fun(x))
    jac = np.zeros((len(base), len(x)))
    for k in range(len(x)):
        step = np.zeros_like(x)
        step[k] = h
        jac[:, k] = (np.atleast_1d(fun(x + step)) - np.atleast_1d(fun(x - step))) / (2 * h)
    return jac


@pytest.fixture
def fd_jacobian():
    return central_difference


def library_from_points(net: Network, points, objective_id: str = "f03") -> SolutionLibrary:
    lib = SolutionLibrary.empty(net, objective_id)
    for i, x in enumerate(points):
        lib = lib.append(np.asarray(x, dtype=float), net, Provenance(objective_id=objective_id, iteration=i, status="Optimal"))
    return lib


@pytest.fixture
def make_library():
    return library_from_points
