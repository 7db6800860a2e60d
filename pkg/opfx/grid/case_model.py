"""
MATPOWER case parsing, per-unit network model and bus admittance assembly
"""
import hashlib
import math
import re
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from scipy import sparse

from opfx.errors import CaseParseError, CaseReferenceError, SingularBranchError

DEFAULT_ANGLE_LIMIT = math.pi / 2

# Minimum column counts of the MATPOWER tables we read
_MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 11}

_ASSIGNMENT = re.compile(r"^mpc\.(\w+)\s*=\s*(.*)$")


class Bus(BaseModel):
    index: int = Field(..., description="External bus number from the case file")
    bus_type: int = 1
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_min: float
    v_max: float


class Generator(BaseModel):
    bus: int = Field(..., description="External number of the bus the unit sits on")
    p_min: float
    p_max: float
    q_min: float
    q_max: float


class Branch(BaseModel):
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    shift: float = Field(0.0, description="Phase shift in radians")
    s_max: float = Field(0.0, description="Apparent power limit, 0 means unconstrained")
    angle_min: float = -DEFAULT_ANGLE_LIMIT
    angle_max: float = DEFAULT_ANGLE_LIMIT


class Network(BaseModel):
    """Per-unit network model; generator and branch bus fields hold external bus numbers"""

    name: str = "case"
    base_mva: float
    slack_bus: Optional[int] = None
    buses: List[Bus]
    generators: List[Generator]
    branches: List[Branch]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    def bus_positions(self) -> Dict[int, int]:
        """Map external bus number to its 0-based position"""
        return {bus.index: pos for pos, bus in enumerate(self.buses)}

    def slack_position(self) -> int:
        return self.bus_positions()[self.slack_bus]

    def gen_bus_positions(self) -> np.ndarray:
        positions = self.bus_positions()
        return np.array([positions[gen.bus] for gen in self.generators], dtype=int)

    def generator_bus_positions(self) -> List[int]:
        """Distinct generator buses, in order of first appearance"""
        seen: List[int] = []
        for pos in self.gen_bus_positions():
            if int(pos) not in seen:
                seen.append(int(pos))
        return seen

    def branch_positions(self) -> Tuple[np.ndarray, np.ndarray]:
        positions = self.bus_positions()
        f = np.array([positions[br.from_bus] for br in self.branches], dtype=int)
        t = np.array([positions[br.to_bus] for br in self.branches], dtype=int)
        return f, t

    def to_json(self) -> str:
        """Canonical JSON document (field order is the model's declaration order)"""
        return self.model_dump_json()

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.model_validate_json(text)

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON form"""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


class Violation(BaseModel):
    element: str = Field(..., description="bus, generator, branch or network")
    index: Optional[int] = None
    field: str
    message: str


@dataclass(frozen=True)
class AdmittanceStructure:
    """Nodal G/B, neighbour sets and per-branch two-port parameters"""

    G: sparse.csr_matrix
    B: sparse.csr_matrix
    neighbors: Tuple[FrozenSet[int], ...]
    f_idx: np.ndarray
    t_idx: np.ndarray
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray

    @property
    def ybus(self) -> sparse.csr_matrix:
        return (self.G + 1j * self.B).tocsr()

    @property
    def n_bus(self) -> int:
        return self.G.shape[0]

    def branch_matrices(self) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
        """Yf, Yt mapping bus voltages to from/to end branch currents"""
        nl, nb = len(self.f_idx), self.n_bus
        if nl == 0:
            empty = sparse.csr_matrix((0, nb), dtype=complex)
            return empty, empty
        rows = np.arange(nl)
        cf = sparse.csr_matrix((np.ones(nl), (rows, self.f_idx)), shape=(nl, nb))
        ct = sparse.csr_matrix((np.ones(nl), (rows, self.t_idx)), shape=(nl, nb))
        yf = sparse.diags(self.yff) @ cf + sparse.diags(self.yft) @ ct
        yt = sparse.diags(self.ytf) @ cf + sparse.diags(self.ytt) @ ct
        return yf.tocsr(), yt.tocsr()

    @classmethod
    def from_matrices(cls, G, B) -> "AdmittanceStructure":
        """Wrap given nodal matrices, with no branch two-port data"""
        G = sparse.csr_matrix(np.asarray(G, dtype=float) if not sparse.issparse(G) else G)
        B = sparse.csr_matrix(np.asarray(B, dtype=float) if not sparse.issparse(B) else B)
        pattern = (abs(G) + abs(B)).tocoo()
        nb = G.shape[0]
        sets = [{i} for i in range(nb)]
        for i, k in zip(pattern.row, pattern.col):
            sets[i].add(int(k))
        empty_c = np.zeros(0, dtype=complex)
        empty_i = np.zeros(0, dtype=int)
        return cls(
            G=G,
            B=B,
            neighbors=tuple(frozenset(s) for s in sets),
            f_idx=empty_i,
            t_idx=empty_i,
            yff=empty_c,
            yft=empty_c,
            ytf=empty_c,
            ytt=empty_c,
        )


def _parse_number(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise CaseParseError(f"cannot read number {token!r}", lineno) from None


def _read_tables(text: str) -> Tuple[Dict[str, Tuple[int, str]], Dict[str, List[Tuple[int, List[float]]]]]:
    """Collect scalar assignments and numeric matrices of an ``mpc`` struct"""
    scalars: Dict[str, Tuple[int, str]] = {}
    tables: Dict[str, List[Tuple[int, List[float]]]] = {}
    current: Optional[str] = None
    opened_at = 0
    skipping_cell = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue

        if skipping_cell:
            if "}" in line:
                skipping_cell = False
            continue

        if current is None:
            match = _ASSIGNMENT.match(line)
            if not match:
                continue
            name, rest = match.groups()
            rest = rest.strip()
            if rest.startswith("{"):
                # cell arrays (bus names etc.) are not used
                skipping_cell = "}" not in rest
                continue
            if not rest.startswith("["):
                scalars[name] = (lineno, rest.rstrip(";").strip().strip("'\""))
                continue
            if name in tables:
                raise CaseParseError(f"table mpc.{name} defined twice", lineno)
            current, opened_at = name, lineno
            tables[name] = []
            line = rest[1:]

        closed = "]" in line
        body = line.split("]", 1)[0]
        for chunk in body.split(";"):
            tokens = chunk.replace(",", " ").split()
            if tokens:
                tables[current].append((lineno, [_parse_number(t, lineno) for t in tokens]))
        if closed:
            current = None

    if current is not None:
        raise CaseParseError(f"matrix mpc.{current} is never closed", opened_at)
    return scalars, tables


def _require_rows(tables, name: str) -> List[Tuple[int, List[float]]]:
    if name not in tables:
        raise CaseParseError(f"missing table mpc.{name}")
    rows = tables[name]
    for lineno, row in rows:
        if len(row) < _MIN_COLUMNS[name]:
            raise CaseParseError(
                f"mpc.{name} row has {len(row)} columns, need at least {_MIN_COLUMNS[name]}", lineno
            )
    return rows


def parse_case(text: str, name: str = "case") -> Network:
    """
    Parse a MATPOWER case into a per-unit Network

    Args:
        text: Contents of a ``.m`` case file
        name: Name stored on the network

    Returns:
        Network with powers divided by baseMVA and angles in radians
    """
    scalars, tables = _read_tables(text)

    if "baseMVA" not in scalars:
        raise CaseParseError("missing mpc.baseMVA")
    base_line, base_text = scalars["baseMVA"]
    base_mva = _parse_number(base_text, base_line)
    if base_mva <= 0:
        raise CaseParseError("baseMVA must be positive", base_line)

    buses: List[Bus] = []
    seen: Dict[int, int] = {}
    slack: Optional[int] = None
    for lineno, row in _require_rows(tables, "bus"):
        number = int(row[0])
        if number in seen:
            raise CaseParseError(f"duplicate bus {number} (first defined on line {seen[number]})", lineno)
        seen[number] = lineno
        bus_type = int(row[1])
        if bus_type == 3 and slack is None:
            slack = number
        buses.append(
            Bus(
                index=number,
                bus_type=bus_type,
                p_load=row[2] / base_mva,
                q_load=row[3] / base_mva,
                g_shunt=row[4] / base_mva,
                b_shunt=row[5] / base_mva,
                v_max=row[11],
                v_min=row[12],
            )
        )

    generators: List[Generator] = []
    for lineno, row in _require_rows(tables, "gen"):
        bus = int(row[0])
        if bus not in seen:
            raise CaseReferenceError(f"line {lineno}: generator on bus {bus} which is not in the bus table")
        if row[7] <= 0:
            logger.debug(f"Skipping out-of-service generator on bus {bus} (line {lineno})")
            continue
        generators.append(
            Generator(
                bus=bus,
                q_max=row[3] / base_mva,
                q_min=row[4] / base_mva,
                p_max=row[8] / base_mva,
                p_min=row[9] / base_mva,
            )
        )

    branches: List[Branch] = []
    for lineno, row in _require_rows(tables, "branch"):
        f_bus, t_bus = int(row[0]), int(row[1])
        for bus in (f_bus, t_bus):
            if bus not in seen:
                raise CaseReferenceError(f"line {lineno}: branch references bus {bus} which is not in the bus table")
        if row[10] <= 0:
            logger.debug(f"Skipping out-of-service branch {f_bus}-{t_bus} (line {lineno})")
            continue
        angle_min, angle_max = -DEFAULT_ANGLE_LIMIT, DEFAULT_ANGLE_LIMIT
        if len(row) >= 13 and not (row[11] == 0 and row[12] == 0):
            angle_min, angle_max = math.radians(row[11]), math.radians(row[12])
        branches.append(
            Branch(
                from_bus=f_bus,
                to_bus=t_bus,
                r=row[2],
                x=row[3],
                b=row[4],
                s_max=row[5] / base_mva,
                tap=row[8] if row[8] != 0 else 1.0,
                shift=math.radians(row[9]),
                angle_min=angle_min,
                angle_max=angle_max,
            )
        )

    # gencost is not read
    net = Network(
        name=name,
        base_mva=base_mva,
        slack_bus=slack,
        buses=buses,
        generators=generators,
        branches=branches,
    )
    logger.info(
        f"Parsed case {name}: {net.n_bus} buses, {net.n_gen} generators, {len(branches)} branches"
    )
    return net


def validate(net: Network) -> List[Violation]:
    """
    Check the network invariants

    Returns:
        One Violation per broken invariant; empty when the network is well formed
    """
    violations: List[Violation] = []

    if net.base_mva <= 0:
        violations.append(Violation(element="network", field="base_mva", message="base_mva must be positive"))

    slack_buses = [bus.index for bus in net.buses if bus.bus_type == 3]
    if len(slack_buses) != 1:
        violations.append(
            Violation(
                element="network",
                field="slack_bus",
                message=f"expected exactly one slack bus, found {len(slack_buses)}: {slack_buses}",
            )
        )

    numbers = [bus.index for bus in net.buses]
    known = set(numbers)
    if len(known) != len(numbers):
        violations.append(Violation(element="network", field="buses", message="duplicate bus numbers"))

    for bus in net.buses:
        if not 0 < bus.v_min <= bus.v_max:
            violations.append(
                Violation(
                    element="bus",
                    index=bus.index,
                    field="v_min/v_max",
                    message=f"voltage bounds [{bus.v_min}, {bus.v_max}] violate 0 < v_min <= v_max",
                )
            )

    for pos, gen in enumerate(net.generators):
        if gen.bus not in known:
            violations.append(Violation(element="generator", index=pos, field="bus", message=f"unknown bus {gen.bus}"))
        if gen.p_min > gen.p_max:
            violations.append(Violation(element="generator", index=pos, field="p_min/p_max", message="p_min > p_max"))
        if gen.q_min > gen.q_max:
            violations.append(Violation(element="generator", index=pos, field="q_min/q_max", message="q_min > q_max"))

    for pos, br in enumerate(net.branches):
        if br.from_bus not in known or br.to_bus not in known:
            violations.append(
                Violation(element="branch", index=pos, field="from_bus/to_bus", message="unknown bus reference")
            )
        if br.from_bus == br.to_bus:
            violations.append(
                Violation(element="branch", index=pos, field="from_bus/to_bus", message="branch connects a bus to itself")
            )
        if br.s_max < 0:
            violations.append(Violation(element="branch", index=pos, field="s_max", message="negative s_max"))
        if br.r == 0 and br.x == 0:
            violations.append(Violation(element="branch", index=pos, field="r/x", message="zero series impedance"))

    return violations


def branch_two_port(br: Branch) -> Tuple[complex, complex, complex, complex]:
    """(yff, yft, ytf, ytt) of the standard pi-model with off-nominal tap and shift"""
    if br.r == 0 and br.x == 0:
        raise SingularBranchError(f"branch {br.from_bus}-{br.to_bus} has zero series impedance")
    ys = 1.0 / complex(br.r, br.x)
    tap = br.tap * complex(math.cos(br.shift), math.sin(br.shift))
    ytt = ys + 1j * br.b / 2
    yff = ytt / (tap * tap.conjugate())
    yft = -ys / tap.conjugate()
    ytf = -ys / tap
    return yff, yft, ytf, ytt


def build_admittance(net: Network) -> AdmittanceStructure:
    """
    Assemble nodal conductance/susceptance and neighbour sets

    Args:
        net: Network to assemble

    Returns:
        AdmittanceStructure with Ybus = G + jB
    """
    nb, nl = net.n_bus, len(net.branches)
    f_idx, t_idx = net.branch_positions()

    params = np.array([branch_two_port(br) for br in net.branches], dtype=complex).reshape(nl, 4)
    yff, yft, ytf, ytt = params.T

    shunt = np.array([complex(bus.g_shunt, bus.b_shunt) for bus in net.buses])
    ybus = sparse.csr_matrix(sparse.diags(shunt, 0, shape=(nb, nb)), dtype=complex)
    if nl:
        rows = np.arange(nl)
        cf = sparse.csr_matrix((np.ones(nl), (rows, f_idx)), shape=(nl, nb))
        ct = sparse.csr_matrix((np.ones(nl), (rows, t_idx)), shape=(nl, nb))
        yf = sparse.diags(yff) @ cf + sparse.diags(yft) @ ct
        yt = sparse.diags(ytf) @ cf + sparse.diags(ytt) @ ct
        ybus = (ybus + cf.T @ yf + ct.T @ yt).tocsr()

    sets = [{i} for i in range(nb)]
    for f, t in zip(f_idx, t_idx):
        sets[f].add(int(t))
        sets[t].add(int(f))

    return AdmittanceStructure(
        G=sparse.csr_matrix(ybus.real),
        B=sparse.csr_matrix(ybus.imag),
        neighbors=tuple(frozenset(s) for s in sets),
        f_idx=f_idx,
        t_idx=t_idx,
        yff=np.asarray(yff),
        yft=np.asarray(yft),
        ytf=np.asarray(ytf),
        ytt=np.asarray(ytt),
    )
