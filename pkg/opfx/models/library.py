"""
Solution library: ordered feasible operating points with provenance
"""
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from opfx.grid.acpf import OperatingPoint
from opfx.grid.case_model import Network


class Provenance(BaseModel):
    objective_id: str
    iteration: int = Field(..., ge=0)
    status: str
    objective_value: Optional[float] = None
    timestamp: Optional[str] = Field(None, description="Left empty so artifacts replay byte-identically")


class LibraryEntry(BaseModel):
    point: OperatingPoint
    provenance: Provenance


class DnfEvent(BaseModel):
    iteration: int
    status: str
    attempts: int
    message: str = ""


class SolutionLibrary(BaseModel):
    """Points in collection order; entry 0 is the zero-objective seed"""

    network_fingerprint: str
    network_name: str = ""
    n_bus: int
    n_gen: int
    objective_id: Optional[str] = None
    entries: List[LibraryEntry] = Field(default_factory=list)
    dnf_events: List[DnfEvent] = Field(default_factory=list)

    @classmethod
    def empty(cls, net: Network, objective_id: Optional[str] = None) -> "SolutionLibrary":
        return cls(
            network_fingerprint=net.fingerprint(),
            network_name=net.name,
            n_bus=net.n_bus,
            n_gen=net.n_gen,
            objective_id=objective_id,
        )

    def __len__(self) -> int:
        return len(self.entries)

    def matrix(self) -> np.ndarray:
        """Points stacked row-wise as decision vectors"""
        width = 2 * self.n_bus + 2 * self.n_gen
        if not self.entries:
            return np.zeros((0, width))
        return np.vstack([entry.point.to_vector() for entry in self.entries])

    def append(self, x: np.ndarray, net: Network, provenance: Provenance) -> "SolutionLibrary":
        """Return a new library with ``x`` appended"""
        entry = LibraryEntry(point=OperatingPoint.from_vector(x, net), provenance=provenance)
        return self.model_copy(update={"entries": [*self.entries, entry]})

    def with_dnf(self, event: DnfEvent) -> "SolutionLibrary":
        return self.model_copy(update={"dnf_events": [*self.dnf_events, event]})

    def prefix(self, size: int) -> "SolutionLibrary":
        return self.model_copy(update={"entries": self.entries[:size]})
