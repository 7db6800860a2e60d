"""
Domain errors raised across opfx
"""
from typing import Any, Optional


class CaseParseError(ValueError):
    """Malformed case file; ``line`` is 1-based"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CaseReferenceError(ValueError):
    """A generator or branch references a bus that does not exist"""


class SingularBranchError(ValueError):
    """Branch with zero series impedance"""


class UnknownObjectiveError(KeyError):
    """Objective id not present in the catalog"""


class DuplicateObjectiveError(ValueError):
    """Objective id already registered"""


class PartitionCapError(ValueError):
    """Requested partition count exceeds the configured cap"""


class ArtifactMismatchError(ValueError):
    """Artifacts produced from different networks were combined"""


class SeedInfeasibleError(RuntimeError):
    """No feasible seed point could be found for the network"""

    def __init__(self, message: str, result: Any = None):
        self.result = result
        super().__init__(message)


class SolverAbort(RuntimeError):
    """A DNF under the ``abort`` policy"""

    def __init__(self, message: str, result: Any = None):
        self.result = result
        super().__init__(message)
