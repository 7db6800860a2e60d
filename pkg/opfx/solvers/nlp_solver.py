"""
Local solver for smooth constrained maximisation problems

Wraps scipy's barrier interior-point (``trust-constr``) with quasi-Newton Hessians,
adds fixed-variable elimination, a least-squares feasibility restoration and the
Optimal / Infeasible / IterationLimit / NumericalFailure status contract.
"""
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from scipy import sparse
from scipy.optimize import BFGS, Bounds, NonlinearConstraint, least_squares, minimize

ObjectiveFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]
VectorFn = Callable[[np.ndarray], np.ndarray]
MatrixFn = Callable[[np.ndarray], "sparse.spmatrix | np.ndarray"]


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"
    NUMERICAL_FAILURE = "NumericalFailure"

    @property
    def is_dnf(self) -> bool:
        return self is not SolveStatus.OPTIMAL


class SolverOptions(BaseModel):
    feasibility_tol: float = Field(1e-6, gt=0)
    stationarity_tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(500, ge=1)
    restoration: bool = True


def zero_objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
    return 0.0, np.zeros_like(x)


@dataclass
class ProblemDef:
    """max objective(x) s.t. equality(x) = 0, inequality(x) >= 0, lower <= x <= upper"""

    dimension: int
    objective: ObjectiveFn
    lower: np.ndarray
    upper: np.ndarray
    equality: Optional[VectorFn] = None
    equality_jacobian: Optional[MatrixFn] = None
    inequality: Optional[VectorFn] = None
    inequality_jacobian: Optional[MatrixFn] = None
    box_lower: Optional[np.ndarray] = None
    box_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (self.dimension,) or self.upper.shape != (self.dimension,):
            raise ValueError(f"bounds must have shape ({self.dimension},)")
        if (self.equality is None) != (self.equality_jacobian is None):
            raise ValueError("equality constraints need both values and a Jacobian")
        if (self.inequality is None) != (self.inequality_jacobian is None):
            raise ValueError("inequality constraints need both values and a Jacobian")

    def with_objective(self, objective: ObjectiveFn) -> "ProblemDef":
        return ProblemDef(
            dimension=self.dimension,
            objective=objective,
            lower=self.lower,
            upper=self.upper,
            equality=self.equality,
            equality_jacobian=self.equality_jacobian,
            inequality=self.inequality,
            inequality_jacobian=self.inequality_jacobian,
            box_lower=self.box_lower,
            box_upper=self.box_upper,
        )

    def effective_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lower, upper = self.lower.copy(), self.upper.copy()
        if self.box_lower is not None:
            lower = np.maximum(lower, self.box_lower)
        if self.box_upper is not None:
            upper = np.minimum(upper, self.box_upper)
        return lower, upper

    def violation(self, x: np.ndarray) -> float:
        """Infinity norm of all constraint and bound violations"""
        lower, upper = self.effective_bounds()
        parts = [np.maximum(lower - x, 0.0), np.maximum(x - upper, 0.0)]
        if self.equality is not None:
            parts.append(np.abs(self.equality(x)))
        if self.inequality is not None:
            parts.append(np.maximum(-self.inequality(x), 0.0))
        return float(max((part.max(initial=0.0) for part in parts), default=0.0))


@dataclass
class SolveResult:
    status: SolveStatus
    x: np.ndarray
    objective: float
    violation: float
    iterations: int
    wall_time: float
    message: str = ""
    restored: bool = field(default=False)


class _NonFiniteCallback(ArithmeticError):
    pass


def _dense(matrix) -> np.ndarray:
    return matrix.toarray() if sparse.issparse(matrix) else np.atleast_2d(np.asarray(matrix, dtype=float))


class _Reduced:
    """View of a ProblemDef over its non-fixed variables"""

    def __init__(self, p: ProblemDef, lower: np.ndarray, upper: np.ndarray):
        self.p = p
        self.fixed = lower == upper
        self.free = np.flatnonzero(~self.fixed)
        self.template = np.where(self.fixed, lower, 0.0)
        self.lower = lower[self.free]
        self.upper = upper[self.free]

    def full(self, z: np.ndarray) -> np.ndarray:
        x = self.template.copy()
        x[self.free] = z
        return x

    @staticmethod
    def _check(values, what: str):
        if not np.all(np.isfinite(values)):
            raise _NonFiniteCallback(f"non-finite {what}")
        return values

    def neg_objective(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = self.p.objective(self.full(z))
        self._check(np.atleast_1d(value), "objective value")
        grad = self._check(np.asarray(grad, dtype=float), "objective gradient")
        return -float(value), -grad[self.free]

    def equality(self, z):
        return self._check(np.asarray(self.p.equality(self.full(z)), dtype=float), "equality value")

    def equality_jacobian(self, z):
        jac = self.p.equality_jacobian(self.full(z))
        jac = sparse.csr_matrix(jac)[:, self.free]
        self._check(jac.data, "equality Jacobian")
        return jac

    def inequality(self, z):
        return self._check(np.asarray(self.p.inequality(self.full(z)), dtype=float), "inequality value")

    def inequality_jacobian(self, z):
        jac = sparse.csr_matrix(self.p.inequality_jacobian(self.full(z)))[:, self.free]
        self._check(jac.data, "inequality Jacobian")
        return jac

    def constraints(self, z0: np.ndarray) -> list:
        cons = []
        if self.p.equality is not None and len(self.equality(z0)):
            cons.append(NonlinearConstraint(self.equality, 0.0, 0.0, jac=self.equality_jacobian, hess=BFGS()))
        if self.p.inequality is not None and len(self.inequality(z0)):
            cons.append(NonlinearConstraint(self.inequality, 0.0, np.inf, jac=self.inequality_jacobian, hess=BFGS()))
        return cons

    def violation_residual(self, z: np.ndarray) -> np.ndarray:
        parts = []
        if self.p.equality is not None:
            parts.append(self.equality(z))
        if self.p.inequality is not None:
            parts.append(np.minimum(self.inequality(z), 0.0))
        return np.concatenate(parts) if parts else np.zeros(0)

    def violation_jacobian(self, z: np.ndarray) -> np.ndarray:
        blocks = []
        if self.p.equality is not None:
            blocks.append(_dense(self.equality_jacobian(z)))
        if self.p.inequality is not None:
            active = (self.inequality(z) < 0.0).astype(float)
            blocks.append(_dense(self.inequality_jacobian(z)) * active[:, None])
        return np.vstack(blocks) if blocks else np.zeros((0, len(z)))


def _restore(reduced: _Reduced, z: np.ndarray, opts: SolverOptions) -> Tuple[np.ndarray, float]:
    """Minimise the squared constraint violation from ``z``"""
    if len(reduced.violation_residual(z)) == 0:
        return z, 0.0
    fit = least_squares(
        reduced.violation_residual,
        np.clip(z, reduced.lower, reduced.upper),
        jac=reduced.violation_jacobian,
        bounds=(reduced.lower, reduced.upper),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=50 * max(len(z), 1),
    )
    return fit.x, float(np.abs(fit.fun).max(initial=0.0))


def _run_barrier(reduced: _Reduced, z0: np.ndarray, opts: SolverOptions):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return minimize(
            reduced.neg_objective,
            z0,
            jac=True,
            hess=BFGS(),
            method="trust-constr",
            bounds=Bounds(reduced.lower, reduced.upper) if len(z0) else None,
            constraints=reduced.constraints(z0),
            options={
                "maxiter": opts.max_iter,
                "gtol": opts.stationarity_tol,
                "xtol": 1e-12,
                "verbose": 0,
            },
        )


def solve(p: ProblemDef, start: np.ndarray, opts: Optional[SolverOptions] = None) -> SolveResult:
    """
    Locally maximise ``p.objective`` subject to the problem constraints

    Args:
        p: Problem definition
        start: Initial point, projected onto the bounds
        opts: Tolerances and limits

    Returns:
        SolveResult; ``Optimal`` only when the final point meets the feasibility tolerance
    """
    opts = opts or SolverOptions()
    started = time.perf_counter()
    lower, upper = p.effective_bounds()
    start = np.clip(np.asarray(start, dtype=float), lower, upper)

    def finish(status, x, iterations, message, restored=False):
        try:
            value = float(p.objective(x)[0])
        except Exception:
            value = float("nan")
        result = SolveResult(
            status=status,
            x=x,
            objective=value,
            violation=p.violation(x),
            iterations=iterations,
            wall_time=time.perf_counter() - started,
            message=message,
            restored=restored,
        )
        logger.debug(
            f"Solve finished: {status.value} after {iterations} iterations "
            f"(violation {result.violation:.2e}, {message})"
        )
        return result

    if np.any(lower > upper):
        return finish(SolveStatus.INFEASIBLE, start, 0, "empty variable box")

    reduced = _Reduced(p, lower, upper)
    z0 = start[reduced.free]
    if len(z0) == 0:
        ok = p.violation(start) <= opts.feasibility_tol
        return finish(SolveStatus.OPTIMAL if ok else SolveStatus.INFEASIBLE, start, 0, "all variables fixed")
    iterations = 0
    try:
        res = _run_barrier(reduced, z0, opts)
        iterations += int(res.nit)
        x = np.clip(reduced.full(res.x), lower, upper)
        violation = p.violation(x)
        if violation <= opts.feasibility_tol:
            if res.status in (1, 2):
                return finish(SolveStatus.OPTIMAL, x, iterations, res.message)
            # feasible, not stationary
            return finish(SolveStatus.ITERATION_LIMIT, x, iterations, res.message)

        if not opts.restoration:
            status = SolveStatus.ITERATION_LIMIT if res.status == 0 else SolveStatus.INFEASIBLE
            return finish(status, x, iterations, res.message)

        logger.debug(f"Barrier run ended with violation {violation:.2e}; attempting restoration")
        z_restored, residual = _restore(reduced, res.x, opts)
        if residual > opts.feasibility_tol:
            return finish(SolveStatus.INFEASIBLE, reduced.full(z_restored), iterations, "restoration failed", True)

        retry = _run_barrier(reduced, z_restored, opts)
        iterations += int(retry.nit)
        x = np.clip(reduced.full(retry.x), lower, upper)
        feasible = p.violation(x) <= opts.feasibility_tol
        if retry.status in (1, 2) and feasible:
            return finish(SolveStatus.OPTIMAL, x, iterations, retry.message, True)
        if not feasible:
            # keep the restored point
            x = np.clip(reduced.full(z_restored), lower, upper)
        if retry.status == 0 or res.status == 0:
            return finish(SolveStatus.ITERATION_LIMIT, x, iterations, retry.message, True)
        return finish(SolveStatus.NUMERICAL_FAILURE, x, iterations, retry.message, True)

    except (_NonFiniteCallback, FloatingPointError, np.linalg.LinAlgError, ValueError) as e:
        logger.warning(f"Numerical failure in solver: {e}")
        return finish(SolveStatus.NUMERICAL_FAILURE, start, iterations, str(e))


def find_feasible(p: ProblemDef, start: np.ndarray, opts: Optional[SolverOptions] = None) -> SolveResult:
    """Solve with a constant-zero objective; Optimal means a feasible point was found"""
    return solve(p.with_objective(zero_objective), start, opts)
