"""
Polar AC power flow: injections, branch flows, OPF residuals and their Jacobians

Decision vectors are laid out as ``[v (n_bus), theta (n_bus), p_gen (n_gen), q_gen (n_gen)]``.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import sparse

from opfx.grid.case_model import AdmittanceStructure, Branch, Network, branch_two_port, build_admittance
from opfx.solvers.nlp_solver import ObjectiveFn, ProblemDef, zero_objective


class OperatingPoint(BaseModel):
    v: list[float]
    theta: list[float]
    p_gen: list[float]
    q_gen: list[float]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.theta, self.p_gen, self.q_gen]).astype(float)

    @classmethod
    def from_vector(cls, x: np.ndarray, net: Network) -> "OperatingPoint":
        nb, ng = net.n_bus, net.n_gen
        x = np.asarray(x, dtype=float)
        if x.shape != (2 * nb + 2 * ng,):
            raise ValueError(f"vector of length {x.shape} does not match {nb} buses / {ng} generators")
        return cls(
            v=x[:nb].tolist(),
            theta=x[nb : 2 * nb].tolist(),
            p_gen=x[2 * nb : 2 * nb + ng].tolist(),
            q_gen=x[2 * nb + ng :].tolist(),
        )

    def check_dimensions(self, net: Network) -> None:
        if len(self.v) != net.n_bus or len(self.theta) != net.n_bus:
            raise ValueError(f"point has {len(self.v)} voltages, network has {net.n_bus} buses")
        if len(self.p_gen) != net.n_gen or len(self.q_gen) != net.n_gen:
            raise ValueError(f"point has {len(self.p_gen)} dispatch values, network has {net.n_gen} generators")


@dataclass
class ResidualReport:
    """Residuals of every OPF constraint; inequality slacks are feasible when >= 0"""

    balance_p: np.ndarray
    balance_q: np.ndarray
    slack_angle: np.ndarray
    v_lower: np.ndarray
    v_upper: np.ndarray
    pg_lower: np.ndarray
    pg_upper: np.ndarray
    qg_lower: np.ndarray
    qg_upper: np.ndarray
    angle_lower: np.ndarray
    angle_upper: np.ndarray
    thermal_from: np.ndarray
    thermal_to: np.ndarray
    thermal_branches: np.ndarray

    @property
    def equalities(self) -> np.ndarray:
        return np.concatenate([self.balance_p, self.balance_q, self.slack_angle])

    @property
    def inequalities(self) -> np.ndarray:
        return np.concatenate(
            [
                self.v_lower,
                self.v_upper,
                self.pg_lower,
                self.pg_upper,
                self.qg_lower,
                self.qg_upper,
                self.angle_lower,
                self.angle_upper,
                self.thermal_from,
                self.thermal_to,
            ]
        )

    @property
    def max_violation(self) -> float:
        eq = np.abs(self.equalities)
        ineq = -np.minimum(self.inequalities, 0.0)
        return float(max(eq.max(initial=0.0), ineq.max(initial=0.0)))


@dataclass
class ResidualJacobian:
    """Sparse Jacobians with rows in ResidualReport.equalities / .inequalities order"""

    equality: sparse.csr_matrix
    inequality: sparse.csr_matrix


def injections(x: OperatingPoint, Y: AdmittanceStructure) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nodal active/reactive injections of the polar power flow equations

    Returns:
        (p, q) per bus
    """
    v = np.asarray(x.v, dtype=float)
    theta = np.asarray(x.theta, dtype=float)
    V = v * np.exp(1j * theta)
    S = V * np.conj(Y.ybus @ V)
    return S.real, S.imag


def branch_flows(x: OperatingPoint, br: Branch, net: Network) -> Tuple[float, float, float, float]:
    """
    Sending and receiving end flows of one branch

    Returns:
        (p_ij, q_ij, p_ji, q_ji)
    """
    positions = net.bus_positions()
    i, j = positions[br.from_bus], positions[br.to_bus]
    yff, yft, ytf, ytt = branch_two_port(br)
    vi = x.v[i] * np.exp(1j * x.theta[i])
    vj = x.v[j] * np.exp(1j * x.theta[j])
    s_ij = vi * np.conj(yff * vi + yft * vj)
    s_ji = vj * np.conj(ytf * vi + ytt * vj)
    return float(s_ij.real), float(s_ij.imag), float(s_ji.real), float(s_ji.imag)


class PowerFlowModel:
    """Vectorised residual and Jacobian evaluation for one network"""

    def __init__(self, net: Network, Y: Optional[AdmittanceStructure] = None):
        self.net = net
        self.Y = Y if Y is not None else build_admittance(net)
        self.n_bus = net.n_bus
        self.n_gen = net.n_gen
        self.n_var = 2 * self.n_bus + 2 * self.n_gen

        self.ybus = self.Y.ybus
        self.yf, self.yt = self.Y.branch_matrices()
        self.f_idx, self.t_idx = self.Y.f_idx, self.Y.t_idx
        nl = len(self.f_idx)
        rows = np.arange(nl)
        self.cf = sparse.csr_matrix((np.ones(nl), (rows, self.f_idx)), shape=(nl, self.n_bus))
        self.ct = sparse.csr_matrix((np.ones(nl), (rows, self.t_idx)), shape=(nl, self.n_bus))

        gen_bus = net.gen_bus_positions()
        self.cg = sparse.csr_matrix(
            (np.ones(self.n_gen), (gen_bus, np.arange(self.n_gen))), shape=(self.n_bus, self.n_gen)
        )
        self.p_load = np.array([bus.p_load for bus in net.buses])
        self.q_load = np.array([bus.q_load for bus in net.buses])
        self.v_min = np.array([bus.v_min for bus in net.buses])
        self.v_max = np.array([bus.v_max for bus in net.buses])
        self.p_min = np.array([gen.p_min for gen in net.generators])
        self.p_max = np.array([gen.p_max for gen in net.generators])
        self.q_min = np.array([gen.q_min for gen in net.generators])
        self.q_max = np.array([gen.q_max for gen in net.generators])
        self.angle_min = np.array([br.angle_min for br in net.branches])
        self.angle_max = np.array([br.angle_max for br in net.branches])
        s_max = np.array([br.s_max for br in net.branches])
        self.thermal = np.flatnonzero(s_max > 0)
        self.s_max_sq = s_max[self.thermal] ** 2
        self.slack = net.slack_position() if net.slack_bus is not None else 0

    # -- layout helpers -------------------------------------------------
    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        nb, ng = self.n_bus, self.n_gen
        return x[:nb], x[nb : 2 * nb], x[2 * nb : 2 * nb + ng], x[2 * nb + ng :]

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Variable bounds; angles are free"""
        inf = np.full(self.n_bus, np.inf)
        lower = np.concatenate([self.v_min, -inf, self.p_min, self.q_min])
        upper = np.concatenate([self.v_max, inf, self.p_max, self.q_max])
        return lower, upper

    def flat_start(self) -> np.ndarray:
        """Mid-bound voltages and dispatch, zero angles"""
        return np.concatenate(
            [
                (self.v_min + self.v_max) / 2,
                np.zeros(self.n_bus),
                (self.p_min + self.p_max) / 2,
                (self.q_min + self.q_max) / 2,
            ]
        )

    def _phasors(self, x: np.ndarray) -> np.ndarray:
        v, theta, _, _ = self.split(x)
        return v * np.exp(1j * theta)

    # -- values ---------------------------------------------------------
    def power_balance(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        _, _, pg, qg = self.split(x)
        V = self._phasors(x)
        S = V * np.conj(self.ybus @ V)
        return self.cg @ pg - self.p_load - S.real, self.cg @ qg - self.q_load - S.imag

    def branch_power(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Complex power entering every branch at its from and to ends"""
        V = self._phasors(x)
        s_from = V[self.f_idx] * np.conj(self.yf @ V)
        s_to = V[self.t_idx] * np.conj(self.yt @ V)
        return s_from, s_to

    def equality_values(self, x: np.ndarray) -> np.ndarray:
        bp, bq = self.power_balance(x)
        _, theta, _, _ = self.split(x)
        return np.concatenate([bp, bq, [theta[self.slack]]])

    def branch_inequality_values(self, x: np.ndarray) -> np.ndarray:
        """Angle-difference and squared thermal slacks (>= 0 when satisfied)"""
        _, theta, _, _ = self.split(x)
        diff = theta[self.f_idx] - theta[self.t_idx]
        s_from, s_to = self.branch_power(x)
        return np.concatenate(
            [
                diff - self.angle_min,
                self.angle_max - diff,
                self.s_max_sq - np.abs(s_from[self.thermal]) ** 2,
                self.s_max_sq - np.abs(s_to[self.thermal]) ** 2,
            ]
        )

    def report(self, x: np.ndarray) -> ResidualReport:
        v, theta, pg, qg = self.split(np.asarray(x, dtype=float))
        bp, bq = self.power_balance(x)
        diff = theta[self.f_idx] - theta[self.t_idx]
        s_from, s_to = self.branch_power(x)
        return ResidualReport(
            balance_p=bp,
            balance_q=bq,
            slack_angle=np.array([theta[self.slack]]),
            v_lower=v - self.v_min,
            v_upper=self.v_max - v,
            pg_lower=pg - self.p_min,
            pg_upper=self.p_max - pg,
            qg_lower=qg - self.q_min,
            qg_upper=self.q_max - qg,
            angle_lower=diff - self.angle_min,
            angle_upper=self.angle_max - diff,
            thermal_from=self.s_max_sq - np.abs(s_from[self.thermal]) ** 2,
            thermal_to=self.s_max_sq - np.abs(s_to[self.thermal]) ** 2,
            thermal_branches=self.thermal.copy(),
        )

    # -- derivatives ----------------------------------------------------
    def _dS_dV(self, V: np.ndarray) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
        """Nodal complex power w.r.t. voltage magnitude and angle"""
        ibus = self.ybus @ V
        diag_v = sparse.diags(V)
        diag_i = sparse.diags(ibus)
        diag_vnorm = sparse.diags(V / np.abs(V))
        dS_dvm = diag_v @ (self.ybus @ diag_vnorm).conj() + diag_i.conj() @ diag_vnorm
        dS_dva = 1j * diag_v @ (diag_i - self.ybus @ diag_v).conj()
        return sparse.csr_matrix(dS_dvm), sparse.csr_matrix(dS_dva)

    def _dSbr_dV(self, yb, idx, V):
        """Branch-end complex power w.r.t. voltage magnitude and angle"""
        nl = len(idx)
        i_br = yb @ V
        v_end = V[idx]
        vnorm = V / np.abs(V)
        rows = np.arange(nl)
        diag_v = sparse.diags(V)
        diag_vend = sparse.diags(v_end)
        diag_i = sparse.diags(i_br)
        ds_dva = 1j * (
            diag_i.conj() @ sparse.csr_matrix((v_end, (rows, idx)), shape=(nl, self.n_bus))
            - diag_vend @ (yb @ diag_v).conj()
        )
        ds_dvm = diag_vend @ (yb @ sparse.diags(vnorm)).conj() + diag_i.conj() @ sparse.csr_matrix(
            (vnorm[idx], (rows, idx)), shape=(nl, self.n_bus)
        )
        return sparse.csr_matrix(ds_dvm), sparse.csr_matrix(ds_dva)

    def equality_jacobian(self, x: np.ndarray) -> sparse.csr_matrix:
        V = self._phasors(x)
        dS_dvm, dS_dva = self._dS_dV(V)
        zero_g = sparse.csr_matrix((self.n_bus, self.n_gen))
        rows_p = sparse.hstack([-dS_dvm.real, -dS_dva.real, self.cg, zero_g])
        rows_q = sparse.hstack([-dS_dvm.imag, -dS_dva.imag, zero_g, self.cg])
        slack_row = sparse.csr_matrix(([1.0], ([0], [self.n_bus + self.slack])), shape=(1, self.n_var))
        return sparse.vstack([rows_p, rows_q, slack_row]).tocsr()

    def branch_inequality_jacobian(self, x: np.ndarray) -> sparse.csr_matrix:
        nb, ng = self.n_bus, self.n_gen
        nl = len(self.f_idx)
        d_diff = self.cf - self.ct
        zero_v = sparse.csr_matrix((nl, nb))
        zero_g = sparse.csr_matrix((nl, 2 * ng))
        angle_lower = sparse.hstack([zero_v, d_diff, zero_g])
        angle_upper = -angle_lower

        blocks = [angle_lower, angle_upper]
        if len(self.thermal):
            V = self._phasors(x)
            s_from, s_to = self.branch_power(x)
            zero_t = sparse.csr_matrix((len(self.thermal), 2 * ng))
            for yb, idx, s_end in ((self.yf, self.f_idx, s_from), (self.yt, self.t_idx, s_to)):
                ds_dvm, ds_dva = self._dSbr_dV(yb, idx, V)
                weight = sparse.diags(np.conj(s_end[self.thermal]))
                dh_dvm = -2 * (weight @ ds_dvm[self.thermal]).real
                dh_dva = -2 * (weight @ ds_dva[self.thermal]).real
                blocks.append(sparse.hstack([dh_dvm, dh_dva, zero_t]))
        return sparse.vstack(blocks).tocsr()

    def bound_jacobian(self) -> sparse.csr_matrix:
        """Rows of the simple-bound slacks, in ResidualReport order"""
        nb, ng = self.n_bus, self.n_gen
        eye = sparse.identity(self.n_var, format="csr")
        v_rows = eye[:nb]
        pg_rows = eye[2 * nb : 2 * nb + ng]
        qg_rows = eye[2 * nb + ng :]
        return sparse.vstack([v_rows, -v_rows, pg_rows, -pg_rows, qg_rows, -qg_rows]).tocsr()

    def jacobians(self, x: np.ndarray) -> ResidualJacobian:
        x = np.asarray(x, dtype=float)
        inequality = sparse.vstack([self.bound_jacobian(), self.branch_inequality_jacobian(x)]).tocsr()
        return ResidualJacobian(equality=self.equality_jacobian(x), inequality=inequality)

    def problem(
        self,
        objective: Optional[ObjectiveFn] = None,
        box_lower: Optional[np.ndarray] = None,
        box_upper: Optional[np.ndarray] = None,
    ) -> ProblemDef:
        """OPF constraint set as a ProblemDef, optionally tightened by an extra variable box"""
        lower, upper = self.bounds()
        return ProblemDef(
            dimension=self.n_var,
            objective=objective or zero_objective,
            lower=lower,
            upper=upper,
            equality=self.equality_values,
            equality_jacobian=self.equality_jacobian,
            inequality=self.branch_inequality_values,
            inequality_jacobian=self.branch_inequality_jacobian,
            box_lower=box_lower,
            box_upper=box_upper,
        )


def residuals(x: OperatingPoint, net: Network) -> ResidualReport:
    """Evaluate every OPF constraint at ``x``"""
    x.check_dimensions(net)
    return PowerFlowModel(net).report(x.to_vector())


def jacobians(x: OperatingPoint, net: Network) -> ResidualJacobian:
    """Analytic sparse Jacobians of all residuals w.r.t. (v, theta, p_gen, q_gen)"""
    x.check_dimensions(net)
    return PowerFlowModel(net).jacobians(x.to_vector())
