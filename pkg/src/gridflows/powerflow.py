"""Quasi-static AC power flow: Y-bus assembly, Newton-Raphson and Gauss-Seidel.

All quantities are per-unit on the case MVA base. Bus injections follow the
producer-positive convention. Angles are radians internally and degrees in
exported tables.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cdf import BusType, PowerFlowCase


class Method(enum.Enum):
    NEWTON_RAPHSON = "nr"
    GAUSS_SEIDEL = "gs"


class PowerFlowError(Exception):
    pass


class ZeroImpedanceBranch(PowerFlowError):
    pass


class SingularJacobian(PowerFlowError):
    pass


class IslandedBus(PowerFlowError):
    pass


class Diverged(PowerFlowError):
    """Iteration limit reached; `solution` holds the last iterate."""

    def __init__(self, message: str, solution: PowerFlowSolution):
        super().__init__(message)
        self.solution = solution


DEFAULT_MAX_ITER = {Method.NEWTON_RAPHSON: 50, Method.GAUSS_SEIDEL: 10_000}


@dataclass
class SolverConfig:
    method: Method = Method.NEWTON_RAPHSON
    tolerance: float = 1e-8
    max_iter: int | None = None  # None picks a per-method default
    flat_start: bool = True
    enforce_q_limits: bool = False

    def __post_init__(self):
        self.method = Method(self.method)
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter is None:
            self.max_iter = DEFAULT_MAX_ITER[self.method]
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


def bus_index(case: PowerFlowCase) -> dict[int, int]:
    return {b.number: i for i, b in enumerate(case.buses)}


def branch_admittances(case: PowerFlowCase):
    """Two-port admittances (yff, yft, ytf, ytt) and endpoint indices of every branch.

    The ideal transformer with complex ratio t = tap * exp(j*shift) sits on the
    from side, so the from-side charging is referred through it as well.
    """
    idx = bus_index(case)
    n = len(case.branches)
    f = np.empty(n, dtype=int)
    t = np.empty(n, dtype=int)
    yff = np.empty(n, dtype=complex)
    yft = np.empty(n, dtype=complex)
    ytf = np.empty(n, dtype=complex)
    ytt = np.empty(n, dtype=complex)
    for k, br in enumerate(case.branches):
        z = complex(br.r, br.x)
        if z == 0:
            raise ZeroImpedanceBranch(f"branch {br.from_bus}-{br.to_bus} has r = x = 0")
        ys = 1.0 / z
        tap = br.tap_ratio * np.exp(1j * np.deg2rad(br.phase_shift))
        half_b = 0.5j * br.b_charging
        f[k], t[k] = idx[br.from_bus], idx[br.to_bus]
        ytt[k] = ys + half_b
        yff[k] = ytt[k] / (tap * np.conj(tap))
        yft[k] = -ys / np.conj(tap)
        ytf[k] = -ys / tap
    return f, t, yff, yft, ytf, ytt


def build_ybus(case: PowerFlowCase) -> sp.csr_matrix:
    """Sparse complex bus admittance matrix, buses in case order."""
    nb = len(case.buses)
    f, t, yff, yft, ytf, ytt = branch_admittances(case)
    rows = np.concatenate([f, f, t, t])
    cols = np.concatenate([f, t, f, t])
    vals = np.concatenate([yff, yft, ytf, ytt])
    shunt = np.array([complex(b.shunt_g, b.shunt_b) for b in case.buses])
    ybus = sp.coo_matrix((vals, (rows, cols)), shape=(nb, nb)).tocsr()
    ybus = ybus + sp.diags(shunt, format="csr")
    ybus.sum_duplicates()
    ybus.sort_indices()
    return ybus


def scheduled_power(case: PowerFlowCase) -> np.ndarray:
    base = case.mva_base
    return np.array([complex(b.p_gen - b.p_load, b.q_gen - b.q_load) / base for b in case.buses])


def bus_types(case: PowerFlowCase):
    """Index arrays (ref, pv, pq) in case order."""
    kinds = [b.bus_type for b in case.buses]
    ref = np.array([i for i, k in enumerate(kinds) if k is BusType.SLACK], dtype=int)
    pv = np.array([i for i, k in enumerate(kinds) if k is BusType.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusType.PQ], dtype=int)
    return ref, pv, pq


def _check_connected(case: PowerFlowCase) -> None:
    idx = bus_index(case)
    adj: dict[int, list[int]] = {i: [] for i in range(len(case.buses))}
    for br in case.branches:
        a, b = idx[br.from_bus], idx[br.to_bus]
        adj[a].append(b)
        adj[b].append(a)
    start = idx[case.slack.number]
    seen = {start}
    stack = [start]
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    lost = [case.buses[i].number for i in range(len(case.buses)) if i not in seen]
    if lost:
        raise IslandedBus(f"buses {lost} have no path to the slack bus")


def initial_voltage(case: PowerFlowCase, flat_start: bool = True) -> np.ndarray:
    vm = np.array([b.v_mag for b in case.buses], dtype=float)
    va = np.deg2rad([b.v_ang for b in case.buses])
    if flat_start:
        for i, b in enumerate(case.buses):
            if b.bus_type is BusType.PQ:
                vm[i] = 1.0
            if b.bus_type is not BusType.SLACK:
                va[i] = 0.0
    return vm * np.exp(1j * va)


def calc_injection(ybus, v: np.ndarray) -> np.ndarray:
    return v * np.conj(ybus @ v)


def mismatch(case: PowerFlowCase, voltages, ybus=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus (dP, dQ) = scheduled minus calculated injection.

    Entries with no equation (dQ at PV buses, both at the slack) are zero.
    """
    if ybus is None:
        ybus = build_ybus(case)
    ds = scheduled_power(case) - calc_injection(ybus, np.asarray(voltages, dtype=complex))
    dp, dq = ds.real.copy(), ds.imag.copy()
    for i, b in enumerate(case.buses):
        if b.bus_type is BusType.SLACK:
            dp[i] = dq[i] = 0.0
        elif b.bus_type is BusType.PV:
            dq[i] = 0.0
    return dp, dq


def power_derivatives(ybus, v: np.ndarray):
    """Partial derivatives of S = V conj(Y V) w.r.t. voltage angle and magnitude."""
    ibus = ybus @ v
    diag_v = sp.diags(v)
    diag_i = sp.diags(ibus)
    diag_vn = sp.diags(v / np.abs(v))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
    return sp.csr_matrix(ds_dva), sp.csr_matrix(ds_dvm)


def jacobian(ybus, v: np.ndarray, pv: np.ndarray, pq: np.ndarray) -> sp.csr_matrix:
    """d[P(pv,pq); Q(pq)] / d[angle(pv,pq); |V|(pq)] of the calculated injections."""
    pvpq = np.r_[pv, pq]
    ds_dva, ds_dvm = power_derivatives(ybus, v)
    j11 = ds_dva[pvpq][:, pvpq].real
    j12 = ds_dvm[pvpq][:, pq].real
    j21 = ds_dva[pq][:, pvpq].imag
    j22 = ds_dvm[pq][:, pq].imag
    return sp.vstack([sp.hstack([j11, j12]), sp.hstack([j21, j22])], format="csc")


def _residual(ybus, v, sbus, pv, pq) -> np.ndarray:
    mis = calc_injection(ybus, v) - sbus
    return np.r_[mis[np.r_[pv, pq]].real, mis[pq].imag]


def _norm(f: np.ndarray) -> float:
    return float(np.max(np.abs(f))) if f.size else 0.0


def newton_raphson(ybus, sbus, v0, pv, pq, tol, max_iter):
    """Full Newton iteration in polar coordinates. Returns (V, converged, iterations, mismatch)."""
    v = v0.copy()
    va, vm = np.angle(v), np.abs(v)
    pvpq = np.r_[pv, pq]
    npvpq = len(pvpq)
    f = _residual(ybus, v, sbus, pv, pq)
    norm = _norm(f)
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        jac = jacobian(ybus, v, pv, pq)
        try:
            dx = splu(jac).solve(-f)
        except RuntimeError as exc:
            raise SingularJacobian(str(exc)) from None
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian("non-finite Newton step")
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = _residual(ybus, v, sbus, pv, pq)
        norm = _norm(f)
        if not np.isfinite(norm):
            break
    return v, bool(norm <= tol), it, norm


def gauss_seidel(ybus, sbus, v0, pv, pq, tol, max_iter):
    """Sequential per-bus voltage sweeps without acceleration.

    PV buses take the reactive power implied by the current iterate and are
    then pulled back to their scheduled magnitude.
    """
    v = v0.copy()
    vset = np.abs(v0)
    ybus = sp.csr_matrix(ybus)
    indptr, indices, data = ybus.indptr, ybus.indices, ybus.data
    diag = ybus.diagonal()
    s = sbus.copy()
    is_pv = np.zeros(len(v), dtype=bool)
    is_pv[pv] = True
    order = np.sort(np.r_[pv, pq])
    f = _residual(ybus, v, sbus, pv, pq)
    norm = _norm(f)
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        for i in order:
            row = slice(indptr[i], indptr[i + 1])
            yv = np.dot(data[row], v[indices[row]])
            if is_pv[i]:
                s[i] = sbus[i].real + 1j * (v[i] * np.conj(yv)).imag
            vi = (np.conj(s[i] / v[i]) - (yv - diag[i] * v[i])) / diag[i]
            if is_pv[i]:
                vi = vset[i] * vi / abs(vi)
            v[i] = vi
        f = _residual(ybus, v, sbus, pv, pq)
        norm = _norm(f)
        if not np.isfinite(norm):
            break
    return v, bool(norm <= tol), it, norm


@dataclass
class BranchFlows:
    s_from: np.ndarray
    s_to: np.ndarray
    loss: np.ndarray
    i_from: np.ndarray
    i_to: np.ndarray


def branch_flows(voltages, case: PowerFlowCase) -> BranchFlows:
    """Complex power entering each branch at both terminals.

    The line current I_ij is oriented from the branch into bus i, so the power
    leaving bus i into the branch is S_ij = -U_i * conj(I_ij). The loss of the
    branch is S_ij + S_ji.
    """
    v = np.asarray(voltages, dtype=complex)
    f, t, yff, yft, ytf, ytt = branch_admittances(case)
    i_from = -(yff * v[f] + yft * v[t])
    i_to = -(ytf * v[f] + ytt * v[t])
    s_from = -v[f] * np.conj(i_from)
    s_to = -v[t] * np.conj(i_to)
    return BranchFlows(s_from, s_to, s_from + s_to, i_from, i_to)


@dataclass
class PowerFlowSolution:
    bus_numbers: list[int]
    bus_types: list[BusType]
    v: np.ndarray
    injections: np.ndarray
    branch_ends: list[tuple[int, int]]
    s_from: np.ndarray
    s_to: np.ndarray
    losses: np.ndarray
    shunt_power: np.ndarray
    iterations: int
    converged: bool
    mismatch: float
    mva_base: float = 100.0
    method: Method = Method.NEWTON_RAPHSON
    switched_to_pq: list[int] = field(default_factory=list)

    @property
    def v_mag(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def v_ang_deg(self) -> np.ndarray:
        return np.rad2deg(np.angle(self.v))

    def voltage(self, bus: int) -> complex:
        return complex(self.v[self.bus_numbers.index(bus)])

    def injection(self, bus: int) -> complex:
        return complex(self.injections[self.bus_numbers.index(bus)])

    def flow(self, from_bus: int, to_bus: int) -> complex:
        """Power entering the branch at `from_bus` heading to `to_bus`."""
        for k, ends in enumerate(self.branch_ends):
            if ends == (from_bus, to_bus):
                return complex(self.s_from[k])
            if ends == (to_bus, from_bus):
                return complex(self.s_to[k])
        raise KeyError((from_bus, to_bus))

    def bus_rows(self) -> list[dict]:
        vm, va = self.v_mag, self.v_ang_deg
        return [
            {
                "number": n,
                "type": t.value,
                "v_mag_pu": float(vm[i]),
                "v_ang_deg": float(va[i]),
                "p_pu": float(self.injections[i].real),
                "q_pu": float(self.injections[i].imag),
            }
            for i, (n, t) in enumerate(zip(self.bus_numbers, self.bus_types))
        ]

    def branch_rows(self) -> list[dict]:
        return [
            {
                "from": a,
                "to": b,
                "p_from_pu": float(self.s_from[k].real),
                "q_from_pu": float(self.s_from[k].imag),
                "p_to_pu": float(self.s_to[k].real),
                "q_to_pu": float(self.s_to[k].imag),
                "loss_p_pu": float(self.losses[k].real),
            }
            for k, (a, b) in enumerate(self.branch_ends)
        ]

    def summary(self) -> dict:
        return {
            "method": self.method.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "mismatch": self.mismatch,
            "mva_base": self.mva_base,
        }

    def to_dict(self) -> dict:
        return {**self.summary(), "buses": self.bus_rows(), "branches": self.branch_rows()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def buses_csv(self) -> str:
        return _csv(BUS_COLUMNS, self.bus_rows(), self.mva_base)

    def branches_csv(self) -> str:
        return _csv(BRANCH_COLUMNS, self.branch_rows(), self.mva_base)


BUS_COLUMNS = ["number", "type", "v_mag_pu", "v_ang_deg", "p_pu", "q_pu"]
BRANCH_COLUMNS = ["from", "to", "p_from_pu", "q_from_pu", "p_to_pu", "q_to_pu", "loss_p_pu"]


def _csv(columns, rows, mva_base) -> str:
    buf = io.StringIO()
    buf.write(f"# mva_base={mva_base!r}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _solution(case, ybus, v, converged, iterations, norm, method, switched) -> PowerFlowSolution:
    flows = branch_flows(v, case)
    shunt = np.array([complex(b.shunt_g, -b.shunt_b) for b in case.buses]) * np.abs(v) ** 2
    return PowerFlowSolution(
        bus_numbers=[b.number for b in case.buses],
        bus_types=[b.bus_type for b in case.buses],
        v=v,
        injections=calc_injection(ybus, v),
        branch_ends=[(br.from_bus, br.to_bus) for br in case.branches],
        s_from=flows.s_from,
        s_to=flows.s_to,
        losses=flows.loss,
        shunt_power=shunt,
        iterations=iterations,
        converged=converged,
        mismatch=norm,
        mva_base=case.mva_base,
        method=method,
        switched_to_pq=switched,
    )


def _q_limit_violations(case, injections) -> list[int]:
    out = []
    for i, b in enumerate(case.buses):
        if b.bus_type is not BusType.PV or (b.q_max == 0.0 and b.q_min == 0.0):
            continue
        q_gen = injections[i].imag * case.mva_base + b.q_load
        if q_gen > b.q_max + 1e-9 or q_gen < b.q_min - 1e-9:
            out.append(i)
    return out


def solve(case: PowerFlowCase, config: SolverConfig | None = None) -> PowerFlowSolution:
    """Solve the case; raises Diverged (carrying the last iterate) if not converged."""
    config = config or SolverConfig()
    _check_connected(case)
    work = case
    switched: list[int] = []
    total_iter = 0
    v0 = initial_voltage(case, config.flat_start)
    while True:
        ybus = build_ybus(work)
        sbus = scheduled_power(work)
        ref, pv, pq = bus_types(work)
        run = newton_raphson if config.method is Method.NEWTON_RAPHSON else gauss_seidel
        v, ok, it, norm = run(ybus, sbus, v0, pv, pq, config.tolerance, config.max_iter)
        total_iter += it
        sol = _solution(work, ybus, v, ok, total_iter, norm, config.method, switched)
        if not ok:
            raise Diverged(
                f"{config.method.name} did not reach tolerance {config.tolerance:g} in "
                f"{config.max_iter} iterations (mismatch {norm:.3e})",
                sol,
            )
        if not config.enforce_q_limits:
            return sol
        over = _q_limit_violations(work, sol.injections)
        if not over:
            return sol
        work = work.copy() if work is case else work
        for i in over:
            b = work.buses[i]
            q_gen = sol.injections[i].imag * work.mva_base + b.q_load
            b.q_gen = b.q_max if q_gen > b.q_max else b.q_min
            b.bus_type = BusType.PQ
            switched.append(b.number)
        v0 = v
