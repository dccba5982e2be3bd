"""Joint and decomposed solution of the multi-home scheduling problem.

The joint problem minimizes the sum of all home costs minus all rewards,
with pairwise trade-clearing rows tying the signed trades together.  The
decomposition alternates per-home subproblems (each home optimizes its own
schedule against the latest auxiliary trades and prices) with a closed-form
coordination step that projects the proposed trades onto the cleared,
antisymmetric subspace and adjusts the per-pair price multipliers.  All
homes solve against the same snapshot in every sweep, so one iteration is
a Jacobi round followed by one coordination step.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol

import numpy as np

from .energy_model import (CostBreakdown, LinearConstraintSet, Mode, Schedule,
                           VariableLayout, build_user_constraints,
                           build_user_objective, combine_costs,
                           home_cost_terms, reward_terms, schedule_from_x,
                           user_layout)
from .qp import QpProblem, QpSolution, QpStatus, solve_qp
from .scenario import Scenario

__all__ = [
    "AdmmParams",
    "DualState",
    "InProcessTransport",
    "IterationRecord",
    "Outcome",
    "RhoSchedule",
    "SolveFailed",
    "Transport",
    "advance_iteration",
    "assemble_problem",
    "assemble_ult",
    "dual_state_digest",
    "has_converged",
    "new_dual_state",
    "run_distributed",
    "sct_step",
    "solve_centralized",
]


class SolveFailed(RuntimeError):
    """A subproblem or the joint problem did not reach optimality."""

    def __init__(self, message: str, status: QpStatus):
        super().__init__(message)
        self.status = status


# ---------------------------------------------------------------------------
# dual state

@dataclass
class DualState:
    """Coordination state shared between homes.

    ``trades[n][m][t]`` is home n's proposed sale to m (negative: purchase),
    ``trades_aux`` the cleared antisymmetric copy, ``duals`` the per-pair
    price multipliers.  ``iteration`` counts completed coordination steps;
    ``rho`` is the penalty weight the next sweep will use.  Diagonals stay
    zero.
    """

    trades: np.ndarray
    trades_aux: np.ndarray
    duals: np.ndarray
    rho: float
    iteration: int

    def copy(self) -> "DualState":
        return DualState(trades=self.trades.copy(),
                         trades_aux=self.trades_aux.copy(),
                         duals=self.duals.copy(),
                         rho=self.rho, iteration=self.iteration)


def new_dual_state(n_users: int, horizon: int, rho: float) -> DualState:
    shape = (n_users, n_users, horizon)
    return DualState(trades=np.zeros(shape), trades_aux=np.zeros(shape),
                     duals=np.zeros(shape), rho=rho, iteration=0)


def dual_state_digest(d: DualState) -> str:
    """Canonical SHA-256 over the full coordination state."""
    n, _, t = d.trades.shape
    h = hashlib.sha256()
    h.update(n.to_bytes(4, "little"))
    h.update(t.to_bytes(4, "little"))
    h.update(int(d.iteration).to_bytes(8, "little"))
    h.update(np.float64(d.rho).tobytes())
    for arr in (d.trades, d.trades_aux, d.duals):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


class RhoKind(enum.Enum):
    FIXED = "fixed"
    RECIPROCAL = "reciprocal"


@dataclass(frozen=True)
class RhoSchedule:
    kind: RhoKind
    value: float = 1.0

    @staticmethod
    def fixed(value: float = 1.0) -> "RhoSchedule":
        if value <= 0:
            raise ValueError("penalty weight must be positive")
        return RhoSchedule(RhoKind.FIXED, value)

    @staticmethod
    def reciprocal() -> "RhoSchedule":
        return RhoSchedule(RhoKind.RECIPROCAL)

    def rho_at(self, k: int) -> float:
        if k < 1:
            raise ValueError("iterations are counted from 1")
        if self.kind is RhoKind.FIXED:
            return self.value
        return 1.0 / k


@dataclass(frozen=True)
class AdmmParams:
    eps: float = 1e-6
    max_iter: int = 1000
    rho_schedule: RhoSchedule = field(default_factory=RhoSchedule.fixed)
    qp_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("convergence threshold must be positive")
        if self.max_iter < 1:
            raise ValueError("need at least one iteration")


# ---------------------------------------------------------------------------
# coordination step

def sct_step(d: DualState) -> DualState:
    """Closed-form coordination update.

    For every ordered pair (n, m):

        aux[n][m] = (rho * (e[n][m] - e[m][n]) - (lam[n][m] - lam[m][n]))
                    / (2 * rho)
        lam[n][m] += rho * (aux[n][m] - e[n][m])

    The auxiliary trades are antisymmetric exactly: the lower triangle is
    written as the negated upper triangle.  The iteration counter is left
    unchanged; callers advance it once the step is applied everywhere.
    """
    e = d.trades
    lam = d.duals
    rho = d.rho
    if rho <= 0:
        raise ValueError("penalty weight must be positive")
    diff_e = e - e.transpose(1, 0, 2)
    diff_l = lam - lam.transpose(1, 0, 2)
    aux = (rho * diff_e - diff_l) / (2.0 * rho)
    n = e.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    aux[ju, iu, :] = -aux[iu, ju, :]
    idx = np.arange(n)
    aux[idx, idx, :] = 0.0
    lam_new = lam + rho * (aux - e)
    lam_new[idx, idx, :] = 0.0
    return DualState(trades=e.copy(), trades_aux=aux, duals=lam_new,
                     rho=rho, iteration=d.iteration)


def advance_iteration(d: DualState, schedule: RhoSchedule) -> DualState:
    """Roll the state to the next iteration after a coordination step."""
    k = d.iteration + 1
    return DualState(trades=d.trades, trades_aux=d.trades_aux, duals=d.duals,
                     rho=schedule.rho_at(k + 1), iteration=k)


def has_converged(d: DualState, prev: DualState, eps: float) -> bool:
    """True when proposals match the cleared trades and prices have settled.

    Sum over homes of the Euclidean gap between proposed and cleared
    trades, and the Euclidean change of the multipliers since the previous
    iteration; both must be <= eps (inclusive).
    """
    n = d.trades.shape[0]
    primal = sum(
        float(np.linalg.norm((d.trades_aux[i] - d.trades[i]).ravel()))
        for i in range(n))
    dual = float(np.linalg.norm((d.duals - prev.duals).ravel()))
    return primal <= eps and dual <= eps


# ---------------------------------------------------------------------------
# joint problem

_TRADE_TIEBREAK = 1e-8


def assemble_problem(s: Scenario, mode: Mode) -> QpProblem:
    """Joint QP over all homes, plus trade-clearing rows in trading modes.

    Trade columns get a vanishing tie-break curvature: cycles of offsetting
    trades between three or more homes cost nothing, so without it the
    cleared trades are non-unique and the optimal face is degenerate.  The
    tie-break picks the minimum-norm clearing.  Reported costs are always
    recomputed from the schedules and never include it.
    """
    layout = user_layout(s.n_users, s.grid.horizon, mode)
    nv = layout.n_vars
    t = s.grid.horizon
    p_diag = np.zeros(nv)
    q = np.zeros(nv)
    eq_rows: List[np.ndarray] = []
    eq_rhs: List[float] = []
    eq_tags: List[str] = []
    in_rows: List[np.ndarray] = []
    in_rhs: List[float] = []
    in_tags: List[str] = []
    lo = np.full(nv, -np.inf)
    hi = np.full(nv, np.inf)

    for n in range(s.n_users):
        base = layout._block_start(n)
        block = slice(base, base + layout.block_size)
        pd_n, q_n, _ = build_user_objective(s, n, mode)
        p_diag[block] = pd_n
        q[block] = q_n
        if mode.has_horizontal and s.n_users > 1:
            sp = layout.span(n, "trades")
            p_diag[sp] += _TRADE_TIEBREAK
        cs = build_user_constraints(s, n, mode)
        for row, rhs, tag in zip(cs.a_eq, cs.b_eq, cs.eq_tags):
            wide = np.zeros(nv)
            wide[block] = row
            eq_rows.append(wide)
            eq_rhs.append(float(rhs))
            eq_tags.append(tag)
        for row, rhs, tag in zip(cs.a_in, cs.b_in, cs.in_tags):
            wide = np.zeros(nv)
            wide[block] = row
            in_rows.append(wide)
            in_rhs.append(float(rhs))
            in_tags.append(tag)
        lo[block] = cs.lo
        hi[block] = cs.hi

    if mode.has_horizontal and s.n_users > 1:
        for n in range(s.n_users):
            for m in range(n + 1, s.n_users):
                for tt in range(t):
                    row = np.zeros(nv)
                    row[layout.trade_span(n, m).start + tt] = 1.0
                    row[layout.trade_span(m, n).start + tt] = 1.0
                    eq_rows.append(row)
                    eq_rhs.append(0.0)
                    eq_tags.append(f"trade-clearing[pair=({n},{m}),t={tt}]")

    constraints = LinearConstraintSet(
        n_vars=nv, a_eq=np.array(eq_rows), b_eq=np.array(eq_rhs),
        eq_tags=eq_tags, a_in=np.array(in_rows), b_in=np.array(in_rhs),
        senses=["<="] * len(in_rhs), in_tags=in_tags, lo=lo, hi=hi)
    return QpProblem(p=np.diag(p_diag), q=q, constraints=constraints,
                     layout_tag=f"{mode.value}:joint:N={s.n_users}:T={t}")


# ---------------------------------------------------------------------------
# outcomes

@dataclass
class IterationRecord:
    iteration: int
    rho: float
    primal_residual: float
    dual_residual: float
    digest_local: str
    digest_transport: str


@dataclass
class Outcome:
    mode: str
    schedules: List[Schedule]
    costs: List[CostBreakdown]
    total_cost: float
    iterations: int
    converged: bool
    history: List[IterationRecord] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        def arr(a: np.ndarray):
            return np.asarray(a).tolist()
        return {
            "schema": "gridledger.outcome.v1",
            "mode": self.mode,
            "total_cost": self.total_cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "users": [
                {
                    "costs": vars(c).copy(),
                    "schedule": {
                        "load_hvac": arr(sch.load_hvac),
                        "load_shift": arr(sch.load_shift),
                        "load_curtail": arr(sch.load_curtail),
                        "supply_grid": arr(sch.supply_grid),
                        "supply_renewable": arr(sch.supply_renewable),
                        "ev_charge": arr(sch.ev_charge),
                        "ev_discharge": arr(sch.ev_discharge),
                        "ev_energy": arr(sch.ev_energy),
                        "temp_in": arr(sch.temp_in),
                        "feed_in": arr(sch.feed_in),
                        "dr_reduce": arr(sch.dr_reduce),
                        "trades": arr(sch.trades),
                        "peak": sch.peak,
                    },
                }
                for sch, c in zip(self.schedules, self.costs)
            ],
            "history": [vars(r).copy() for r in self.history],
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def _outcome_from_schedules(s: Scenario, mode: Mode, schedules: List[Schedule],
                            iterations: int, converged: bool,
                            history: Optional[List[IterationRecord]] = None
                            ) -> Outcome:
    costs = []
    for n, sch in enumerate(schedules):
        costs.append(combine_costs(home_cost_terms(sch, s.users[n], s.tariff),
                                   reward_terms(sch, s.prices)))
    total = float(sum(c.net_cost for c in costs))
    return Outcome(mode=mode.value, schedules=schedules, costs=costs,
                   total_cost=total, iterations=iterations,
                   converged=converged, history=history or [])


def solve_centralized(s: Scenario, mode: Mode, tol: float = 1e-6) -> Outcome:
    """Solve the joint problem; raises SolveFailed unless optimal.

    The returned point is certified to KKT residuals <= tol.  The default
    suits joint problems with several hundred variables, where the
    regularized saddle solves plateau near 1e-8; pass a tighter tolerance
    for small instances.
    """
    problem = assemble_problem(s, mode)
    sol = solve_qp(problem, tol=tol)
    if sol.status is not QpStatus.OPTIMAL:
        raise SolveFailed(f"joint {mode.value} solve ended with "
                          f"{sol.status.value} (kkt={sol.kkt})", sol.status)
    layout = user_layout(s.n_users, s.grid.horizon, mode)
    schedules = [schedule_from_x(sol.x, layout, n) for n in range(s.n_users)]
    return _outcome_from_schedules(s, mode, schedules, sol.iterations, True)


# ---------------------------------------------------------------------------
# per-home subproblem

def assemble_ult(s: Scenario, user: int, d: DualState) -> QpProblem:
    """One home's subproblem given the latest coordination state.

    Objective: the home's own net cost plus, for every peer and slot,
    rho/2 * (aux - e)^2 - lam * e over its proposed trades.  Constraints
    are the home's own rows; the clearing rows are replaced by the penalty.
    """
    layout = user_layout(s.n_users, s.grid.horizon, Mode.TEM, users=[user])
    p_diag, q, _ = build_user_objective(s, user, Mode.TEM)
    if s.n_users > 1:
        for m in layout.peers(user):
            sp = layout.trade_span(user, m)
            p_diag[sp] += d.rho
            q[sp] += -d.rho * d.trades_aux[user, m] - d.duals[user, m]
    constraints = build_user_constraints(s, user, Mode.TEM)
    return QpProblem(p=np.diag(p_diag), q=q, constraints=constraints,
                     layout_tag=f"ULT:user={user}:N={s.n_users}:"
                                f"T={s.grid.horizon}")


# ---------------------------------------------------------------------------
# transports

class Transport(Protocol):
    """Where the coordination state lives during a distributed run."""

    def begin(self, s: Scenario, params: AdmmParams) -> None: ...

    def read_state(self) -> DualState: ...

    def publish(self, user: int, iteration: int, trades_row: np.ndarray) -> None: ...

    def run_sct(self) -> DualState: ...

    def digest(self) -> str: ...

    def settle(self, s: Scenario, outcome: Outcome) -> None: ...


class InProcessTransport:
    """Coordination state held directly in this process."""

    def __init__(self) -> None:
        self.state: Optional[DualState] = None
        self._schedule: Optional[RhoSchedule] = None

    def begin(self, s: Scenario, params: AdmmParams) -> None:
        self._schedule = params.rho_schedule
        self.state = new_dual_state(s.n_users, s.grid.horizon,
                                    params.rho_schedule.rho_at(1))

    def read_state(self) -> DualState:
        assert self.state is not None
        return self.state.copy()

    def publish(self, user: int, iteration: int, trades_row: np.ndarray) -> None:
        assert self.state is not None
        if iteration != self.state.iteration + 1:
            raise ValueError(f"decision for iteration {iteration} but the "
                             f"state accepts {self.state.iteration + 1}")
        self.state.trades[user] = trades_row

    def run_sct(self) -> DualState:
        assert self.state is not None and self._schedule is not None
        self.state = advance_iteration(sct_step(self.state), self._schedule)
        return self.state.copy()

    def digest(self) -> str:
        assert self.state is not None
        return dual_state_digest(self.state)

    def settle(self, s: Scenario, outcome: Outcome) -> None:
        return None


# ---------------------------------------------------------------------------
# distributed driver

def run_distributed(s: Scenario, params: AdmmParams,
                    transport: Optional[Transport] = None) -> Outcome:
    """Jacobi sweeps of per-home solves plus coordination steps.

    Every sweep solves all homes against the same snapshot, publishes the
    proposed trades, runs the coordination step through the transport and
    mirrors it locally; the mirrored and transported states must stay in
    lockstep (their digests are recorded per iteration).  The returned
    schedules carry the final cleared trades, which are antisymmetric
    exactly; each home's own proposal history stays in the dual state.
    """
    if transport is None:
        transport = InProcessTransport()
    transport.begin(s, params)
    mirror = new_dual_state(s.n_users, s.grid.horizon,
                            params.rho_schedule.rho_at(1))
    history: List[IterationRecord] = []
    warm: Dict[int, QpSolution] = {}
    schedules: List[Schedule] = [None] * s.n_users  # type: ignore[list-item]
    converged = False
    iterations = 0

    for k in range(1, params.max_iter + 1):
        snap = transport.read_state()
        if snap.iteration != mirror.iteration or snap.rho != mirror.rho:
            raise RuntimeError("transport state diverged from the local mirror")
        snap_local = mirror.copy()
        for n in range(s.n_users):
            problem = assemble_ult(s, n, snap_local)
            sol = solve_qp(problem, tol=params.qp_tol, warm_start=warm.get(n))
            if sol.status is not QpStatus.OPTIMAL:
                raise SolveFailed(
                    f"home {n} subproblem at iteration {k} ended with "
                    f"{sol.status.value}", sol.status)
            warm[n] = sol
            ulay = user_layout(s.n_users, s.grid.horizon, Mode.TEM, users=[n])
            sch = schedule_from_x(sol.x, ulay, n)
            schedules[n] = sch
            transport.publish(n, k, sch.trades)
            mirror.trades[n] = sch.trades
        prev = mirror.copy()
        mirror = advance_iteration(sct_step(mirror), params.rho_schedule)
        remote = transport.run_sct()
        dl = dual_state_digest(mirror)
        dr = dual_state_digest(remote)
        primal = sum(
            float(np.linalg.norm((mirror.trades_aux[i] - mirror.trades[i]).ravel()))
            for i in range(s.n_users))
        dual = float(np.linalg.norm((mirror.duals - prev.duals).ravel()))
        history.append(IterationRecord(
            iteration=k, rho=prev.rho, primal_residual=primal,
            dual_residual=dual, digest_local=dl, digest_transport=dr))
        iterations = k
        if has_converged(mirror, prev, params.eps):
            converged = True
            break

    # final schedules carry the cleared trades
    for n in range(s.n_users):
        schedules[n].trades = mirror.trades_aux[n].copy()
    outcome = _outcome_from_schedules(s, Mode.TEM, list(schedules),
                                      iterations, converged, history)
    transport.settle(s, outcome)
    return outcome
