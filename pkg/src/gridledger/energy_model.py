"""Per-home scheduling model: variables, costs, rewards and constraints.

Each home schedules HVAC, shiftable and curtailable loads, grid and
renewable supply, an EV battery, feed-in and demand-response exports and
(in trading modes) signed peer-to-peer energy trades.  The model is a
convex QP: quadratic discomfort terms plus linear grid/reward prices, with
the single peak-draw charge linearised through an epigraph variable.

Four modes control which coordination channels exist:

=====  ==================  ====================
mode   vertical (FIT/DR)   horizontal (trades)
=====  ==================  ====================
TEM    yes                 yes
BS1    no                  no
BS2    yes                 no
BS3    no                  yes
=====  ==================  ====================
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .scenario import (EvParams, GridTariff, Scenario, TransactivePrices,
                       UserScenario, slots_to_mask)

__all__ = [
    "CONSTRAINT_TAGS",
    "CostBreakdown",
    "LinearConstraintSet",
    "Mode",
    "Schedule",
    "VariableLayout",
    "base_tag",
    "build_user_constraints",
    "build_user_objective",
    "check_schedule",
    "combine_costs",
    "ev_trajectory",
    "home_cost_terms",
    "hvac_trajectory",
    "reward_terms",
    "schedule_from_x",
    "user_layout",
]


class Mode(enum.Enum):
    TEM = "TEM"
    BS1 = "BS1"
    BS2 = "BS2"
    BS3 = "BS3"

    @property
    def has_vertical(self) -> bool:
        return self in (Mode.TEM, Mode.BS2)

    @property
    def has_horizontal(self) -> bool:
        return self in (Mode.TEM, Mode.BS3)


# Stable identifiers for every constraint row family.  Row tags are
# "<base>[user=<n>,t=<slot>]" (slot omitted for one-off rows).
CONSTRAINT_TAGS = frozenset({
    "power-balance",
    "shift-total",
    "indoor-temp-update",
    "ev-charge-update",
    "ev-full-at-departure",
    "dr-within-grid-draw",
    "renewable-split-cap",
    "peak-epigraph",
    "trade-clearing",
})


def base_tag(tag: str) -> str:
    return tag.split("[", 1)[0]


# ---------------------------------------------------------------------------
# variable layout

@dataclass(frozen=True)
class VariableLayout:
    """Column layout of the flat decision vector.

    Every covered user owns one identical block of columns; ``users`` lists
    the covered user ids in block order (a single id for one-home problems,
    all ids for the joint problem).  ``segments`` gives (name, local start,
    length) within a block.
    """

    mode: Mode
    scenario_users: int
    horizon: int
    users: Tuple[int, ...]
    segments: Tuple[Tuple[str, int, int], ...]
    block_size: int

    @property
    def n_vars(self) -> int:
        return self.block_size * len(self.users)

    def _block_start(self, user: int) -> int:
        return self.users.index(user) * self.block_size

    def _segment(self, name: str) -> Tuple[str, int, int]:
        for seg in self.segments:
            if seg[0] == name:
                return seg
        raise KeyError(f"no segment {name!r} in mode {self.mode.value}")

    def span(self, user: int, name: str) -> slice:
        _, start, length = self._segment(name)
        base = self._block_start(user) + start
        return slice(base, base + length)

    def col(self, user: int, name: str, t: int = 0) -> int:
        sp = self.span(user, name)
        if not 0 <= t < sp.stop - sp.start:
            raise IndexError(f"slot {t} outside segment {name}")
        return sp.start + t

    def peers(self, user: int) -> Tuple[int, ...]:
        return tuple(m for m in range(self.scenario_users) if m != user)

    def trade_span(self, user: int, peer: int) -> slice:
        sp = self.span(user, "trades")
        idx = self.peers(user).index(peer)
        start = sp.start + idx * self.horizon
        return slice(start, start + self.horizon)

    def describe(self) -> str:
        """Human-readable column table (used by the CLI layout command)."""
        lines = [f"mode={self.mode.value} users={list(self.users)} "
                 f"horizon={self.horizon} n_vars={self.n_vars}",
                 f"{'user':>4} {'variable':<18} {'columns':<14} length"]
        for u in self.users:
            for name, start, length in self.segments:
                base = self._block_start(u) + start
                lines.append(f"{u:>4} {name:<18} "
                             f"[{base}, {base + length}) {length:>6}")
        return "\n".join(lines)


def user_layout(scenario_users: int, horizon: int, mode: Mode,
                users: Optional[Sequence[int]] = None) -> VariableLayout:
    """Layout covering ``users`` (default: all users jointly)."""
    t = horizon
    names = ["load_hvac", "load_shift", "load_curtail", "supply_grid",
             "supply_renewable", "ev_charge", "ev_discharge", "ev_energy",
             "temp_in"]
    lengths = [t] * len(names)
    if mode.has_vertical:
        names += ["feed_in", "dr_reduce"]
        lengths += [t, t]
    if mode.has_horizontal and scenario_users > 1:
        names.append("trades")
        lengths.append((scenario_users - 1) * t)
    names.append("peak")
    lengths.append(1)
    segments = []
    pos = 0
    for name, length in zip(names, lengths):
        segments.append((name, pos, length))
        pos += length
    covered = tuple(users) if users is not None else tuple(range(scenario_users))
    return VariableLayout(mode=mode, scenario_users=scenario_users,
                          horizon=t, users=covered,
                          segments=tuple(segments), block_size=pos)


# ---------------------------------------------------------------------------
# trajectories

def hvac_trajectory(load_hvac: np.ndarray, temp_out: np.ndarray,
                    temp_init: float, alpha: float, beta: float) -> np.ndarray:
    """Indoor temperature series implied by an HVAC input series.

    temp[t] = temp[t-1] + alpha * load[t] - beta * (temp[t-1] - out[t]),
    with temp[-1] = temp_init.  Affine in the HVAC input.
    """
    load = np.asarray(load_hvac, dtype=float)
    out = np.asarray(temp_out, dtype=float)
    if load.shape != out.shape:
        raise ValueError("HVAC input and outdoor series differ in length")
    temp = np.empty_like(load)
    prev = float(temp_init)
    for t in range(load.size):
        prev = prev + alpha * load[t] - beta * (prev - out[t])
        temp[t] = prev
    return temp


def ev_trajectory(charge: np.ndarray, discharge: np.ndarray, charge_init: float,
                  eff_charge: float, eff_discharge: float) -> np.ndarray:
    """Battery state of charge over the plug-in window.

    e[t] = e[t-1] + eff_charge * charge[t] - discharge[t] / eff_discharge,
    with e[-1] = charge_init.  Series cover the plug-in window only.
    """
    cha = np.asarray(charge, dtype=float)
    dis = np.asarray(discharge, dtype=float)
    if cha.shape != dis.shape:
        raise ValueError("charge and discharge series differ in length")
    e = np.empty_like(cha)
    prev = float(charge_init)
    for t in range(cha.size):
        prev = prev + eff_charge * cha[t] - dis[t] / eff_discharge
        e[t] = prev
    return e


# ---------------------------------------------------------------------------
# schedules and costs

@dataclass
class Schedule:
    """One home's decisions over the horizon (signed trades: + sells)."""

    load_hvac: np.ndarray
    load_shift: np.ndarray
    load_curtail: np.ndarray
    supply_grid: np.ndarray
    supply_renewable: np.ndarray
    ev_charge: np.ndarray
    ev_discharge: np.ndarray
    ev_energy: np.ndarray
    temp_in: np.ndarray
    feed_in: np.ndarray
    dr_reduce: np.ndarray
    trades: np.ndarray           # (n_users, horizon); own row all zero
    peak: float                  # epigraph value for the highest grid draw


@dataclass
class CostBreakdown:
    shift_cost: float = 0.0
    curtail_cost: float = 0.0
    comfort_cost: float = 0.0
    grid_cost: float = 0.0
    battery_cost: float = 0.0
    home_cost: float = 0.0
    feed_in_reward: float = 0.0
    dr_reward: float = 0.0
    vertical_reward: float = 0.0
    trade_reward: float = 0.0
    net_cost: float = 0.0


def home_cost_terms(sch: Schedule, user: UserScenario,
                    tariff: GridTariff) -> CostBreakdown:
    """Cost side of the breakdown (rewards left at zero)."""
    shift = user.w_shift * float(np.sum((sch.load_shift - user.shift_pref) ** 2))
    curtail = user.w_curtail * float(np.sum((sch.load_curtail - user.curtail_pref) ** 2))
    comfort = user.w_comfort * float(np.sum((sch.temp_in - user.temp_ref) ** 2))
    grid = tariff.price_energy * float(np.sum(sch.supply_grid)) \
        + tariff.price_peak * float(np.max(sch.supply_grid))
    battery = user.ev.w_degrade * float(np.sum(sch.ev_discharge ** 2))
    home = shift + curtail + comfort + grid + battery
    return CostBreakdown(shift_cost=shift, curtail_cost=curtail,
                         comfort_cost=comfort, grid_cost=grid,
                         battery_cost=battery, home_cost=home, net_cost=home)


def reward_terms(sch: Schedule, prices: TransactivePrices) -> CostBreakdown:
    """Reward side of the breakdown (costs left at zero).

    Relies on the schedule invariant that feed-in and demand-response
    exports vanish outside their windows, so unmasked sums equal the
    window-restricted definitions.
    """
    fit = float(np.dot(prices.feed_in, sch.feed_in))
    dr = float(np.dot(prices.dr, sch.dr_reduce))
    trade = float(np.dot(prices.trade, sch.trades.sum(axis=0)))
    return CostBreakdown(feed_in_reward=fit, dr_reward=dr,
                         vertical_reward=fit + dr, trade_reward=trade,
                         net_cost=-(fit + dr + trade))


def combine_costs(cost: CostBreakdown, reward: CostBreakdown) -> CostBreakdown:
    return CostBreakdown(
        shift_cost=cost.shift_cost, curtail_cost=cost.curtail_cost,
        comfort_cost=cost.comfort_cost, grid_cost=cost.grid_cost,
        battery_cost=cost.battery_cost, home_cost=cost.home_cost,
        feed_in_reward=reward.feed_in_reward, dr_reward=reward.dr_reward,
        vertical_reward=reward.vertical_reward,
        trade_reward=reward.trade_reward,
        net_cost=cost.home_cost - reward.vertical_reward - reward.trade_reward)


def schedule_from_x(x: np.ndarray, layout: VariableLayout, user: int) -> Schedule:
    """Extract one home's schedule from a flat solution vector."""
    t = layout.horizon
    n = layout.scenario_users

    def seg(name: str) -> np.ndarray:
        return np.array(x[layout.span(user, name)], dtype=float)

    if layout.mode.has_vertical:
        feed = seg("feed_in")
        dr = seg("dr_reduce")
    else:
        feed = np.zeros(t)
        dr = np.zeros(t)
    trades = np.zeros((n, t))
    if layout.mode.has_horizontal and n > 1:
        for m in layout.peers(user):
            trades[m] = x[layout.trade_span(user, m)]
    return Schedule(
        load_hvac=seg("load_hvac"), load_shift=seg("load_shift"),
        load_curtail=seg("load_curtail"), supply_grid=seg("supply_grid"),
        supply_renewable=seg("supply_renewable"), ev_charge=seg("ev_charge"),
        ev_discharge=seg("ev_discharge"), ev_energy=seg("ev_energy"),
        temp_in=seg("temp_in"), feed_in=feed, dr_reduce=dr, trades=trades,
        peak=float(x[layout.span(user, "peak")][0]))


def check_schedule(sch: Schedule, s: Scenario, user: int,
                   tol: float = 1e-7) -> List[str]:
    """Verify schedule invariants; returns human-readable findings."""
    out: List[str] = []
    u = s.users[user]
    t = s.grid.horizon
    ev = u.ev

    def expect(ok: bool, msg: str) -> None:
        if not ok:
            out.append(msg)

    for name in ("load_hvac", "load_shift", "load_curtail", "supply_grid",
                 "supply_renewable", "ev_charge", "ev_discharge", "ev_energy",
                 "feed_in", "dr_reduce"):
        expect(bool(np.all(getattr(sch, name) >= -tol)),
               f"{name} has negative entries")
    expect(bool(np.all(sch.supply_grid <= s.tariff.line_cap + tol)),
           "grid draw exceeds the line capacity")
    expect(sch.peak >= float(np.max(sch.supply_grid)) - tol,
           "peak variable below the actual maximum grid draw")
    shift_mask = s.grid.shift_mask(user)
    expect(bool(np.all(np.abs(sch.load_shift[~shift_mask]) <= tol)),
           "shiftable load scheduled outside its window")
    dr_mask = s.grid.dr_mask()
    expect(bool(np.all(np.abs(sch.dr_reduce[~dr_mask]) <= tol)),
           "demand-response export outside its window")
    ev_mask = s.grid.ev_mask(user)
    for name in ("ev_charge", "ev_discharge", "ev_energy"):
        expect(bool(np.all(np.abs(getattr(sch, name)[~ev_mask]) <= tol)),
               f"{name} nonzero outside the plug-in window")
    expect(bool(np.all(sch.ev_energy <= ev.capacity + tol)),
           "battery energy exceeds capacity")
    expect(abs(sch.trades[user]).max(initial=0.0) <= tol,
           "self-trade entries must be zero")

    span = s.grid.ev_slice(user)
    etraj = ev_trajectory(sch.ev_charge[span], sch.ev_discharge[span],
                          ev.charge_init, ev.eff_charge, ev.eff_discharge)
    expect(float(np.max(np.abs(etraj - sch.ev_energy[span]), initial=0.0)) <= tol,
           "battery series inconsistent with the charge/discharge series")
    ttraj = hvac_trajectory(sch.load_hvac, u.temp_out, u.temp_init,
                            u.hvac_alpha, u.hvac_beta)
    expect(float(np.max(np.abs(ttraj - sch.temp_in))) <= tol,
           "indoor temperature series inconsistent with the HVAC series")
    return out


# ---------------------------------------------------------------------------
# constraint and objective assembly

@dataclass
class LinearConstraintSet:
    """Dense linear constraints with per-row tags.

    Inequality senses are recorded per row ("<=" or ">="); builders in this
    module emit "<=" only.  Bounds are per-column closed intervals with
    +-inf for absent sides.
    """

    n_vars: int
    a_eq: np.ndarray
    b_eq: np.ndarray
    eq_tags: List[str]
    a_in: np.ndarray
    b_in: np.ndarray
    senses: List[str]
    in_tags: List[str]
    lo: np.ndarray
    hi: np.ndarray


def build_user_constraints(s: Scenario, user: int, mode: Mode) -> LinearConstraintSet:
    """All rows and bounds for one home (no cross-user clearing rows)."""
    layout = user_layout(s.n_users, s.grid.horizon, mode, users=[user])
    t = s.grid.horizon
    u = s.users[user]
    ev = u.ev
    nv = layout.n_vars

    eq_rows: List[np.ndarray] = []
    eq_rhs: List[float] = []
    eq_tags: List[str] = []
    in_rows: List[np.ndarray] = []
    in_rhs: List[float] = []
    in_tags: List[str] = []

    def eq(row: np.ndarray, rhs: float, tag: str) -> None:
        eq_rows.append(row)
        eq_rhs.append(rhs)
        eq_tags.append(tag)

    def le(row: np.ndarray, rhs: float, tag: str) -> None:
        in_rows.append(row)
        in_rhs.append(rhs)
        in_tags.append(tag)

    def cidx(name: str, tt: int = 0) -> int:
        return layout.col(user, name, tt)

    shift_mask = s.grid.shift_mask(user)
    dr_mask = s.grid.dr_mask()
    ev_mask = s.grid.ev_mask(user)
    w0 = ev.t_arrive - 1

    # supply must cover demand in every slot
    for tt in range(t):
        row = np.zeros(nv)
        row[cidx("load_hvac", tt)] = 1.0
        row[cidx("load_shift", tt)] = 1.0
        row[cidx("load_curtail", tt)] = 1.0
        row[cidx("ev_charge", tt)] = 1.0
        row[cidx("supply_renewable", tt)] = -1.0
        row[cidx("supply_grid", tt)] = -1.0
        row[cidx("ev_discharge", tt)] = -1.0
        if mode.has_vertical:
            row[cidx("dr_reduce", tt)] = 1.0
        if mode.has_horizontal and s.n_users > 1:
            for m in layout.peers(user):
                row[layout.trade_span(user, m)][tt] = 1.0
        eq(row, -float(u.inflexible[tt]), f"power-balance[user={user},t={tt}]")

    # total shiftable energy is conserved inside the shift window
    row = np.zeros(nv)
    row[layout.span(user, "load_shift")] = shift_mask.astype(float)
    eq(row, float(u.shift_pref[shift_mask].sum()), f"shift-total[user={user}]")

    # linear indoor temperature update
    for tt in range(t):
        row = np.zeros(nv)
        row[cidx("temp_in", tt)] = 1.0
        row[cidx("load_hvac", tt)] = -u.hvac_alpha
        if tt == 0:
            rhs = (1.0 - u.hvac_beta) * u.temp_init + u.hvac_beta * float(u.temp_out[0])
        else:
            row[cidx("temp_in", tt - 1)] = -(1.0 - u.hvac_beta)
            rhs = u.hvac_beta * float(u.temp_out[tt])
        eq(row, rhs, f"indoor-temp-update[user={user},t={tt}]")

    # battery bookkeeping inside the plug-in window
    for tt in range(t):
        if not ev_mask[tt]:
            continue
        row = np.zeros(nv)
        row[cidx("ev_energy", tt)] = 1.0
        row[cidx("ev_charge", tt)] = -ev.eff_charge
        row[cidx("ev_discharge", tt)] = 1.0 / ev.eff_discharge
        if tt == w0:
            rhs = ev.charge_init
        else:
            row[cidx("ev_energy", tt - 1)] = -1.0
            rhs = 0.0
        eq(row, rhs, f"ev-charge-update[user={user},t={tt}]")
    row = np.zeros(nv)
    row[cidx("ev_energy", ev.t_depart - 1)] = 1.0
    eq(row, ev.capacity, f"ev-full-at-departure[user={user}]")

    if mode.has_vertical:
        for tt in range(t):
            if dr_mask[tt]:
                row = np.zeros(nv)
                row[cidx("dr_reduce", tt)] = 1.0
                row[cidx("supply_grid", tt)] = -1.0
                le(row, 0.0, f"dr-within-grid-draw[user={user},t={tt}]")
        for tt in range(t):
            row = np.zeros(nv)
            row[cidx("supply_renewable", tt)] = 1.0
            row[cidx("feed_in", tt)] = 1.0
            le(row, float(u.renewable_cap[tt]),
               f"renewable-split-cap[user={user},t={tt}]")

    # peak epigraph: the peak variable dominates every grid draw
    for tt in range(t):
        row = np.zeros(nv)
        row[cidx("supply_grid", tt)] = 1.0
        row[cidx("peak", 0)] = -1.0
        le(row, 0.0, f"peak-epigraph[user={user},t={tt}]")

    lo = np.full(nv, -np.inf)
    hi = np.full(nv, np.inf)

    def set_bounds(name: str, lo_vals, hi_vals) -> None:
        sp = layout.span(user, name)
        lo[sp] = lo_vals
        hi[sp] = hi_vals

    set_bounds("load_hvac", 0.0, np.inf)
    set_bounds("load_shift", 0.0, np.where(shift_mask, np.inf, 0.0))
    set_bounds("load_curtail", 0.0, u.curtail_pref)
    set_bounds("supply_grid", 0.0, s.tariff.line_cap)
    if mode.has_vertical:
        set_bounds("supply_renewable", 0.0, np.inf)
        set_bounds("feed_in", 0.0, u.renewable_cap)
        set_bounds("dr_reduce", 0.0, np.where(dr_mask, np.inf, 0.0))
    else:
        set_bounds("supply_renewable", 0.0, u.renewable_cap)
    set_bounds("ev_charge", 0.0, np.where(ev_mask, ev.charge_max, 0.0))
    set_bounds("ev_discharge", 0.0, np.where(ev_mask, ev.discharge_max, 0.0))
    set_bounds("ev_energy", 0.0, np.where(ev_mask, ev.capacity, 0.0))
    set_bounds("temp_in", u.temp_lo, u.temp_hi)
    set_bounds("peak", 0.0, np.inf)

    a_eq = np.array(eq_rows) if eq_rows else np.zeros((0, nv))
    a_in = np.array(in_rows) if in_rows else np.zeros((0, nv))
    return LinearConstraintSet(
        n_vars=nv, a_eq=a_eq, b_eq=np.array(eq_rhs), eq_tags=eq_tags,
        a_in=a_in, b_in=np.array(in_rhs), senses=["<="] * len(in_rhs),
        in_tags=in_tags, lo=lo, hi=hi)


def build_user_objective(s: Scenario, user: int,
                         mode: Mode) -> Tuple[np.ndarray, np.ndarray, float]:
    """Diagonal quadratic objective for one home.

    Returns (p_diag, q, offset) over the single-user layout so that the
    home's net cost equals 0.5 * x' diag(p_diag) x + q' x + offset.
    """
    layout = user_layout(s.n_users, s.grid.horizon, mode, users=[user])
    u = s.users[user]
    p_diag = np.zeros(layout.n_vars)
    q = np.zeros(layout.n_vars)
    offset = 0.0

    def quad(name: str, weight: float, target: np.ndarray | float) -> None:
        nonlocal offset
        sp = layout.span(user, name)
        p_diag[sp] += 2.0 * weight
        q[sp] += -2.0 * weight * np.asarray(target, dtype=float)
        offset += weight * float(np.sum(np.asarray(target, dtype=float) ** 2))

    quad("load_shift", u.w_shift, u.shift_pref)
    quad("load_curtail", u.w_curtail, u.curtail_pref)
    quad("temp_in", u.w_comfort, u.temp_ref)
    quad("ev_discharge", u.ev.w_degrade, 0.0)
    q[layout.span(user, "supply_grid")] += s.tariff.price_energy
    q[layout.span(user, "peak")] += s.tariff.price_peak
    if mode.has_vertical:
        q[layout.span(user, "feed_in")] -= s.prices.feed_in
        q[layout.span(user, "dr_reduce")] -= s.prices.dr * s.grid.dr_mask()
    if mode.has_horizontal and s.n_users > 1:
        for m in layout.peers(user):
            q[layout.trade_span(user, m)] -= s.prices.trade
    return p_diag, q, offset
