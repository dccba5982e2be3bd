"""Command line driver: run scenarios, compare modes, demo the chain.

Exit codes are a stable contract: 0 success, 1 usage error, 2 the
problem is infeasible, 3 convergence or liveness timed out.  The
``GRIDLEDGER_SEED`` environment variable overrides ``--seed`` wherever
a seed is accepted, and every CSV starts with a schema header row.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .chain.blocks import encode_block, encode_proof, encode_vote
from .chain.node import (AggregatedCommit, AggregatedPrepare, CommitVote,
                         ConsensusMode, NodeConfig, PrePrepare, PrepareVote,
                         Start, handle, new_node)
from .chain.contract import ContractConfig, genesis
from .chain_transport import ChainTransport
from .energy_model import Mode
from .netsim import LivenessTimeout, NetConfig, Network
from .qp import QpStatus
from .scenario import (Scenario, ScenarioError, generate_synthetic,
                       load_scenario, validate_scenario)
from .tem import (AdmmParams, InProcessTransport, Outcome, RhoSchedule,
                  SolveFailed, run_distributed, solve_centralized)

__all__ = [
    "EXIT_INFEASIBLE",
    "EXIT_LIVENESS",
    "EXIT_OK",
    "EXIT_USAGE",
    "RunReport",
    "main",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_LIVENESS = 3

SCHEMA_SCHEDULE = "gridledger.schedule.v1"
SCHEMA_COMPARE = "gridledger.compare.v1"
SCHEMA_CHAIN = "gridledger.chainmetrics.v1"

# reductions reported for comparable deployments; annotation only,
# never asserted against
_REFERENCE_SAVINGS = {"TEM": 0.25, "BS2": 0.16, "BS3": 0.11}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argparse with the documented usage exit code."""

    def error(self, message: str):
        raise _UsageError(message)


@dataclass(frozen=True)
class ReportRow:
    mode: str
    total_cost: float
    savings_vs_bs1: Optional[float]
    iterations: int
    converged: bool


@dataclass(frozen=True)
class RunReport:
    rows: Tuple[ReportRow, ...]
    paths: Tuple[str, ...]


def _effective_seed(seed: int) -> int:
    env = os.environ.get("GRIDLEDGER_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise _UsageError(f"GRIDLEDGER_SEED must be an integer, "
                              f"got {env!r}")
    return seed


def _parse_synthetic(text: str) -> Tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*,\s*(\d+)\s*", text)
    if not m:
        raise _UsageError(f"--synthetic expects N,T (got {text!r})")
    n, t = int(m.group(1)), int(m.group(2))
    if n < 1 or t < 1:
        raise _UsageError("--synthetic needs N >= 1 and T >= 1")
    return n, t


def _parse_rho(text: str) -> RhoSchedule:
    low = text.strip().lower()
    if low == "reciprocal":
        return RhoSchedule.reciprocal()
    if low.startswith("fixed:"):
        low = low[len("fixed:"):]
    try:
        value = float(low)
    except ValueError:
        raise _UsageError(f"--rho expects a number, fixed:VALUE or "
                          f"reciprocal (got {text!r})")
    if value <= 0:
        raise _UsageError("--rho must be positive")
    return RhoSchedule.fixed(value)


def _resolve_scenario(args: argparse.Namespace) -> Scenario:
    if getattr(args, "config", None) and args.synthetic:
        raise _UsageError("give either a config path or --synthetic, not both")
    if getattr(args, "config", None):
        s = load_scenario(Path(args.config))
    elif args.synthetic:
        n, t = _parse_synthetic(args.synthetic)
        s = generate_synthetic(seed=_effective_seed(args.seed), n_users=n,
                               horizon=t)
    else:
        raise _UsageError("a scenario is required: config path or "
                          "--synthetic N,T")
    problems = validate_scenario(s)
    if problems:
        for v in problems:
            print(f"infeasible scenario: {v}", file=sys.stderr)
        raise SolveFailed("scenario validation failed", QpStatus.INFEASIBLE)
    return s


def _write_schedule_csv(path: Path, s: Scenario, outcome: Outcome) -> None:
    cols = ["user", "slot", "load_hvac", "load_shift", "load_curtail",
            "supply_grid", "supply_renewable", "ev_charge", "ev_discharge",
            "ev_energy", "temp_in", "feed_in", "dr_reduce"]
    cols += [f"trade_to_{m}" for m in range(s.n_users)]
    cols.append("peak")
    lines = [f"# schema: {SCHEMA_SCHEDULE}", ",".join(cols)]
    for n, sch in enumerate(outcome.schedules):
        for t in range(s.grid.horizon):
            row = [str(n), str(t)]
            for field in cols[2:13]:
                row.append(repr(float(getattr(sch, field)[t])))
            for m in range(s.n_users):
                row.append(repr(float(sch.trades[m, t])))
            row.append(repr(float(sch.peak)))
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def _print_outcome(outcome: Outcome) -> None:
    print(f"mode {outcome.mode}: total cost "
          f"{outcome.total_cost:.6f}, {outcome.iterations} iteration(s), "
          f"converged={outcome.converged}")


# ---------------------------------------------------------------------------
# run


def cmd_run(args: argparse.Namespace) -> Tuple[int, Optional[RunReport]]:
    try:
        mode = Mode(args.mode.upper())
    except ValueError:
        raise _UsageError(f"unknown mode {args.mode!r}; choose from "
                          f"TEM, BS1, BS2, BS3")
    s = _resolve_scenario(args)
    params = AdmmParams(eps=args.eps, max_iter=args.max_iter,
                        rho_schedule=_parse_rho(args.rho))
    code = EXIT_OK
    if args.distributed:
        if mode is not Mode.TEM:
            raise _UsageError("--distributed decomposes the trading mode; "
                              "use --mode TEM")
        if args.transport == "chain":
            transport = ChainTransport(n_validators=args.validators,
                                       seed=_effective_seed(args.seed))
        else:
            transport = InProcessTransport()
        outcome = run_distributed(s, params, transport)
        if not outcome.converged:
            print(f"no convergence within {params.max_iter} iterations "
                  f"(primal residual "
                  f"{outcome.history[-1].primal_residual:.3e})",
                  file=sys.stderr)
            code = EXIT_LIVENESS
    else:
        outcome = solve_centralized(s, mode)
    _print_outcome(outcome)
    paths: List[str] = []
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        jpath = out / f"outcome_{mode.value}.json"
        outcome.write_json(jpath)
        cpath = out / f"schedule_{mode.value}.csv"
        _write_schedule_csv(cpath, s, outcome)
        paths = [str(jpath), str(cpath)]
        print(f"wrote {jpath} and {cpath}")
    row = ReportRow(mode.value, outcome.total_cost, None,
                    outcome.iterations, outcome.converged)
    return code, RunReport(rows=(row,), paths=tuple(paths))


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args: argparse.Namespace) -> Tuple[int, Optional[RunReport]]:
    s = _resolve_scenario(args)
    outcomes: Dict[Mode, Outcome] = {}
    for mode in (Mode.BS1, Mode.BS2, Mode.BS3, Mode.TEM):
        outcomes[mode] = solve_centralized(s, mode)
    base = outcomes[Mode.BS1].total_cost
    rows: List[ReportRow] = []
    lines = [f"# schema: {SCHEMA_COMPARE}",
             "mode,total_cost,savings_vs_BS1,iterations"]
    for mode in (Mode.BS1, Mode.BS2, Mode.BS3, Mode.TEM):
        o = outcomes[mode]
        savings = (base - o.total_cost) / base if base > 0 else None
        rows.append(ReportRow(mode.value, o.total_cost, savings,
                              o.iterations, o.converged))
        stext = "" if savings is None else repr(savings)
        lines.append(f"{mode.value},{o.total_cost!r},{stext},{o.iterations}")
    table = "\n".join(lines)
    print(table)
    tol = 1e-6
    ok = (outcomes[Mode.TEM].total_cost <= outcomes[Mode.BS2].total_cost + tol
          and outcomes[Mode.BS2].total_cost <= base + tol
          and outcomes[Mode.TEM].total_cost
          <= outcomes[Mode.BS3].total_cost + tol
          and outcomes[Mode.BS3].total_cost <= base + tol)
    print(f"mode ordering (TEM <= BS2,BS3 <= BS1): "
          f"{'ok' if ok else 'VIOLATED'}")
    ann = ", ".join(f"{m} {int(v * 100)}%"
                    for m, v in _REFERENCE_SAVINGS.items())
    print(f"reference reductions (annotation only, not asserted): {ann}")
    paths: List[str] = []
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cpath = out / "compare.csv"
        cpath.write_text(table + "\n")
        paths.append(str(cpath))
        print(f"wrote {cpath}")
    return EXIT_OK, RunReport(rows=tuple(rows), paths=tuple(paths))


# ---------------------------------------------------------------------------
# chain


_FAULT_RE = re.compile(r"crash@([0-9]+(?:\.[0-9]+)?):(?:validator)?([0-9]+)")


def _parse_faults(specs: Sequence[str]) -> List[Tuple[int, float]]:
    out: List[Tuple[int, float]] = []
    for spec in specs:
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            m = _FAULT_RE.fullmatch(part)
            if not m:
                raise _UsageError(
                    f"fault spec {part!r} not understood; use "
                    f"crash@TIME_MS:validatorID")
            out.append((int(m.group(2)), float(m.group(1))))
    return out


def _message_bytes(payload: object) -> int:
    if isinstance(payload, PrePrepare):
        return len(encode_block(payload.block))
    if isinstance(payload, (PrepareVote, CommitVote)):
        return len(encode_vote(payload.vote))
    if isinstance(payload, AggregatedPrepare):
        return 8 + 8 + 32 + sum(len(encode_vote(v)) for v in payload.votes)
    if isinstance(payload, AggregatedCommit):
        return len(encode_proof(payload.proof))
    return 64


def _message_height(payload: object) -> Optional[int]:
    if isinstance(payload, PrePrepare):
        return payload.block.header.height
    if isinstance(payload, (PrepareVote, CommitVote)):
        return payload.vote.height
    if isinstance(payload, AggregatedPrepare):
        return payload.height
    if isinstance(payload, AggregatedCommit):
        return payload.proof.height
    return None


def _consensus_demo(n_validators: int, protocol: ConsensusMode, blocks: int,
                    seed: int, faults: Sequence[Tuple[int, float]]
                    ) -> Tuple[List[str], Dict[int, int]]:
    """Run empty-block consensus to a height; returns CSV rows per height."""
    validators = tuple(range(n_validators))
    ccfg = ContractConfig(n_users=1, horizon=1,
                          rho_schedule=RhoSchedule.fixed(1.0),
                          price_feed_in=(0.0,), price_dr=(0.0,))
    g = genesis(ccfg)
    net = Network(NetConfig(latency_ms=(1.0, 10.0)), seed=seed)
    for v in validators:
        node = new_node(NodeConfig(v, validators, mode=protocol,
                                   produce_empty=True), g)
        net.add_node(v, node, handle)
        net.client_send(v, Start(), at_ms=0.0)
    for node_id, at_ms in faults:
        if node_id not in net.states:
            raise _UsageError(f"fault names unknown validator {node_id}")
        net.crash(node_id, at_ms)

    def done(n: Network) -> bool:
        live = [s.height for v, s in n.states.items() if n.alive(v)]
        return bool(live) and min(live) > blocks

    net.run(until=done, max_events=4000 * blocks + 40000)
    net.check_conservation()

    msgs: Dict[int, int] = {}
    size: Dict[int, int] = {}
    first: Dict[int, float] = {}
    last: Dict[int, float] = {}
    for ev in net.trace:
        h = _message_height(ev.payload)
        if h is None or not 1 <= h <= blocks:
            continue
        if ev.kind == "emit" or (ev.kind == "drop" and ev.src != -1):
            msgs[h] = msgs.get(h, 0) + 1
            size[h] = size.get(h, 0) + _message_bytes(ev.payload)
            first[h] = min(first.get(h, ev.time_ms), ev.time_ms)
        if ev.kind == "deliver":
            last[h] = max(last.get(h, ev.time_ms), ev.time_ms)
    rows = []
    for h in range(1, blocks + 1):
        lat = last.get(h, 0.0) - first.get(h, 0.0)
        rows.append(f"{protocol.value},{h},{msgs.get(h, 0)},"
                    f"{size.get(h, 0)},{lat:.3f}")
    heights = {v: s.height for v, s in net.states.items()}
    return rows, heights


def cmd_chain(args: argparse.Namespace) -> Tuple[int, Optional[RunReport]]:
    if args.validators < 4:
        raise _UsageError("need at least 4 validators to tolerate one fault "
                          "(3f+1 with f >= 1)")
    faults = _parse_faults(args.faults or [])
    protocols: List[ConsensusMode]
    if args.mode == "both":
        protocols = [ConsensusMode.MODIFIED, ConsensusMode.CLASSIC]
    else:
        protocols = [ConsensusMode(args.mode)]
    seed = _effective_seed(args.seed)
    lines = [f"# schema: {SCHEMA_CHAIN}",
             "protocol,height,msgs,bytes,latency_ms"]
    per_block: Dict[str, float] = {}
    last_heights: Dict[int, int] = {}
    for protocol in protocols:
        try:
            rows, heights = _consensus_demo(args.validators, protocol,
                                            args.blocks, seed, faults)
        except LivenessTimeout as e:
            print(f"liveness timeout in {protocol.value} consensus after "
                  f"{e.events} events at t={e.sim_time_ms:.0f}ms",
                  file=sys.stderr)
            return EXIT_LIVENESS, None
        lines.extend(rows)
        total = sum(int(r.split(",")[2]) for r in rows)
        per_block[protocol.value] = total / args.blocks
        last_heights = heights
    table = "\n".join(lines)
    print(table)
    n = args.validators
    for name, avg in per_block.items():
        note = (f"leader aggregation target 5(n-1)={5 * (n - 1)}"
                if name == "modified"
                else f"all-to-all floor 2n(n-1)={2 * n * (n - 1)}")
        print(f"{name}: {args.blocks} commits, {avg:.1f} msgs/block ({note})")
    if len(per_block) == 2:
        ratio = per_block["modified"] / per_block["classic"]
        print(f"modified/classic message ratio: {ratio:.3f}")
    if faults:
        print(f"final heights with faults {faults}: {last_heights}")
    paths: List[str] = []
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cpath = out / "chain_metrics.csv"
        cpath.write_text(table + "\n")
        paths.append(str(cpath))
        print(f"wrote {cpath}")
    return EXIT_OK, None


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> _Parser:
    p = _Parser(prog="gridledger",
                description="Transactive home energy scheduling with "
                            "replicated coordination.")
    sub = p.add_subparsers(dest="command")

    run = sub.add_parser("run", help="solve one scenario in one mode",
                         add_help=True)
    run.add_argument("config", nargs="?", help="scenario directory")
    run.add_argument("--synthetic", metavar="N,T",
                     help="generate a scenario instead of loading one")
    run.add_argument("--mode", default="TEM",
                     help="TEM, BS1, BS2 or BS3 (default TEM)")
    run.add_argument("--distributed", action="store_true",
                     help="solve by per-home decomposition instead of jointly")
    run.add_argument("--transport", choices=["inprocess", "chain"],
                     default="inprocess",
                     help="where the coordination state lives")
    run.add_argument("--validators", type=int, default=4,
                     help="validator count for --transport chain")
    run.add_argument("--rho", default="fixed:1.0",
                     help="penalty schedule: fixed:VALUE or reciprocal")
    run.add_argument("--eps", type=float, default=1e-6,
                     help="convergence threshold")
    run.add_argument("--max-iter", type=int, default=1000)
    run.add_argument("--seed", type=int, default=0,
                     help="seed for --synthetic and chain transport")
    run.add_argument("--out", help="directory for outcome JSON and CSV")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare",
                          help="solve all four modes and tabulate savings")
    cmp_.add_argument("config", nargs="?", help="scenario directory")
    cmp_.add_argument("--synthetic", metavar="N,T")
    cmp_.add_argument("--seed", type=int, default=0)
    cmp_.add_argument("--out", help="directory for compare.csv")
    cmp_.set_defaults(func=cmd_compare)

    chain = sub.add_parser("chain", help="benchmark the consensus protocols")
    chain.add_argument("--validators", type=int, default=4)
    chain.add_argument("--blocks", type=int, default=10)
    chain.add_argument("--mode", choices=["modified", "classic", "both"],
                       default="modified")
    chain.add_argument("--faults", action="append", metavar="SPEC",
                       help="crash@TIME_MS:validatorID, repeatable")
    chain.add_argument("--seed", type=int, default=0)
    chain.add_argument("--out", help="directory for chain_metrics.csv")
    chain.set_defaults(func=cmd_chain)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return EXIT_USAGE
        code, _report = args.func(args)
        return code
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SolveFailed as e:
        print(f"solve failed: {e}", file=sys.stderr)
        if e.status is QpStatus.INFEASIBLE:
            return EXIT_INFEASIBLE
        return EXIT_LIVENESS
    except LivenessTimeout as e:
        print(f"liveness timeout: {e}", file=sys.stderr)
        return EXIT_LIVENESS


if __name__ == "__main__":
    sys.exit(main())
