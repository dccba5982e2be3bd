"""Message-count benchmark: aggregated versus all-to-all vote collection.

Runs empty-block consensus over the simulated network for a range of
cluster sizes and reports per-block message and byte counts for both
protocols.  The aggregated variant needs 5(n-1) messages per block, the
all-to-all one 2n(n-1), so the ratio falls roughly as 2.5/n.

Usage: python scripts/consensus_bench.py [--blocks B] [--sizes 4,7,10,13]
       [--seed S]
"""

import argparse

from gridledger.chain import (
    ConsensusMode,
    ContractConfig,
    NodeConfig,
    Start,
    genesis,
    handle,
    new_node,
)
from gridledger.cli import _message_bytes, _message_height
from gridledger.netsim import NetConfig, Network
from gridledger.tem import RhoSchedule

EMPTY = ContractConfig(n_users=1, horizon=1,
                       rho_schedule=RhoSchedule.fixed(1.0),
                       price_feed_in=(0.0,), price_dr=(0.0,))


def bench(n: int, mode: ConsensusMode, blocks: int, seed: int):
    validators = tuple(range(n))
    g = genesis(EMPTY)
    net = Network(NetConfig(latency_ms=(0.5, 2.0)), seed=seed)
    for v in validators:
        net.add_node(v, new_node(NodeConfig(v, validators, mode=mode,
                                            produce_empty=True), g), handle)
        net.client_send(v, Start(), at_ms=0.0)
    net.run(until=lambda nw: min(st.height for st in nw.states.values())
            > blocks, max_events=500_000)
    msgs = size = 0
    for ev in net.trace:
        h = _message_height(ev.payload)
        if ev.kind == "emit" and h is not None and 1 <= h <= blocks:
            msgs += 1
            size += _message_bytes(ev.payload)
    return msgs / blocks, size / blocks


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=5)
    ap.add_argument("--sizes", default="4,7,10,13")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(x) for x in args.sizes.split(",")]

    print(f"{'n':>3}{'aggregated':>12}{'all-to-all':>12}{'ratio':>8}"
          f"{'agg bytes':>11}{'a2a bytes':>11}")
    for n in sizes:
        m_msgs, m_bytes = bench(n, ConsensusMode.MODIFIED, args.blocks,
                                args.seed)
        c_msgs, c_bytes = bench(n, ConsensusMode.CLASSIC, args.blocks,
                                args.seed)
        print(f"{n:>3}{m_msgs:>12.1f}{c_msgs:>12.1f}"
              f"{m_msgs / c_msgs:>8.3f}{m_bytes:>11.0f}{c_bytes:>11.0f}")


if __name__ == "__main__":
    main()
