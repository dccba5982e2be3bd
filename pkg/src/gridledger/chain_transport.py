"""Coordination transport backed by the replicated contract.

Implements the same transport interface the in-process runner uses, but
every publish becomes a signed transaction, the coordination step is a
transaction executed by the contract on all validators, and reads come
back from a reference validator's committed state.  Within one
iteration the trade submissions reach each validator before the step
request does, and blocks order transactions by sender, so the step can
never run ahead of the trades it settles.

The contract reuses the exact coordination-step code the local mirror
runs, so the two dual states stay bitwise identical and their digests
can be compared per iteration.
"""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from .chain.blocks import (HorizontalTrade, MockSigner, SctCompute, SignedTx,
                           VerticalTrade, encode_tx, sign_tx)
from .chain.contract import ContractConfig, contract_digest, genesis
from .chain.node import (ConsensusMode, NodeConfig, NodeState, Start,
                         SubmitTx, handle, new_node)
from .netsim import NetConfig, Network
from .scenario import Scenario
from .tem import AdmmParams, DualState, Outcome, dual_state_digest

__all__ = [
    "COORDINATOR",
    "ChainTransport",
    "committed_tx_bytes",
]

COORDINATOR = 2 ** 32 - 2


def committed_tx_bytes(state: NodeState) -> List[bytes]:
    """Canonical bytes of every transaction in a validator's ledger."""
    out: List[bytes] = []
    for committed in state.ledger:
        for tx in committed.block.txs:
            out.append(encode_tx(tx))
    return out


class ChainTransport:
    """Runs the coordination state as a replicated contract."""

    def __init__(self, n_validators: int = 4,
                 mode: ConsensusMode = ConsensusMode.MODIFIED,
                 net_config: Optional[NetConfig] = None, seed: int = 0,
                 reference: int = 0, events_per_step: int = 50_000):
        if n_validators < 4:
            raise ValueError("need at least 4 validators to survive a fault")
        self.validators = tuple(range(n_validators))
        self.mode = mode
        self.net_config = net_config or NetConfig(latency_ms=1.0)
        self.seed = seed
        self.reference = reference
        self.events_per_step = events_per_step
        self.network: Optional[Network] = None
        self._scenario: Optional[Scenario] = None
        self._pending: List[SignedTx] = []
        self._nonces: Dict[int, int] = {}
        self._iteration = 0

    # -- helpers ------------------------------------------------------------

    def _next_nonce(self, sender: int) -> int:
        nxt = self._nonces.get(sender, 0) + 1
        self._nonces[sender] = nxt
        return nxt

    def _node(self, validator: int) -> NodeState:
        assert self.network is not None
        return self.network.states[validator]  # type: ignore[return-value]

    def _live(self) -> List[int]:
        assert self.network is not None
        return [v for v in self.validators if self.network.alive(v)]

    def _ref(self) -> NodeState:
        live = self._live()
        if self.reference in live:
            return self._node(self.reference)
        if not live:
            raise RuntimeError("every validator has crashed")
        return self._node(live[0])

    def _submit(self, tx: SignedTx) -> None:
        assert self.network is not None
        for v in self.validators:
            self.network.client_send(v, SubmitTx(tx), at_ms=self.network.now)

    def _run_until(self, predicate, what: str) -> None:
        assert self.network is not None
        self.network.run(
            until=lambda net: predicate(),
            max_events=self.network.events + self.events_per_step)
        if not predicate():
            raise RuntimeError(f"validators never reached: {what}")

    def _check_agreement(self) -> None:
        digests = {contract_digest(self._node(v).contract)
                   for v in self._live()}
        if len(digests) != 1:
            raise RuntimeError("validators disagree on the contract state")

    # -- transport interface ------------------------------------------------

    def begin(self, s: Scenario, params: AdmmParams) -> None:
        if self.network is not None:
            raise RuntimeError("transport already started")
        self._scenario = s
        horizon = s.grid.horizon
        config = ContractConfig(
            n_users=s.n_users, horizon=horizon,
            rho_schedule=params.rho_schedule,
            price_feed_in=tuple(float(p) for p in s.prices.feed_in),
            price_dr=tuple(float(p) for p in s.prices.dr))
        g = genesis(config)
        self.network = Network(self.net_config, seed=self.seed)
        for v in self.validators:
            node = new_node(NodeConfig(v, self.validators, mode=self.mode), g)
            self.network.add_node(v, node, handle)
            self.network.client_send(v, Start(), at_ms=0.0)

    def read_state(self) -> DualState:
        return self._ref().contract.dual.copy()

    def publish(self, user: int, iteration: int,
                trades_row: np.ndarray) -> None:
        assert self._scenario is not None
        n = self._scenario.n_users
        if iteration != self._iteration + 1:
            raise ValueError(f"decision for iteration {iteration} but the "
                             f"contract accepts {self._iteration + 1}")
        flat = tuple(float(v) for m in range(n) if m != user
                     for v in trades_row[m])
        payload = HorizontalTrade(user=user, iteration=iteration, trades=flat)
        tx = sign_tx(MockSigner(user), user, self._next_nonce(user), payload)
        self._pending.append(tx)

    def run_sct(self) -> DualState:
        assert self.network is not None
        k = self._iteration + 1
        for tx in self._pending:
            self._submit(tx)
        self._pending = []
        step = SctCompute(iteration=k, submitter=COORDINATOR)
        self._submit(sign_tx(MockSigner(COORDINATOR), COORDINATOR,
                             self._next_nonce(COORDINATOR), step))
        self._run_until(
            lambda: all(self._node(v).contract.dual.iteration >= k
                        for v in self._live()),
            f"coordination step {k}")
        self._check_agreement()
        self._iteration = k
        return self._ref().contract.dual.copy()

    def digest(self) -> str:
        return dual_state_digest(self._ref().contract.dual)

    def settle(self, s: Scenario, outcome: Outcome) -> None:
        assert self.network is not None
        for user in range(s.n_users):
            sch = outcome.schedules[user]
            payload = VerticalTrade(
                user=user,
                feed_in=tuple(max(0.0, float(v)) for v in sch.feed_in),
                dr_reduce=tuple(max(0.0, float(v)) for v in sch.dr_reduce))
            tx = sign_tx(MockSigner(user), user, self._next_nonce(user),
                         payload)
            self._submit(tx)
        want = dict(self._nonces)

        def applied() -> bool:
            return all(self._node(v).contract.nonces.get(u, 0) >= nn
                       for v in self._live()
                       for u, nn in want.items() if u != COORDINATOR)

        self._run_until(applied, "vertical settlement")
        self._check_agreement()
