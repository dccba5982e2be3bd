"""Chain stack tests: codec, transactions, blocks, contract, agreement."""

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridledger.chain import (
    AggregatedCommit,
    AggregatedPrepare,
    Block,
    CodecError,
    CommitVote,
    ConsensusMode,
    ConsensusProof,
    ContractConfig,
    GENESIS_PARENT,
    GRID_ACCOUNT,
    HorizontalTrade,
    MockSigner,
    NodeConfig,
    PHASE_COMMIT,
    PHASE_PREPARE,
    PrePrepare,
    PrepareVote,
    Reader,
    SctCompute,
    Send,
    SetTimer,
    SignedTx,
    Start,
    TokenTransfer,
    VerticalTrade,
    Writer,
    block_digest,
    compute_tx_root,
    contract_digest,
    decode_block,
    decode_tx,
    encode_block,
    encode_tx,
    execute_transactions,
    fault_tolerance,
    genesis,
    handle,
    leader_for,
    make_block,
    make_vote,
    new_node,
    quorum_size,
    sign_tx,
    tx_digest,
    verify_proof,
    verify_tx,
    verify_vote,
)
from gridledger.tem import (RhoSchedule, advance_iteration, dual_state_digest,
                            sct_step)

floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


def _config(n_users=2, horizon=2):
    return ContractConfig(n_users=n_users, horizon=horizon,
                          rho_schedule=RhoSchedule.fixed(1.0),
                          price_feed_in=tuple([0.1] * horizon),
                          price_dr=tuple([0.2] * horizon))


def _tx(sender, nonce, payload):
    return sign_tx(MockSigner(sender), sender, nonce, payload)


class TestCodecPrimitives:
    @given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 64 - 1), floats,
           st.binary(max_size=40), st.text(max_size=20),
           st.lists(floats, max_size=8))
    @settings(deadline=None, max_examples=80)
    def test_round_trip(self, a, b, f, blob, text, fl):
        w = Writer()
        w.u32(a).u64(b).f64(f).blob(blob).text(text).f64_list(fl)
        r = Reader(w.take())
        assert r.u32() == a
        assert r.u64() == b
        got = r.f64()
        assert got == f or (np.isnan(got) and np.isnan(f))
        assert r.blob() == blob
        assert r.text() == text
        back = r.f64_list()
        assert len(back) == len(fl) and all(x == y for x, y in zip(back, fl))
        r.done()

    def test_range_checks(self):
        with pytest.raises(CodecError):
            Writer().u8(256)
        with pytest.raises(CodecError):
            Writer().u32(-1)
        with pytest.raises(CodecError):
            Writer().u64(2 ** 64)

    def test_truncation_detected(self):
        data = Writer().u64(7).take()
        with pytest.raises(CodecError, match="truncated"):
            Reader(data[:-1]).u64()

    def test_trailing_bytes_detected(self):
        r = Reader(Writer().u32(1).take() + b"\x00")
        r.u32()
        with pytest.raises(CodecError, match="trailing"):
            r.done()

    def test_negative_zero_preserved(self):
        r = Reader(Writer().f64(-0.0).take())
        assert np.signbit(r.f64())


class TestSigner:
    def test_sign_verify(self):
        s = MockSigner(3)
        sig = s.sign(b"payload")
        assert MockSigner.verify(3, b"payload", sig)
        assert not MockSigner.verify(4, b"payload", sig)
        assert not MockSigner.verify(3, b"payloae", sig)
        assert not MockSigner.verify(3, b"payload", sig[:-1])

    def test_deterministic(self):
        assert MockSigner(1).sign(b"x") == MockSigner(1).sign(b"x")
        assert MockSigner(1).sign(b"x") != MockSigner(2).sign(b"x")


payloads = st.one_of(
    st.builds(HorizontalTrade, user=st.integers(0, 10),
              iteration=st.integers(0, 1000),
              trades=st.lists(floats, max_size=12).map(tuple)),
    st.builds(SctCompute, iteration=st.integers(0, 1000),
              submitter=st.integers(0, 2 ** 32 - 1)),
    st.builds(VerticalTrade, user=st.integers(0, 10),
              feed_in=st.lists(floats, max_size=8).map(tuple),
              dr_reduce=st.lists(floats, max_size=8).map(tuple)),
    st.builds(TokenTransfer, recipient=st.integers(0, 2 ** 32 - 1),
              amount=floats),
)


class TestTransactions:
    @given(sender=st.integers(0, 2 ** 32 - 1), nonce=st.integers(1, 2 ** 32),
           payload=payloads)
    @settings(deadline=None, max_examples=80)
    def test_encode_decode_round_trip(self, sender, nonce, payload):
        tx = _tx(sender, nonce, payload)
        back = decode_tx(encode_tx(tx))
        assert back == tx
        assert verify_tx(back)
        assert tx_digest(back) == tx_digest(tx)

    def test_tampered_payload_fails_verification(self):
        tx = _tx(0, 1, TokenTransfer(recipient=1, amount=5.0))
        forged = SignedTx(sender=tx.sender, nonce=tx.nonce,
                          payload=TokenTransfer(recipient=1, amount=50.0),
                          signature=tx.signature)
        assert not verify_tx(forged)

    def test_wrong_sender_fails_verification(self):
        tx = _tx(0, 1, TokenTransfer(recipient=1, amount=5.0))
        forged = SignedTx(sender=2, nonce=tx.nonce, payload=tx.payload,
                          signature=tx.signature)
        assert not verify_tx(forged)

    def test_truncated_tx_rejected(self):
        data = encode_tx(_tx(0, 1, SctCompute(iteration=1, submitter=0)))
        with pytest.raises(CodecError):
            decode_tx(data[:-3])
        with pytest.raises(CodecError):
            decode_tx(data + b"\x01")


class TestBlocks:
    def _block(self, txs=(), height=1, round=0):
        return make_block(height=height, parent=GENESIS_PARENT,
                          timestamp_ms=123, proposer=0, round=round,
                          txs=list(txs))

    def test_round_trip(self):
        txs = [_tx(0, 1, TokenTransfer(recipient=1, amount=1.0)),
               _tx(1, 1, SctCompute(iteration=1, submitter=1))]
        block = self._block(txs)
        back = decode_block(encode_block(block))
        assert back == block
        assert block_digest(back) == block_digest(block)

    def test_tx_root_binds_transactions(self):
        a = self._block([_tx(0, 1, TokenTransfer(recipient=1, amount=1.0))])
        b = self._block([_tx(0, 1, TokenTransfer(recipient=1, amount=2.0))])
        assert a.header.tx_root != b.header.tx_root
        assert block_digest(a) != block_digest(b)
        assert compute_tx_root(list(a.txs)) == a.header.tx_root

    def test_header_fields_change_digest(self):
        base = self._block()
        other = make_block(height=2, parent=GENESIS_PARENT, timestamp_ms=123,
                           proposer=0, round=0, txs=[])
        assert block_digest(base) != block_digest(other)


class TestVotesAndProofs:
    def _commit_votes(self, digest, voters, height=1, round=0):
        return tuple(make_vote(MockSigner(v), PHASE_COMMIT, height, round,
                               digest) for v in voters)

    def test_vote_signature(self):
        v = make_vote(MockSigner(2), PHASE_PREPARE, 1, 0, bytes(32))
        assert verify_vote(v)
        bad = make_vote(MockSigner(2), PHASE_PREPARE, 1, 0, bytes(32))
        object.__setattr__(bad, "height", 9)
        assert not verify_vote(bad)

    def test_quorum_arithmetic(self):
        assert [fault_tolerance(n) for n in (4, 7, 10, 13)] == [1, 2, 3, 4]
        assert [quorum_size(n) for n in (4, 7, 10, 13)] == [3, 5, 7, 9]

    def test_proof_accepts_quorum(self):
        d = bytes(32)
        proof = ConsensusProof(height=1, round=0, block_digest=d,
                               votes=self._commit_votes(d, [0, 1, 2]))
        assert verify_proof(proof, [0, 1, 2, 3], 3)

    def test_proof_rejects_subquorum(self):
        d = bytes(32)
        proof = ConsensusProof(height=1, round=0, block_digest=d,
                               votes=self._commit_votes(d, [0, 1]))
        assert not verify_proof(proof, [0, 1, 2, 3], 3)

    def test_proof_rejects_duplicate_voter(self):
        d = bytes(32)
        votes = self._commit_votes(d, [0, 1]) + self._commit_votes(d, [1])
        proof = ConsensusProof(height=1, round=0, block_digest=d, votes=votes)
        assert not verify_proof(proof, [0, 1, 2, 3], 3)

    def test_proof_rejects_wrong_phase(self):
        d = bytes(32)
        votes = tuple(make_vote(MockSigner(v), PHASE_PREPARE, 1, 0, d)
                      for v in (0, 1, 2))
        proof = ConsensusProof(height=1, round=0, block_digest=d, votes=votes)
        assert not verify_proof(proof, [0, 1, 2, 3], 3)

    def test_proof_rejects_outside_voter(self):
        d = bytes(32)
        proof = ConsensusProof(height=1, round=0, block_digest=d,
                               votes=self._commit_votes(d, [0, 1, 9]))
        assert not verify_proof(proof, [0, 1, 2, 3], 3)

    def test_proof_rejects_mismatched_height(self):
        d = bytes(32)
        proof = ConsensusProof(height=2, round=0, block_digest=d,
                               votes=self._commit_votes(d, [0, 1, 2], height=1))
        assert not verify_proof(proof, [0, 1, 2, 3], 3)


class TestContract:
    def test_genesis_balances(self):
        state = genesis(_config())
        assert state.balances[0] == state.balances[1] == 1000.0
        assert state.balances[GRID_ACCOUNT] == 1e9
        assert state.dual.iteration == 0

    def test_horizontal_applies(self):
        state = genesis(_config())
        tx = _tx(0, 1, HorizontalTrade(user=0, iteration=1,
                                       trades=(1.0, -2.0)))
        out, recs = execute_transactions(state, [tx])
        assert recs[0].status == "applied"
        assert out.dual.trades[0, 1].tolist() == [1.0, -2.0]
        assert out.nonces[0] == 1

    def test_stale_iteration_counted_and_nonce_used(self):
        state = genesis(_config())
        tx = _tx(0, 1, HorizontalTrade(user=0, iteration=5,
                                       trades=(0.0, 0.0)))
        out, recs = execute_transactions(state, [tx])
        assert recs[0].status == "stale-iteration"
        assert out.stale_rejections == 1
        assert out.nonces[0] == 1    # consumed: replaying cannot re-apply

    def test_replay_rejected(self):
        state = genesis(_config())
        tx = _tx(0, 1, HorizontalTrade(user=0, iteration=1,
                                       trades=(1.0, 0.0)))
        out, _ = execute_transactions(state, [tx])
        out2, recs = execute_transactions(out, [tx])
        assert recs[0].status == "bad-nonce"
        assert contract_digest(out2) == contract_digest(out)

    def test_bad_signature_keeps_nonce(self):
        state = genesis(_config())
        good = _tx(0, 1, SctCompute(iteration=1, submitter=0))
        forged = SignedTx(sender=good.sender, nonce=good.nonce,
                          payload=SctCompute(iteration=2, submitter=0),
                          signature=good.signature)
        out, recs = execute_transactions(state, [forged])
        assert recs[0].status == "bad-signature"
        assert 0 not in out.nonces

    def test_sct_matches_reference_step(self):
        state = genesis(_config())
        txs = [_tx(0, 1, HorizontalTrade(user=0, iteration=1,
                                         trades=(2.0, 0.0))),
               _tx(1, 1, HorizontalTrade(user=1, iteration=1,
                                         trades=(-1.0, 0.0))),
               _tx(0, 2, SctCompute(iteration=1, submitter=0))]
        out, recs = execute_transactions(state, txs)
        assert all(r.status == "applied" for r in recs)
        ref = state.dual.copy()
        ref.trades[0, 1] = [2.0, 0.0]
        ref.trades[1, 0] = [-1.0, 0.0]
        ref = advance_iteration(sct_step(ref), state.config.rho_schedule)
        assert dual_state_digest(out.dual) == dual_state_digest(ref)

    def test_vertical_settlement_arithmetic(self):
        state = genesis(_config())
        tx = _tx(1, 1, VerticalTrade(user=1, feed_in=(1.0, 2.0),
                                     dr_reduce=(0.0, 3.0)))
        out, recs = execute_transactions(state, [tx])
        assert recs[0].status == "applied"
        # 0.1*(1+2) + 0.2*3 = 0.9
        assert out.balances[1] == pytest.approx(1000.9)
        assert out.balances[GRID_ACCOUNT] == pytest.approx(1e9 - 0.9)

    def test_vertical_rejects_negative(self):
        state = genesis(_config())
        tx = _tx(0, 1, VerticalTrade(user=0, feed_in=(-1.0, 0.0),
                                     dr_reduce=(0.0, 0.0)))
        _, recs = execute_transactions(state, [tx])
        assert recs[0].status == "bad-amount"

    def test_transfer_and_insufficient_balance(self):
        state = genesis(_config())
        txs = [_tx(0, 1, TokenTransfer(recipient=1, amount=100.0)),
               _tx(0, 2, TokenTransfer(recipient=1, amount=1e12))]
        out, recs = execute_transactions(state, txs)
        assert recs[0].status == "applied"
        assert recs[1].status == "insufficient-balance"
        assert out.balances[0] == pytest.approx(900.0)
        assert out.balances[1] == pytest.approx(1100.0)
        assert out.nonces[0] == 2

    def test_transfer_rejects_nonpositive_amount(self):
        state = genesis(_config())
        _, recs = execute_transactions(
            state, [_tx(0, 1, TokenTransfer(recipient=1, amount=0.0))])
        assert recs[0].status == "bad-amount"

    def test_execution_is_pure(self):
        state = genesis(_config())
        before = contract_digest(state)
        execute_transactions(state, [
            _tx(0, 1, HorizontalTrade(user=0, iteration=1, trades=(1.0, 1.0))),
            _tx(0, 2, TokenTransfer(recipient=1, amount=10.0))])
        assert contract_digest(state) == before

    def test_bad_shape_detected(self):
        state = genesis(_config())
        _, recs = execute_transactions(
            state, [_tx(0, 1, HorizontalTrade(user=0, iteration=1,
                                              trades=(1.0,)))])
        assert recs[0].status == "bad-shape"


# ---------------------------------------------------------------------------
# synchronous agreement harness (no simulated network; FIFO delivery)

class SyncCluster:
    def __init__(self, n, mode, crashed=()):
        self.validators = tuple(range(n))
        self.crashed = set(crashed)
        contract = genesis(_config())
        self.nodes = {
            v: new_node(NodeConfig(node_id=v, validators=self.validators,
                                   mode=mode, produce_empty=True), contract.copy())
            for v in self.validators}
        self.queue = deque()
        self.timers = {v: [] for v in self.validators}
        self.now = 0.0
        self.sent = []            # (src, msg) for every delivered Send
        for v in self.validators:
            self._dispatch(v, v, Start())

    def _dispatch(self, dest, src, msg):
        if dest in self.crashed:
            return
        for act in handle(self.nodes[dest], src, msg, self.now):
            if isinstance(act, Send):
                self.sent.append((dest, act.msg))
                if dest not in self.crashed:
                    self.queue.append((act.dest, dest, act.msg))
            elif isinstance(act, SetTimer):
                self.timers[dest].append(act.msg)

    def drain(self, stop=None, limit=100_000):
        for _ in range(limit):
            if stop is not None and stop():
                return
            if not self.queue:
                return
            dest, src, msg = self.queue.popleft()
            if src in self.crashed:
                continue
            self._dispatch(dest, src, msg)
        raise AssertionError("message budget exhausted")

    def fire_timers(self):
        for v in self.validators:
            pending, self.timers[v] = self.timers[v], []
            for msg in pending:
                self._dispatch(v, v, msg)

    def run_to_height(self, target, max_rounds=50):
        done = lambda: self.min_live_height() > target
        for _ in range(max_rounds):
            self.drain(stop=done)
            if done():
                return
            self.now += 200.0
            self.fire_timers()
        raise AssertionError(f"cluster stuck below height {target}")

    def min_live_height(self):
        return min(self.nodes[v].height for v in self.validators
                   if v not in self.crashed)

    def ledgers_agree(self, upto):
        live = [v for v in self.validators if v not in self.crashed]
        for h in range(upto):
            digs = {block_digest(self.nodes[v].ledger[h].block) for v in live}
            assert len(digs) == 1, f"fork at height {h + 1}: {digs}"
        states = {contract_digest(self.nodes[v].contract) for v in live}
        assert len(states) == 1


def _vote_height(msg):
    if isinstance(msg, (PrepareVote, CommitVote)):
        return msg.vote.height
    if isinstance(msg, PrePrepare):
        return msg.block.header.height
    if isinstance(msg, AggregatedPrepare):
        return msg.height
    if isinstance(msg, AggregatedCommit):
        return msg.proof.height
    return None


class TestAgreement:
    def test_leader_rotation_oracle(self):
        cluster = SyncCluster(4, ConsensusMode.MODIFIED)
        node = cluster.nodes[0]
        node.height = 5
        node.view = 0
        assert leader_for(node, 5) == 1    # (5 + 0) % 4
        node.view = 2
        assert leader_for(node, 5) == 3    # (5 + 2) % 4

    @pytest.mark.parametrize("mode,per_block", [
        (ConsensusMode.MODIFIED, 15),     # 5(n-1) with n = 4
        (ConsensusMode.CLASSIC, 24),      # 2n(n-1) with n = 4
    ])
    def test_exact_message_counts(self, mode, per_block):
        heights = 5
        cluster = SyncCluster(4, mode)
        cluster.run_to_height(heights)
        counts = {}
        for _, msg in cluster.sent:
            h = _vote_height(msg)
            if h is not None and 1 <= h <= heights:
                counts[h] = counts.get(h, 0) + 1
        assert counts == {h: per_block for h in range(1, heights + 1)}
        cluster.ledgers_agree(heights)

    @pytest.mark.parametrize("mode", list(ConsensusMode))
    def test_commit_proofs_verify(self, mode):
        cluster = SyncCluster(4, mode)
        cluster.run_to_height(3)
        node = cluster.nodes[0]
        for cb in node.ledger[:3]:
            assert verify_proof(cb.proof, cluster.validators,
                                quorum_size(4))
            assert cb.proof.block_digest == block_digest(cb.block)
        # parent links chain correctly
        assert node.ledger[0].block.header.parent == GENESIS_PARENT
        for prev, cur in zip(node.ledger, node.ledger[1:]):
            assert cur.block.header.parent == block_digest(prev.block)

    def test_view_change_replaces_crashed_leader(self):
        # height 2, view 0 belongs to validator 2; crash it up front
        cluster = SyncCluster(4, ConsensusMode.MODIFIED, crashed={2})
        cluster.run_to_height(4)
        node = cluster.nodes[0]
        h2 = node.ledger[1].block
        assert h2.header.proposer != 2
        assert h2.header.round >= 1
        cluster.ledgers_agree(4)

    def test_safety_holds_with_f_crashes(self):
        for crashed in ({0}, {1}, {3}):
            cluster = SyncCluster(4, ConsensusMode.MODIFIED, crashed=crashed)
            cluster.run_to_height(3)
            cluster.ledgers_agree(3)

    def test_crashed_node_catches_up_after_heal(self):
        cluster = SyncCluster(4, ConsensusMode.MODIFIED, crashed={3})
        cluster.run_to_height(3)
        assert cluster.nodes[3].height == 1
        cluster.crashed = set()
        cluster.run_to_height(5)
        assert cluster.nodes[3].height >= 5
        cluster.ledgers_agree(4)

    def test_submitted_tx_lands_in_block(self):
        cluster = SyncCluster(4, ConsensusMode.MODIFIED)
        tx = _tx(0, 1, TokenTransfer(recipient=1, amount=5.0))
        from gridledger.chain import SubmitTx
        for v in cluster.validators:
            cluster._dispatch(v, -1, SubmitTx(tx))
        cluster.run_to_height(2)
        node = cluster.nodes[0]
        packed = [t for cb in node.ledger for t in cb.block.txs]
        assert tx in packed
        assert node.contract.balances[1] == pytest.approx(1005.0)
