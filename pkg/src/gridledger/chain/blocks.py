"""Transactions, blocks and vote certificates.

Every structure has one canonical encoding (see codec) and is digested
with SHA-256 over those bytes.  Signatures are produced by a pluggable
signer; the default mock signer is deterministic, 64 bytes, and binds the
signing key id into the digest so distinct validators never collide.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

from .codec import CodecError, Reader, Writer, digest

__all__ = [
    "Block",
    "BlockHeader",
    "CommittedBlock",
    "ConsensusProof",
    "HorizontalTrade",
    "MockSigner",
    "PHASE_COMMIT",
    "PHASE_PREPARE",
    "SctCompute",
    "Signer",
    "SignedTx",
    "TokenTransfer",
    "VerticalTrade",
    "Vote",
    "block_digest",
    "compute_tx_root",
    "decode_block",
    "decode_committed",
    "decode_tx",
    "encode_block",
    "encode_committed",
    "encode_header",
    "encode_tx",
    "make_block",
    "make_vote",
    "sign_tx",
    "tx_digest",
    "verify_proof",
    "verify_tx",
    "verify_vote",
]

SIGNATURE_SIZE = 64

PHASE_PREPARE = 1
PHASE_COMMIT = 2


class Signer(Protocol):
    key_id: int

    def sign(self, payload: bytes) -> bytes: ...


class MockSigner:
    """Deterministic stand-in signature scheme.

    sign(payload) = d || sha256(d) with d = sha256(key_id || payload).
    Verification recomputes both halves; there is no secrecy, which is
    fine for simulated validators that can crash but not forge.
    """

    def __init__(self, key_id: int):
        self.key_id = int(key_id)

    def sign(self, payload: bytes) -> bytes:
        d = hashlib.sha256(self.key_id.to_bytes(4, "little") + payload).digest()
        return d + hashlib.sha256(d).digest()

    @staticmethod
    def verify(key_id: int, payload: bytes, signature: bytes) -> bool:
        if len(signature) != SIGNATURE_SIZE:
            return False
        d = hashlib.sha256(int(key_id).to_bytes(4, "little") + payload).digest()
        return signature == d + hashlib.sha256(d).digest()


Verifier = Callable[[int, bytes, bytes], bool]


# ---------------------------------------------------------------------------
# transaction payloads

@dataclass(frozen=True)
class HorizontalTrade:
    """One home's proposed trades for one iteration.

    ``trades`` holds (n_users - 1) * horizon values, peer-major in
    ascending peer id order with the sender's own row omitted.
    """

    user: int
    iteration: int
    trades: Tuple[float, ...]


@dataclass(frozen=True)
class SctCompute:
    """Request to run the coordination step for one iteration."""

    iteration: int
    submitter: int


@dataclass(frozen=True)
class VerticalTrade:
    """A home's accepted feed-in and demand-response quantities."""

    user: int
    feed_in: Tuple[float, ...]
    dr_reduce: Tuple[float, ...]


@dataclass(frozen=True)
class TokenTransfer:
    recipient: int
    amount: float


TxPayload = Union[HorizontalTrade, SctCompute, VerticalTrade, TokenTransfer]

_TAG_HORIZONTAL = 1
_TAG_SCT = 2
_TAG_VERTICAL = 3
_TAG_TRANSFER = 4


@dataclass(frozen=True)
class SignedTx:
    sender: int
    nonce: int
    payload: TxPayload
    signature: bytes


def _encode_payload(w: Writer, payload: TxPayload) -> None:
    if isinstance(payload, HorizontalTrade):
        w.u8(_TAG_HORIZONTAL)
        w.u32(payload.user)
        w.u64(payload.iteration)
        w.f64_list(payload.trades)
    elif isinstance(payload, SctCompute):
        w.u8(_TAG_SCT)
        w.u64(payload.iteration)
        w.u32(payload.submitter)
    elif isinstance(payload, VerticalTrade):
        w.u8(_TAG_VERTICAL)
        w.u32(payload.user)
        w.f64_list(payload.feed_in)
        w.f64_list(payload.dr_reduce)
    elif isinstance(payload, TokenTransfer):
        w.u8(_TAG_TRANSFER)
        w.u32(payload.recipient)
        w.f64(payload.amount)
    else:
        raise CodecError(f"unknown payload type {type(payload).__name__}")


def _decode_payload(r: Reader) -> TxPayload:
    tag = r.u8()
    if tag == _TAG_HORIZONTAL:
        return HorizontalTrade(user=r.u32(), iteration=r.u64(),
                               trades=tuple(r.f64_list()))
    if tag == _TAG_SCT:
        return SctCompute(iteration=r.u64(), submitter=r.u32())
    if tag == _TAG_VERTICAL:
        return VerticalTrade(user=r.u32(), feed_in=tuple(r.f64_list()),
                             dr_reduce=tuple(r.f64_list()))
    if tag == _TAG_TRANSFER:
        return TokenTransfer(recipient=r.u32(), amount=r.f64())
    raise CodecError(f"unknown transaction tag {tag}")


def _tx_signing_bytes(sender: int, nonce: int, payload: TxPayload) -> bytes:
    w = Writer()
    w.u32(sender)
    w.u64(nonce)
    _encode_payload(w, payload)
    return w.take()


def sign_tx(signer: Signer, sender: int, nonce: int,
            payload: TxPayload) -> SignedTx:
    sig = signer.sign(_tx_signing_bytes(sender, nonce, payload))
    return SignedTx(sender=sender, nonce=nonce, payload=payload,
                    signature=sig)


def verify_tx(tx: SignedTx, verifier: Verifier = MockSigner.verify) -> bool:
    return verifier(tx.sender,
                    _tx_signing_bytes(tx.sender, tx.nonce, tx.payload),
                    tx.signature)


def encode_tx(tx: SignedTx) -> bytes:
    w = Writer()
    w.u32(tx.sender)
    w.u64(tx.nonce)
    _encode_payload(w, tx.payload)
    w.blob(tx.signature)
    return w.take()


def decode_tx(data: bytes) -> SignedTx:
    r = Reader(data)
    tx = _decode_tx_from(r)
    r.done()
    return tx


def _decode_tx_from(r: Reader) -> SignedTx:
    sender = r.u32()
    nonce = r.u64()
    payload = _decode_payload(r)
    sig = r.blob()
    if len(sig) != SIGNATURE_SIZE:
        raise CodecError(f"signature must be {SIGNATURE_SIZE} bytes, "
                         f"got {len(sig)}")
    return SignedTx(sender=sender, nonce=nonce, payload=payload,
                    signature=sig)


def tx_digest(tx: SignedTx) -> bytes:
    return digest(encode_tx(tx))


# ---------------------------------------------------------------------------
# blocks

@dataclass(frozen=True)
class BlockHeader:
    height: int
    parent: bytes
    timestamp_ms: int
    tx_root: bytes
    proposer: int
    round: int


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txs: Tuple[SignedTx, ...]


def compute_tx_root(txs: Sequence[SignedTx]) -> bytes:
    return digest(b"".join(tx_digest(tx) for tx in txs))


def encode_header(header: BlockHeader) -> bytes:
    w = Writer()
    w.u64(header.height)
    w.raw(header.parent)
    w.u64(header.timestamp_ms)
    w.raw(header.tx_root)
    w.u32(header.proposer)
    w.u64(header.round)
    return w.take()


def _decode_header_from(r: Reader) -> BlockHeader:
    return BlockHeader(height=r.u64(), parent=r.raw(32),
                       timestamp_ms=r.u64(), tx_root=r.raw(32),
                       proposer=r.u32(), round=r.u64())


def block_digest(block_or_header: Union[Block, BlockHeader]) -> bytes:
    header = block_or_header.header if isinstance(block_or_header, Block) \
        else block_or_header
    return digest(encode_header(header))


def make_block(height: int, parent: bytes, timestamp_ms: int, proposer: int,
               round: int, txs: Sequence[SignedTx]) -> Block:
    header = BlockHeader(height=height, parent=parent,
                         timestamp_ms=timestamp_ms,
                         tx_root=compute_tx_root(txs), proposer=proposer,
                         round=round)
    return Block(header=header, txs=tuple(txs))


def encode_block(block: Block) -> bytes:
    w = Writer()
    w.raw(encode_header(block.header))
    w.u32(len(block.txs))
    for tx in block.txs:
        w.blob(encode_tx(tx))
    return w.take()


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    block = _decode_block_from(r)
    r.done()
    return block


def _decode_block_from(r: Reader) -> Block:
    header = _decode_header_from(r)
    count = r.u32()
    txs = []
    for _ in range(count):
        txs.append(decode_tx(r.blob()))
    return Block(header=header, txs=tuple(txs))


# ---------------------------------------------------------------------------
# votes and certificates

@dataclass(frozen=True)
class Vote:
    phase: int
    height: int
    round: int
    block_digest: bytes
    voter: int
    signature: bytes


def vote_payload(phase: int, height: int, round: int,
                 block_dig: bytes) -> bytes:
    w = Writer()
    w.u8(phase)
    w.u64(height)
    w.u64(round)
    w.raw(block_dig)
    return w.take()


def make_vote(signer: Signer, phase: int, height: int, round: int,
              block_dig: bytes) -> Vote:
    sig = signer.sign(vote_payload(phase, height, round, block_dig))
    return Vote(phase=phase, height=height, round=round,
                block_digest=block_dig, voter=signer.key_id, signature=sig)


def verify_vote(vote: Vote, verifier: Verifier = MockSigner.verify) -> bool:
    return verifier(vote.voter,
                    vote_payload(vote.phase, vote.height, vote.round,
                                 vote.block_digest),
                    vote.signature)


def encode_vote(vote: Vote) -> bytes:
    w = Writer()
    w.u8(vote.phase)
    w.u64(vote.height)
    w.u64(vote.round)
    w.raw(vote.block_digest)
    w.u32(vote.voter)
    w.blob(vote.signature)
    return w.take()


def _decode_vote_from(r: Reader) -> Vote:
    return Vote(phase=r.u8(), height=r.u64(), round=r.u64(),
                block_digest=r.raw(32), voter=r.u32(), signature=r.blob())


@dataclass(frozen=True)
class ConsensusProof:
    """Commit certificate: a quorum of commit votes on one block digest."""

    height: int
    round: int
    block_digest: bytes
    votes: Tuple[Vote, ...]


def verify_proof(proof: ConsensusProof, validators: Sequence[int],
                 quorum: int, verifier: Verifier = MockSigner.verify) -> bool:
    voters = set()
    vset = set(validators)
    for vote in proof.votes:
        if vote.phase != PHASE_COMMIT:
            return False
        if (vote.height, vote.round) != (proof.height, proof.round):
            return False
        if vote.block_digest != proof.block_digest:
            return False
        if vote.voter not in vset or vote.voter in voters:
            return False
        if not verify_vote(vote, verifier):
            return False
        voters.add(vote.voter)
    return len(voters) >= quorum


def encode_proof(proof: ConsensusProof) -> bytes:
    w = Writer()
    w.u64(proof.height)
    w.u64(proof.round)
    w.raw(proof.block_digest)
    w.u32(len(proof.votes))
    for vote in proof.votes:
        w.blob(encode_vote(vote))
    return w.take()


def _decode_proof_from(r: Reader) -> ConsensusProof:
    height = r.u64()
    round_ = r.u64()
    dig = r.raw(32)
    votes = []
    for _ in range(r.u32()):
        vr = Reader(r.blob())
        votes.append(_decode_vote_from(vr))
        vr.done()
    return ConsensusProof(height=height, round=round_, block_digest=dig,
                          votes=tuple(votes))


@dataclass(frozen=True)
class CommittedBlock:
    """A block plus its commit certificate, shippable for catch-up."""

    block: Block
    proof: ConsensusProof


def encode_committed(cb: CommittedBlock) -> bytes:
    w = Writer()
    w.blob(encode_block(cb.block))
    w.blob(encode_proof(cb.proof))
    return w.take()


def decode_committed(data: bytes) -> CommittedBlock:
    r = Reader(data)
    br = Reader(r.blob())
    block = _decode_block_from(br)
    br.done()
    pr = Reader(r.blob())
    proof = _decode_proof_from(pr)
    pr.done()
    r.done()
    return CommittedBlock(block=block, proof=proof)
