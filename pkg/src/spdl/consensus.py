"""Four-phase PBFT-style consensus certifying one aggregated gradient.

PRE-PREPARE: the leader aggregates the round's perturbed gradients, wraps
the result in a block and broadcasts it signed.  PREPARE: every node
recomputes the aggregate from its own copy of the gradients and votes
only if the leader's block matches componentwise within ``delta_tol``.
COMMIT fires on a 2f+1 PREPARE quorum, DECIDE on a 2f+1 COMMIT quorum:
append the block, step the model, update reputations.  A round with no
decision times out into a VIEW-CHANGE quorum that abandons it.

Vote sets are deduplicated by sender: the first vote a node casts in a
phase is the one that counts, so equivocated or duplicated votes from a
Byzantine peer never inflate a quorum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import gar
from .crypto import KeyRegistry, sha256, sign
from .encoding import enc_digest, enc_str, enc_u64
from .errors import ChainError
from .ledger import Block, Chain, Transaction, append_block, make_block

PRE_PREPARE = "PRE-PREPARE"
PREPARE = "PREPARE"
COMMIT = "COMMIT"
VIEW_CHANGE = "VIEW-CHANGE"

VOTE_ACCEPT = "accept"

REJECT_BAD_SIG = "bad-sig"
REJECT_BAD_LINK = "bad-link"
REJECT_DELTA_MISMATCH = "delta-mismatch"

INITIAL_REPUTATION = 1.0
REPUTATION_FLOOR = 0.05  # halved values below this snap to zero


def quorum_size(n: int) -> int:
    """Distinct voters needed for a decision: ceil((2N+1)/3) = 2f+1 at N=3f+1."""
    if n < 1:
        raise ValueError("need at least one node")
    return (2 * n + 3) // 3


@dataclass(frozen=True)
class ConsensusMessage:
    phase: str
    sender: bytes
    epoch: int
    round_no: int
    block: Block | None
    block_hash: bytes
    vote: str
    sig: bytes

    def signing_bytes(self) -> bytes:
        body = (
            enc_str(self.phase)
            + enc_digest(self.sender)
            + enc_u64(self.epoch)
            + enc_u64(self.round_no)
        )
        if self.block is None:
            body += b"\x00"
        else:
            body += b"\x01" + self.block.encode()
        return body + enc_digest(self.block_hash) + enc_str(self.vote)

    def wire_hash(self) -> bytes:
        """Digest used only for deterministic delivery ordering."""
        return sha256(self.signing_bytes() + self.sig)


def sign_message(
    sk: bytes,
    phase: str,
    sender: bytes,
    epoch: int,
    round_no: int,
    block: Block | None,
    block_hash: bytes,
    vote: str = VOTE_ACCEPT,
) -> ConsensusMessage:
    unsigned = ConsensusMessage(
        phase=phase, sender=sender, epoch=epoch, round_no=round_no,
        block=block, block_hash=block_hash, vote=vote, sig=b"",
    )
    return ConsensusMessage(
        phase=phase, sender=sender, epoch=epoch, round_no=round_no,
        block=block, block_hash=block_hash, vote=vote,
        sig=sign(sk, unsigned.signing_bytes()),
    )


def verify_message(msg: ConsensusMessage, registry: KeyRegistry, pk: bytes | None) -> bool:
    if pk is None or len(msg.sig) != 32:
        return False
    unsigned = ConsensusMessage(
        phase=msg.phase, sender=msg.sender, epoch=msg.epoch, round_no=msg.round_no,
        block=msg.block, block_hash=msg.block_hash, vote=msg.vote, sig=b"",
    )
    return registry.verify(pk, unsigned.signing_bytes(), msg.sig)


class ReputationTable:
    """Per-node reputation in [0, 1]; only ever reduced, never raised."""

    def __init__(self, values: Mapping[bytes, float]):
        self._values = {k: min(1.0, max(0.0, v)) for k, v in values.items()}

    @classmethod
    def initial(cls, node_ids) -> "ReputationTable":
        return cls({node_id: INITIAL_REPUTATION for node_id in node_ids})

    def get(self, node_id: bytes) -> float:
        return self._values.get(node_id, 0.0)

    def as_dict(self) -> dict[bytes, float]:
        return dict(self._values)

    def min(self) -> float:
        return min(self._values.values())

    def __eq__(self, other):
        return isinstance(other, ReputationTable) and self._values == other._values

    def penalized(self, node_ids) -> "ReputationTable":
        """Halve the listed nodes' reputations, snapping small values to zero."""
        values = dict(self._values)
        for node_id in node_ids:
            r = values.get(node_id, 0.0) / 2.0
            values[node_id] = 0.0 if r < REPUTATION_FLOOR else r
        return ReputationTable(values)


def update_reputations(
    reputations: ReputationTable,
    grads_by_id: Mapping[bytes, np.ndarray],
    delta: np.ndarray,
) -> ReputationTable:
    """Penalize every node whose gradient opposes the committed aggregate.

    Opposition means an angle beyond pi/2, i.e. a strictly negative inner
    product; the orthogonal boundary is not penalized.
    """
    penalized = [
        node_id for node_id, g in grads_by_id.items() if float(np.dot(g, delta)) < 0.0
    ]
    return reputations.penalized(penalized)


@dataclass
class RoundState:
    """One node's bookkeeping for one consensus round."""

    epoch: int
    round_no: int
    start_tick: int
    delta_local: np.ndarray | None = None
    block: Block | None = None
    target_hash: bytes | None = None  # hash this node validated and votes for
    prepare_votes: dict[bytes, bytes] = field(default_factory=dict)  # sender -> hash
    commit_votes: dict[bytes, bytes] = field(default_factory=dict)
    view_change_votes: set[bytes] = field(default_factory=set)
    prepare_sent: bool = False
    commit_sent: bool = False
    view_change_sent: bool = False
    decided: bool = False
    abandoned: bool = False
    invalid_count: int = 0  # messages dropped for bad signatures

    def _count_for(self, votes: dict[bytes, bytes], block_hash: bytes) -> int:
        return sum(1 for h in votes.values() if h == block_hash)


def leader_propose(
    grads,
    spec: gar.GarSpec,
    chain: Chain,
    epoch: int,
    round_no: int,
    proposer: bytes,
    sk: bytes,
    txs: tuple[Transaction, ...] = (),
) -> tuple[Block, ConsensusMessage]:
    """Aggregate, wrap in a block linked to the local tip, sign PRE-PREPARE."""
    delta = gar.aggregate(grads, spec)
    tip = chain.tip
    block = make_block(
        height=tip.height + 1, epoch=epoch, round_no=round_no,
        prev_hash=tip.hash, delta=delta, proposer=proposer, txs=txs,
    )
    msg = sign_message(sk, PRE_PREPARE, proposer, epoch, round_no, block, block.hash)
    return block, msg


def follower_validate(
    msg: ConsensusMessage,
    delta_local: np.ndarray,
    chain: Chain,
    registry: KeyRegistry,
    sender_pk: bytes | None,
    delta_tol: float,
) -> str | None:
    """None when the proposal is acceptable, else a machine-readable reason.

    bad-sig: the message signature does not verify.
    bad-link: the block is malformed or does not extend the local tip.
    delta-mismatch: the recomputed aggregate differs beyond delta_tol.
    """
    if not verify_message(msg, registry, sender_pk):
        return REJECT_BAD_SIG
    block = msg.block
    if block is None or block.hash != msg.block_hash or block.hash != block.compute_hash():
        return REJECT_BAD_LINK
    tip = chain.tip
    if block.prev_hash != tip.hash or block.height != tip.height + 1:
        return REJECT_BAD_LINK
    if block.delta.shape != delta_local.shape:
        return REJECT_DELTA_MISMATCH
    if not np.all(np.abs(delta_local - block.delta) < delta_tol):
        return REJECT_DELTA_MISMATCH
    return None


def on_prepare(state: RoundState, msg: ConsensusMessage, quorum: int) -> bool:
    """Record a PREPARE vote; True when this node should broadcast COMMIT.

    The caller has already checked the signature.  A sender's first vote
    in the phase is the one that counts.
    """
    if msg.sender in state.prepare_votes:
        return False
    state.prepare_votes[msg.sender] = msg.block_hash
    if state.commit_sent or state.target_hash is None or not state.prepare_sent:
        return False
    if state._count_for(state.prepare_votes, state.target_hash) >= quorum:
        state.commit_sent = True
        return True
    return False


def on_commit(state: RoundState, msg: ConsensusMessage, quorum: int) -> bool:
    """Record a COMMIT vote; True when the decide condition is newly met."""
    if msg.sender in state.commit_votes:
        return False
    state.commit_votes[msg.sender] = msg.block_hash
    if state.decided or state.target_hash is None or not state.commit_sent:
        return False
    if state._count_for(state.commit_votes, state.target_hash) >= quorum:
        state.decided = True
        return True
    return False


def decide(
    state: RoundState,
    chain: Chain,
    x: np.ndarray,
    gamma: float,
    reputations: ReputationTable,
    grads_by_id: Mapping[bytes, np.ndarray],
) -> tuple[Chain, np.ndarray, ReputationTable]:
    """Append the certified block, step the model, apply reputation penalties."""
    if state.block is None:
        raise ChainError("decide without a stored block")
    try:
        new_chain = append_block(chain, state.block)
    except ChainError as exc:
        # Reaching a commit quorum on an unappendable block is fatal.
        raise ChainError(f"decide failed to append certified block: {exc}") from exc
    new_x = x - gamma * state.block.delta
    new_reps = update_reputations(reputations, grads_by_id, state.block.delta)
    return new_chain, new_x, new_reps


def on_timeout(state: RoundState, now_tick: int, delta2: int) -> bool:
    """True when the view-change timer expired and none was sent yet."""
    if state.decided or state.abandoned or state.view_change_sent:
        return False
    if now_tick > state.start_tick + delta2:
        state.view_change_sent = True
        return True
    return False


def on_view_change(state: RoundState, msg: ConsensusMessage, quorum: int) -> bool:
    """Record a VIEW-CHANGE vote; True when the round is newly abandoned."""
    if msg.sender in state.view_change_votes:
        return False
    state.view_change_votes.add(msg.sender)
    if state.abandoned or state.decided:
        return False
    if len(state.view_change_votes) >= quorum:
        state.abandoned = True
        return True
    return False
