"""VRF-based leader election with reputation gating.

Every node evaluates its VRF on a shared seed and broadcasts the output;
the valid candidate with the lexicographically largest hash among those
with positive reputation wins.  Zero-reputation nodes are barred.  Ties
on the full 256-bit value break to the lowest node id (observably
equivalent to relaunching at realistic probabilities); the relaunch path
remains for the no-eligible-candidate case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .crypto import KeyRegistry, sha256
from .encoding import enc_digest, enc_u64
from .errors import ElectionFailedError


@dataclass(frozen=True)
class Candidate:
    """A VRF submission that already passed proof verification."""

    node_id: bytes
    h: bytes
    pi: bytes
    reputation: float


def election_seed(epoch: int, attempt: int, prev_block_hash: bytes) -> bytes:
    """Deterministic seed, distinct for distinct (epoch, attempt, hash) triples."""
    return sha256(b"election" + enc_u64(epoch) + enc_u64(attempt) + enc_digest(prev_block_hash))


def verify_candidates(
    submissions: Iterable[tuple[bytes, bytes, bytes]],
    registry: KeyRegistry,
    pk_by_id: Mapping[bytes, bytes],
    reputations: Mapping[bytes, float],
    seed: bytes,
) -> tuple[list[Candidate], int]:
    """Filter (node_id, h, pi) submissions through VRF verification.

    Returns the admitted candidates and the count of rejected (forged or
    unknown-sender) submissions.
    """
    admitted: list[Candidate] = []
    rejected = 0
    for node_id, h, pi in submissions:
        pk = pk_by_id.get(node_id)
        if pk is None or not registry.vrf_verify(pk, h, pi, seed):
            rejected += 1
            continue
        admitted.append(
            Candidate(node_id=node_id, h=h, pi=pi, reputation=reputations.get(node_id, 0.0))
        )
    return admitted, rejected


def elect_leader(candidates: Sequence[Candidate]) -> bytes:
    """Id of the eligible candidate with the largest VRF hash.

    Candidates with zero reputation are excluded; with no eligible
    candidate at all the election fails and the caller relaunches with a
    fresh seed.
    """
    best: Candidate | None = None
    for cand in candidates:
        if cand.reputation <= 0.0:
            continue
        if best is None or cand.h > best.h or (cand.h == best.h and cand.node_id < best.node_id):
            best = cand
    if best is None:
        raise ElectionFailedError("no candidate with positive reputation and valid proof")
    return best.node_id
