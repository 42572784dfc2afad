"""Hash-chained permissioned ledger of per-round aggregated gradients.

One block per committed round; registration transactions ride in whichever
block commits next.  Timestamps are simulator ticks, never wall-clock, so
hashes are reproducible.  PBFT finality means forks are an error, not a
branch to resolve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crypto import sha256
from .encoding import ByteReader, enc_bytes, enc_digest, enc_str, enc_u64, enc_vector
from .errors import ChainError

ZERO_HASH = bytes(32)
CHAIN_MAGIC = b"SPDL"
CHAIN_VERSION = 1
TX_REGISTER = "register"


@dataclass(frozen=True)
class Transaction:
    kind: str
    pk: bytes
    node_id: bytes
    address: str
    timestamp: int

    def __post_init__(self):
        if self.kind != TX_REGISTER:
            raise ValueError(f"unknown transaction kind: {self.kind!r}")
        if self.node_id != sha256(self.pk):
            raise ValueError("transaction id must be the hash of its public key")

    def encode(self) -> bytes:
        return (
            enc_str(self.kind)
            + enc_bytes(self.pk)
            + enc_digest(self.node_id)
            + enc_str(self.address)
            + enc_u64(self.timestamp)
        )

    @staticmethod
    def decode(reader: ByteReader) -> "Transaction":
        return Transaction(
            kind=reader.read_str(),
            pk=reader.read_bytes(),
            node_id=reader.read_digest(),
            address=reader.read_str(),
            timestamp=reader.read_u64(),
        )


@dataclass(frozen=True, eq=False)
class Block:
    height: int
    epoch: int
    round_no: int
    prev_hash: bytes
    delta: np.ndarray
    proposer: bytes
    txs: tuple[Transaction, ...]
    hash: bytes

    def __post_init__(self):
        delta = np.ascontiguousarray(self.delta, dtype=np.float64)
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    def body_bytes(self) -> bytes:
        """Canonical encoding of every field except the hash itself."""
        out = (
            enc_u64(self.height)
            + enc_u64(self.epoch)
            + enc_u64(self.round_no)
            + enc_digest(self.prev_hash)
            + enc_vector(self.delta)
            + enc_digest(self.proposer)
            + enc_u64(len(self.txs))
        )
        for tx in self.txs:
            out += tx.encode()
        return out

    def compute_hash(self) -> bytes:
        return sha256(self.body_bytes())

    def encode(self) -> bytes:
        return self.body_bytes() + enc_digest(self.hash)

    @staticmethod
    def decode(data: bytes) -> "Block":
        reader = ByteReader(data)
        height = reader.read_u64()
        epoch = reader.read_u64()
        round_no = reader.read_u64()
        prev_hash = reader.read_digest()
        delta = reader.read_vector()
        proposer = reader.read_digest()
        txs = tuple(Transaction.decode(reader) for _ in range(reader.read_u64()))
        stored = reader.read_digest()
        reader.expect_end()
        return Block(
            height=height, epoch=epoch, round_no=round_no, prev_hash=prev_hash,
            delta=delta, proposer=proposer, txs=txs, hash=stored,
        )

    def __eq__(self, other):
        return isinstance(other, Block) and self.hash == other.hash

    def __hash__(self):
        return hash(self.hash)


def make_block(
    height: int,
    epoch: int,
    round_no: int,
    prev_hash: bytes,
    delta: np.ndarray,
    proposer: bytes,
    txs: tuple[Transaction, ...] = (),
) -> Block:
    """Assemble a block and stamp it with its self-hash."""
    blk = Block(
        height=height, epoch=epoch, round_no=round_no, prev_hash=prev_hash,
        delta=delta, proposer=proposer, txs=txs, hash=ZERO_HASH,
    )
    return Block(
        height=height, epoch=epoch, round_no=round_no, prev_hash=prev_hash,
        delta=blk.delta, proposer=proposer, txs=txs, hash=blk.compute_hash(),
    )


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        if not self.blocks:
            raise ChainError("empty chain has no tip")
        return self.blocks[-1]

    @property
    def genesis(self) -> Block:
        if not self.blocks:
            raise ChainError("empty chain has no genesis")
        return self.blocks[0]


def make_genesis(initial_nodes: list[Transaction], dimension: int = 0) -> Block:
    """Height-0 block recording the bootstrap node set, zero delta, zero parent."""
    if not initial_nodes:
        raise ValueError("genesis needs at least one registration transaction")
    return make_block(
        height=0, epoch=0, round_no=0, prev_hash=ZERO_HASH,
        delta=np.zeros(dimension), proposer=ZERO_HASH, txs=tuple(initial_nodes),
    )


def _check_block(block: Block, parent: Block | None) -> str | None:
    """Name of the failed integrity check, or None when the block is sound."""
    if block.hash != block.compute_hash():
        return "self-hash"
    if parent is None:
        if block.height != 0:
            return "genesis-height"
        if block.prev_hash != ZERO_HASH:
            return "genesis-parent"
        return None
    if block.prev_hash != parent.hash:
        return "link"
    if block.height != parent.height + 1:
        return "height"
    return None


def append_block(chain: Chain, block: Block) -> Chain:
    """Extend the chain by one block, or raise naming the failed check."""
    parent = chain.tip if len(chain) else None
    failed = _check_block(block, parent)
    if failed is not None:
        raise ChainError(f"block rejected: {failed} check failed at height {block.height}")
    return Chain(blocks=chain.blocks + (block,))


def verify_chain(chain: Chain) -> bool:
    """True iff every link and self-hash invariant holds from genesis to tip."""
    if not chain.blocks:
        return False
    parent: Block | None = None
    for block in chain.blocks:
        if _check_block(block, parent) is not None:
            return False
        parent = block
    return True


def save_chain(chain: Chain, path) -> None:
    """Export: magic + 2-byte version, then 4-byte big-endian sized blocks."""
    with open(path, "wb") as fh:
        fh.write(CHAIN_MAGIC)
        fh.write(CHAIN_VERSION.to_bytes(2, "big"))
        for block in chain.blocks:
            raw = block.encode()
            fh.write(len(raw).to_bytes(4, "big"))
            fh.write(raw)


def load_chain(path) -> Chain:
    """Import a chain file; integrity is re-verified on load."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHAIN_MAGIC:
        raise ChainError(f"bad chain file magic: {data[:4]!r}")
    version = int.from_bytes(data[4:6], "big")
    if version != CHAIN_VERSION:
        raise ChainError(f"unsupported chain file version: {version}")
    blocks = []
    pos = 6
    while pos < len(data):
        if pos + 4 > len(data):
            raise ChainError(f"truncated block length at offset {pos}")
        size = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        if pos + size > len(data):
            raise ChainError(f"truncated block payload at offset {pos}")
        try:
            blocks.append(Block.decode(data[pos : pos + size]))
        except ValueError as exc:
            raise ChainError(f"undecodable block at offset {pos}: {exc}") from exc
        pos += size
    chain = Chain(blocks=tuple(blocks))
    if not verify_chain(chain):
        raise ChainError("imported chain failed verification")
    return chain
