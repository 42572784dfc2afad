"""Canonical byte encoding for everything that gets hashed or signed.

Block hashes, signatures and the chain export file all depend on this
layout being bit-exact, so the rules are fixed here and nowhere else:

* unsigned integers: 8-byte big-endian
* real scalars: 8-byte big-endian IEEE-754
* real vectors: 8-byte big-endian element count, then raw coordinates
* byte strings: 8-byte big-endian length prefix, then raw bytes
* fixed 32-byte digests: raw, no prefix
* lists: 8-byte big-endian element count, then encoded elements
* composite records: fields concatenated in declaration order

The count prefixes on vectors and lists are what make the stream
decodable without out-of-band dimension knowledge (chain import needs
that); scalars inside a vector stay raw.
"""

from __future__ import annotations

import struct

import numpy as np

HASH_LEN = 32
U64_MAX = 2**64 - 1


def enc_u64(value: int) -> bytes:
    if not 0 <= value <= U64_MAX:
        raise ValueError(f"u64 out of range: {value}")
    return struct.pack(">Q", value)


def enc_bytes(data: bytes) -> bytes:
    return enc_u64(len(data)) + data


def enc_str(text: str) -> bytes:
    return enc_bytes(text.encode("utf-8"))


def enc_digest(digest: bytes) -> bytes:
    if len(digest) != HASH_LEN:
        raise ValueError(f"digest must be {HASH_LEN} bytes, got {len(digest)}")
    return digest


def enc_vector(values: np.ndarray) -> bytes:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("only 1-D vectors are encodable")
    return enc_u64(arr.size) + struct.pack(f">{arr.size}d", *arr.tolist())


class ByteReader:
    """Sequential decoder over one canonical byte string."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    @property
    def offset(self) -> int:
        return self._pos

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ValueError(
                f"truncated encoding: need {n} bytes at offset {self._pos}, "
                f"have {len(self._data) - self._pos}"
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def read_u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def read_bytes(self) -> bytes:
        return self._take(self.read_u64())

    def read_str(self) -> str:
        return self.read_bytes().decode("utf-8")

    def read_digest(self) -> bytes:
        return self._take(HASH_LEN)

    def read_vector(self) -> np.ndarray:
        n = self.read_u64()
        raw = self._take(8 * n)
        return np.array(struct.unpack(f">{n}d", raw), dtype=np.float64)

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise ValueError(
                f"trailing bytes: {len(self._data) - self._pos} after offset {self._pos}"
            )
