"""Identities, signatures, hashing and a VRF with keyed-hash surrogates.

Every digest in the system is SHA-256 (the single build-time hash choice).
The surrogate constructions are:

    sk           = H("sk" || seed)
    pk           = H(sk)
    node id      = H(pk)
    sign(sk, m)  = H(sk || m)
    vrf h        = H(sk || seed)
    vrf proof    = H("proof" || sk || seed)

Keyed-hash MACs are not publicly verifiable, so verification goes through
a trusted :class:`KeyRegistry` that holds pk -> sk, write-once at
bootstrap.  The protocol-visible contract (honest values verify, forged
ones do not) is the same as a real signature/VRF suite, and this module
is the seam where one could be dropped in.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

KEY_LEN = 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    sk: bytes
    pk: bytes


@dataclass(frozen=True)
class VrfOutput:
    h: bytes
    pi: bytes


def keygen(seed: bytes) -> tuple[KeyPair, bytes]:
    """Derive a key pair and 256-bit node identity from a seed.

    Deterministic: the same seed always yields the same pair and id.
    """
    sk = sha256(b"sk" + seed)
    pk = sha256(sk)
    node_id = sha256(pk)
    return KeyPair(sk=sk, pk=pk), node_id


def sign(sk: bytes, msg: bytes) -> bytes:
    if len(sk) != KEY_LEN:
        raise ValueError(f"secret key must be {KEY_LEN} bytes")
    return sha256(sk + msg)


def vrf_eval(sk: bytes, seed: bytes) -> VrfOutput:
    if len(sk) != KEY_LEN:
        raise ValueError(f"secret key must be {KEY_LEN} bytes")
    return VrfOutput(h=sha256(sk + seed), pi=sha256(b"proof" + sk + seed))


class KeyRegistry:
    """Trusted verifier oracle mapping public keys to verification keys.

    Registration happens once per key pair at bootstrap; afterwards the
    registry is read-only and safe for concurrent use.
    """

    def __init__(self):
        self._keys: dict[bytes, bytes] = {}

    def register(self, pair: KeyPair) -> None:
        if pair.pk != sha256(pair.sk):
            raise ValueError("public key does not derive from secret key")
        known = self._keys.get(pair.pk)
        if known is not None and known != pair.sk:
            raise ValueError("conflicting registration for public key")
        self._keys[pair.pk] = pair.sk

    def known(self, pk: bytes) -> bool:
        return pk in self._keys

    def verify(self, pk: bytes, msg: bytes, sig: bytes) -> bool:
        if len(sig) != KEY_LEN or len(pk) != KEY_LEN:
            raise ValueError("malformed key or signature length")
        sk = self._keys.get(pk)
        if sk is None:
            return False
        return sign(sk, msg) == sig

    def vrf_verify(self, pk: bytes, h: bytes, pi: bytes, seed: bytes) -> bool:
        if len(h) != KEY_LEN or len(pi) != KEY_LEN:
            return False
        sk = self._keys.get(pk)
        if sk is None:
            return False
        honest = vrf_eval(sk, seed)
        return honest.h == h and honest.pi == pi
