"""Wire formats exchanged between the locked device, custodians, delegates
and law enforcement."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

from .crypto import NONCE_LEN, Ciphertext
from .errors import InvalidParameter
from .merkle import MerklePathProof
from .registry import DelegateEntry, JurisdictionProof

UNLOCK_TAG = b"JJE-UNLOCK"
FAILSAFE_TAG = b"JJE-FAILSAFE"
SEED_LEN = 32


def unlock_message(epoch: int, nonce: bytes) -> bytes:
    """What a delegate signs: tag, epoch and nonce, never the bare nonce."""
    return UNLOCK_TAG + struct.pack(">Q", epoch) + nonce


@dataclass(frozen=True)
class Challenge:
    epoch: int
    ciphertext: Ciphertext

    def to_bytes(self) -> bytes:
        ct = self.ciphertext.to_bytes()
        return struct.pack(">QI", self.epoch, len(ct)) + ct

    @classmethod
    def from_bytes(cls, data: bytes) -> "Challenge":
        if len(data) < 12:
            raise InvalidParameter("truncated challenge")
        epoch, n = struct.unpack_from(">QI", data)
        if len(data) != 12 + n:
            raise InvalidParameter("challenge length mismatch")
        return cls(epoch, Ciphertext.from_bytes(data[12:]))


@dataclass(frozen=True)
class SealedSelection:
    """Plaintext inside a challenge: either explicit indices or a seed."""

    nonce: bytes
    indices: Optional[tuple[int, ...]] = None
    seed: Optional[bytes] = None
    delegation_size: int = 0

    @property
    def seeded(self) -> bool:
        return self.seed is not None


def encode_selection(indices: Sequence[int], nonce: bytes) -> bytes:
    if not indices:
        raise InvalidParameter("empty selection")
    ordered = sorted(indices)
    return struct.pack(f">I{len(ordered)}Q", len(ordered), *ordered) + nonce


def encode_seeded_selection(seed: bytes, delegation_size: int, nonce: bytes) -> bytes:
    # a zero count marks seed mode; explicit selections are never empty
    return struct.pack(">II", 0, delegation_size) + seed + nonce


def decode_selection(data: bytes) -> SealedSelection:
    if len(data) < 4 + NONCE_LEN:
        raise InvalidParameter("truncated selection")
    (count,) = struct.unpack_from(">I", data)
    if count == 0:
        if len(data) != 8 + SEED_LEN + NONCE_LEN:
            raise InvalidParameter("malformed seeded selection")
        (size,) = struct.unpack_from(">I", data, 4)
        return SealedSelection(data[8 + SEED_LEN :], seed=data[8 : 8 + SEED_LEN], delegation_size=size)
    if len(data) != 4 + 8 * count + NONCE_LEN:
        raise InvalidParameter("malformed selection")
    indices = struct.unpack_from(f">{count}Q", data, 4)
    return SealedSelection(data[4 + 8 * count :], indices=tuple(indices))


@dataclass(frozen=True)
class SignedDelegate:
    index: int
    entry: DelegateEntry
    signature: bytes
    proof: MerklePathProof


@dataclass(frozen=True)
class UnlockResponse:
    items: tuple[SignedDelegate, ...]
    jurisdiction: Optional[JurisdictionProof] = None

    def __len__(self) -> int:
        return len(self.items)

    def to_bytes(self) -> bytes:
        out = [struct.pack(">I", len(self.items))]
        for item in self.items:
            record = item.entry.to_record(item.index)
            out.append(struct.pack(">QI", item.index, len(record)) + record)
            out.append(struct.pack(">I", len(item.signature)) + item.signature)
            out.append(item.proof.to_bytes())
        if self.jurisdiction is None:
            out.append(b"\x00")
        else:
            j = self.jurisdiction
            name = j.name.encode("utf-8")
            out.append(b"\x01" + struct.pack(">I", len(name)) + name + j.root)
            out.append(struct.pack(">Q", j.device_count) + j.proof.to_bytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "UnlockResponse":
        try:
            return cls._parse(data)
        except (struct.error, IndexError, UnicodeDecodeError) as exc:
            raise InvalidParameter(f"malformed unlock response: {exc}") from exc

    @classmethod
    def _parse(cls, data: bytes) -> "UnlockResponse":
        (count,) = struct.unpack_from(">I", data)
        off = 4
        items = []
        for _ in range(count):
            index, rec_len = struct.unpack_from(">QI", data, off)
            off += 12
            _, entry, _ = DelegateEntry.parse_record(data[off : off + rec_len])
            off += rec_len
            (sig_len,) = struct.unpack_from(">I", data, off)
            sig = data[off + 4 : off + 4 + sig_len]
            off += 4 + sig_len
            proof, rest = MerklePathProof.parse(data[off:])
            off = len(data) - len(rest)
            items.append(SignedDelegate(index, entry, sig, proof))
        flag = data[off]
        off += 1
        jurisdiction = None
        if flag:
            (name_len,) = struct.unpack_from(">I", data, off)
            name = data[off + 4 : off + 4 + name_len].decode("utf-8")
            off += 4 + name_len
            root = data[off : off + 32]
            (n,) = struct.unpack_from(">Q", data, off + 32)
            proof, rest = MerklePathProof.parse(data[off + 40 :])
            if rest:
                raise InvalidParameter("trailing bytes in unlock response")
            jurisdiction = JurisdictionProof(name, root, n, proof)
        elif off != len(data):
            raise InvalidParameter("trailing bytes in unlock response")
        return cls(tuple(items), jurisdiction)


@dataclass(frozen=True)
class FailsafeRequest:
    """Custodian-signed request to release a long-stale device."""

    imei: str
    issued_step: int
    signature: bytes

    @staticmethod
    def message(imei: str, issued_step: int) -> bytes:
        return FAILSAFE_TAG + imei.encode("ascii") + struct.pack(">Q", issued_step)
