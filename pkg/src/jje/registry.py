"""The public delegate list (KeyDB), its per-epoch headers and archive."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Callable, Iterable, Mapping, Sequence

from . import crypto
from .crypto import Ciphertext
from .errors import InvalidParameter
from .merkle import MerklePathProof, MerkleTree

DB_MAGIC = b"JJEDB1"
HEADER_TAG = b"JJE-HEADER"

GroupSigner = Callable[[bytes], bytes]


@dataclass(frozen=True, order=True)
class DeviceId:
    imei: str

    def __post_init__(self):
        if len(self.imei) != 15 or not self.imei.isdigit():
            raise InvalidParameter(f"IMEI must be 15 decimal digits, got {self.imei!r}")

    def to_bytes(self) -> bytes:
        return self.imei.encode("ascii")

    @classmethod
    def from_bytes(cls, data: bytes) -> "DeviceId":
        try:
            return cls(data.decode("ascii"))
        except UnicodeDecodeError as exc:
            raise InvalidParameter("IMEI bytes are not ASCII") from exc


def luhn_digit(body: str) -> str:
    """Check digit that completes a 14-digit IMEI body."""
    total = 0
    for i, ch in enumerate(reversed(body)):
        d = int(ch)
        if i % 2 == 0:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return str((10 - total % 10) % 10)


@dataclass(frozen=True)
class DelegateEntry:
    verify_key: bytes
    enc_device_id: Ciphertext
    manufacturer_sig: bytes

    def leaf(self, index: int) -> bytes:
        """Committed leaf bytes; the 1-based index is bound into the leaf."""
        ct = self.enc_device_id.to_bytes()
        return b"".join(
            (
                struct.pack(">QI", index, len(self.verify_key)),
                self.verify_key,
                struct.pack(">I", len(ct)),
                ct,
            )
        )

    def to_record(self, index: int) -> bytes:
        return self.leaf(index) + struct.pack(">I", len(self.manufacturer_sig)) + self.manufacturer_sig

    @classmethod
    def parse_record(cls, data: bytes, offset: int = 0) -> tuple[int, "DelegateEntry", int]:
        def take(n: int) -> bytes:
            nonlocal offset
            if offset + n > len(data):
                raise InvalidParameter("truncated delegate record")
            chunk = data[offset : offset + n]
            offset += n
            return chunk

        index, vk_len = struct.unpack(">QI", take(12))
        vk = take(vk_len)
        (ct_len,) = struct.unpack(">I", take(4))
        ct = Ciphertext.from_bytes(take(ct_len))
        (sig_len,) = struct.unpack(">I", take(4))
        sig = take(sig_len)
        return index, cls(vk, ct, sig), offset


def manufacturer_signed(entry: DelegateEntry, manufacturer_vk: bytes) -> bool:
    return crypto.verify(manufacturer_vk, entry.verify_key, entry.manufacturer_sig)


@dataclass(frozen=True)
class KeyDb:
    """One epoch's published list; ``entries[j-1]`` is the entry at index j."""

    epoch: int
    entries: tuple[DelegateEntry, ...]

    def __post_init__(self):
        if self.epoch < 0:
            raise InvalidParameter("epoch must be >= 0")
        if not self.entries:
            raise InvalidParameter("a published list needs at least one entry")
        vks = {e.verify_key for e in self.entries}
        if len(vks) != len(self.entries):
            raise InvalidParameter("duplicate verification key in KeyDb")

    @classmethod
    def from_union(cls, epoch: int, entries: Iterable[DelegateEntry]) -> "KeyDb":
        """Order entries by verification key so every custodian derives the same list."""
        return cls(epoch, tuple(sorted(entries, key=lambda e: e.verify_key)))

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def tree(self) -> MerkleTree:
        return MerkleTree([e.leaf(i) for i, e in enumerate(self.entries, 1)])

    @property
    def root(self) -> bytes:
        return self.tree.root

    def dump(self, fh: BinaryIO) -> None:
        fh.write(DB_MAGIC + struct.pack(">QQ", self.epoch, len(self.entries)))
        for i, e in enumerate(self.entries, 1):
            fh.write(e.to_record(i))

    @classmethod
    def load(cls, fh: BinaryIO) -> "KeyDb":
        data = fh.read()
        if data[:6] != DB_MAGIC or len(data) < 22:
            raise InvalidParameter("not a KeyDb file")
        epoch, n = struct.unpack_from(">QQ", data, 6)
        offset = 22
        entries = []
        for expected in range(1, n + 1):
            index, entry, offset = DelegateEntry.parse_record(data, offset)
            if index != expected:
                raise InvalidParameter(f"record {expected} carries index {index}")
            entries.append(entry)
        if offset != len(data):
            raise InvalidParameter("trailing bytes in KeyDb file")
        return cls(epoch, tuple(entries))


@dataclass(frozen=True)
class KeyDbHeader:
    merkle_root: bytes
    device_count: int
    epoch: int
    custodian_group_sig: bytes = field(repr=False)

    def signed_bytes(self) -> bytes:
        return header_message(self.merkle_root, self.device_count, self.epoch)

    def to_bytes(self) -> bytes:
        return self.signed_bytes()[len(HEADER_TAG):] + self.custodian_group_sig

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyDbHeader":
        if len(data) != 48 + crypto.GROUP_SIG_LEN:
            raise InvalidParameter("header must be 113 bytes")
        n, epoch = struct.unpack_from(">QQ", data, 32)
        return cls(data[:32], n, epoch, data[48:])


def header_message(root: bytes, device_count: int, epoch: int) -> bytes:
    return HEADER_TAG + root + struct.pack(">QQ", device_count, epoch)


def build_header(db: KeyDb, group_sign: GroupSigner) -> KeyDbHeader:
    """Header over ``db``; ``group_sign`` runs the custodians' signing rounds."""
    msg = header_message(db.root, len(db), db.epoch)
    return KeyDbHeader(db.root, len(db), db.epoch, group_sign(msg))


def verify_header(header: KeyDbHeader, group_verify_key: bytes) -> bool:
    return crypto.verify_group(group_verify_key, header.signed_bytes(), header.custodian_group_sig)


def entry_at(db: KeyDb, index: int) -> tuple[DelegateEntry, MerklePathProof]:
    if not 1 <= index <= len(db):
        raise InvalidParameter(f"index {index} outside [1, {len(db)}]")
    return db.entries[index - 1], db.tree.path(index)


class EpochArchive:
    """Custodian-side record of every published epoch."""

    def __init__(self):
        self._published: dict[int, tuple[KeyDb, KeyDbHeader]] = {}

    def publish(self, db: KeyDb, header: KeyDbHeader) -> None:
        if self._published and db.epoch <= self.latest_epoch:
            raise InvalidParameter(
                f"epoch {db.epoch} does not follow latest epoch {self.latest_epoch}"
            )
        self._published[db.epoch] = (db, header)

    @property
    def latest_epoch(self) -> int:
        if not self._published:
            raise LookupError("no epoch published yet")
        return max(self._published)

    def db(self, epoch: int) -> KeyDb:
        return self._published[epoch][0]

    def header(self, epoch: int) -> KeyDbHeader:
        return self._published[epoch][1]

    def headers(self) -> list[KeyDbHeader]:
        return [self._published[e][1] for e in sorted(self._published)]

    def __contains__(self, epoch: int) -> bool:
        return epoch in self._published


# -- jurisdiction mode --------------------------------------------------------


def jurisdiction_leaf(name: str, root: bytes, device_count: int) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw + root + struct.pack(">Q", device_count)


@dataclass(frozen=True)
class JurisdictionProof:
    """What law enforcement presents to bind a jurisdiction list to the super-root."""

    name: str
    root: bytes
    device_count: int
    proof: MerklePathProof

    def leaf(self) -> bytes:
        return jurisdiction_leaf(self.name, self.root, self.device_count)


@dataclass(frozen=True)
class JurisdictionRegistry:
    """Per-jurisdiction lists under a single super-root.

    The super-tree's leaves are the jurisdictions' (name, root, N) triples in
    name order, so a device can authenticate both the list root and its size.
    """

    epoch: int
    lists: Mapping[str, KeyDb]

    def __post_init__(self):
        if not self.lists:
            raise InvalidParameter("need at least one jurisdiction")
        for name, db in self.lists.items():
            if db.epoch != self.epoch:
                raise InvalidParameter(f"jurisdiction {name!r} is at epoch {db.epoch}")

    @cached_property
    def names(self) -> list[str]:
        return sorted(self.lists)

    @cached_property
    def tree(self) -> MerkleTree:
        return MerkleTree(
            [jurisdiction_leaf(n, self.lists[n].root, len(self.lists[n])) for n in self.names]
        )

    @property
    def super_root(self) -> bytes:
        return self.tree.root

    @property
    def device_count(self) -> int:
        return sum(len(db) for db in self.lists.values())

    def jurisdiction_proof(self, name: str) -> JurisdictionProof:
        db = self.lists[name]
        return JurisdictionProof(name, db.root, len(db), self.tree.path(self.names.index(name) + 1))

    def build_header(self, group_sign: GroupSigner) -> KeyDbHeader:
        msg = header_message(self.super_root, self.device_count, self.epoch)
        return KeyDbHeader(self.super_root, self.device_count, self.epoch, group_sign(msg))
