"""Merkle commitments over the delegate list.

Leaves hash as ``H(0x00 || leaf)``, interior nodes as ``H(0x01 || l || r)``.
A level with an odd number of nodes duplicates its last node, so every
proof for ``N > 1`` leaves has exactly ``ceil(log2 N)`` siblings. Leaf
indices are 1-based throughout.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidParameter

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

# sibling sits to the left / right of the running hash
LEFT = 0
RIGHT = 1


def hash_leaf(leaf: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + leaf).digest()


def hash_node(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


@dataclass(frozen=True)
class MerklePathProof:
    leaf_index: int
    siblings: tuple[tuple[int, bytes], ...]

    def to_bytes(self) -> bytes:
        out = [struct.pack(">QI", self.leaf_index, len(self.siblings))]
        for side, digest in self.siblings:
            out.append(bytes([side]) + digest)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MerklePathProof":
        proof, rest = cls.parse(data)
        if rest:
            raise InvalidParameter("trailing bytes after Merkle proof")
        return proof

    @classmethod
    def parse(cls, data: bytes) -> tuple["MerklePathProof", bytes]:
        """Decode one proof from the front of ``data``; return the remainder."""
        if len(data) < 12:
            raise InvalidParameter("truncated Merkle proof")
        index, count = struct.unpack_from(">QI", data)
        end = 12 + 33 * count
        if len(data) < end:
            raise InvalidParameter("truncated Merkle proof")
        siblings = tuple(
            (data[off], data[off + 1 : off + 33]) for off in range(12, end, 33)
        )
        return cls(index, siblings), data[end:]


class MerkleTree:
    """All levels of the tree, kept so that paths come out in O(log N)."""

    def __init__(self, leaves: Sequence[bytes]):
        if not leaves:
            raise InvalidParameter("Merkle tree needs at least one leaf")
        level = [hash_leaf(leaf) for leaf in leaves]
        self.levels: list[list[bytes]] = [level]
        while len(level) > 1:
            if len(level) % 2:
                level = level + [level[-1]]
            level = [hash_node(level[i], level[i + 1]) for i in range(0, len(level), 2)]
            self.levels.append(level)

    def __len__(self) -> int:
        return len(self.levels[0])

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def path(self, index: int) -> MerklePathProof:
        n = len(self)
        if not 1 <= index <= n:
            raise InvalidParameter(f"leaf index {index} outside [1, {n}]")
        pos = index - 1
        siblings = []
        for level in self.levels[:-1]:
            if pos % 2:
                siblings.append((LEFT, level[pos - 1]))
            else:
                # odd tail: the node is paired with itself
                sib = level[pos + 1] if pos + 1 < len(level) else level[pos]
                siblings.append((RIGHT, sib))
            pos //= 2
        return MerklePathProof(index, tuple(siblings))


def merkle_digest(leaves: Sequence[bytes]) -> bytes:
    return MerkleTree(leaves).root


def merkle_path(leaves: Sequence[bytes], index: int) -> MerklePathProof:
    return MerkleTree(leaves).path(index)


def merkle_verify(proof: MerklePathProof, leaf: bytes, root: bytes) -> bool:
    """True iff ``leaf`` sits at ``proof.leaf_index`` of the tree under ``root``.

    The sibling sides must spell out the binary form of ``leaf_index - 1``
    and the index must fit the proof depth, so a proof cannot be re-used
    for a different position.
    """
    pos = proof.leaf_index - 1
    depth = len(proof.siblings)
    if pos < 0 or pos >> depth:
        return False
    running = hash_leaf(leaf)
    for side, digest in proof.siblings:
        if len(digest) != 32:
            return False
        if side == LEFT and pos % 2 == 1:
            running = hash_node(digest, running)
        elif side == RIGHT and pos % 2 == 0:
            running = hash_node(running, digest)
        else:
            return False
        pos //= 2
    return running == root
