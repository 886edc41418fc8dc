"""Cryptographic primitives: signatures, n-of-n threshold encryption and
group signing for the custodians, hashing, and a deterministic expander.

Everything runs over secp256k1 (libsecp256k1 through ``coincurve``):

* device and manufacturer signatures are deterministic ECDSA (RFC 6979);
* the custodian group key is additively shared, ``x = x_1 + ... + x_k``.
  Encryption is hashed ElGamal (a KEM) followed by ChaCha20-Poly1305, so a
  combined decryption needs a partial ``x_i * R`` from every custodian;
* the custodian group signature is an n-of-n Schnorr signature over the
  same curve with an independent sharing.

Entropy is always injectable (``entropy(n) -> n bytes``) so simulations can
be replayed byte for byte.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Iterable, Sequence

from coincurve import PrivateKey, PublicKey
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import CombineError, InvalidParameter

Entropy = Callable[[int], bytes]

# secp256k1 group order
CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
POINT_LEN = 33
KEY_ID_LEN = 8
NONCE_LEN = 32
GROUP_SIG_LEN = POINT_LEN + 32

_AEAD_NONCE = bytes(12)  # every KEM key is used exactly once


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def random_scalar(entropy: Entropy = secrets.token_bytes) -> int:
    """Uniform scalar in [1, n-1] by rejection sampling."""
    while True:
        v = int.from_bytes(entropy(32), "big")
        if 0 < v < CURVE_ORDER:
            return v


def _scalar_bytes(v: int) -> bytes:
    return v.to_bytes(32, "big")


def _base_mult(v: int) -> PublicKey:
    return PublicKey.from_secret(_scalar_bytes(v % CURVE_ORDER))


def key_id(public_key: bytes) -> bytes:
    """Short tag naming an encryption key inside ciphertexts."""
    return sha256(b"JJE-KEYID", public_key)[:KEY_ID_LEN]


def new_nonce(entropy: Entropy = secrets.token_bytes) -> bytes:
    return entropy(NONCE_LEN)


# -- signatures ---------------------------------------------------------------


@dataclass(frozen=True)
class SigKeyPair:
    """ECDSA key pair; ``verify_key`` is the 33-byte compressed point."""

    signing_key: bytes = field(repr=False)
    verify_key: bytes

    @cached_property
    def _private(self) -> PrivateKey:
        return PrivateKey(self.signing_key)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def keygen(entropy: Entropy = secrets.token_bytes) -> SigKeyPair:
    secret = _scalar_bytes(random_scalar(entropy))
    return SigKeyPair(secret, PublicKey.from_secret(secret).format())


def sign(keypair: SigKeyPair, message: bytes) -> bytes:
    return keypair.sign(message)


def verify(verify_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        return _parse_point(verify_key).verify(signature, message)
    except Exception:
        # malformed key or DER encoding
        return False


# -- n-of-n threshold encryption ----------------------------------------------


@dataclass(frozen=True)
class KeyShare:
    """One custodian's share of both group secrets."""

    index: int
    enc_secret: int = field(repr=False)
    sig_secret: int = field(repr=False)
    public_enc_key: bytes
    group_verify_key: bytes


@dataclass(frozen=True)
class CustodianKeyMaterial:
    public_enc_key: bytes
    group_verify_key: bytes
    shares: tuple[KeyShare, ...]

    @property
    def k(self) -> int:
        return len(self.shares)


@dataclass(frozen=True)
class Ciphertext:
    key_id: bytes
    ephemeral: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        return self.key_id + self.ephemeral + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        head = KEY_ID_LEN + POINT_LEN
        if len(data) < head + 16:
            raise InvalidParameter("ciphertext too short")
        return cls(data[:KEY_ID_LEN], data[KEY_ID_LEN:head], data[head:])


@dataclass(frozen=True)
class PartialDecryption:
    index: int
    key_id: bytes
    point: bytes

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.index) + self.key_id + self.point


def _additive_shares(secret: int, k: int, entropy: Entropy) -> list[int]:
    parts = [random_scalar(entropy) for _ in range(k - 1)]
    parts.append((secret - sum(parts)) % CURVE_ORDER)
    return parts


def threshold_keygen(k: int, entropy: Entropy = secrets.token_bytes) -> CustodianKeyMaterial:
    """Trusted-dealer stand-in for the custodians' distributed key generation."""
    if k < 1:
        raise InvalidParameter(f"custodian count must be >= 1, got {k}")
    enc_secret = random_scalar(entropy)
    sig_secret = random_scalar(entropy)
    pk = _base_mult(enc_secret).format()
    vk = _base_mult(sig_secret).format()
    enc_parts = _additive_shares(enc_secret, k, entropy)
    sig_parts = _additive_shares(sig_secret, k, entropy)
    shares = tuple(
        KeyShare(i + 1, e, s, pk, vk) for i, (e, s) in enumerate(zip(enc_parts, sig_parts))
    )
    return CustodianKeyMaterial(pk, vk, shares)


def _kem_key(ephemeral: bytes, shared_point: bytes) -> bytes:
    return sha256(b"JJE-KEM", ephemeral, shared_point)


@lru_cache(maxsize=4096)
def _parse_point(data: bytes) -> PublicKey:
    return PublicKey(data)


def threshold_encrypt(
    public_enc_key: bytes, plaintext: bytes, entropy: Entropy = secrets.token_bytes
) -> Ciphertext:
    r = _scalar_bytes(random_scalar(entropy))
    ephemeral = PublicKey.from_secret(r).format()
    shared = _parse_point(public_enc_key).multiply(r).format()
    kid = key_id(public_enc_key)
    body = ChaCha20Poly1305(_kem_key(ephemeral, shared)).encrypt(
        _AEAD_NONCE, plaintext, kid + ephemeral
    )
    return Ciphertext(kid, ephemeral, body)


def partial_decrypt(share: KeyShare, ciphertext: Ciphertext) -> PartialDecryption:
    kid = key_id(share.public_enc_key)
    if ciphertext.key_id != kid:
        raise CombineError("ciphertext was produced under a different group key")
    try:
        point = PublicKey(ciphertext.ephemeral).multiply(_scalar_bytes(share.enc_secret))
    except Exception as exc:
        raise CombineError(f"malformed ephemeral key: {exc}") from exc
    return PartialDecryption(share.index, kid, point.format())


def combine(
    partials: Sequence[PartialDecryption], ciphertext: Ciphertext, expected: int | None = None
) -> bytes:
    """Recover the plaintext from one partial per custodian.

    Missing shares are not detected by counting (the caller may not know k);
    they simply yield the wrong KEM key, which the AEAD tag rejects.
    """
    if not partials:
        raise CombineError("no partial decryptions")
    indices = [p.index for p in partials]
    if len(set(indices)) != len(indices):
        raise CombineError("duplicated partial decryption")
    if expected is not None and len(partials) != expected:
        raise CombineError(f"need {expected} partials, got {len(partials)}")
    if any(p.key_id != ciphertext.key_id for p in partials):
        raise CombineError("partial decryption for a different group key")
    try:
        points = [PublicKey(p.point) for p in partials]
        shared = points[0] if len(points) == 1 else PublicKey.combine_keys(points)
    except Exception as exc:
        raise CombineError(f"malformed partial decryption: {exc}") from exc
    key = _kem_key(ciphertext.ephemeral, shared.format())
    try:
        return ChaCha20Poly1305(key).decrypt(
            _AEAD_NONCE, ciphertext.body, ciphertext.key_id + ciphertext.ephemeral
        )
    except InvalidTag as exc:
        raise CombineError("partials do not combine to the group key") from exc


def decrypt_with_shares(shares: Iterable[KeyShare], ciphertext: Ciphertext) -> bytes:
    """Convenience: every share decrypts, then combine."""
    return combine([partial_decrypt(s, ciphertext) for s in shares], ciphertext)


# -- n-of-n Schnorr group signature -------------------------------------------


def signing_commitment(entropy: Entropy = secrets.token_bytes) -> tuple[int, bytes]:
    """First signing round: a secret nonce and its public commitment."""
    nonce = random_scalar(entropy)
    return nonce, _base_mult(nonce).format()


def aggregate_commitments(commitments: Sequence[bytes]) -> bytes:
    points = [PublicKey(c) for c in commitments]
    if len(points) == 1:
        return points[0].format()
    return PublicKey.combine_keys(points).format()


def _group_challenge(commitment: bytes, verify_key: bytes, message: bytes) -> int:
    return int.from_bytes(sha256(b"JJE-GROUPSIG", commitment, verify_key, message), "big") % CURVE_ORDER


def signature_share(share: KeyShare, nonce: int, commitment: bytes, message: bytes) -> int:
    """Second signing round, computed against the aggregated commitment."""
    c = _group_challenge(commitment, share.group_verify_key, message)
    return (nonce + c * share.sig_secret) % CURVE_ORDER


def aggregate_signature(commitment: bytes, sig_shares: Iterable[int]) -> bytes:
    return commitment + _scalar_bytes(sum(sig_shares) % CURVE_ORDER)


def group_sign(
    shares: Sequence[KeyShare], message: bytes, entropy: Entropy = secrets.token_bytes
) -> bytes:
    rounds = [signing_commitment(entropy) for _ in shares]
    commitment = aggregate_commitments([c for _, c in rounds])
    return aggregate_signature(
        commitment,
        (signature_share(s, n, commitment, message) for s, (n, _) in zip(shares, rounds)),
    )


@lru_cache(maxsize=4096)
def verify_group(group_verify_key: bytes, message: bytes, signature: bytes) -> bool:
    """Check ``s*G == R + c*X``. Pure, hence memoised across callers."""
    if len(signature) != GROUP_SIG_LEN:
        return False
    commitment, s = signature[:POINT_LEN], int.from_bytes(signature[POINT_LEN:], "big")
    if not 0 < s < CURVE_ORDER:
        return False
    try:
        c = _group_challenge(commitment, group_verify_key, message)
        expected = _base_mult(s).format()
        if c == 0:
            return PublicKey(commitment).format() == expected
        cx = PublicKey(group_verify_key).multiply(_scalar_bytes(c))
        return PublicKey.combine_keys([PublicKey(commitment), cx]).format() == expected
    except Exception:
        return False


# -- deterministic expander ---------------------------------------------------


def prg_expand(seed: bytes, domain_tag: bytes, count: int, modulus: int) -> list[int]:
    """``count`` integers in ``[1, modulus]`` from SHA-256 in counter mode.

    64-bit words at or above the largest multiple of ``modulus`` are
    discarded, so the output carries no modulo bias.
    """
    if modulus < 1:
        raise InvalidParameter(f"modulus must be >= 1, got {modulus}")
    if count < 0:
        raise InvalidParameter(f"count must be >= 0, got {count}")
    if len(seed) != 32:
        raise InvalidParameter("seed must be 32 bytes")
    limit = (1 << 64) - (1 << 64) % modulus
    prefix = b"JJE-PRG" + seed + struct.pack(">I", len(domain_tag)) + domain_tag
    out: list[int] = []
    counter = 0
    while len(out) < count:
        block = sha256(prefix, struct.pack(">Q", counter))
        counter += 1
        for (word,) in struct.iter_unpack(">Q", block):
            if word < limit:
                out.append(word % modulus + 1)
                if len(out) == count:
                    break
    return out


def distinct_expand(seed: bytes, domain_tag: bytes, count: int, modulus: int) -> list[int]:
    """First ``count`` distinct values of the ``prg_expand`` stream."""
    if count > modulus:
        raise InvalidParameter(f"cannot draw {count} distinct values from {modulus}")
    want = count
    while True:
        seen: dict[int, None] = {}
        for v in prg_expand(seed, domain_tag, want, modulus):
            seen.setdefault(v)
            if len(seen) == count:
                return list(seen)
        want *= 2
