import hashlib
import random
import struct

import pytest
from coincurve import PublicKey
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jje import crypto
from jje.errors import CombineError, InvalidParameter


def _oracle_verify(vk: bytes, message: bytes, sig: bytes) -> bool:
    """ECDSA check through OpenSSL, independent of libsecp256k1."""
    pub = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256K1(), vk)
    try:
        pub.verify(sig, message, ec.ECDSA(hashes.SHA256()))
        return True
    except InvalidSignature:
        return False


# -- signatures ---------------------------------------------------------------


def test_pinned_signature_vector():
    kp = crypto.keygen(random.Random(0).randbytes)
    assert kp.verify_key.hex() == "02dc079a609290e48ac37aa85404b18702ea4aba4d34c9613b90a70b5190906607"
    sig = kp.sign(b"test")
    assert sig.hex() == (
        "3045022100a78a465c2c88c12a7af51c0a70d23abc1d0d45fd50c036945c4d753c99b70d4e"
        "0220773cc36581f182ab53778178abdebbe837dc9b88019b7be99c71192fc5125c7c"
    )
    assert _oracle_verify(kp.verify_key, b"test", sig)


def test_signatures_agree_with_openssl(entropy):
    for i in range(50):
        kp = crypto.keygen(entropy)
        msg = entropy(i + 1)
        sig = crypto.sign(kp, msg)
        assert crypto.verify(kp.verify_key, msg, sig)
        assert _oracle_verify(kp.verify_key, msg, sig)
        assert not crypto.verify(kp.verify_key, msg + b"x", sig)


def test_openssl_signature_verifies_here_in_low_s_form():
    from cryptography.hazmat.primitives.asymmetric.utils import decode_dss_signature, encode_dss_signature
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    n = crypto.CURVE_ORDER
    key = ec.derive_private_key(12345, ec.SECP256K1())
    vk = key.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
    for i in range(20):
        msg = b"cross" + bytes([i])
        r, s = decode_dss_signature(key.sign(msg, ec.ECDSA(hashes.SHA256())))
        low, high = min(s, n - s), max(s, n - s)
        assert crypto.verify(vk, msg, encode_dss_signature(r, low))
        # the malleated twin is refused
        assert not crypto.verify(vk, msg, encode_dss_signature(r, high))


def test_signature_bit_flips_rejected(entropy):
    kp = crypto.keygen(entropy)
    msg = b"flip me"
    sig = kp.sign(msg)
    rng = random.Random(5)
    for _ in range(10_000):
        bad = bytearray(sig)
        bit = rng.randrange(len(bad) * 8)
        bad[bit // 8] ^= 1 << (bit % 8)
        assert not crypto.verify(kp.verify_key, msg, bytes(bad))


@pytest.mark.parametrize("vk", [b"", bytes(33), b"\x02" + bytes(32), b"\x05" * 33])
def test_verify_malformed_key_is_false(vk):
    assert crypto.verify(vk, b"m", b"\x30\x00") is False


def test_wrong_key_rejected(entropy):
    a, b = crypto.keygen(entropy), crypto.keygen(entropy)
    assert not crypto.verify(b.verify_key, b"m", a.sign(b"m"))


def test_signing_key_hidden_from_repr(entropy):
    kp = crypto.keygen(entropy)
    assert kp.signing_key.hex() not in repr(kp)


# -- threshold encryption ---------------------------------------------------------


def test_shares_sum_to_group_keys(keys):
    # independent route: combine each share's public point
    enc = PublicKey.combine_keys([PublicKey.from_secret(s.enc_secret.to_bytes(32, "big")) for s in keys.shares])
    sig = PublicKey.combine_keys([PublicKey.from_secret(s.sig_secret.to_bytes(32, "big")) for s in keys.shares])
    assert enc.format() == keys.public_enc_key
    assert sig.format() == keys.group_verify_key


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_round_trip(k, entropy):
    keys = crypto.threshold_keygen(k, entropy)
    ct = crypto.threshold_encrypt(keys.public_enc_key, b"350000000000001", entropy)
    assert crypto.decrypt_with_shares(keys.shares, ct) == b"350000000000001"
    partials = [crypto.partial_decrypt(s, ct) for s in keys.shares]
    assert crypto.combine(list(reversed(partials)), ct, expected=k) == b"350000000000001"


def test_keygen_rejects_zero_custodians(entropy):
    with pytest.raises(InvalidParameter):
        crypto.threshold_keygen(0, entropy)


def test_missing_share_fails(keys, entropy):
    ct = crypto.threshold_encrypt(keys.public_enc_key, b"secret", entropy)
    partials = [crypto.partial_decrypt(s, ct) for s in keys.shares]
    for drop in range(3):
        with pytest.raises(CombineError):
            crypto.combine(partials[:drop] + partials[drop + 1 :], ct)


def test_foreign_share_fails(keys, entropy):
    other = crypto.threshold_keygen(3, entropy)
    ct = crypto.threshold_encrypt(keys.public_enc_key, b"secret", entropy)
    with pytest.raises(CombineError):
        crypto.partial_decrypt(other.shares[0], ct)


def test_duplicate_or_counted_partials_fail(keys, entropy):
    ct = crypto.threshold_encrypt(keys.public_enc_key, b"secret", entropy)
    partials = [crypto.partial_decrypt(s, ct) for s in keys.shares]
    with pytest.raises(CombineError):
        crypto.combine(partials + [partials[0]], ct)
    with pytest.raises(CombineError):
        crypto.combine(partials[:2], ct, expected=3)
    with pytest.raises(CombineError):
        crypto.combine([], ct)


def test_tampered_ciphertext_never_decrypts(keys, entropy):
    ct = crypto.threshold_encrypt(keys.public_enc_key, b"x" * 40, entropy)
    raw = ct.to_bytes()
    rng = random.Random(3)
    for _ in range(300):
        bad = bytearray(raw)
        i = rng.randrange(len(bad))
        bad[i] ^= 1 + rng.randrange(255)
        try:
            mutated = crypto.Ciphertext.from_bytes(bytes(bad))
            out = crypto.decrypt_with_shares(keys.shares, mutated)
        except (CombineError, InvalidParameter):
            continue
        pytest.fail(f"tampered ciphertext decrypted to {out!r}")


def test_ciphertext_is_randomised(keys, entropy):
    a = crypto.threshold_encrypt(keys.public_enc_key, b"same", entropy)
    b = crypto.threshold_encrypt(keys.public_enc_key, b"same", entropy)
    assert a != b


def test_ciphertext_bytes_round_trip(keys, entropy):
    ct = crypto.threshold_encrypt(keys.public_enc_key, b"abc", entropy)
    assert crypto.Ciphertext.from_bytes(ct.to_bytes()) == ct
    with pytest.raises(InvalidParameter):
        crypto.Ciphertext.from_bytes(ct.to_bytes()[:20])


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=200))
def test_round_trip_property(plaintext):
    entropy = random.Random(len(plaintext)).randbytes
    keys = crypto.threshold_keygen(2, entropy)
    ct = crypto.threshold_encrypt(keys.public_enc_key, plaintext, entropy)
    assert crypto.decrypt_with_shares(keys.shares, ct) == plaintext


# -- group signature ------------------------------------------------------------


def test_group_sign_verifies(keys, entropy):
    sig = crypto.group_sign(keys.shares, b"header", entropy)
    assert len(sig) == crypto.GROUP_SIG_LEN
    assert crypto.verify_group(keys.group_verify_key, b"header", sig)
    assert not crypto.verify_group(keys.group_verify_key, b"header!", sig)


def test_group_signature_equation_by_hand(keys, entropy):
    sig = crypto.group_sign(keys.shares, b"m", entropy)
    R, s = sig[:33], int.from_bytes(sig[33:], "big")
    c = int.from_bytes(hashlib.sha256(b"JJE-GROUPSIG" + R + keys.group_verify_key + b"m").digest(), "big")
    c %= crypto.CURVE_ORDER
    lhs = PublicKey.from_secret(s.to_bytes(32, "big")).format()
    cx = PublicKey(keys.group_verify_key).multiply(c.to_bytes(32, "big"))
    assert PublicKey.combine_keys([PublicKey(R), cx]).format() == lhs


def test_subset_of_shares_cannot_sign(keys, entropy):
    sig = crypto.group_sign(keys.shares[:2], b"m", entropy)
    assert not crypto.verify_group(keys.group_verify_key, b"m", sig)


def test_bad_share_breaks_signature(keys, entropy):
    rounds = [crypto.signing_commitment(entropy) for _ in keys.shares]
    R = crypto.aggregate_commitments([c for _, c in rounds])
    shares = [crypto.signature_share(s, n, R, b"m") for s, (n, _) in zip(keys.shares, rounds)]
    shares[1] = (shares[1] + 1) % crypto.CURVE_ORDER
    assert not crypto.verify_group(keys.group_verify_key, b"m", crypto.aggregate_signature(R, shares))


def test_group_signature_bit_flips(keys, entropy):
    sig = crypto.group_sign(keys.shares, b"m", entropy)
    for bit in range(len(sig) * 8):
        bad = bytearray(sig)
        bad[bit // 8] ^= 1 << (bit % 8)
        assert not crypto.verify_group(keys.group_verify_key, b"m", bytes(bad))


@pytest.mark.parametrize("sig", [b"", bytes(65), b"\x02" + bytes(64), bytes(33) + b"\xff" * 32])
def test_group_verify_malformed(keys, sig):
    assert crypto.verify_group(keys.group_verify_key, b"m", sig) is False


# -- expander -----------------------------------------------------------------------


def _prg_oracle(seed, tag, count, modulus):
    out, counter = [], 0
    limit = (2**64 // modulus) * modulus
    while len(out) < count:
        block = hashlib.sha256(
            b"JJE-PRG" + seed + len(tag).to_bytes(4, "big") + tag + counter.to_bytes(8, "big")
        ).digest()
        counter += 1
        for i in range(4):
            w = int.from_bytes(block[8 * i : 8 * i + 8], "big")
            if w < limit and len(out) < count:
                out.append(w % modulus + 1)
    return out


def test_prg_pinned_vector():
    assert crypto.prg_expand(bytes(32), b"JJE-DELEGATE", 4, 100) == [59, 27, 97, 30]
    assert crypto.distinct_expand(bytes(32), b"JJE-DELEGATE", 6, 10) == [9, 7, 10, 5, 6, 1]


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.binary(max_size=16), st.integers(0, 40), st.integers(1, 2**40))
def test_prg_matches_oracle(seed, tag, count, modulus):
    out = crypto.prg_expand(seed, tag, count, modulus)
    assert out == _prg_oracle(seed, tag, count, modulus)
    assert all(1 <= v <= modulus for v in out)


def test_prg_domain_separation():
    a = crypto.prg_expand(bytes(32), b"A", 8, 1000)
    b = crypto.prg_expand(bytes(32), b"B", 8, 1000)
    assert a != b


def test_prg_uniformity_chi_squared():
    counts = [0] * 17
    for v in crypto.prg_expand(b"\x07" * 32, b"chi", 170_000, 17):
        counts[v - 1] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.integers(1, 30), st.integers(30, 200))
def test_distinct_expand(seed, count, modulus):
    out = crypto.distinct_expand(seed, b"t", count, modulus)
    assert len(out) == len(set(out)) == count
    assert all(1 <= v <= modulus for v in out)


def test_expander_rejects_bad_arguments():
    with pytest.raises(InvalidParameter):
        crypto.prg_expand(bytes(31), b"", 1, 5)
    with pytest.raises(InvalidParameter):
        crypto.prg_expand(bytes(32), b"", 1, 0)
    with pytest.raises(InvalidParameter):
        crypto.distinct_expand(bytes(32), b"", 6, 5)


def test_random_scalar_in_range():
    # an entropy source that first returns out-of-range words
    feed = iter([b"\xff" * 32, bytes(32), struct.pack(">Q", 7).rjust(32, b"\0")])
    assert crypto.random_scalar(lambda n: next(feed)) == 7
