import hashlib
import hmac
import struct

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from hypothesis import given, strategies as st

from caifsim import crypto
from caifsim.crypto import Ciphertext, DeterministicRng, SigningKeyPair
from caifsim.errors import AuthFailure, MalformedSignedMessage


def hkdf_reference(ikm: bytes, salt: bytes, info: bytes, length: int) -> bytes:
    """Extract-then-expand written out with the stdlib hmac module."""
    prk = hmac.new(salt or bytes(32), ikm, hashlib.sha256).digest()
    okm, block, i = b"", b"", 1
    while len(okm) < length:
        block = hmac.new(prk, block + info + bytes([i]), hashlib.sha256).digest()
        okm += block
        i += 1
    return okm[:length]


def info_reference(label: bytes, context) -> bytes:
    out = bytes([len(label)]) + label + struct.pack(">I", len(context))
    for c in context:
        out += struct.pack(">I", len(c)) + c
    return out


# RFC 5869 appendix A

RFC5869 = [
    (bytes([0x0b] * 22), bytes(range(13)), bytes(range(0xf0, 0xfa)), 42,
     "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865"),
    (bytes([0x0b] * 22), b"", b"", 42,
     "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8"),
]


@pytest.mark.parametrize("ikm,salt,info,n,okm", RFC5869)
def test_hkdf_reference_matches_rfc5869(ikm, salt, info, n, okm):
    assert hkdf_reference(ikm, salt, info, n).hex() == okm


@pytest.mark.parametrize("ikm,salt,info,n,okm", RFC5869)
def test_library_hkdf_matches_rfc5869(ikm, salt, info, n, okm):
    got = HKDF(algorithm=hashes.SHA256(), length=n, salt=salt or None, info=info).derive(ikm)
    assert got.hex() == okm


# RFC 4231 test cases 1 and 2

@pytest.mark.parametrize("key,data,tag", [
    (bytes([0x0b] * 20), b"Hi There", "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
    (b"Jefe", b"what do ya want for nothing?", "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"),
])
def test_mac_rfc4231(key, data, tag):
    assert crypto.mac(key, data).hex() == tag
    assert crypto.weak_mac(key, data).hex() == tag[:2]


def test_code_hash_of_empty_string():
    assert crypto.code_hash(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


# frozen outputs of kdf; the reference HKDF above must reproduce them

KEY = bytes(range(32))
FROZEN_KDF = [
    (crypto.LABEL_ATTEST, [b"svc"], "f5812a56492bef45812adf41d7ec3d335465171c87629f1bb486ddfd96333b76"),
    (crypto.LABEL_PROTECT, [b"src", b"rcpt"], "cc99263be1518050ef71fe19a9774804dbd5fb39d8b9476d7b1fe82ada12dead"),
]


@pytest.mark.parametrize("label,context,expected", FROZEN_KDF)
def test_kdf_frozen_vectors(label, context, expected):
    assert crypto.kdf(label, KEY, context).hex() == expected
    assert hkdf_reference(KEY, b"", info_reference(label, context), 32).hex() == expected


def test_mac_frozen_vector():
    assert crypto.mac(KEY, b"caif").hex() == "f2d9f353badd0337a0a385be2211f959639d50835cd531e03fcf76387f84201c"


@given(st.binary(min_size=1, max_size=8), st.binary(min_size=32, max_size=32),
       st.lists(st.binary(max_size=40), max_size=4))
def test_kdf_agrees_with_reference(label, secret, context):
    assert crypto.kdf(label, secret, context) == hkdf_reference(secret, b"", info_reference(label, context), 32)


def test_kdf_context_order_and_framing_matter():
    a = crypto.kdf(b"pf", KEY, [b"x", b"y"])
    assert a != crypto.kdf(b"pf", KEY, [b"y", b"x"])
    assert crypto.kdf(b"pf", KEY, [b"ab", b"c"]) != crypto.kdf(b"pf", KEY, [b"a", b"bc"])
    assert a != crypto.kdf(b"at", KEY, [b"x", b"y"])


def test_kdf_rejects_empty_label():
    with pytest.raises(ValueError):
        crypto.kdf(b"", KEY, [])


@pytest.mark.parametrize("n", [0, 1, 1000])
def test_aead_overhead_is_28(n):
    ct = crypto.aead_encrypt(KEY, bytes(n), DeterministicRng.from_int(1))
    assert len(ct.to_bytes()) == n + 28 == n + crypto.AEAD_OVERHEAD


@given(st.binary(max_size=300), st.integers(0, 2**32))
def test_aead_roundtrip(pt, seed):
    ct = crypto.aead_encrypt(KEY, pt, DeterministicRng.from_int(seed))
    assert crypto.aead_decrypt(KEY, ct) == pt
    assert Ciphertext.from_bytes(ct.to_bytes()) == ct


@given(st.binary(max_size=64), st.data())
def test_aead_detects_any_bit_flip(pt, data):
    raw = bytearray(crypto.aead_encrypt(KEY, pt, DeterministicRng.from_int(3)).to_bytes())
    i = data.draw(st.integers(0, len(raw) - 1))
    raw[i] ^= 1 << data.draw(st.integers(0, 7))
    with pytest.raises(AuthFailure):
        crypto.aead_decrypt(KEY, bytes(raw))


def test_aead_wrong_key_and_truncation():
    ct = crypto.aead_encrypt(KEY, b"v", DeterministicRng.from_int(0)).to_bytes()
    with pytest.raises(AuthFailure):
        crypto.aead_decrypt(bytes(32), ct)
    with pytest.raises(AuthFailure):
        crypto.aead_decrypt(KEY, ct[:10])


def test_ed25519_public_key_rfc8032():
    seed = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
    kp = SigningKeyPair.from_seed(seed)
    assert kp.verifying.hex() == "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"


@given(st.binary(max_size=200))
def test_sign_verify_roundtrip(msg):
    kp = SigningKeyPair.from_seed(KEY)
    signed = crypto.sign(kp, msg)
    assert crypto.verify(kp.verifying, signed) == (True, msg)
    assert crypto.signed_payload(signed) == msg
    other = SigningKeyPair.from_seed(bytes(32))
    assert crypto.verify(other.verifying, signed) == (False, None)


def test_signed_message_framing_errors():
    kp = SigningKeyPair.from_seed(KEY)
    signed = crypto.sign(kp, b"m")
    with pytest.raises(MalformedSignedMessage):
        crypto.verify(kp.verifying, signed[:-1])
    with pytest.raises(MalformedSignedMessage):
        crypto.signed_payload(b"\x02" + signed[1:])
    tampered = signed[:5] + b"n" + signed[6:]
    assert crypto.verify(kp.verifying, tampered)[0] is False


def test_rng_is_reproducible_and_chunk_independent():
    a, b = DeterministicRng.from_int(9), DeterministicRng.from_int(9)
    whole = a.read(10_000)
    parts = b"".join(b.read(n) for n in (1, 4095, 3, 5901))
    assert whole == parts
    assert DeterministicRng.from_int(10).read(32) != whole[:32]


def test_rng_clone_and_substreams():
    r = DeterministicRng.from_int(5)
    r.read(7)
    c = r.clone()
    assert c.read(50) == r.read(50)
    s1, s2 = r.substream("a"), r.substream("b")
    assert s1.read(16) != s2.read(16)
    assert r.substream("a").read(16) == DeterministicRng.from_int(5).substream("a").read(16)


@given(st.integers(1, 10**6), st.integers(0, 2**16))
def test_randbelow_in_range(n, seed):
    assert 0 <= DeterministicRng.from_int(seed).randbelow(n) < n


def test_tags_equal():
    assert crypto.tags_equal(b"ab", b"ab")
    assert not crypto.tags_equal(b"ab", b"ac")
