import dataclasses

import pytest
from hypothesis import given, strategies as st

from caifsim import codec
from caifsim.codec import (
    ALL_TYPES,
    CertifyRequest,
    ConfirmRecord,
    PopBody,
    ProofOfPossession,
    TrustChain,
    VerifierRecord,
)
from caifsim.crypto import SigningKeyPair
from caifsim.errors import KindMismatch, Malformed

digests = st.binary(min_size=32, max_size=32)
chains = st.lists(digests, max_size=5).map(lambda hs: TrustChain(tuple(hs)))

_FIXED = {
    VerifierRecord: {"tag": st.just(b"ver")},
    codec.ClientRecord: {"tag": st.just(b"cli")},
    ConfirmRecord: {"verdict": st.sampled_from([b"yes", b"no"])},
}


def values_of(cls):
    if cls is TrustChain:
        return chains
    kw = {}
    for f in dataclasses.fields(cls):
        kind = f.metadata["codec"]
        kw[f.name] = {codec.CHAIN: chains, codec.DIGEST: digests}.get(kind, st.binary(max_size=40))
    kw.update(_FIXED.get(cls, {}))
    return st.builds(cls, **kw)


any_value = st.one_of([values_of(c) for c in ALL_TYPES])


@given(any_value)
def test_roundtrip(x):
    data = codec.encode(x)
    assert codec.decode(data) == x
    assert codec.decode(data, type(x)) == x
    assert codec.peek_kind(data) is type(x)


@given(any_value, any_value)
def test_injective(x, y):
    if x != y:
        assert codec.encode(x) != codec.encode(y)


@given(any_value, st.data())
def test_truncation_is_malformed(x, data):
    enc = codec.encode(x)
    cut = data.draw(st.integers(0, len(enc) - 1))
    with pytest.raises(Malformed):
        codec.decode(enc[:cut])


@given(any_value)
def test_trailing_bytes_rejected(x):
    with pytest.raises(Malformed):
        codec.decode(codec.encode(x) + b"\0")


def test_kind_mismatch_and_unknown_kind():
    data = codec.encode(TrustChain.of(bytes(32)))
    with pytest.raises(KindMismatch):
        codec.decode(data, CertifyRequest)
    with pytest.raises(Malformed):
        codec.decode(b"\xff")
    assert codec.peek_kind(b"") is None


def test_digest_fields_checked():
    good = codec.encode(codec.AuthorizedKey(bytes(32), b"vk"))
    bad = good[:1] + (31).to_bytes(4, "big") + bytes(31) + good[37:]
    with pytest.raises(Malformed):
        codec.decode(bad)


def test_post_init_validation_becomes_malformed():
    enc = codec.encode(ConfirmRecord(b"yes", b"m", b"s"))
    with pytest.raises(Malformed):
        codec.decode(enc.replace(b"yes", b"yep"))
    with pytest.raises(ValueError):
        VerifierRecord(b"cli", bytes(32), b"vk")


def test_chain_helpers():
    a, b, c = bytes([1]) * 32, bytes([2]) * 32, bytes([3]) * 32
    ch = codec.chain_push(TrustChain.of(b, c), a)
    assert list(ch) == [a, b, c] and len(ch) == 3 and ch[0] == a
    assert codec.chain_expect(ch, a, b)
    assert not codec.chain_expect(ch, b, a)
    assert not codec.chain_expect(TrustChain.of(a), a, b)


def test_signed_wrappers():
    kp, other = SigningKeyPair.from_seed(bytes(32)), SigningKeyPair.from_seed(bytes([1]) * 32)
    body = PopBody(b"serial", b"imid", bytes(32), bytes(32), TrustChain(), kp.verifying)
    pop = ProofOfPossession.issue(body, kp)
    assert pop.peek() == body
    assert pop.open(kp.verifying) == body
    assert pop.open(other.verifying) is None
    assert pop.open_self() == body
    forged = ProofOfPossession.issue(dataclasses.replace(body, dvk=other.verifying), kp)
    assert forged.open_self() is None
    with pytest.raises(TypeError):
        ProofOfPossession.issue(CertifyRequest(b"", bytes(32), bytes(32), TrustChain(), b"", b""), kp)


def test_encode_rejects_foreign_types():
    with pytest.raises(TypeError):
        codec.encode(object())
