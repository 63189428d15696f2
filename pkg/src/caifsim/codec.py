"""Canonical binary encoding for records, certificates and wire messages.

Layout: one kind byte, then every field in declaration order.  A byte field
is a 4-byte big-endian length followed by the bytes; a chain field is a
4-byte count followed by length-prefixed hashes.  Encoding is injective and
``decode(encode(x)) == x`` for every registered type.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from typing import ClassVar, Iterator, Type, TypeVar

from caifsim import crypto
from caifsim.crypto import SigningKeyPair
from caifsim.errors import KindMismatch, Malformed

BYTES = "bytes"
DIGEST = "digest"
CHAIN = "chain"

T = TypeVar("T")

_REGISTRY: dict[int, type] = {}
_U32 = struct.Struct(">I")


def _f(kind: str = BYTES, **kw):
    return dataclasses.field(metadata={"codec": kind}, **kw)


def record(kind: int):
    def wrap(cls):
        if kind in _REGISTRY:
            raise ValueError(f"kind {kind:#x} registered twice")
        cls.KIND = kind
        _REGISTRY[kind] = cls
        return cls

    return wrap


class Reader:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def u8(self) -> int:
        if self.pos + 1 > len(self.data):
            raise Malformed("truncated kind byte")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def u32(self) -> int:
        if self.pos + 4 > len(self.data):
            raise Malformed("truncated length prefix")
        (n,) = _U32.unpack_from(self.data, self.pos)
        self.pos += 4
        return n

    def field(self) -> bytes:
        n = self.u32()
        if self.pos + n > len(self.data):
            raise Malformed("truncated field")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def done(self) -> None:
        if self.pos != len(self.data):
            raise Malformed("trailing bytes")


def _pack(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


@dataclass(frozen=True)
class TrustChain:
    """Service hashes, most recent first."""

    hashes: tuple[bytes, ...] = ()

    def __iter__(self) -> Iterator[bytes]:
        return iter(self.hashes)

    def __len__(self) -> int:
        return len(self.hashes)

    def __getitem__(self, i):
        return self.hashes[i]

    @classmethod
    def of(cls, *hashes: bytes) -> "TrustChain":
        return cls(tuple(hashes))


_REGISTRY[0x01] = TrustChain
TrustChain.KIND = 0x01


def chain_push(chain: TrustChain, h: bytes) -> TrustChain:
    return TrustChain((h,) + chain.hashes)


def chain_expect(chain: TrustChain, self_hash: bytes, source_hash: bytes) -> bool:
    return len(chain) >= 2 and chain[0] == self_hash and chain[1] == source_hash


def _encode_chain(chain: TrustChain) -> bytes:
    return _U32.pack(len(chain)) + b"".join(_pack(h) for h in chain)


def _decode_chain(rd: Reader) -> TrustChain:
    n = rd.u32()
    if n > len(rd.data):
        raise Malformed("chain count exceeds input")
    hashes = []
    for _ in range(n):
        h = rd.field()
        if len(h) != crypto.DIGEST_LEN:
            raise Malformed("chain entry is not a digest")
        hashes.append(h)
    return TrustChain(tuple(hashes))


def encode(value) -> bytes:
    kind = getattr(type(value), "KIND", None)
    if kind is None:
        raise TypeError(f"{type(value).__name__} is not a codec type")
    if isinstance(value, TrustChain):
        return bytes([kind]) + _encode_chain(value)
    out = [bytes([kind])]
    for f in dataclasses.fields(value):
        v = getattr(value, f.name)
        if f.metadata["codec"] == CHAIN:
            out.append(_encode_chain(v))
        else:
            out.append(_pack(bytes(v)))
    return b"".join(out)


def decode(data: bytes, expected: Type[T] | None = None) -> T:
    rd = Reader(data)
    kind = rd.u8()
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise Malformed(f"unknown kind {kind:#x}")
    if expected is not None and cls is not expected:
        raise KindMismatch(f"expected {expected.__name__}, found {cls.__name__}")
    if cls is TrustChain:
        value = _decode_chain(rd)
        rd.done()
        return value
    kwargs = {}
    for f in dataclasses.fields(cls):
        ftype = f.metadata["codec"]
        if ftype == CHAIN:
            kwargs[f.name] = _decode_chain(rd)
            continue
        b = rd.field()
        if ftype == DIGEST and len(b) != crypto.DIGEST_LEN:
            raise Malformed(f"field {f.name} is not a digest")
        kwargs[f.name] = b
    rd.done()
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise Malformed(str(exc)) from None


def peek_kind(data: bytes) -> type | None:
    return _REGISTRY.get(data[0]) if data else None


# delegation message forms


@record(0x02)
@dataclass(frozen=True)
class CertifyRequest:
    imid: bytes = _f()
    dsh: bytes = _f(DIGEST)
    suh: bytes = _f(DIGEST)
    trch: TrustChain = _f(CHAIN)
    serial: bytes = _f()
    ca_id: bytes = _f()


@record(0x03)
@dataclass(frozen=True)
class PopBody:
    serial: bytes = _f()
    imid: bytes = _f()
    dsh: bytes = _f(DIGEST)
    suh: bytes = _f(DIGEST)
    trch: TrustChain = _f(CHAIN)
    dvk: bytes = _f()


@record(0x04)
@dataclass(frozen=True)
class CertBody:
    imid: bytes = _f()
    dsh: bytes = _f(DIGEST)
    suh: bytes = _f(DIGEST)
    trch: TrustChain = _f(CHAIN)
    serial: bytes = _f()
    dvk: bytes = _f()


@record(0x05)
@dataclass(frozen=True)
class DelegationBody:
    imid: bytes = _f()
    sh: bytes = _f(DIGEST)
    trch: TrustChain = _f(CHAIN)
    n: bytes = _f()
    vk: bytes = _f()


class _Signed:
    """A signed message wrapping one body type."""

    BODY: ClassVar[type]
    signed: bytes

    @classmethod
    def issue(cls, body, key_pair: SigningKeyPair):
        if not isinstance(body, cls.BODY):
            raise TypeError(f"{cls.__name__} signs {cls.BODY.__name__}")
        return cls(crypto.sign(key_pair, encode(body)))

    def peek(self):
        """Body without signature check."""
        return decode(crypto.signed_payload(self.signed), self.BODY)

    def open(self, verifying_key: bytes):
        """Body if the signature verifies under ``verifying_key``, else None."""
        ok, msg = crypto.verify(verifying_key, self.signed)
        if not ok:
            return None
        return decode(msg, self.BODY)


@record(0x40)
@dataclass(frozen=True)
class ProofOfPossession(_Signed):
    BODY: ClassVar[type] = PopBody
    signed: bytes = _f()

    def open_self(self):
        """Body if it verifies under its own embedded ``dvk``."""
        return self.open(self.peek().dvk)


@record(0x41)
@dataclass(frozen=True)
class CaCertificate(_Signed):
    BODY: ClassVar[type] = CertBody
    signed: bytes = _f()


@record(0x42)
@dataclass(frozen=True)
class DelegationCertificate(_Signed):
    BODY: ClassVar[type] = DelegationBody
    signed: bytes = _f()


# escrow payloads


@record(0x10)
@dataclass(frozen=True)
class AnchorRecord:
    k_s: bytes = _f()
    imid: bytes = _f()
    chain: TrustChain = _f(CHAIN)


@record(0x11)
@dataclass(frozen=True)
class DistributorRecord:
    imid: bytes = _f()
    chain: TrustChain = _f(CHAIN)
    payld: bytes = _f()
    k: bytes = _f()


@record(0x12)
@dataclass(frozen=True)
class SetupKeyRecord:
    imid: bytes = _f()
    chain: TrustChain = _f(CHAIN)
    dk: bytes = _f()
    dvk: bytes = _f()


@record(0x13)
@dataclass(frozen=True)
class TargetKeyRecord:
    chain: TrustChain = _f(CHAIN)
    sk: bytes = _f()
    vk: bytes = _f()


# reprogrammable signature verification log records

TABLE1_TAGS = frozenset({b"ver", b"cli", b"yes", b"no"})


@record(0x20)
@dataclass(frozen=True)
class VerifierRecord:
    tag: bytes = _f()
    svh: bytes = _f(DIGEST)
    vk: bytes = _f()

    def __post_init__(self):
        if self.tag != b"ver":
            raise ValueError("verifier record tag must be 'ver'")


@record(0x21)
@dataclass(frozen=True)
class ClientRecord:
    tag: bytes = _f()
    svh: bytes = _f(DIGEST)

    def __post_init__(self):
        if self.tag != b"cli":
            raise ValueError("client record tag must be 'cli'")


@record(0x22)
@dataclass(frozen=True)
class ConfirmRecord:
    verdict: bytes = _f()
    m: bytes = _f()
    sigma: bytes = _f()

    def __post_init__(self):
        if self.verdict not in (b"yes", b"no"):
            raise ValueError("confirm verdict must be 'yes' or 'no'")


@record(0x23)
@dataclass(frozen=True)
class Logged:
    """An attested value and its tag, as placed in shared storage."""

    value: bytes = _f()
    tag: bytes = _f()


def verifier_record(svh: bytes, vk: bytes) -> VerifierRecord:
    return VerifierRecord(b"ver", svh, vk)


def client_record(svh: bytes) -> ClientRecord:
    return ClientRecord(b"cli", svh)


# wire messages


@record(0x30)
@dataclass(frozen=True)
class AnchorMessage:
    imid: bytes = _f()
    anch: bytes = _f(DIGEST)
    dh: bytes = _f(DIGEST)
    n: bytes = _f()
    r: bytes = _f()


@record(0x31)
@dataclass(frozen=True)
class AnchorReply:
    n: bytes = _f()


@record(0x32)
@dataclass(frozen=True)
class DistributionRequest:
    tgth: bytes = _f(DIGEST)
    trch: TrustChain = _f(CHAIN)
    payld: bytes = _f()


@record(0x33)
@dataclass(frozen=True)
class ConfirmBody:
    imid: bytes = _f()
    tgth: bytes = _f(DIGEST)
    payld: bytes = _f()


@record(0x34)
@dataclass(frozen=True)
class Confirmation:
    imid: bytes = _f()
    tgth: bytes = _f(DIGEST)
    payld: bytes = _f()
    tag: bytes = _f()


@record(0x35)
@dataclass(frozen=True)
class AuthorizedKey:
    svh: bytes = _f(DIGEST)
    vk: bytes = _f()


@record(0x36)
@dataclass(frozen=True)
class VerifierAuthorization:
    svh: bytes = _f(DIGEST)
    vk: bytes = _f()
    tag: bytes = _f()


@record(0x37)
@dataclass(frozen=True)
class SignatureRequest:
    m: bytes = _f()
    sigma: bytes = _f()


@record(0x38)
@dataclass(frozen=True)
class SealedMessage:
    """AEAD ciphertext bytes carried on the wire."""

    ct: bytes = _f()


@record(0x39)
@dataclass(frozen=True)
class TargetSigned:
    """A message signed by a delegated target key."""

    signed: bytes = _f()


ALL_TYPES = tuple(_REGISTRY[k] for k in sorted(_REGISTRY))
