"""Concrete primitives and the deterministic randomness source.

SHA-256 code hashing, HKDF-SHA-256 key derivation, HMAC-SHA-256 tags,
ChaCha20-Poly1305 authenticated encryption and Ed25519 signatures behind a
one-byte scheme identifier.  Every random draw in the simulator comes from a
:class:`DeterministicRng`, so a seed replays a run bit for bit.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import random
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from caifsim.errors import AuthFailure, MalformedSignedMessage

DIGEST_LEN = 32
KEY_LEN = 32
TAG_LEN = 32
NONCE_LEN = 12
AEAD_TAG_LEN = 16
AEAD_OVERHEAD = NONCE_LEN + AEAD_TAG_LEN

# kdf labels in use; the last three are simulator choices for k_s,
# group-seed and per-service key derivation.
LABEL_ATTEST = b"at"
LABEL_PROTECT = b"pf"
LABEL_RNG = b"rng"
LABEL_GROUP_SEED = b"gs"
LABEL_ANCHOR_SECRET = b"ks"
LABEL_SERVICE_KEY = b"sk"

SCHEME_ED25519 = 0x01

Digest = bytes
SymmetricKey = bytes
MacTag = bytes
MacFn = Callable[[bytes, bytes], bytes]


def _require_len(name: str, value: bytes, n: int) -> None:
    if len(value) != n:
        raise ValueError(f"{name} must be {n} bytes, got {len(value)}")


def code_hash(code: bytes) -> Digest:
    return hashlib.sha256(code).digest()


def _kdf_info(label: bytes, context: Sequence[bytes]) -> bytes:
    # length-prefixing keeps (label, context) -> info injective
    parts = [struct.pack(">B", len(label)), label, struct.pack(">I", len(context))]
    for item in context:
        parts.append(struct.pack(">I", len(item)))
        parts.append(item)
    return b"".join(parts)


@functools.lru_cache(maxsize=1 << 16)
def _kdf(label: bytes, secret: bytes, context: tuple[bytes, ...]) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=KEY_LEN,
        salt=None,
        info=_kdf_info(label, context),
    ).derive(secret)


def kdf(label: bytes, secret: SymmetricKey, context: Sequence[bytes]) -> SymmetricKey:
    """HKDF-SHA-256 with ``secret`` as input keying material.

    ``label`` and the ordered ``context`` items are framed into the HKDF info
    string, so swapping context items yields an unrelated key.
    """
    if not 0 < len(label) < 256:
        raise ValueError("kdf label must be 1..255 bytes")
    return _kdf(bytes(label), bytes(secret), tuple(bytes(c) for c in context))


def mac(key: SymmetricKey, data: bytes) -> MacTag:
    return hmac.digest(key, data, "sha256")


def weak_mac(key: SymmetricKey, data: bytes) -> bytes:
    """HMAC truncated to one byte.  Only for forgeability experiments."""
    return hmac.digest(key, data, "sha256")[:1]


def tags_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


@dataclass(frozen=True)
class Ciphertext:
    nonce: bytes
    body: bytes
    auth_tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.body + self.auth_tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < AEAD_OVERHEAD:
            raise AuthFailure("ciphertext shorter than nonce plus tag")
        return cls(
            data[:NONCE_LEN], data[NONCE_LEN:-AEAD_TAG_LEN], data[-AEAD_TAG_LEN:]
        )

    def __len__(self) -> int:
        return len(self.nonce) + len(self.body) + len(self.auth_tag)


@functools.lru_cache(maxsize=1 << 14)
def _aead(key: bytes) -> ChaCha20Poly1305:
    return ChaCha20Poly1305(key)


def aead_encrypt(key: SymmetricKey, plaintext: bytes, rng: "DeterministicRng") -> Ciphertext:
    _require_len("key", key, KEY_LEN)
    nonce = rng.read(NONCE_LEN)
    sealed = _aead(bytes(key)).encrypt(nonce, bytes(plaintext), None)
    return Ciphertext(nonce, sealed[:-AEAD_TAG_LEN], sealed[-AEAD_TAG_LEN:])


def aead_decrypt(key: SymmetricKey, ct: Ciphertext | bytes) -> bytes:
    if isinstance(ct, (bytes, bytearray)):
        ct = Ciphertext.from_bytes(bytes(ct))
    if len(ct.nonce) != NONCE_LEN or len(ct.auth_tag) != AEAD_TAG_LEN:
        raise AuthFailure("bad ciphertext framing")
    try:
        return _aead(bytes(key)).decrypt(ct.nonce, ct.body + ct.auth_tag, None)
    except InvalidTag:
        raise AuthFailure("authenticated decryption failed") from None


@dataclass(frozen=True)
class SigningKeyPair:
    signing: bytes
    verifying: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> "SigningKeyPair":
        _require_len("seed", seed, 32)
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        vk = sk.public_key().public_bytes_raw()
        return cls(bytes(seed), vk)

    @classmethod
    def generate(cls, rng: "DeterministicRng") -> "SigningKeyPair":
        return cls.from_seed(rng.read(32))

    def __repr__(self) -> str:
        return f"SigningKeyPair(verifying={self.verifying.hex()[:16]}...)"


_SIG_HEADER = struct.Struct(">BI")
_ED25519_SIG_LEN = 64


def sign(key_pair: SigningKeyPair, msg: bytes) -> bytes:
    """Signed message: scheme byte, 4-byte length, msg, signature.

    The signature covers the scheme byte and the framed message, so the
    message is recoverable from the result.
    """
    framed = _SIG_HEADER.pack(SCHEME_ED25519, len(msg)) + msg
    sig = Ed25519PrivateKey.from_private_bytes(key_pair.signing).sign(framed)
    return framed + sig


def _split_signed(signed: bytes) -> tuple[int, bytes, bytes, bytes]:
    if len(signed) < _SIG_HEADER.size:
        raise MalformedSignedMessage("signed message too short")
    scheme, n = _SIG_HEADER.unpack_from(signed)
    if scheme != SCHEME_ED25519:
        raise MalformedSignedMessage(f"unknown signature scheme {scheme:#x}")
    end = _SIG_HEADER.size + n
    if len(signed) != end + _ED25519_SIG_LEN:
        raise MalformedSignedMessage("signed message length mismatch")
    return scheme, signed[:end], signed[_SIG_HEADER.size:end], signed[end:]


def verify(verifying_key: bytes, signed: bytes) -> tuple[bool, bytes | None]:
    _, framed, msg, sig = _split_signed(signed)
    try:
        Ed25519PublicKey.from_public_bytes(verifying_key).verify(sig, framed)
    except (InvalidSignature, ValueError):
        return False, None
    return True, msg


def signed_payload(signed: bytes) -> bytes:
    """The embedded message, without checking the signature."""
    return _split_signed(signed)[2]


class DeterministicRng:
    """AES-256-CTR keystream keyed by ``seed``; ``counter`` counts bytes drawn.

    Output depends only on ``(seed, counter)``.  Instances are single-owner;
    use :meth:`clone` to hand an identical stream to a second consumer.
    """

    _CHUNK = 4096

    def __init__(self, seed: bytes, counter: int = 0):
        _require_len("seed", seed, 32)
        self.seed = bytes(seed)
        self.counter = counter
        self._chunk_index = -1
        self._chunk = b""

    @classmethod
    def from_int(cls, seed: int) -> "DeterministicRng":
        return cls(hashlib.sha256(b"caifsim-seed" + seed.to_bytes(8, "big")).digest())

    def _load(self, index: int) -> None:
        block = (index * self._CHUNK // 16).to_bytes(16, "big")
        enc = Cipher(algorithms.AES(self.seed), modes.CTR(block)).encryptor()
        self._chunk = enc.update(bytes(self._CHUNK))
        self._chunk_index = index

    def read(self, n: int) -> bytes:
        out = []
        while n > 0:
            index, offset = divmod(self.counter, self._CHUNK)
            if index != self._chunk_index:
                self._load(index)
            take = min(n, self._CHUNK - offset)
            out.append(self._chunk[offset:offset + take])
            self.counter += take
            n -= take
        return b"".join(out)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        k = max(1, (n.bit_length() + 7) // 8)
        limit = (256 ** k // n) * n
        while True:
            x = int.from_bytes(self.read(k), "big")
            if x < limit:
                return x % n

    def python_random(self) -> random.Random:
        """A fast ``random.Random`` seeded from the next 32 bytes."""
        return random.Random(int.from_bytes(self.read(32), "big"))

    def clone(self) -> "DeterministicRng":
        return DeterministicRng(self.seed, self.counter)

    def substream(self, label: bytes | str) -> "DeterministicRng":
        return rng_substream(self, label)

    def __repr__(self) -> str:
        return f"DeterministicRng(seed={self.seed.hex()[:12]}..., counter={self.counter})"


def rng_substream(parent: DeterministicRng, actor_label: bytes | str) -> DeterministicRng:
    if isinstance(actor_label, str):
        actor_label = actor_label.encode()
    return DeterministicRng(kdf(LABEL_RNG, parent.seed, [actor_label]))
