"""Network adversary and wildcat device roles.

The adversary's knowledge is a set of byte strings closed under taking
apart codec records, reading the payload of signed messages and decrypting
AEAD ciphertexts with any 32-byte value it knows.  Synthesis (encrypting,
MACing and signing with known keys) is available through explicit methods
rather than enumerated into the set.
"""

from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING, Callable, Iterable, Optional

from caifsim import codec, crypto
from caifsim.crypto import Ciphertext
from caifsim.device import CaifDevice
from caifsim.errors import CaifError

if TYPE_CHECKING:
    from caifsim.protocol.world import Message, World


class Knowledge:
    def __init__(self):
        self.items: set[bytes] = set()
        self.order: list[bytes] = []  # insertion order, for incremental audits
        self._keys: set[bytes] = set()
        self._cts: set[bytes] = set()

    def __contains__(self, b: bytes) -> bool:
        return bytes(b) in self.items

    def __len__(self) -> int:
        return len(self.items)

    def contains_substring(self, secret: bytes) -> bool:
        s = bytes(secret)
        return any(s in item for item in self.items)

    def add(self, *values: bytes) -> None:
        todo = [bytes(v) for v in values]
        while todo:
            b = todo.pop()
            if b in self.items:
                continue
            self.items.add(b)
            self.order.append(b)
            todo.extend(self._parts(b))
            if len(b) == crypto.KEY_LEN:
                self._keys.add(b)
                for ct in list(self._cts):
                    todo.extend(self._try_open(b, ct))
            if len(b) >= crypto.AEAD_OVERHEAD:
                self._cts.add(b)
                for k in list(self._keys):
                    todo.extend(self._try_open(k, b))

    @staticmethod
    def _try_open(key: bytes, ct: bytes) -> list[bytes]:
        try:
            return [crypto.aead_decrypt(key, ct)]
        except CaifError:
            return []

    @staticmethod
    def _parts(b: bytes) -> list[bytes]:
        out: list[bytes] = []
        try:
            out.append(crypto.signed_payload(b))
        except CaifError:
            pass
        if codec.peek_kind(b) is None:
            return out
        try:
            value = codec.decode(b)
        except CaifError:
            return out
        if isinstance(value, codec.TrustChain):
            return out + list(value)
        for f in dataclasses.fields(value):
            x = getattr(value, f.name)
            out.extend(list(x) if isinstance(x, codec.TrustChain) else [x])
        return out


class Adversary:
    """Dolev-Yao network powers plus the three wildcat roles."""

    def __init__(self, world: "World"):
        self.world = world
        self.knowledge = Knowledge()
        self.hold: Optional[Callable[["Message"], bool]] = None
        self.wildcat_log: list[tuple[str, bytes, bool]] = []
        self.rng = world.rng.substream("adversary")

    def observe(self, payload: bytes) -> None:
        self.knowledge.add(payload)

    def learn_shared(self) -> None:
        """Shared storage is readable by everyone, the adversary included."""
        for dev in self.world.devices.values():
            for r in dev.shared:
                self.knowledge.add(r.blob)

    def knows(self, secret: bytes) -> bool:
        self.learn_shared()
        return secret in self.knowledge or self.knowledge.contains_substring(secret)

    # wildcat roles

    def _wildcat(self, dev: CaifDevice, code: bytes, op: str, fn):
        h = crypto.code_hash(code)
        try:
            with dev.wildcat(code, self.world.compliant):
                result = fn()
        except CaifError as exc:
            self.wildcat_log.append((op, h, False))
            self.world.log("adversary", "wildcat", op=op, hash=h, ok=False, reason=type(exc).__name__)
            raise
        self.wildcat_log.append((op, h, True))
        self.world.log("adversary", "wildcat", op=op, hash=h, ok=True)
        return result

    def wc_retrieve(self, dev: CaifDevice, code: bytes, source: bytes, ct: bytes | Ciphertext) -> bytes:
        v = self._wildcat(dev, code, "wc-retrieve", lambda: dev.retrvfm(source, ct))
        self.knowledge.add(v)
        return v

    def wc_protect(self, dev: CaifDevice, code: bytes, recipient: bytes, value: bytes) -> int:
        def go():
            ct = dev.protfor(recipient, value)
            return dev.store_shared(ct.to_bytes(), "prot:" + recipient.hex())

        rid = self._wildcat(dev, code, "wc-protect", go)
        seq = self.world.log("adversary", "protect", imid=dev.imid, rid=rid, source=crypto.code_hash(code),
                             recipient=recipient, chain=None, input_rid=None, record="wildcat")
        self.world.record_event[(dev.imid, rid)] = seq
        return rid

    def wc_attest(self, dev: CaifDevice, code: bytes, value: bytes) -> bytes:
        tag = self._wildcat(dev, code, "wc-attest", lambda: dev.attestloc(value))
        self.knowledge.add(tag)
        return tag

    # synthesis helpers; each requires the key to be known

    def _require(self, key: bytes) -> None:
        if key not in self.knowledge:
            raise PermissionError("adversary does not know this key")

    def encrypt(self, key: bytes, plaintext: bytes) -> bytes:
        self._require(key)
        return crypto.aead_encrypt(key, plaintext, self.rng).to_bytes()

    def mac(self, key: bytes, data: bytes) -> bytes:
        self._require(key)
        return crypto.mac(key, data)

    def sign(self, seed: bytes, msg: bytes) -> bytes:
        self._require(seed)
        return crypto.sign(crypto.SigningKeyPair.from_seed(seed), msg)

    def forward_all(self) -> int:
        return self.world.forward_held()


def exposed(adv: Adversary, secrets: Iterable[tuple[str, bytes]]) -> list[str]:
    return [name for name, s in secrets if adv.knows(s)]
