"""Cryptographic CAIF device.

A device holds one intrinsic secret and derives every instruction key from
it and service hashes.  Services are registered by code; their identity is
the code hash.  At most one service is active at a time, and only the
active service's hash reaches the instructions.
"""

from __future__ import annotations

import contextlib
import enum
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

from caifsim import crypto
from caifsim.crypto import Ciphertext, DeterministicRng, MacFn
from caifsim.errors import (
    AlreadyActive,
    AuthFailure,
    CompliantHashRefused,
    FuseAlreadyBlown,
    NoActiveService,
    NoSuchRecord,
    NotRunnable,
)
from caifsim.ideal import Event, Failure, IAttest, ICheck, IProtect, IRetrieve


class Status(enum.Enum):
    RUNNABLE = "runnable"
    ACTIVE = "active"
    EXITED = "exited"


@dataclass
class Service:
    sid: int
    code: bytes
    hash: bytes
    status: Status = Status.RUNNABLE
    heap: bytearray = field(default_factory=bytearray)
    args: bytes = b""
    wildcat: bool = False


@dataclass(frozen=True)
class SharedRecord:
    rid: int
    kind: str
    blob: bytes


class CaifDevice:
    def __init__(
        self,
        is_secret: bytes,
        imid: bytes,
        rng: DeterministicRng,
        *,
        mac_fn: MacFn = crypto.mac,
        record_trace: bool = True,
    ):
        if len(is_secret) != crypto.KEY_LEN:
            raise ValueError("intrinsic secret must be 32 bytes")
        self._is = bytes(is_secret)
        self.imid = bytes(imid)
        self.rng = rng
        self.mac_fn = mac_fn
        self.record_trace = record_trace
        self.trace: list[Event] = []
        self.services: dict[int, Service] = {}
        self.shared: list[SharedRecord] = []
        self._active: Optional[Service] = None
        self._next_sid = 0
        self._fuse_blown = False

    def __repr__(self) -> str:
        return f"CaifDevice(imid={self.imid.hex()}, services={len(self.services)})"

    # services

    def create_service(self, code: bytes) -> int:
        sid = self._next_sid
        self._next_sid += 1
        self.services[sid] = Service(sid, bytes(code), crypto.code_hash(code))
        return sid

    def start_service(self, sid: int, args: bytes = b"") -> None:
        svc = self.services.get(sid)
        if svc is None or svc.status is not Status.RUNNABLE:
            raise NotRunnable(f"service {sid} is not runnable")
        if self._active is not None:
            raise AlreadyActive(f"service {self._active.sid} is active")
        svc.status = Status.ACTIVE
        svc.args = bytes(args)
        self._active = svc

    def yield_service(self) -> None:
        svc = self._require_active()
        svc.status = Status.RUNNABLE
        self._active = None

    def exit_service(self) -> None:
        svc = self._require_active()
        svc.heap[:] = bytes(len(svc.heap))
        svc.status = Status.EXITED
        self._active = None

    @property
    def active(self) -> Optional[Service]:
        return self._active

    @property
    def active_hash(self) -> Optional[bytes]:
        return None if self._active is None else self._active.hash

    def _require_active(self) -> Service:
        if self._active is None:
            raise NoActiveService("no service is executing")
        return self._active

    def heap_write(self, data: bytes) -> None:
        self._require_active().heap.extend(data)

    def inspect_heap(self, sid: int) -> bytes:
        """Test hook; services never see each other's heaps."""
        return bytes(self.services[sid].heap)

    def active_services(self) -> list[int]:
        return [s.sid for s in self.services.values() if s.status is Status.ACTIVE]

    # instructions

    def _log(self, command, result) -> None:
        if self.record_trace:
            self.trace.append(Event(command, self.active_hash, result))

    def attestloc(self, v: bytes) -> bytes:
        try:
            sh = self._require_active().hash
        except NoActiveService as exc:
            self._log(IAttest(v), Failure("NoActiveService"))
            raise exc
        tag = self.mac_fn(crypto.kdf(crypto.LABEL_ATTEST, self._is, [sh]), v)
        self._log(IAttest(v), tag)
        return tag

    def ckattest(self, source: bytes, v: bytes, m: bytes) -> bool:
        # allowed for any process, service or not
        expected = self.mac_fn(crypto.kdf(crypto.LABEL_ATTEST, self._is, [source]), v)
        ok = crypto.tags_equal(expected, m)
        self._log(ICheck(source, v, m), ok)
        return ok

    def protfor(self, recipient: bytes, v: bytes) -> Ciphertext:
        try:
            sh = self._require_active().hash
        except NoActiveService as exc:
            self._log(IProtect(recipient, v), Failure("NoActiveService"))
            raise exc
        key = crypto.kdf(crypto.LABEL_PROTECT, self._is, [sh, recipient])
        ct = crypto.aead_encrypt(key, v, self.rng)
        self._log(IProtect(recipient, v), ct.to_bytes())
        return ct

    def retrvfm(self, source: bytes, e: Ciphertext | bytes) -> bytes:
        raw = e.to_bytes() if isinstance(e, Ciphertext) else bytes(e)
        try:
            svc = self._require_active()
        except NoActiveService as exc:
            self._log(IRetrieve(source, raw), Failure("NoActiveService"))
            raise exc
        key = crypto.kdf(crypto.LABEL_PROTECT, self._is, [source, svc.hash])
        try:
            v = crypto.aead_decrypt(key, raw)
        except AuthFailure as exc:
            self._log(IRetrieve(source, raw), Failure("AuthFailure"))
            raise exc
        svc.heap.extend(v)
        self._log(IRetrieve(source, raw), v)
        return v

    # wildcat entry point

    @contextlib.contextmanager
    def wildcat(self, code: bytes, compliant: set[bytes] | frozenset[bytes]) -> Iterator[Service]:
        """Run adversary-chosen instructions as a service with ``code``.

        Refused when the code hash is in ``compliant``; compliant hashes only
        ever act through their specified roles.
        """
        h = crypto.code_hash(code)
        if h in compliant:
            raise CompliantHashRefused(f"wildcat under compliant hash {h.hex()[:16]}")
        sid = self.create_service(code)
        self.services[sid].wildcat = True
        self.start_service(sid)
        try:
            yield self.services[sid]
        finally:
            if self._active is not None and self._active.sid == sid:
                self.exit_service()

    # shared storage

    def store_shared(self, blob: bytes, kind: str = "blob") -> int:
        rid = len(self.shared)
        self.shared.append(SharedRecord(rid, kind, bytes(blob)))
        return rid

    def read_shared(self, rid: int) -> bytes:
        if not 0 <= rid < len(self.shared):
            raise NoSuchRecord(f"no shared record {rid}")
        return self.shared[rid].blob

    def shared_of_kind(self, kind: str) -> list[SharedRecord]:
        return [r for r in self.shared if r.kind == kind]

    def export_shared(self) -> bytes:
        out = [struct.pack(">I", len(self.shared))]
        for r in self.shared:
            k = r.kind.encode()
            out.append(struct.pack(">I", len(k)) + k)
            out.append(struct.pack(">I", len(r.blob)) + r.blob)
        return b"".join(out)

    def import_shared(self, data: bytes) -> None:
        from caifsim.codec import Reader

        rd = Reader(data)
        n = rd.u32()
        records = [(rd.field().decode(), rd.field()) for _ in range(n)]
        rd.done()
        for kind, blob in records:
            self.store_shared(blob, kind)

    # anchor fuse

    @property
    def anchor_fuse_blown(self) -> bool:
        return self._fuse_blown

    def blow_anchor_fuse(self) -> None:
        if self._fuse_blown:
            raise FuseAlreadyBlown("anchor fuse already blown")
        self._fuse_blown = True

    def secret_for_audit(self) -> bytes:
        """Test hook for the non-leakage audit."""
        return self._is
