"""State-table ideal functionality: logging (attest/check) and escrow.

The functionality keeps two append-only tables.  ``atlog`` maps
``(principal, value)`` to a tag and ``protstore`` maps
``(handle, source, recipient)`` to a value.  It is parameterized by a tag
function and a handle sampler; :func:`if_instance_for` builds the instance
whose tags and handles coincide with a cryptographic device holding the
same intrinsic secret.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

from caifsim import crypto
from caifsim.crypto import DeterministicRng, MacFn
from caifsim.errors import (
    HandleSpaceExhausted,
    NoActiveService,
    NoSuchEscrow,
    ValueTooLarge,
)

MAX_VALUE_LEN = 1 << 20
MAX_RESAMPLES = 64

# A principal is a service hash, or None for a process that is not a service.
Principal = Optional[bytes]
BOTTOM: Principal = None


@dataclass(frozen=True)
class IAttest:
    v: bytes


@dataclass(frozen=True)
class ICheck:
    source: bytes
    v: bytes
    tag: bytes


@dataclass(frozen=True)
class IProtect:
    recipient: bytes
    v: bytes


@dataclass(frozen=True)
class IRetrieve:
    source: bytes
    handle: bytes


Command = Union[IAttest, ICheck, IProtect, IRetrieve]

# device-level instruction names for the same four commands
COMMAND_NAMES = {
    IAttest: "iattest",
    ICheck: "icheck",
    IProtect: "iprotect",
    IRetrieve: "iretrieve",
}


@dataclass(frozen=True)
class Failure:
    """Instruction failure, the condition-code result."""

    reason: str

    def __bool__(self) -> bool:
        return False


Result = Union[bytes, bool, Failure]


@dataclass(frozen=True)
class Event:
    command: Command
    principal: Principal
    result: Result


SampleHandle = Callable[[int, bytes, bytes, DeterministicRng], bytes]
FLog = Callable[[bytes, bytes], bytes]


@dataclass(frozen=True)
class IFParameters:
    """``f_log(v, P)`` chooses tags; ``sample_handle(len, Ps, Pr, rng)`` handles.

    ``value_handle``, when set, replaces the sampler by one that sees the
    plaintext.  That is the intermediate hybrid used when comparing the
    functionality with a device: candidate handles are real encryptions of
    ``v`` instead of encryptions of zeros.
    """

    f_log: FLog
    sample_handle: SampleHandle
    value_handle: Optional[Callable[[bytes, bytes, bytes, DeterministicRng], bytes]] = None


def if_instance_for(
    is_secret: bytes, *, mac_fn: MacFn = crypto.mac, encrypt_values: bool = False
) -> IFParameters:
    def f_log(v: bytes, principal: bytes) -> bytes:
        return mac_fn(crypto.kdf(crypto.LABEL_ATTEST, is_secret, [principal]), v)

    def sample_handle(length: int, source: bytes, recipient: bytes, rng: DeterministicRng) -> bytes:
        key = crypto.kdf(crypto.LABEL_PROTECT, is_secret, [source, recipient])
        return crypto.aead_encrypt(key, bytes(length), rng).to_bytes()

    def value_handle(v: bytes, source: bytes, recipient: bytes, rng: DeterministicRng) -> bytes:
        key = crypto.kdf(crypto.LABEL_PROTECT, is_secret, [source, recipient])
        return crypto.aead_encrypt(key, v, rng).to_bytes()

    return IFParameters(f_log, sample_handle, value_handle if encrypt_values else None)


def _check_size(v: bytes) -> None:
    if len(v) >= MAX_VALUE_LEN:
        raise ValueTooLarge(f"value of {len(v)} bytes exceeds {MAX_VALUE_LEN - 1}")


class IdealFunctionality:
    """One instance of the ideal functionality with its two tables."""

    def __init__(self, params: IFParameters):
        self.params = params
        self.atlog: dict[tuple[bytes, bytes], bytes] = {}
        self.protstore: dict[tuple[bytes, bytes, bytes], bytes] = {}
        self._handles: set[bytes] = set()

    def iattest(self, principal: Principal, v: bytes) -> bytes:
        if principal is None:
            raise NoActiveService("iattest requires an executing service")
        _check_size(v)
        key = (principal, v)
        tag = self.atlog.get(key)
        if tag is None:
            tag = self.params.f_log(v, principal)
            self.atlog[key] = tag
        return tag

    def icheck(self, principal: Principal, source: bytes, v: bytes, tag: bytes) -> bool:
        # any active process may check, services or not
        stored = self.atlog.get((source, v))
        return stored is not None and stored == tag

    def iprotect(
        self, principal: Principal, recipient: bytes, v: bytes, rng: DeterministicRng
    ) -> bytes:
        if principal is None:
            raise NoActiveService("iprotect requires an executing service")
        _check_size(v)
        for _ in range(MAX_RESAMPLES):
            if self.params.value_handle is not None:
                handle = self.params.value_handle(v, principal, recipient, rng)
            else:
                handle = self.params.sample_handle(len(v), principal, recipient, rng)
            if handle not in self._handles:
                break
        else:
            raise HandleSpaceExhausted("no fresh handle after resampling")
        self._handles.add(handle)
        self.protstore[(handle, principal, recipient)] = v
        return handle

    def iretrieve(self, principal: Principal, source: bytes, handle: bytes) -> bytes:
        if principal is None:
            raise NoActiveService("iretrieve requires an executing service")
        try:
            return self.protstore[(handle, source, principal)]
        except KeyError:
            raise NoSuchEscrow("no escrow under that index") from None

    def snapshot(self) -> tuple[dict, dict]:
        return dict(self.atlog), dict(self.protstore)


# JSON-lines trace format: {seq, command, principal_hex, result}

def _hex(b: Optional[bytes]) -> Optional[str]:
    return None if b is None else b.hex()


def command_to_json(c: Command) -> dict:
    out: dict = {"op": COMMAND_NAMES[type(c)]}
    for name, value in vars(c).items():
        out[name] = value.hex()
    return out


_OPS = {name: cls for cls, name in COMMAND_NAMES.items()}


def command_from_json(d: dict) -> Command:
    cls = _OPS[d["op"]]
    kwargs = {k: bytes.fromhex(v) for k, v in d.items() if k != "op"}
    return cls(**kwargs)


def result_to_json(r: Result):
    if isinstance(r, Failure):
        return {"fail": r.reason}
    if isinstance(r, bool):
        return r
    return r.hex()


def result_from_json(r) -> Result:
    if isinstance(r, dict):
        return Failure(r["fail"])
    if isinstance(r, bool):
        return r
    return bytes.fromhex(r)


def event_to_json(seq: int, e: Event) -> str:
    return json.dumps(
        {
            "seq": seq,
            "command": command_to_json(e.command),
            "principal_hex": _hex(e.principal),
            "result": result_to_json(e.result),
        },
        sort_keys=True,
    )


def event_from_json(line: str) -> Event:
    d = json.loads(line)
    p = d["principal_hex"]
    return Event(
        command_from_json(d["command"]),
        None if p is None else bytes.fromhex(p),
        result_from_json(d["result"]),
    )


def write_trace(events: Iterable[Event], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, e in enumerate(events):
            fh.write(event_to_json(i, e) + "\n")


def read_trace(path) -> list[Event]:
    with open(path, encoding="utf-8") as fh:
        return [event_from_json(line) for line in fh if line.strip()]
