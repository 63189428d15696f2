"""Simulated world: devices, channels, a causal event log and the scheduler.

Roles are generators.  They yield :class:`Recv` to block on a message or
:class:`WaitFor` to block on a condition; everything else (sending, CAIF
instructions, shared storage) happens through their :class:`Ctx`.  The
scheduler is a deterministic round robin in which adversary actors step
first, then open-channel traffic is released, then honest actors step.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable, Generator, Iterable, Optional

import networkx as nx

from caifsim import codec, crypto
from caifsim.crypto import DeterministicRng
from caifsim.device import CaifDevice, Status
from caifsim.errors import CaifError, FuseAlreadyBlown, NoSuchRecord


class ChannelKind(enum.Enum):
    METAL_ROOM = "metal-room"  # authenticated and confidential, invisible
    AUTHENTICATED = "authenticated"  # adversary reads but cannot forge or alter
    OPEN = "open"  # routed through the adversary


@dataclass(frozen=True)
class Message:
    mid: int
    channel: ChannelKind
    src: str
    dst: str
    payload: bytes
    send_event: int


@dataclass
class Recv:
    match: Callable[[Message], bool] = lambda m: True


@dataclass
class WaitFor:
    cond: Callable[[], bool]


@dataclass(frozen=True)
class LogEvent:
    seq: int
    actor: str
    action: str
    data: dict
    causes: tuple[int, ...]


def _jsonable(v: Any):
    if isinstance(v, (bytes, bytearray)):
        return bytes(v).hex()
    if isinstance(v, codec.TrustChain):
        return [h.hex() for h in v]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


RoleGen = Generator[Any, Any, Any]


class Actor:
    def __init__(self, name: str, gen: RoleGen, *, adversarial: bool = False):
        self.name = name
        self.gen = gen
        self.adversarial = adversarial
        self.waiting: Any = None
        self.started = False
        self.done = False
        self.result: Any = None
        self.aborted: Optional[str] = None
        self.inbox: list[Message] = []
        self.device: Optional[CaifDevice] = None
        self.sid: Optional[int] = None

    def enabled(self) -> bool:
        if self.done:
            return False
        if not self.started:
            return True
        w = self.waiting
        if isinstance(w, Recv):
            return any(w.match(m) for m in self.inbox)
        if isinstance(w, WaitFor):
            return bool(w.cond())
        return True

    def __repr__(self) -> str:
        state = "done" if self.done else ("aborted" if self.aborted else "live")
        return f"Actor({self.name}, {state})"


class World:
    def __init__(self, seed: int, compliant: Iterable[bytes] = ()):
        self.seed = seed
        self.rng = DeterministicRng.from_int(seed)
        self.compliant: set[bytes] = set(compliant)
        self.devices: dict[bytes, CaifDevice] = {}
        self.actors: list[Actor] = []
        self.events: list[LogEvent] = []
        self._last: dict[str, int] = {}
        self._mid = 0
        self.pending: list[Message] = []
        self.held: list[Message] = []
        self.record_event: dict[tuple[bytes, int], int] = {}
        self.published: list[tuple[str, bytes]] = []
        self.secrets: list[tuple[str, bytes, tuple[bytes, ...]]] = []
        from caifsim.protocol.adversary import Adversary

        self.adversary = Adversary(self)
        self.after_step: list[Callable[["World"], None]] = []

    # devices

    def add_device(self, label: str) -> CaifDevice:
        sub = self.rng.substream(f"device:{label}")
        imid = b"imid-" + sub.read(8).hex().encode()
        dev = CaifDevice(sub.read(crypto.KEY_LEN), imid, sub.substream("instr"))
        self.devices[imid] = dev
        self.log("world", "init-imid", imid=imid, label=label)
        return dev

    def register_secret(self, name: str, value: bytes, holders: Iterable[bytes] = ()) -> None:
        """Record a secret for the secrecy audit; ``holders`` are the hashes entitled to it."""
        self.secrets.append((name, bytes(value), tuple(holders)))

    def audited_secrets(self) -> list[tuple[str, bytes]]:
        return [(n, v) for n, v, hs in self.secrets if all(h in self.compliant for h in hs)]

    # causal log

    def log(self, actor: str, action: str, causes: Iterable[int] = (), **data) -> int:
        seq = len(self.events)
        cs = list(dict.fromkeys(c for c in causes if c is not None))
        prev = self._last.get(actor)
        if prev is not None and prev not in cs:
            cs.insert(0, prev)
        self.events.append(LogEvent(seq, actor, action, data, tuple(cs)))
        self._last[actor] = seq
        return seq

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(e.seq for e in self.events)
        for e in self.events:
            for c in e.causes:
                g.add_edge(c, e.seq)
        return g

    def find(self, actor_prefix: str = "", action: str = "", **data) -> list[LogEvent]:
        out = []
        for e in self.events:
            if actor_prefix and not e.actor.startswith(actor_prefix):
                continue
            if action and e.action != action:
                continue
            if any(e.data.get(k) != v for k, v in data.items()):
                continue
            out.append(e)
        return out

    def happens_before(self, a: int, b: int, g: Optional[nx.DiGraph] = None) -> bool:
        g = g if g is not None else self.graph()
        return a != b and nx.has_path(g, a, b)

    def trace_lines(self) -> list[str]:
        return [
            json.dumps(
                {
                    "seq": e.seq,
                    "actor": e.actor,
                    "action": e.action,
                    "data": _jsonable(e.data),
                    "causes": list(e.causes),
                },
                sort_keys=True,
            )
            for e in self.events
        ]

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.trace_lines():
            h.update(line.encode() + b"\n")
        return h.hexdigest()

    # messaging

    def send(self, src: str, dst: str, payload: bytes, channel: ChannelKind = ChannelKind.OPEN) -> int:
        seq = self.log(src, "send", dst=dst, channel=channel.value, size=len(payload),
                       kind=_kind_name(payload))
        msg = Message(self._mid, channel, src, dst, bytes(payload), seq)
        self._mid += 1
        if channel is ChannelKind.METAL_ROOM:
            self._deliver(msg)
        elif channel is ChannelKind.AUTHENTICATED:
            self.adversary.observe(msg.payload)
            self._deliver(msg)
        else:
            self.pending.append(msg)
        return seq

    def inject(self, dst: str, payload: bytes, src: str = "adversary") -> None:
        """Adversary synthesis on the open channel; the claimed ``src`` is unauthenticated."""
        seq = self.log("adversary", "inject", dst=dst, claimed_src=src, kind=_kind_name(payload))
        self._deliver(Message(self._mid, ChannelKind.OPEN, src, dst, bytes(payload), seq))
        self._mid += 1

    def publish(self, actor: str, payload: bytes) -> int:
        """Broadcast a public artifact (a certificate or signed message)."""
        self.published.append((actor, bytes(payload)))
        self.adversary.observe(payload)
        return self.log(actor, "publish", kind=_kind_name(payload), size=len(payload))

    def _deliver(self, msg: Message) -> None:
        for a in self.actors:
            if a.name == msg.dst and not a.done:
                a.inbox.append(msg)
                return
        self.log("world", "undeliverable", dst=msg.dst, causes=[msg.send_event])

    def release_pending(self) -> bool:
        moved = False
        pending, self.pending = self.pending, []
        for msg in pending:
            self.adversary.observe(msg.payload)
            if self.adversary.hold is not None and self.adversary.hold(msg):
                self.held.append(msg)
                self.log("adversary", "hold", dst=msg.dst, causes=[msg.send_event])
            else:
                self._deliver(msg)
            moved = True
        return moved

    def forward_held(self, pred: Callable[[Message], bool] = lambda m: True) -> int:
        keep, n = [], 0
        for msg in self.held:
            if pred(msg):
                self._deliver(msg)
                n += 1
            else:
                keep.append(msg)
        self.held = keep
        return n

    # actors

    def spawn(self, name: str, gen: RoleGen, *, adversarial: bool = False) -> Actor:
        a = Actor(name, gen, adversarial=adversarial)
        self.actors.append(a)
        return a

    def spawn_service(self, dev: CaifDevice, code: bytes, name: str, program, *args) -> Actor:
        """Create a service for ``code`` and run ``program(ctx, *args)`` inside it."""
        from caifsim.protocol.roles import ANCHOR_ROLE

        if getattr(program, ANCHOR_ROLE, False) and dev.anchor_fuse_blown:
            self.log(name, "start-refused", reason="FuseAlreadyBlown")
            raise FuseAlreadyBlown("anchor role refused after the fuse was blown")
        sid = dev.create_service(code)
        ctx = Ctx(self, name, dev, sid)
        a = Actor(name, program(ctx, *args))
        a.device, a.sid = dev, sid
        self.actors.append(a)
        self.log(name, "create-service", imid=dev.imid, hash=crypto.code_hash(code))
        return a

    def _step(self, a: Actor) -> None:
        value = None
        if a.started and isinstance(a.waiting, Recv):
            for i, m in enumerate(a.inbox):
                if a.waiting.match(m):
                    value = a.inbox.pop(i)
                    self.log(a.name, "recv", causes=[m.send_event], src=m.src, kind=_kind_name(m.payload))
                    break
        a.started = True
        dev = a.device
        if dev is not None and dev.services[a.sid].status is Status.RUNNABLE:
            dev.start_service(a.sid)
        try:
            a.waiting = a.gen.send(value)
        except StopIteration as stop:
            a.done = True
            a.result = stop.value
            self.log(a.name, "done", result=_jsonable(stop.value) if isinstance(stop.value, (bytes, str, bool)) else None)
        except CaifError as exc:
            a.done = True
            a.aborted = type(exc).__name__
            self.log(a.name, "abort", reason=a.aborted, detail=str(exc))
        finally:
            if dev is not None and dev.active is not None and dev.active.sid == a.sid:
                if a.done:
                    dev.exit_service()
                else:
                    dev.yield_service()

    def run(self, max_rounds: int = 10_000) -> None:
        for _ in range(max_rounds):
            progressed = False
            for a in [x for x in self.actors if x.adversarial]:
                if a.enabled():
                    self._step(a)
                    progressed = True
            if self.release_pending():
                progressed = True
            for a in [x for x in self.actors if not x.adversarial]:
                if a.enabled():
                    self._step(a)
                    progressed = True
            for hook in self.after_step:
                hook(self)
            if not progressed:
                return
        raise RuntimeError("scheduler did not quiesce")

    def actor(self, name: str) -> Actor:
        for a in self.actors:
            if a.name == name:
                return a
        raise KeyError(name)


def _kind_name(payload: bytes) -> str:
    cls = codec.peek_kind(payload)
    return cls.__name__ if cls is not None else "raw"


class Ctx:
    """What a device role may touch: its own service's instructions and I/O."""

    def __init__(self, world: World, name: str, dev: CaifDevice, sid: int):
        self.world = world
        self.name = name
        self.dev = dev
        self.sid = sid
        self.hash = dev.services[sid].hash
        self.rng = world.rng.substream(f"role:{name}:{sid}:{dev.imid.hex()}")
        self.input_rid: Optional[int] = None

    @property
    def imid(self) -> bytes:
        return self.dev.imid

    def log(self, action: str, causes: Iterable[int] = (), **data) -> int:
        return self.world.log(self.name, action, causes, **data)

    def send(self, dst: str, payload: bytes, channel: ChannelKind = ChannelKind.OPEN) -> int:
        return self.world.send(self.name, dst, payload, channel)

    def publish(self, payload: bytes) -> int:
        return self.world.publish(self.name, payload)

    def protect(self, recipient: bytes, record) -> int:
        ct = self.dev.protfor(recipient, codec.encode(record))
        rid = self.dev.store_shared(ct.to_bytes(), prot_kind(recipient))
        chain = getattr(record, "chain", None)
        seq = self.log("protect", imid=self.imid, rid=rid, source=self.hash, recipient=recipient,
                       chain=chain, input_rid=self.input_rid, record=type(record).__name__)
        self.world.record_event[(self.imid, rid)] = seq
        self.world.adversary.observe(ct.to_bytes())
        return rid

    def latest(self, kind: str) -> tuple[int, bytes]:
        recs = self.dev.shared_of_kind(kind)
        if not recs:
            raise NoSuchRecord(f"no shared record of kind {kind}")
        r = recs[-1]
        return r.rid, r.blob

    def retrieve(self, source: bytes, expected: type):
        rid, blob = self.latest(prot_kind(self.hash))
        cause = self.world.record_event.get((self.imid, rid))
        try:
            plain = self.dev.retrvfm(source, blob)
        except CaifError:
            self.log("retrieve", [cause], imid=self.imid, rid=rid, source=source, ok=False)
            raise
        rec = codec.decode(plain, expected)
        self.input_rid = rid
        self.log("retrieve", [cause], imid=self.imid, rid=rid, source=source, ok=True,
                 chain=getattr(rec, "chain", None), record=type(rec).__name__)
        return rec

    def expect_chain(self, chain: codec.TrustChain, source: bytes) -> None:
        """Own hash first, source second; logs acceptance of the retrieved record."""
        from caifsim.errors import ChainMismatch

        if not codec.chain_expect(chain, self.hash, source):
            self.log("chain-reject", rid=self.input_rid, chain=chain, source=source)
            raise ChainMismatch("trust chain does not start with own hash and source")
        self.log("chain-accept", imid=self.imid, rid=self.input_rid, by=self.hash, chain=chain)

    def expect_imid(self, imid: bytes) -> None:
        from caifsim.errors import WrongDevice

        if imid != self.imid:
            raise WrongDevice(f"record names device {imid!r}, running on {self.imid!r}")

    def secret(self, name: str, value: bytes, holders: Iterable[bytes]) -> None:
        self.world.register_secret(name, value, holders)

    def attest_store(self, value, kind: str) -> int:
        v = codec.encode(value)
        tag = self.dev.attestloc(v)
        rid = self.dev.store_shared(codec.encode(codec.Logged(v, tag)), kind)
        seq = self.log("attest", imid=self.imid, rid=rid, kind=kind, record=type(value).__name__)
        self.world.record_event[(self.imid, rid)] = seq
        return rid

    def read_logged(self, kind: str, source: bytes, expected: type):
        """Latest logged record of ``kind``; aborts unless it checks as logged by ``source``."""
        from caifsim.errors import CheckFailed

        rid, blob = self.latest(kind)
        entry = codec.decode(blob, codec.Logged)
        ok = self.dev.ckattest(source, entry.value, entry.tag)
        self.log("check", [self.world.record_event.get((self.imid, rid))], imid=self.imid,
                 rid=rid, kind=kind, source=source, ok=ok)
        if not ok:
            raise CheckFailed(f"{kind} record does not check as logged by {source.hex()[:12]}")
        return codec.decode(entry.value, expected)


def prot_kind(recipient: bytes) -> str:
    return "prot:" + recipient.hex()


def log_kind(tag: str) -> str:
    return "log:" + tag
