"""Oracle formalism over the ideal functionality and the device.

Both oracles take queries ``(command, principal)`` and answer with a result;
failures come back as :class:`Failure` values rather than exceptions.  On
top of that sit random query scripts with result feedback, the two
behavioral auditors, an exact agreement checker and Monte Carlo estimators
for the unforgeability, confidentiality and distinguishing games.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Callable, Iterable, Iterator, Optional, Protocol, Sequence

from caifsim import crypto
from caifsim.crypto import DeterministicRng, MacFn
from caifsim.device import CaifDevice
from caifsim.errors import CaifError
from caifsim.ideal import (
    Command,
    Event,
    Failure,
    IAttest,
    ICheck,
    IdealFunctionality,
    IProtect,
    IRetrieve,
    Principal,
    Result,
    event_to_json,
    if_instance_for,
)


class OracleAdapter(Protocol):
    def step(self, command: Command, principal: Principal) -> Result: ...


class IdealOracle:
    def __init__(self, ifunc: IdealFunctionality, rng: DeterministicRng):
        self.ifunc = ifunc
        self.rng = rng

    def step(self, command: Command, principal: Principal) -> Result:
        f = self.ifunc
        try:
            t = type(command)
            if t is IAttest:
                return f.iattest(principal, command.v)
            if t is ICheck:
                return f.icheck(principal, command.source, command.v, command.tag)
            if t is IProtect:
                return f.iprotect(principal, command.recipient, command.v, self.rng)
            if t is IRetrieve:
                return f.iretrieve(principal, command.source, command.handle)
            raise TypeError(f"not a command: {command!r}")
        except CaifError as exc:
            return Failure(type(exc).__name__)


class DeviceOracle:
    """Runs each query inside the service whose hash is the principal.

    ``codes`` supplies the code for every principal the adapter may be asked
    to run as; a service is created per code on first use and yielded after
    each query so the next query can start a different one.
    """

    def __init__(self, device: CaifDevice, codes: Iterable[bytes] = ()):
        self.device = device
        self._code: dict[bytes, bytes] = {}
        self._sid: dict[bytes, int] = {}
        for c in codes:
            self.add_code(c)

    def add_code(self, code: bytes) -> bytes:
        h = crypto.code_hash(code)
        self._code[h] = bytes(code)
        return h

    def _run(self, command: Command) -> Result:
        d = self.device
        t = type(command)
        if t is IAttest:
            return d.attestloc(command.v)
        if t is ICheck:
            return d.ckattest(command.source, command.v, command.tag)
        if t is IProtect:
            return d.protfor(command.recipient, command.v).to_bytes()
        if t is IRetrieve:
            return d.retrvfm(command.source, command.handle)
        raise TypeError(f"not a command: {command!r}")

    def step(self, command: Command, principal: Principal) -> Result:
        d = self.device
        try:
            if principal is None:
                return self._run(command)
            sid = self._sid.get(principal)
            if sid is None:
                code = self._code.get(principal)
                if code is None:
                    return Failure("UnknownPrincipal")
                sid = self._sid[principal] = d.create_service(code)
            d.start_service(sid)
            try:
                return self._run(command)
            finally:
                d.yield_service()
        except CaifError as exc:
            return Failure(type(exc).__name__)


class BehaviorLog:
    """Append-only sequence of events."""

    def __init__(self, events: Iterable[Event] = ()):
        self._events: list[Event] = list(events)

    def append(self, e: Event) -> None:
        self._events.append(e)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __getitem__(self, i):
        return self._events[i]

    def to_jsonl(self) -> str:
        return "".join(event_to_json(i, e) + "\n" for i, e in enumerate(self._events))

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()


# query generation

OPS = ("attest", "check", "protect", "retrieve")


@dataclass(frozen=True)
class QueryScript:
    seed: int
    length: int
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    principals: int = 4
    min_len: int = 0
    max_len: int = 48
    replay_prob: float = 0.75
    forge_prob: float = 0.0
    bottom_prob: float = 0.03


def principal_codes(n: int, salt: bytes = b"") -> list[bytes]:
    return [b"service-" + salt + str(i).encode() for i in range(n)]


class _Generator:
    """Query source that remembers earlier results so it can forward them."""

    def __init__(self, script: QueryScript, principals: Sequence[bytes]):
        self.s = script
        self.rnd = DeterministicRng.from_int(script.seed).python_random()
        self.pool = list(principals)
        total = sum(script.weights)
        acc, self.cum = 0.0, []
        for w in script.weights:
            acc += w / total
            self.cum.append(acc)
        self.values: list[bytes] = []
        self.attested: list[tuple[bytes, bytes, bytes]] = []
        self.protected: list[tuple[bytes, bytes, bytes]] = []
        self.tag_len = crypto.TAG_LEN

    def _value(self) -> bytes:
        rnd = self.rnd
        if self.values and rnd.random() < 0.3:
            return self.values[rnd.randrange(len(self.values))]
        v = rnd.randbytes(rnd.randint(self.s.min_len, self.s.max_len))
        self.values.append(v)
        return v

    def _principal(self) -> bytes:
        return self.pool[self.rnd.randrange(len(self.pool))]

    def next(self) -> tuple[Command, Principal]:
        rnd, s = self.rnd, self.s
        u = rnd.random()
        op = 0
        while op < 3 and u >= self.cum[op]:
            op += 1
        p: Principal = None if rnd.random() < s.bottom_prob else self._principal()
        if op == 0:
            return IAttest(self._value()), p
        if op == 1:
            if self.attested and rnd.random() < s.replay_prob:
                src, v, tag = self.attested[rnd.randrange(len(self.attested))]
                r = rnd.random()
                if r < 0.15:
                    src = self._principal()
                elif r < 0.25:
                    v = self._value()
            else:
                src, v = self._principal(), self._value()
                tag = b""
            if not tag or rnd.random() < s.forge_prob:
                tag = rnd.randbytes(self.tag_len)
            return ICheck(src, v, tag), p
        if op == 2:
            return IProtect(self._principal(), self._value()), p
        if self.protected and rnd.random() < s.replay_prob and rnd.random() >= s.forge_prob:
            src, rcpt, handle = self.protected[rnd.randrange(len(self.protected))]
            r = rnd.random()
            if r < 0.7 and p is not None:
                p = rcpt
            elif r < 0.8:
                src = self._principal()
            return IRetrieve(src, handle), p
        handle = rnd.randbytes(rnd.randint(s.min_len, s.max_len) + crypto.AEAD_OVERHEAD)
        return IRetrieve(self._principal(), handle), p

    def feed(self, command: Command, principal: Principal, result: Result) -> None:
        if isinstance(result, Failure):
            return
        t = type(command)
        if t is IAttest:
            self.attested.append((principal, command.v, result))
            self.tag_len = len(result)
        elif t is IProtect:
            self.protected.append((principal, command.recipient, result))


def run_script(
    oracle: OracleAdapter, script: QueryScript, principals: Optional[Sequence[bytes]] = None
) -> BehaviorLog:
    if principals is None:
        principals = [crypto.code_hash(c) for c in principal_codes(script.principals)]
    gen = _Generator(script, principals)
    log = BehaviorLog()
    for _ in range(script.length):
        c, p = gen.next()
        r = oracle.step(c, p)
        gen.feed(c, p, r)
        log.append(Event(c, p, r))
    return log


# auditors


@dataclass(frozen=True)
class Violation:
    lemma: int
    item: int
    indices: tuple[int, ...]
    detail: str

    def to_dict(self) -> dict:
        return asdict(self)


def audit_lemma1(log: Iterable[Event]) -> list[Violation]:
    """Check both logging items: attested-then-checked is true, true implies attested."""
    out: list[Violation] = []
    logged: dict[tuple[bytes, bytes, bytes], int] = {}
    for j, e in enumerate(log):
        c, r = e.command, e.result
        if type(c) is IAttest:
            if e.principal is not None and isinstance(r, bytes):
                logged.setdefault((e.principal, c.v, r), j)
        elif type(c) is ICheck:
            i = logged.get((c.source, c.v, c.tag))
            if i is not None and r is not True:
                out.append(Violation(1, 1, (i, j), "check of an attested triple was not true"))
            elif i is None and r is True:
                out.append(Violation(1, 2, (j,), "check returned true with no earlier attest"))
    return out


def audit_lemma2(log: Iterable[Event]) -> list[Violation]:
    """Check both escrow items: protected-then-retrieved is v, success implies protected."""
    out: list[Violation] = []
    escrow: dict[tuple[bytes, bytes, bytes], tuple[int, bytes]] = {}
    for j, e in enumerate(log):
        c, r = e.command, e.result
        if type(c) is IProtect:
            if e.principal is not None and isinstance(r, bytes):
                escrow.setdefault((r, e.principal, c.recipient), (j, c.v))
        elif type(c) is IRetrieve:
            hit = escrow.get((c.handle, c.source, e.principal)) if e.principal is not None else None
            ok = isinstance(r, bytes)
            if hit is not None and (not ok or r != hit[1]):
                out.append(Violation(2, 1, (hit[0], j), "retrieve of an escrowed index did not return v"))
            elif hit is None and ok:
                out.append(Violation(2, 2, (j,), "retrieve succeeded with no earlier protect"))
    return out


def audit_report(log: Sequence[Event]) -> dict:
    v = audit_lemma1(log) + audit_lemma2(log)
    return {"events": len(log), "violations": [x.to_dict() for x in v]}


# oracle construction


def fresh_secret(rng: DeterministicRng) -> bytes:
    return rng.read(crypto.KEY_LEN)


def make_ideal(
    is_secret: bytes, rng: DeterministicRng, *, mac_fn: MacFn = crypto.mac, encrypt_values: bool = False
) -> IdealOracle:
    params = if_instance_for(is_secret, mac_fn=mac_fn, encrypt_values=encrypt_values)
    return IdealOracle(IdealFunctionality(params), rng)


def make_device(
    is_secret: bytes, rng: DeterministicRng, codes: Iterable[bytes], *, mac_fn: MacFn = crypto.mac
) -> DeviceOracle:
    dev = CaifDevice(is_secret, b"imid-oracle", rng, mac_fn=mac_fn, record_trace=False)
    return DeviceOracle(dev, codes)


# agreement


def results_agree(a: Result, b: Result) -> bool:
    # a failure is a failure; the reason differs between the two machines
    if isinstance(a, Failure) or isinstance(b, Failure):
        return isinstance(a, Failure) and isinstance(b, Failure)
    return type(a) is type(b) and a == b


@dataclass
class Mismatch:
    script: int
    index: int
    command: str
    ideal: str
    device: str


@dataclass
class AgreementReport:
    scripts: int
    queries: int
    seed: int
    mismatches: int = 0
    examples: list[Mismatch] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return asdict(self)


def _show(r: Result) -> str:
    if isinstance(r, Failure):
        return f"fail:{r.reason}"
    if isinstance(r, bool):
        return str(r).lower()
    return r.hex()


def check_agreement(
    scripts: int,
    queries: int,
    seed: int,
    *,
    mac_fn: MacFn = crypto.mac,
    forge_prob: float = 0.0,
    keep: int = 5,
) -> AgreementReport:
    """Drive the encrypting IF hybrid and a device in lockstep and compare.

    Both oracles share the intrinsic secret and start from clones of one rng,
    so honest scripts must produce identical results query by query.
    """
    report = AgreementReport(scripts, queries, seed)
    root = DeterministicRng.from_int(seed)
    codes = principal_codes(4)
    pool = [crypto.code_hash(c) for c in codes]
    for s in range(scripts):
        sub = root.substream(f"script-{s}")
        is_secret = fresh_secret(sub)
        rng = sub.substream("oracle")
        ideal = make_ideal(is_secret, rng.clone(), mac_fn=mac_fn, encrypt_values=True)
        dev = make_device(is_secret, rng.clone(), codes, mac_fn=mac_fn)
        script = QueryScript(seed=seed * 1_000_003 + s, length=queries, forge_prob=forge_prob)
        gen = _Generator(script, pool)
        for i in range(queries):
            c, p = gen.next()
            a = ideal.step(c, p)
            b = dev.step(c, p)
            if not results_agree(a, b):
                report.mismatches += 1
                if len(report.examples) < keep:
                    report.examples.append(Mismatch(s, i, type(c).__name__, _show(a), _show(b)))
            gen.feed(c, p, a)
    return report


# advantage games

GAMES = ("a-u", "p-u", "p-c", "imp")
_Z95 = NormalDist().inv_cdf(0.975)


def wilson_interval(successes: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def difference_interval(s1: int, n1: int, s0: int, n0: int) -> tuple[float, float]:
    """Interval for ``|p1 - p0|`` from the two Wilson intervals (Newcombe)."""
    p1, p0 = s1 / n1, s0 / n0
    l1, u1 = wilson_interval(s1, n1)
    l0, u0 = wilson_interval(s0, n0)
    d = p1 - p0
    lo = d - math.sqrt((p1 - l1) ** 2 + (u0 - p0) ** 2)
    hi = d + math.sqrt((u1 - p1) ** 2 + (p0 - l0) ** 2)
    if lo <= 0 <= hi:
        return 0.0, max(-lo, hi)
    return (lo, hi) if lo > 0 else (-hi, -lo)


class QueryBudgetExceeded(Exception):
    pass


class BudgetedOracle:
    """Records the history and halts the adversary after ``budget`` queries."""

    def __init__(self, inner: OracleAdapter, budget: int, log: Optional[BehaviorLog] = None):
        self.inner = inner
        self.budget = budget
        self.used = 0
        self.log = log if log is not None else BehaviorLog()

    def step(self, command: Command, principal: Principal) -> Result:
        if self.used >= self.budget:
            raise QueryBudgetExceeded(f"budget of {self.budget} queries spent")
        self.used += 1
        r = self.inner.step(command, principal)
        self.log.append(Event(command, principal, r))
        return r


def au_success(log: Iterable[Event]) -> bool:
    return any(v.item == 2 for v in audit_lemma1(log))


def pu_success(log: Iterable[Event]) -> bool:
    return any(v.item == 2 for v in audit_lemma2(log))


# built-in strategies; ``rnd`` is a random.Random owned by the trial

Strategy = Callable[..., object]


def random_tag_guesser(oracle, rnd, principals, attempts: int = 1):
    """Learn the tag length from one honest attest, then guess tags."""
    p = principals[0]
    tag = oracle.step(IAttest(b"warm-up"), p)
    n = len(tag) if isinstance(tag, bytes) else crypto.TAG_LEN
    for _ in range(attempts):
        v = rnd.randbytes(16)
        oracle.step(ICheck(principals[1], v, rnd.randbytes(n)), p)


def tag_replayer(oracle, rnd, principals):
    """Present a genuine tag under a different source."""
    v = rnd.randbytes(16)
    tag = oracle.step(IAttest(v), principals[0])
    if isinstance(tag, bytes):
        oracle.step(ICheck(principals[1], v, tag), principals[0])


def random_handle_forger(oracle, rnd, principals, attempts: int = 1):
    for _ in range(attempts):
        n = rnd.randint(0, 16) + crypto.AEAD_OVERHEAD
        oracle.step(IRetrieve(principals[0], rnd.randbytes(n)), principals[1])


def forge_check_distinguisher(oracle, rnd, principals, attempts: int = 16) -> int:
    """Say "device" when any unattested check comes back true."""
    n = crypto.TAG_LEN
    tag = oracle.step(IAttest(b"probe"), principals[0])
    if isinstance(tag, bytes):
        n = len(tag)
    for _ in range(attempts):
        if oracle.step(ICheck(principals[1], rnd.randbytes(16), rnd.randbytes(n)), principals[0]) is True:
            return 1
    return 0


def coin_distinguisher(oracle, rnd, principals) -> int:
    oracle.step(IAttest(b"probe"), principals[0])
    return rnd.randrange(2)


class PcAdversary(Protocol):
    def choose(self, oracle, rnd, principals) -> tuple[bytes, bytes, bytes, bytes, object]: ...

    def guess(self, oracle, rnd, alpha, eta: bytes) -> int: ...


class LegitRetriever:
    """Retrieves the challenge handle as the recipient, which disqualifies it."""

    def choose(self, oracle, rnd, principals):
        m0, m1 = b"\x00" * 16, b"\xff" * 16
        return m0, m1, principals[0], principals[1], (principals, m1)

    def guess(self, oracle, rnd, alpha, eta):
        principals, m1 = alpha
        v = oracle.step(IRetrieve(principals[0], eta), principals[1])
        return 1 if v == m1 else 0


class RandomGuesser:
    def choose(self, oracle, rnd, principals):
        m0, m1 = rnd.randbytes(16), rnd.randbytes(16)
        return m0, m1, principals[0], principals[1], None

    def guess(self, oracle, rnd, alpha, eta):
        return rnd.randrange(2)


class WrongRecipientProber:
    """Tries the challenge handle under every other principal."""

    def choose(self, oracle, rnd, principals):
        return b"\x00" * 16, b"\xff" * 16, principals[0], principals[1], principals

    def guess(self, oracle, rnd, alpha, eta):
        for p in alpha[2:]:
            if oracle.step(IRetrieve(alpha[0], eta), p) == b"\xff" * 16:
                return 1
        return 0


STRATEGIES: dict[str, dict[str, object]] = {
    "a-u": {"random-tag": random_tag_guesser, "replay": tag_replayer},
    "p-u": {"random-handle": random_handle_forger},
    "p-c": {
        "legit-retrieve": LegitRetriever(),
        "random-guess": RandomGuesser(),
        "wrong-recipient": WrongRecipientProber(),
    },
    "imp": {"forge-check": forge_check_distinguisher, "coin": coin_distinguisher},
}

DEFAULT_STRATEGY = {"a-u": "random-tag", "p-u": "random-handle", "p-c": "random-guess", "imp": "forge-check"}


@dataclass
class AdvantageEstimate:
    game: str
    strategy: str
    trials: int
    successes: int
    estimate: float
    ci_low: float
    ci_high: float
    seed: int
    disqualified: int = 0

    CSV_FIELDS = ("game", "trials", "successes", "estimate", "ci_low", "ci_high", "seed")

    def csv_row(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([getattr(self, k) for k in self.CSV_FIELDS])
        return buf.getvalue()

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS) + "\n"


def _trial_setup(root: DeterministicRng, t: int, n_principals: int):
    sub = root.substream(f"trial-{t}")
    codes = principal_codes(n_principals, salt=b"g")
    return sub, fresh_secret(sub), codes, [crypto.code_hash(c) for c in codes]


def estimate_advantage(
    game: str,
    adversary: str | Strategy | PcAdversary | None = None,
    trials: int = 1000,
    seed: int = 0,
    *,
    mac_fn: MacFn = crypto.mac,
    budget: int = 64,
    principals: int = 4,
) -> AdvantageEstimate:
    """Play ``game`` for ``trials`` independent trials against fresh devices.

    Each trial gets its own intrinsic secret and rng substream.  a-u and p-u
    count trials whose history contains a forgery (judged from the history,
    not the adversary's claim).  p-c and imp are two-world games: the estimate
    is ``|p0 - p1|`` over a uniformly chosen world bit.
    """
    if game not in GAMES:
        raise ValueError(f"unknown game {game!r}")
    if trials < 100:
        raise ValueError("at least 100 trials are required")
    if adversary is None:
        adversary = DEFAULT_STRATEGY[game]
    name = adversary if isinstance(adversary, str) else getattr(adversary, "__name__", type(adversary).__name__)
    if isinstance(adversary, str):
        try:
            adversary = STRATEGIES[game][adversary]
        except KeyError:
            raise ValueError(f"no strategy {adversary!r} for game {game}") from None

    root = DeterministicRng.from_int(seed)
    if game in ("a-u", "p-u"):
        wins = 0
        judge = au_success if game == "a-u" else pu_success
        for t in range(trials):
            sub, is_secret, codes, pool = _trial_setup(root, t, principals)
            oracle = BudgetedOracle(make_device(is_secret, sub.substream("dev"), codes, mac_fn=mac_fn), budget)
            try:
                adversary(oracle, sub.python_random(), pool)
            except QueryBudgetExceeded:
                pass
            wins += judge(oracle.log)
        lo, hi = wilson_interval(wins, trials)
        return AdvantageEstimate(game, name, trials, wins, wins / trials, lo, hi, seed)

    counts = [[0, 0], [0, 0]]  # counts[b] = [x == 1 qualified, trials in world b]
    disq = 0
    for t in range(trials):
        sub, is_secret, codes, pool = _trial_setup(root, t, principals)
        rnd = sub.python_random()
        b = rnd.randrange(2)
        x = 0
        if game == "imp":
            if b == 0:
                inner = make_ideal(is_secret, sub.substream("dev"), mac_fn=mac_fn)
            else:
                inner = make_device(is_secret, sub.substream("dev"), codes, mac_fn=mac_fn)
            oracle = BudgetedOracle(inner, budget)
            try:
                x = int(adversary(oracle, rnd, pool))
            except QueryBudgetExceeded:
                x = 0
        else:
            x, ok = _play_pc(adversary, b, is_secret, sub, codes, pool, rnd, mac_fn, budget)
            if not ok:
                disq += 1
                x = 0
        counts[b][1] += 1
        counts[b][0] += x == 1
    (s0, n0), (s1, n1) = counts
    if n0 == 0 or n1 == 0:
        est, lo, hi = 0.0, 0.0, 1.0
    else:
        est = abs(s1 / n1 - s0 / n0)
        lo, hi = difference_interval(s1, n1, s0, n0)
    return AdvantageEstimate(game, name, trials, s0 + s1, est, lo, hi, seed, disq)


def _play_pc(adversary, b, is_secret, sub, codes, pool, rnd, mac_fn, budget):
    """One confidentiality trial; returns (x, qualified)."""
    oracle = BudgetedOracle(make_device(is_secret, sub.substream("dev"), codes, mac_fn=mac_fn), budget)
    try:
        m0, m1, ps, pr, alpha = adversary.choose(oracle, rnd, pool)
    except QueryBudgetExceeded:
        return 0, False
    if len(m0) != len(m1):
        return 0, False
    # the challenge protect is made by the game, outside the adversary's budget
    eta = oracle.inner.step(IProtect(pr, (m0, m1)[b]), ps)
    if isinstance(eta, Failure):
        return 0, False
    mark = len(oracle.log)
    try:
        x = int(adversary.guess(oracle, rnd, alpha, eta))
    except QueryBudgetExceeded:
        x = 0
    for e in oracle.log[mark:]:
        c = e.command
        if type(c) is IRetrieve and c.source == ps and c.handle == eta and e.principal == pr:
            return x, False
    return x, True


def advantage_json(est: AdvantageEstimate) -> str:
    return json.dumps(asdict(est), sort_keys=True)
