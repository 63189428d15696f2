"""Scenario builders, attacks and the audits run over their event logs.

Every scenario returns a :class:`ScenarioResult` whose ``checks`` map
names to booleans.  Each check is phrased so that True is the expected
outcome, including the negative controls, where the expected outcome is
that the attack succeeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from caifsim import codec, crypto
from caifsim.codec import (
    AnchorRecord,
    CaCertificate,
    Confirmation,
    DelegationCertificate,
    DistributorRecord,
    ProofOfPossession,
    SignatureRequest,
    TargetKeyRecord,
    TargetSigned,
    TrustChain,
)
from caifsim.device import CaifDevice, SharedRecord
from caifsim.errors import CaifError, ConfigError, FuseAlreadyBlown
from caifsim.protocol.roles import (
    PROGRAMS,
    CertifyingAuthority,
    Codes,
    DeviceAuthority,
    compliant_attribution,
    verify_attribution,
)
from caifsim.protocol.world import WaitFor, World, log_kind, prot_kind

ROLE_SET = ("anchor", "distributor", "use-it", "arh", "svh", "client", "setup", "delegation", "target")
WILDCAT_OPS = ("wc-protect", "wc-retrieve", "wc-attest")
KINDS = ("anchor", "distribute", "table1", "delegate-generic", "delegate-anchored")
ATTACKS = (
    "replay-anchor",
    "wc-retrieve-anchor",
    "forge-confirm",
    "tamper-table1",
    "bad-signature",
    "pop-replay",
    "pop-in-clear",
    "impostor-distributor",
)
M0 = b"message from the target service"


@dataclass
class ScenarioResult:
    name: str
    kind: str
    world: World
    checks: dict[str, bool] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def digest(self) -> str:
        return self.world.trace_digest()

    @property
    def event_count(self) -> int:
        return len(self.world.events)


# audits


class SecrecyAudit:
    """Checks after every scheduler step that no audited secret is known.

    Only new knowledge items and newly registered secrets are scanned, so
    the cost per step is proportional to what changed.
    """

    def __init__(self, world: World):
        self.world = world
        self._seen_items = 0
        self._seen_secrets = 0
        self.violations: list[str] = []
        world.after_step.append(self)

    def __call__(self, world: World) -> None:
        adv = world.adversary
        adv.learn_shared()
        secrets = world.audited_secrets()
        items = adv.knowledge.order
        fresh_items = items[self._seen_items:]
        for name, s in secrets[:self._seen_secrets]:
            if any(s in it for it in fresh_items):
                self._flag(name)
        for name, s in secrets[self._seen_secrets:]:
            if any(s in it for it in items):
                self._flag(name)
        self._seen_items = len(items)
        self._seen_secrets = len(secrets)

    def _flag(self, name: str) -> None:
        if name not in self.violations:
            self.violations.append(name)
            self.world.log("audit", "secret-exposed", name=name)

    @property
    def ok(self) -> bool:
        self(self.world)
        return not self.violations


def chain_honesty(world: World) -> list[str]:
    """Every accepted chain must match the logged sequence of protecting services."""
    protects = {(e.data["imid"], e.data["rid"]): e for e in world.events if e.action == "protect"}
    problems = []
    for acc in world.find("", "chain-accept"):
        if acc.data["by"] not in world.compliant:
            continue
        key, chain, head = (acc.data["imid"], acc.data["rid"]), acc.data["chain"], acc.data["by"]
        while True:
            p = protects.get(key)
            if p is None:
                problems.append(f"seq {acc.seq}: record {key[1]} has no logged protect")
                break
            if chain[0] != head or p.data["recipient"] != head:
                problems.append(f"seq {acc.seq}: chain head is not the recipient")
                break
            if len(chain) < 2 or chain[1] != p.data["source"]:
                problems.append(f"seq {acc.seq}: chain source differs from the protecting service")
                break
            if p.data["input_rid"] is None:
                break
            key, chain, head = (key[0], p.data["input_rid"]), TrustChain(chain.hashes[1:]), p.data["source"]
    return problems


def fuse_safety(world: World) -> bool:
    done = [e.data["imid"] for e in world.find("", "anchor-complete")]
    return len(done) == len(set(done))


def ordered(world: World, seqs: Iterable[Optional[int]]) -> bool:
    seqs = list(seqs)
    if any(s is None for s in seqs):
        return False
    g = world.graph()
    return all(world.happens_before(a, b, g) for a, b in zip(seqs, seqs[1:]))


def first(world: World, actor_prefix: str = "", action: str = "", **data) -> Optional[int]:
    hits = world.find(actor_prefix, action, **data)
    return hits[0].seq if hits else None


def peek_record(dev: CaifDevice, source: bytes, recipient: bytes, blob: bytes, expected: type):
    """Audit-only decryption of an escrow record with the device secret."""
    key = crypto.kdf(crypto.LABEL_PROTECT, dev.secret_for_audit(), [source, recipient])
    return codec.decode(crypto.aead_decrypt(key, blob), expected)


# deployment


class Deployment:
    """One world with a DA, a CA, role codes and a compliant set."""

    def __init__(self, seed: int, *, compliant: Optional[Iterable[str]] = None, generic: bool = False,
                 adversary: str | Iterable[str] = "passive", devices: int = 1):
        self.world = World(seed)
        self.generic = generic
        self.da = DeviceAuthority(self.world)
        self.ca = CertifyingAuthority(self.world, self.world.rng.substream("ca"))
        self.codes = Codes(self.ca.vk)
        names = ROLE_SET if compliant is None else tuple(compliant)
        for n in names:
            if n not in ROLE_SET:
                raise ConfigError(f"unknown role {n!r}")
        self.compliant_roles = frozenset(names)
        self.world.compliant = {self.h(n) for n in names}
        if isinstance(adversary, str):
            if adversary not in ("passive", "active"):
                raise ConfigError(f"unknown adversary policy {adversary!r}")
            self.wildcat: frozenset[str] = frozenset()
            self.active = adversary == "active"
        else:
            ops = tuple(adversary)
            for op in ops:
                if op not in WILDCAT_OPS:
                    raise ConfigError(f"unknown wildcat op {op!r}")
            self.wildcat = frozenset(ops)
            self.active = True
        self.devices = [self.world.add_device(f"d{i}") for i in range(devices)]
        self.audit = SecrecyAudit(self.world)

    def role_code(self, role: str) -> bytes:
        if self.generic and role in ("setup", "delegation", "target"):
            return self.codes[f"{role}-generic"]
        return self.codes[role]

    def h(self, role: str) -> bytes:
        return crypto.code_hash(self.role_code(role))

    def start(self, dev: CaifDevice, role: str, *args):
        key = f"{role}-generic" if self.generic and role in ("setup", "delegation", "target") else role
        return self.world.spawn_service(dev, self.role_code(role), self.name(role, dev), PROGRAMS[key], *args)

    @staticmethod
    def name(role: str, dev: CaifDevice) -> str:
        return f"{role}@{dev.imid.decode()}"

    def adversary(self, gen) -> None:
        self.world.spawn("adversary", gen, adversarial=True)

    # common flows

    def anchor(self, dev: CaifDevice, dh_role: str = "distributor") -> str:
        self.start(dev, "anchor")
        me = f"DA/anchor@{dev.imid.decode()}"
        self.world.spawn(me, self.da.send_anchor(me, dev.imid, self.h("anchor"), self.h(dh_role),
                                                 self.name("anchor", dev)))
        return me

    def distribute(self, dev: CaifDevice, tgt_role: str, payld: bytes, *, await_confirm: bool) -> str:
        self.start(dev, "distributor", self.h("anchor"))
        me = f"DA/distribute:{tgt_role}@{dev.imid.decode()}"
        self.world.spawn(me, self.da.distribute(me, dev.imid, self.h("distributor"), self.h("anchor"),
                                                self.h(tgt_role), payld, self.name("distributor", dev),
                                                await_confirm=await_confirm))
        return me

    def standard_checks(self) -> dict[str, bool]:
        return {
            "secrecy-audit": self.audit.ok,
            "chain-honesty": not chain_honesty(self.world),
            "fuse-safety": fuse_safety(self.world),
        }

    def published(self, cls: type) -> list[bytes]:
        return [p for _, p in self.world.published if codec.peek_kind(p) is cls]


def _wc_code(label: str) -> bytes:
    return b"caifsim:wildcat:" + label.encode()


# scenario kinds


def run_anchor(seed: int, **kw) -> ScenarioResult:
    dep = Deployment(seed, **kw)
    w = dep.world
    for dev in dep.devices:
        dep.anchor(dev)
    w.run()
    res = ScenarioResult("anchor", "anchor", w)
    anch, dh = dep.h("anchor"), dep.h("distributor")
    agree, unique, by_dh = True, True, True
    for dev in dep.devices:
        recs = dev.shared_of_kind(prot_kind(dh))
        unique &= len(recs) == 1 and len(dev.shared) == 1
        if not recs or dev.imid not in dep.da.k_s:
            agree = by_dh = False
            continue
        rec = peek_record(dev, anch, dh, recs[0].blob, AnchorRecord)
        agree &= rec.k_s == dep.da.k_s[dev.imid] == dep.da.derive_k_s(dev.imid)
        by_dh &= rec.chain == TrustChain.of(dh, anch) and rec.imid == dev.imid
    dev = dep.devices[0]
    probes = _probe_anchor_record(dep, dev)
    second = _second_anchor_refused(dep, dev)
    res.checks.update({
        "da-device-k_s-agree": agree,
        "single-anchor-record": unique,
        "record-names-dh": by_dh,
        "retrieval-by-other-hashes-fails": probes,
        "second-anchoring-refused": second,
        "k_s-never-known": not any(w.adversary.knows(k) for k in dep.da.k_s.values()),
        "anchor-order": ordered(w, [
            dep.da.seed_event,
            first(w, "DA/anchor", "send"),
            first(w, "anchor@", "recv"),
            first(w, "anchor@", "protect"),
        ]) and ordered(w, [first(w, "world", "init-imid"), first(w, "anchor@", "protect")]),
    })
    if len(dep.devices) > 1:
        res.checks["distinct-k_s-per-device"] = len(set(dep.da.k_s.values())) == len(dep.devices)
    res.checks.update(dep.standard_checks())
    return res


def _probe_anchor_record(dep: Deployment, dev: CaifDevice, n: int = 3) -> bool:
    """Wildcat services under non-compliant hashes cannot open the anchor record."""
    recs = dev.shared_of_kind(prot_kind(dep.h("distributor")))
    if not recs:
        return False
    failures = 0
    for i in range(n):
        try:
            dep.world.adversary.wc_retrieve(dev, _wc_code(f"probe-{i}"), dep.h("anchor"), recs[-1].blob)
        except CaifError:
            failures += 1
    return failures == n


def _second_anchor_refused(dep: Deployment, dev: CaifDevice) -> bool:
    try:
        dep.world.spawn_service(dev, dep.role_code("anchor"), "anchor-again", PROGRAMS["anchor"])
    except FuseAlreadyBlown:
        return True
    return False


def run_distribute(seed: int, *, forge: int = 0, **kw) -> ScenarioResult:
    dep = Deployment(seed, **kw)
    w, dev = dep.world, dep.devices[0]
    dep.anchor(dev)
    payld = b"distribution payload"
    da_actor = dep.distribute(dev, "use-it", payld, await_confirm=True)
    dep.start(dev, "use-it", dep.h("distributor"), da_actor)
    tgth = dep.h("use-it")
    negative = "use-it" not in dep.compliant_roles and "wc-retrieve" in dep.wildcat
    stolen: list[bytes] = []
    if negative:
        dep.adversary(_steal_target_key(dep, dev, "use-it", dep.h("distributor"), DistributorRecord, stolen))
    if forge:
        dep.adversary(_forge_confirmations(dep, dev, da_actor, tgth, payld, forge))
    w.run()
    name = "attack:forge-confirm" if forge else "distribute"
    res = ScenarioResult(name, name, w)
    k_da = dep.da.service_key(dev.imid, tgth) if dev.imid in dep.da.k_s else None
    recs = dev.shared_of_kind(prot_kind(tgth))
    k_rec = peek_record(dev, dep.h("distributor"), tgth, recs[0].blob, DistributorRecord).k if recs else None
    res.checks.update({
        "confirmation-accepted": len(dep.da.accepted) == 1,
        "da-device-k-agree": k_da is not None and k_da == k_rec,
        "distribute-order": ordered(w, [
            first(w, "DA/anchor", "anchored"),
            first(w, "DA/distribute", "send"),
            first(w, "distributor@", "request"),
            first(w, "distributor@", "protect"),
            first(w, "use-it@", "chain-accept"),
            first(w, "DA/distribute", "confirm-accepted"),
        ]),
    })
    if forge:
        res.checks["forgeries-rejected"] = dep.da.rejected == forge
        res.info["forgeries"] = forge
    if negative:
        res.checks["key-exposed-via-wc-retrieve"] = bool(stolen) and stolen[0] == k_da and w.adversary.knows(k_da)
    res.checks.update(dep.standard_checks())
    return res


def _steal_target_key(dep: Deployment, dev: CaifDevice, role: str, source: bytes, expected: type, out: list):
    """Wildcat retrieve under the target's own (non-compliant) hash."""
    kind = prot_kind(dep.h(role))
    yield WaitFor(lambda: dev.shared_of_kind(kind))
    blob = dev.shared_of_kind(kind)[-1].blob
    plain = dep.world.adversary.wc_retrieve(dev, dep.role_code(role), source, blob)
    rec = codec.decode(plain, expected)
    out.append(rec.k if isinstance(rec, DistributorRecord) else rec.sk)


def _forge_confirmations(dep: Deployment, dev: CaifDevice, da_actor: str, tgth: bytes, payld: bytes, n: int):
    """Hold the genuine confirmation, inject ``n`` forgeries, then release it."""
    w, adv = dep.world, dep.world.adversary
    adv.hold = lambda m: codec.peek_kind(m.payload) is Confirmation
    yield WaitFor(lambda: bool(w.held))
    for i in range(n):
        guess = adv.rng.read(crypto.KEY_LEN)
        if i % 2:
            tag = guess  # random tag
        else:
            tag = crypto.mac(guess, codec.encode(codec.ConfirmBody(dev.imid, tgth, payld)))  # wrong key
        w.inject(da_actor, codec.encode(Confirmation(dev.imid, tgth, payld, tag)))
    yield WaitFor(lambda: dep.da.rejected >= n)
    adv.hold = None
    adv.forward_all()


def run_table1(seed: int, *, variant: str = "valid", **kw) -> ScenarioResult:
    dep = Deployment(seed, **kw)
    w, dev = dep.world, dep.devices[0]
    dep.anchor(dev)
    dep.distribute(dev, "arh", b"", await_confirm=False)
    signer = crypto.SigningKeyPair.generate(w.rng.substream("signer"))
    me = f"DA/authorize@{dev.imid.decode()}"
    w.spawn(me, dep.da.authorize_verifier(me, dev.imid, dep.h("arh"), dep.h("svh"), signer.verifying,
                                          dep.name("arh", dev)))
    dep.start(dev, "svh", dep.h("arh"))
    dep.start(dev, "arh", dep.h("distributor"))
    client = dep.start(dev, "client", dep.h("arh"), dep.name("svh", dev))
    m = b"firmware manifest v2"
    if variant == "valid":
        w.spawn("signer", _send_request(w, dep.name("client", dev), m, crypto.sign(signer, m)))
    elif variant == "bad-signature":
        rogue = crypto.SigningKeyPair.generate(w.adversary.rng)
        w.inject(dep.name("client", dev), codec.encode(SignatureRequest(m, crypto.sign(rogue, m))))
    elif variant == "tamper":
        dep.adversary(_tamper_verifier_record(dep, dev))
        w.spawn("signer", _send_request(w, dep.name("client", dev), m, crypto.sign(signer, m)))
    else:
        raise ConfigError(f"unknown table1 variant {variant!r}")
    w.run()
    names = {"valid": "table1", "bad-signature": "attack:bad-signature", "tamper": "attack:tamper-table1"}
    res = ScenarioResult(names[variant], names[variant], w)
    svh = w.actor(dep.name("svh", dev))
    confirms = dev.shared_of_kind(log_kind("confirm"))
    if variant == "valid":
        res.checks["client-accepts"] = client.result == "accept"
        res.checks["verdict-yes-logged"] = len(confirms) == 1
    elif variant == "bad-signature":
        res.checks["client-rejects"] = client.result == "reject"
        res.checks["verdict-no-logged"] = len(confirms) == 1
    else:
        res.checks["svh-aborts-on-check"] = svh.aborted == "CheckFailed"
        res.checks["no-confirmation-issued"] = not confirms
        res.checks["client-never-accepts"] = client.result != "accept" and not w.find("client@", "accept")
    res.checks.update(dep.standard_checks())
    return res


def _send_request(w: World, client: str, m: bytes, sigma: bytes):
    w.send("signer", client, codec.encode(SignatureRequest(m, sigma)))
    return
    yield


def _tamper_verifier_record(dep: Deployment, dev: CaifDevice):
    """Swap the logged verification key for the adversary's own, keeping the tag."""
    kind = log_kind("ver")
    yield WaitFor(lambda: dev.shared_of_kind(kind))
    rec = dev.shared_of_kind(kind)[-1]
    entry = codec.decode(rec.blob, codec.Logged)
    rogue = crypto.SigningKeyPair.generate(dep.world.adversary.rng)
    fake = codec.encode(codec.verifier_record(dep.h("svh"), rogue.verifying))
    dev.shared[rec.rid] = SharedRecord(rec.rid, rec.kind, codec.encode(codec.Logged(fake, entry.tag)))
    dep.world.log("adversary", "tamper", rid=rec.rid, kind=kind)


def run_delegation(seed: int, *, generic: bool, attack: Optional[str] = None, **kw) -> ScenarioResult:
    dep = Deployment(seed, generic=generic, **kw)
    w, dev = dep.world, dep.devices[0]
    suh, dsh, sh = dep.h("setup"), dep.h("delegation"), dep.h("target")
    ca_actor = dep.ca.name
    if generic:
        req = dep.ca.request(dev.imid, dsh, suh, TrustChain(), src=dep.name("setup", dev))
        w.spawn(ca_actor, dep.ca.serve([(dep.name("setup", dev), req)]))
        dep.start(dev, "setup", dep.ca.vk, ca_actor)
    else:
        dep.anchor(dev)
        skdh = dep.h("distributor")
        if attack == "impostor-distributor":
            dep.adversary(_impostor_distributor(dep, dev))
            skdh = crypto.code_hash(_wc_code("impostor"))
            w.spawn(ca_actor, dep.ca.serve())
        else:
            w.spawn("CA/provision", _provision_then_request(dep, dev))
            w.spawn(ca_actor, dep.ca.serve())
        dep.start(dev, "setup", dep.ca.vk, skdh, ca_actor)
    dep.start(dev, "delegation", suh, sh)
    dep.start(dev, "target", dsh, M0)
    negative = "target" not in dep.compliant_roles and "wc-retrieve" in dep.wildcat
    stolen: list[bytes] = []
    if negative:
        dep.adversary(_steal_target_key(dep, dev, "target", dsh, TargetKeyRecord, stolen))
    replayed: list[bytes] = []
    if attack == "pop-replay":
        dep.adversary(_replay_pop(dep, replayed))
    if attack == "pop-in-clear":
        dep.adversary(_clear_pop(dep, dev))
    w.run()

    name = f"attack:{attack}" if attack else ("delegate-generic" if generic else "delegate-anchored")
    res = ScenarioResult(name, name, w)
    m1s, m2s, m3s = (dep.published(c) for c in (CaCertificate, DelegationCertificate, TargetSigned))
    att = verify_attribution(dep.ca.vk, m1s[0], m2s[0], m3s[0]) if m1s and m2s and m3s else None
    res.info["attribution"] = att
    res.info["ca_vk"] = dep.ca.vk

    if attack == "impostor-distributor":
        res.checks["setup-aborts-chain-mismatch"] = w.actor(dep.name("setup", dev)).aborted == "ChainMismatch"
        res.checks["no-certificate-issued"] = not dep.ca.issued
        res.checks.update(dep.standard_checks())
        return res

    res.checks["ca-issued-exactly-one"] = len(dep.ca.issued) == 1
    res.checks["attribution-verifies"] = bool(att and att.ok and att.imid == dev.imid and att.sh == sh
                                              and att.m0 == M0)
    if generic:
        res.checks["generic-delegation-order"] = ordered(w, [
            first(w, "CA", "certify-request"),
            first(w, "setup@", "recv"),
            first(w, "setup@", "send"),
            first(w, "CA", "issue"),
            first(w, "setup@", "protect"),
            first(w, "delegation@", "publish"),
            first(w, "target@", "sign"),
        ])
        res.checks["pop-on-authenticated-channel"] = any(
            e.data.get("kind") == "ProofOfPossession" and e.data.get("channel") == "authenticated"
            for e in w.find("setup@", "send"))
    else:
        res.checks["anchored-delegation-order"] = ordered(w, [
            first(w, "DA/anchor", "send"),
            first(w, "distributor@", "protect"),
            first(w, "setup@", "chain-accept"),
            first(w, "CA", "issue"),
            first(w, "setup@", "protect"),
            first(w, "delegation@", "publish"),
            first(w, "target@", "sign"),
        ])
        res.checks["pop-encrypted"] = (
            [e.data.get("kind") for e in w.find("setup@", "send")] == ["SealedMessage"]
            and not any(_decodes_as(x, ProofOfPossession) for x in w.adversary.knowledge.order)
        )
    if negative:
        forged = _forge_with_stolen(dep, stolen)
        res.checks["sk-exposed"] = bool(stolen) and w.adversary.knows(stolen[0])
        res.checks["adversary-signature-attributed"] = forged is not None and forged.ok
        res.checks["attribution-not-guaranteed"] = forged is not None and not compliant_attribution(forged, w.compliant)
    else:
        res.checks["attribution-compliant-chain"] = bool(att) and compliant_attribution(att, w.compliant)
    if attack == "pop-replay":
        res.checks["replayed-pop-refused"] = bool(replayed) and dep.ca.refusals == ["SerialReuse"]
    if attack == "pop-in-clear":
        res.checks["clear-pop-refused"] = dep.ca.refusals == ["AuthFailure"]
    res.checks.update(dep.standard_checks())
    return res


def _decodes_as(b: bytes, cls: type) -> bool:
    if codec.peek_kind(b) is not cls:
        return False
    try:
        codec.decode(b, cls)
    except CaifError:
        return False
    return True


def _provision_then_request(dep: Deployment, dev: CaifDevice):
    """DA provisions k_sud to the CA; the CA's request travels as the distributor payload."""
    yield WaitFor(lambda: dev.imid in dep.da.k_s)
    suh = dep.h("setup")
    k_sud = dep.ca.provision(dep.da, dev.imid, suh)
    trch1 = TrustChain.of(suh, dep.h("distributor"), dep.h("anchor"))
    req = dep.ca.request(dev.imid, dep.h("delegation"), suh, trch1, key=k_sud)
    me = f"DA/distribute:setup@{dev.imid.decode()}"
    dep.start(dev, "distributor", dep.h("anchor"))
    dep.world.spawn(me, dep.da.distribute(me, dev.imid, dep.h("distributor"), dep.h("anchor"), suh,
                                          codec.encode(req), dep.name("distributor", dev), await_confirm=False))


def _forge_with_stolen(dep: Deployment, stolen: list[bytes]):
    if not stolen:
        return None
    m1, m2 = dep.published(CaCertificate)[0], dep.published(DelegationCertificate)[0]
    forged = dep.world.adversary.sign(stolen[0], b"adversary chosen message")
    m3 = codec.encode(TargetSigned(forged))
    dep.world.publish("adversary", m3)
    return verify_attribution(dep.ca.vk, m1, m2, m3)


def _replay_pop(dep: Deployment, out: list):
    w = dep.world
    yield WaitFor(lambda: any(m.src.startswith("setup@") for m in w.pending))
    out.extend(m.payload for m in w.pending if m.src.startswith("setup@"))
    yield WaitFor(lambda: bool(dep.ca.issued))
    w.inject(dep.ca.name, out[0], src="setup")


def _clear_pop(dep: Deployment, dev: CaifDevice):
    """A proof of possession for the adversary's own key, sent unsealed."""
    w = dep.world
    yield WaitFor(lambda: any(p.key is not None for p in dep.ca.requests.values()))
    rogue = crypto.SigningKeyPair.generate(w.adversary.rng)
    guess = codec.PopBody(w.adversary.rng.read(16), dev.imid, dep.h("delegation"), dep.h("setup"),
                          TrustChain.of(dep.h("setup"), dep.h("distributor"), dep.h("anchor")), rogue.verifying)
    w.inject(dep.ca.name, codec.encode(ProofOfPossession.issue(guess, rogue)), src="setup")


def _impostor_distributor(dep: Deployment, dev: CaifDevice):
    """A wildcat service escrows a forged distributor record to the set-up service."""
    w = dep.world
    yield WaitFor(lambda: dev.imid in dep.da.k_s)
    code = _wc_code("impostor")
    suh = dep.h("setup")
    claimed = TrustChain.of(suh, dep.h("distributor"), dep.h("anchor"))
    req = codec.CertifyRequest(dev.imid, dep.h("delegation"), suh, claimed, w.adversary.rng.read(16), b"CA")
    key = w.adversary.rng.read(crypto.KEY_LEN)
    rec = DistributorRecord(dev.imid, TrustChain.of(suh, crypto.code_hash(code)), codec.encode(req), key)
    w.adversary.wc_protect(dev, code, suh, codec.encode(rec))


# attacks on anchoring


def run_replay_anchor(seed: int, **kw) -> ScenarioResult:
    dep = Deployment(seed, **kw)
    w, dev = dep.world, dep.devices[0]
    dep.anchor(dev)
    outcome: list[str] = []

    def replay():
        yield WaitFor(lambda: bool(w.find("anchor@", "anchor-complete")))
        try:
            w.spawn_service(dev, dep.role_code("anchor"), "anchor-replay", PROGRAMS["anchor"])
            outcome.append("started")
        except FuseAlreadyBlown:
            outcome.append("refused")

    dep.adversary(replay())
    w.run()
    res = ScenarioResult("attack:replay-anchor", "attack:replay-anchor", w)
    k_s = dep.da.k_s.get(dev.imid)
    res.checks.update({
        "second-anchoring-refused": outcome == ["refused"],
        "metal-room-invisible": not any(_decodes_as(x, codec.AnchorMessage) for x in w.adversary.knowledge.order),
        "k_s-never-known": k_s is not None and not w.adversary.knows(k_s),
    })
    res.checks.update(dep.standard_checks())
    return res


def run_wc_retrieve_anchor(seed: int, **kw) -> ScenarioResult:
    dep = Deployment(seed, **kw)
    w, dev = dep.world, dep.devices[0]
    dep.anchor(dev)
    outcomes: list[str] = []

    def attack():
        kind = prot_kind(dep.h("distributor"))
        yield WaitFor(lambda: dev.shared_of_kind(kind))
        blob = dev.shared_of_kind(kind)[-1].blob
        for code in (_wc_code("thief"), dep.role_code("anchor"), dep.role_code("distributor")):
            try:
                w.adversary.wc_retrieve(dev, code, dep.h("anchor"), blob)
                outcomes.append("ok")
            except CaifError as exc:
                outcomes.append(type(exc).__name__)

    dep.adversary(attack())
    w.run()
    res = ScenarioResult("attack:wc-retrieve-anchor", "attack:wc-retrieve-anchor", w)
    k_s = dep.da.k_s.get(dev.imid)
    res.checks.update({
        "wc-retrieve-auth-failure": outcomes[:1] == ["AuthFailure"],
        "compliant-wildcat-refused": outcomes[1:] == ["CompliantHashRefused"] * 2,
        "k_s-never-known": k_s is not None and not w.adversary.knows(k_s),
    })
    res.checks.update(dep.standard_checks())
    return res


# dispatch


def run_kind(kind: str, seed: int, **kw) -> ScenarioResult:
    if kind == "anchor":
        return run_anchor(seed, **kw)
    if kind == "distribute":
        return run_distribute(seed, **kw)
    if kind == "table1":
        return run_table1(seed, **kw)
    if kind == "delegate-generic":
        return run_delegation(seed, generic=True, **kw)
    if kind == "delegate-anchored":
        return run_delegation(seed, generic=False, **kw)
    if not kind.startswith("attack:"):
        raise ConfigError(f"unknown scenario kind {kind!r}")
    attack = kind.split(":", 1)[1]
    kw.setdefault("adversary", "active")
    table: dict[str, Callable[..., ScenarioResult]] = {
        "replay-anchor": run_replay_anchor,
        "wc-retrieve-anchor": run_wc_retrieve_anchor,
        "forge-confirm": lambda s, **k: run_distribute(s, forge=1000, **k),
        "tamper-table1": lambda s, **k: run_table1(s, variant="tamper", **k),
        "bad-signature": lambda s, **k: run_table1(s, variant="bad-signature", **k),
        "pop-replay": lambda s, **k: run_delegation(s, generic=False, attack="pop-replay", **k),
        "pop-in-clear": lambda s, **k: run_delegation(s, generic=False, attack="pop-in-clear", **k),
        "impostor-distributor": lambda s, **k: run_delegation(s, generic=False, attack="impostor-distributor", **k),
    }
    if attack not in table:
        raise ConfigError(f"unknown attack {attack!r}")
    return table[attack](seed, **kw)
