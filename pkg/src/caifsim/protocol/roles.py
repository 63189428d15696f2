"""Role programs and the off-device parties (DA, CA, observer).

A device role is a generator function ``program(ctx, *args)``.  Its code
bytes are fixed at build time (see :class:`Codes`), so the constants a
role trusts are part of its hash.  Arguments passed at start time are
untrusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from caifsim import codec, crypto
from caifsim.codec import (
    AnchorMessage,
    AnchorRecord,
    AnchorReply,
    AuthorizedKey,
    CaCertificate,
    CertBody,
    CertifyRequest,
    ClientRecord,
    Confirmation,
    ConfirmBody,
    ConfirmRecord,
    DelegationBody,
    DelegationCertificate,
    DistributionRequest,
    DistributorRecord,
    PopBody,
    ProofOfPossession,
    SealedMessage,
    SetupKeyRecord,
    SignatureRequest,
    TargetKeyRecord,
    TargetSigned,
    TrustChain,
    VerifierAuthorization,
    VerifierRecord,
)
from caifsim.crypto import DeterministicRng, SigningKeyPair
from caifsim.errors import (
    AuthFailure,
    BadCertificate,
    CaifError,
    ChainMismatch,
    CheckFailed,
    FieldMismatch,
    MalformedSignedMessage,
    NoConfirm,
    SerialReuse,
    WrongDevice,
)
from caifsim.protocol.world import ChannelKind, Ctx, Recv, WaitFor, World, log_kind, prot_kind

ANCHOR_ROLE = "caifsim_anchor_role"

METAL = ChannelKind.METAL_ROOM
AUTH = ChannelKind.AUTHENTICATED


def of_kind(cls: type, channel: Optional[ChannelKind] = None, src: Optional[str] = None):
    def match(m) -> bool:
        if codec.peek_kind(m.payload) is not cls:
            return False
        if channel is not None and m.channel is not channel:
            return False
        return src is None or m.src == src

    return match


def wait_record(ctx: Ctx, kind: str, after: int = 0):
    yield WaitFor(lambda: len(ctx.dev.shared_of_kind(kind)) > after)


# role code

ROLE_NAMES = (
    "anchor", "distributor", "use-it", "arh", "svh", "client",
    "setup", "setup-generic", "delegation", "target",
)


@dataclass
class Codes:
    """Code bytes for every role; each embeds the hashes it trusts."""

    ca_vk: bytes
    code: dict[str, bytes] = field(default_factory=dict)

    def __post_init__(self):
        c = self.code
        c["anchor"] = b"caifsim:anchor"
        anch = crypto.code_hash(c["anchor"])
        c["distributor"] = b"caifsim:distributor:" + anch
        skdh = crypto.code_hash(c["distributor"])
        c["use-it"] = b"caifsim:use-it:" + skdh
        c["arh"] = b"caifsim:arh:" + skdh
        arh = crypto.code_hash(c["arh"])
        c["svh"] = b"caifsim:svh:" + arh
        c["client"] = b"caifsim:client:" + arh
        c["setup"] = b"caifsim:setup:" + self.ca_vk
        c["setup-generic"] = b"caifsim:setup-generic:" + self.ca_vk
        suh = crypto.code_hash(c["setup"])
        c["delegation"] = b"caifsim:delegation:" + suh
        c["delegation-generic"] = b"caifsim:delegation:" + crypto.code_hash(c["setup-generic"])
        c["target"] = b"caifsim:target:" + crypto.code_hash(c["delegation"])
        c["target-generic"] = b"caifsim:target:" + crypto.code_hash(c["delegation-generic"])

    def __getitem__(self, role: str) -> bytes:
        return self.code[role]

    def h(self, role: str) -> bytes:
        return crypto.code_hash(self.code[role])

    def hashes(self, roles) -> set[bytes]:
        return {self.h(r) for r in roles}


# anchoring


def anchor_role(ctx: Ctx):
    msg = yield Recv(of_kind(AnchorMessage, METAL))
    am = codec.decode(msg.payload, AnchorMessage)
    if am.imid != ctx.imid:
        raise WrongDevice("anchor message names another device")
    if am.anch != ctx.hash:
        raise WrongDevice("anchor message names another anchor hash")
    k_s = crypto.kdf(crypto.LABEL_ANCHOR_SECRET, am.r, [am.imid])
    ctx.dev.heap_write(k_s)
    ctx.secret("k_s", k_s, [ctx.hash, am.dh])
    ctx.send(msg.src, codec.encode(AnchorReply(am.n)), METAL)
    ctx.protect(am.dh, AnchorRecord(k_s, ctx.imid, TrustChain.of(am.dh, ctx.hash)))
    ctx.dev.blow_anchor_fuse()
    ctx.log("anchor-complete", imid=ctx.imid)


setattr(anchor_role, ANCHOR_ROLE, True)


def distributor_role(ctx: Ctx, anch: bytes):
    yield from wait_record(ctx, prot_kind(ctx.hash))
    rec = ctx.retrieve(anch, AnchorRecord)
    ctx.expect_imid(rec.imid)
    ctx.expect_chain(rec.chain, anch)
    msg = yield Recv(of_kind(SealedMessage))
    sealed = codec.decode(msg.payload, SealedMessage)
    try:
        req = codec.decode(crypto.aead_decrypt(rec.k_s, sealed.ct), DistributionRequest)
    except AuthFailure:
        ctx.log("request-rejected", reason="AuthFailure")
        raise
    ctx.log("request", tgth=req.tgth)
    if req.trch != rec.chain:
        raise ChainMismatch("request chain differs from the anchor record chain")
    k = crypto.kdf(crypto.LABEL_SERVICE_KEY, rec.k_s, [req.tgth])
    ctx.secret("k", k, [ctx.hash, req.tgth])
    ctx.protect(req.tgth, DistributorRecord(ctx.imid, codec.chain_push(rec.chain, req.tgth), req.payld, k))


def use_it_role(ctx: Ctx, skdh: bytes, da: str):
    yield from wait_record(ctx, prot_kind(ctx.hash))
    rec = ctx.retrieve(skdh, DistributorRecord)
    ctx.expect_imid(rec.imid)
    ctx.expect_chain(rec.chain, skdh)
    body = ConfirmBody(ctx.imid, ctx.hash, rec.payld)
    tag = crypto.mac(rec.k, codec.encode(body))
    ctx.send(da, codec.encode(Confirmation(ctx.imid, ctx.hash, rec.payld, tag)))


# reprogrammable signature verification


def arh_role(ctx: Ctx, skdh: bytes):
    yield from wait_record(ctx, prot_kind(ctx.hash))
    rec = ctx.retrieve(skdh, DistributorRecord)
    ctx.expect_imid(rec.imid)
    ctx.expect_chain(rec.chain, skdh)
    msg = yield Recv(of_kind(VerifierAuthorization))
    va = codec.decode(msg.payload, VerifierAuthorization)
    expected = crypto.mac(rec.k, codec.encode(AuthorizedKey(va.svh, va.vk)))
    if not crypto.tags_equal(expected, va.tag):
        raise CheckFailed("verifier authorization MAC does not verify")
    ctx.attest_store(codec.verifier_record(va.svh, va.vk), log_kind("ver"))
    ctx.attest_store(codec.client_record(va.svh), log_kind("cli"))


def _sig_ok(vk: bytes, m: bytes, sigma: bytes) -> bool:
    try:
        ok, signed = crypto.verify(vk, sigma)
    except MalformedSignedMessage:
        return False
    return ok and signed == m


def svh_role(ctx: Ctx, arh: bytes):
    yield from wait_record(ctx, log_kind("ver"))
    ver = ctx.read_logged(log_kind("ver"), arh, VerifierRecord)
    if ver.svh != ctx.hash:
        raise FieldMismatch("verifier record names another verifier")
    while True:
        msg = yield Recv(of_kind(SignatureRequest))
        req = codec.decode(msg.payload, SignatureRequest)
        verdict = b"yes" if _sig_ok(ver.vk, req.m, req.sigma) else b"no"
        ctx.attest_store(ConfirmRecord(verdict, req.m, req.sigma), log_kind("confirm"))


def client_role(ctx: Ctx, arh: bytes, svh_actor: str):
    msg = yield Recv(of_kind(SignatureRequest))
    req = codec.decode(msg.payload, SignatureRequest)
    yield from wait_record(ctx, log_kind("cli"))
    cli = ctx.read_logged(log_kind("cli"), arh, ClientRecord)
    before = len(ctx.dev.shared_of_kind(log_kind("confirm")))
    ctx.send(svh_actor, msg.payload)
    yield from wait_record(ctx, log_kind("confirm"), before)
    _, blob = ctx.latest(log_kind("confirm"))
    entry = codec.decode(blob, codec.Logged)
    for verdict, outcome in ((b"yes", "accept"), (b"no", "reject")):
        v = codec.encode(ConfirmRecord(verdict, req.m, req.sigma))
        if ctx.dev.ckattest(cli.svh, v, entry.tag):
            ctx.log(outcome, m=req.m)
            return outcome
    raise CheckFailed("confirmation does not check as logged by the verifier")


# delegation


def setup_role(ctx: Ctx, ca_vk: bytes, skdh: bytes, ca: str):
    """Anchored set-up.  ``skdh`` is a start argument and is not trusted."""
    yield from wait_record(ctx, prot_kind(ctx.hash))
    rec = ctx.retrieve(skdh, DistributorRecord)
    ctx.expect_imid(rec.imid)
    ctx.expect_chain(rec.chain, skdh)
    req = codec.decode(rec.payld, CertifyRequest)
    if req.suh != ctx.hash or req.imid != ctx.imid:
        raise FieldMismatch("certify request names another service or device")
    if req.trch != rec.chain:
        raise ChainMismatch("certify request chain differs from the retrieved chain")
    kp = SigningKeyPair.generate(ctx.rng)
    ctx.dev.heap_write(kp.signing)
    ctx.secret("dk", kp.signing, [ctx.hash, req.dsh])
    pop = ProofOfPossession.issue(PopBody(req.serial, ctx.imid, req.dsh, req.suh, req.trch, kp.verifying), kp)
    ct = crypto.aead_encrypt(rec.k, codec.encode(pop), ctx.rng)
    ctx.send(ca, codec.encode(SealedMessage(ct.to_bytes())))
    reply = yield Recv(of_kind(CaCertificate))
    _check_cert(codec.decode(reply.payload, CaCertificate), ca_vk, req, kp.verifying)
    ctx.log("certified", serial=req.serial)
    ctx.protect(req.dsh, SetupKeyRecord(ctx.imid, codec.chain_push(req.trch, req.dsh), kp.signing, kp.verifying))


def setup_generic_role(ctx: Ctx, ca_vk: bytes, ca: str):
    """Set-up over a generic authenticated channel, without anchoring."""
    msg = yield Recv(of_kind(CertifyRequest))
    req = codec.decode(msg.payload, CertifyRequest)
    if req.suh != ctx.hash or req.imid != ctx.imid:
        raise FieldMismatch("certify request names another service or device")
    kp = SigningKeyPair.generate(ctx.rng)
    ctx.dev.heap_write(kp.signing)
    ctx.secret("dk", kp.signing, [ctx.hash, req.dsh])
    pop = ProofOfPossession.issue(PopBody(req.serial, ctx.imid, req.dsh, req.suh, req.trch, kp.verifying), kp)
    ctx.send(ca, codec.encode(pop), AUTH)
    reply = yield Recv(of_kind(CaCertificate))
    _check_cert(codec.decode(reply.payload, CaCertificate), ca_vk, req, kp.verifying)
    ctx.log("certified", serial=req.serial)
    chain = codec.chain_push(codec.chain_push(req.trch, ctx.hash), req.dsh)
    ctx.protect(req.dsh, SetupKeyRecord(ctx.imid, chain, kp.signing, kp.verifying))


def _check_cert(cert: CaCertificate, ca_vk: bytes, req: CertifyRequest, dvk: bytes) -> None:
    body = cert.open(ca_vk)
    want = CertBody(req.imid, req.dsh, req.suh, req.trch, req.serial, dvk)
    if body != want:
        raise BadCertificate("certificate does not verify or binds other fields")


def delegation_role(ctx: Ctx, suh: bytes, sh: bytes):
    """``sh`` names the target and arrives as a start argument."""
    yield from wait_record(ctx, prot_kind(ctx.hash))
    rec = ctx.retrieve(suh, SetupKeyRecord)
    ctx.expect_imid(rec.imid)
    ctx.expect_chain(rec.chain, suh)
    kp = SigningKeyPair.generate(ctx.rng)
    ctx.dev.heap_write(kp.signing)
    ctx.secret("sk", kp.signing, [ctx.hash, sh])
    n = ctx.rng.read(16)
    dk = SigningKeyPair.from_seed(rec.dk)
    cert = DelegationCertificate.issue(DelegationBody(ctx.imid, sh, rec.chain, n, kp.verifying), dk)
    ctx.publish(codec.encode(cert))
    ctx.protect(sh, TargetKeyRecord(codec.chain_push(rec.chain, sh), kp.signing, kp.verifying))


def target_role(ctx: Ctx, dsh: bytes, m0: bytes):
    yield from wait_record(ctx, prot_kind(ctx.hash))
    rec = ctx.retrieve(dsh, TargetKeyRecord)
    ctx.expect_chain(rec.chain, dsh)
    signed = crypto.sign(SigningKeyPair.from_seed(rec.sk), m0)
    ctx.log("sign", m=m0)
    ctx.publish(codec.encode(TargetSigned(signed)))
    return signed


PROGRAMS: dict[str, Callable] = {
    "anchor": anchor_role,
    "distributor": distributor_role,
    "use-it": use_it_role,
    "arh": arh_role,
    "svh": svh_role,
    "client": client_role,
    "setup": setup_role,
    "setup-generic": setup_generic_role,
    "delegation": delegation_role,
    "delegation-generic": delegation_role,
    "target": target_role,
    "target-generic": target_role,
}


# off-device parties


class DeviceAuthority:
    """Holds the group seed r0 and the per-device k_s it can recompute."""

    def __init__(self, world: World, name: str = "DA"):
        self.world = world
        self.name = name
        self.rng = world.rng.substream("da")
        self.r0 = self.rng.read(crypto.KEY_LEN)
        self.k_s: dict[bytes, bytes] = {}
        self.accepted: list[Confirmation] = []
        self.rejected = 0
        world.register_secret("r0", self.r0)
        self.seed_event = world.log(name, "init-group-seed")

    def group_seed(self, imid: bytes) -> bytes:
        return crypto.kdf(crypto.LABEL_GROUP_SEED, self.r0, [imid])

    def derive_k_s(self, imid: bytes) -> bytes:
        return crypto.kdf(crypto.LABEL_ANCHOR_SECRET, self.group_seed(imid), [imid])

    def service_key(self, imid: bytes, tgth: bytes) -> bytes:
        return crypto.kdf(crypto.LABEL_SERVICE_KEY, self.k_s[imid], [tgth])

    def send_anchor(self, me: str, imid: bytes, anch: bytes, dh: bytes, anchor_actor: str):
        """DA side of the metal room exchange, run as actor ``me``."""
        r = self.group_seed(imid)
        self.world.register_secret("r", r)
        n = self.rng.read(16)
        init = [e.seq for e in self.world.find("world", "init-imid", imid=imid)]
        self.world.log(me, "observe-imid", init + [self.seed_event], imid=imid)
        self.world.send(me, anchor_actor, codec.encode(AnchorMessage(imid, anch, dh, n, r)), METAL)
        msg = yield Recv(of_kind(AnchorReply, METAL, anchor_actor))
        reply = codec.decode(msg.payload, AnchorReply)
        if reply.n != n:
            raise NoConfirm("anchor reply does not echo the nonce")
        self.k_s[imid] = self.derive_k_s(imid)
        self.world.log(me, "anchored", imid=imid)
        return True

    def distribute(self, me: str, imid: bytes, skdh: bytes, anch: bytes, tgth: bytes, payld: bytes,
                   distributor_actor: str, *, await_confirm: bool = True):
        """Send a sealed distribution request; optionally wait for a genuine confirmation."""
        yield WaitFor(lambda: imid in self.k_s)
        anchored = self.world.find("", "anchored", imid=imid)
        self.world.log(me, "prepare-request", [e.seq for e in anchored], tgth=tgth)
        req = DistributionRequest(tgth, TrustChain.of(skdh, anch), payld)
        ct = crypto.aead_encrypt(self.k_s[imid], codec.encode(req), self.rng)
        self.world.send(me, distributor_actor, codec.encode(SealedMessage(ct.to_bytes())))
        if not await_confirm:
            return True
        k = self.service_key(imid, tgth)
        while True:
            msg = yield Recv(of_kind(Confirmation))
            try:
                c = codec.decode(msg.payload, Confirmation)
            except CaifError:
                self.rejected += 1
                continue
            expected = crypto.mac(k, codec.encode(ConfirmBody(c.imid, c.tgth, c.payld)))
            if (c.imid, c.tgth, c.payld) == (imid, tgth, payld) and crypto.tags_equal(expected, c.tag):
                self.accepted.append(c)
                self.world.log(me, "confirm-accepted", imid=imid, tgth=tgth)
                return True
            self.rejected += 1
            self.world.log(me, "confirm-rejected")

    def authorize_verifier(self, me: str, imid: bytes, arh: bytes, svh: bytes, vk: bytes, arh_actor: str):
        yield WaitFor(lambda: imid in self.k_s)
        k_ar = self.service_key(imid, arh)
        tag = crypto.mac(k_ar, codec.encode(AuthorizedKey(svh, vk)))
        self.world.send(me, arh_actor, codec.encode(VerifierAuthorization(svh, vk, tag)))


@dataclass
class _Pending:
    req: CertifyRequest
    key: Optional[bytes]  # k_sud for the anchored variant
    src: Optional[str]  # authenticated sender for the generic variant


class CertifyingAuthority:
    """Operated by the DA; receives k_sud through an explicit provisioning step."""

    def __init__(self, world: World, rng: DeterministicRng, name: str = "CA", ca_id: bytes = b"CA"):
        self.world = world
        self.name = name
        self.rng = rng
        self.ca_id = ca_id
        self.kp = SigningKeyPair.generate(rng)
        self.requests: dict[bytes, _Pending] = {}
        self.consumed: set[bytes] = set()
        self.issued: list[CaCertificate] = []
        self.refusals: list[str] = []

    @property
    def vk(self) -> bytes:
        return self.kp.verifying

    def provision(self, da: DeviceAuthority, imid: bytes, suh: bytes) -> bytes:
        k_sud = da.service_key(imid, suh)
        seq = self.world.log(da.name, "provision-ca", imid=imid, suh=suh)
        self.world.log(self.name, "provisioned", [seq], imid=imid)
        return k_sud

    def request(self, imid: bytes, dsh: bytes, suh: bytes, trch: TrustChain, *,
                key: Optional[bytes] = None, src: Optional[str] = None) -> CertifyRequest:
        serial = self.rng.read(16)
        req = CertifyRequest(imid, dsh, suh, trch, serial, self.ca_id)
        self.requests[serial] = _Pending(req, key, src)
        self.world.log(self.name, "certify-request", serial=serial)
        return req

    def serve(self, requests=()):
        """Send generic-channel requests, then handle proofs of possession until the run quiesces."""
        for dst, req in requests:
            self.world.send(self.name, dst, codec.encode(req))
        while True:
            msg = yield Recv(lambda m: codec.peek_kind(m.payload) in (SealedMessage, ProofOfPossession))
            try:
                cert, dst = self._handle(msg)
            except (CaifError, ValueError) as exc:
                reason = type(exc).__name__
                self.refusals.append(reason)
                self.world.log(self.name, "refuse", reason=reason)
                continue
            self.world.send(self.name, dst, codec.encode(cert), AUTH if msg.channel is AUTH else ChannelKind.OPEN)
            self.world.publish(self.name, codec.encode(cert))

    def _handle(self, msg):
        pend, plain = self._open(msg)
        pop = codec.decode(plain, ProofOfPossession)
        body = pop.open_self()
        if body is None:
            raise FieldMismatch("proof of possession signature does not verify")
        if body.serial in self.consumed:
            raise SerialReuse("serial already consumed")
        if pend is None:
            pend = self.requests.get(body.serial)
            if pend is None or pend.key is not None:
                raise FieldMismatch("no outstanding request with this serial")
            if msg.channel is not AUTH or msg.src != pend.src:
                raise AuthFailure("proof of possession not on the authenticated channel")
        r = pend.req
        if (body.serial, body.imid, body.dsh, body.suh, body.trch) != (r.serial, r.imid, r.dsh, r.suh, r.trch):
            raise FieldMismatch("proof of possession fields differ from the request")
        cert = CaCertificate.issue(CertBody(r.imid, r.dsh, r.suh, r.trch, r.serial, body.dvk), self.kp)
        self.consumed.add(r.serial)
        self.issued.append(cert)
        self.world.log(self.name, "issue", serial=r.serial, imid=r.imid)
        return cert, msg.src

    def _open(self, msg):
        """Anchored requests must arrive sealed under some k_sud; returns its request entry."""
        keyed = [(s, p) for s, p in self.requests.items() if p.key is not None]
        if not keyed:
            return None, msg.payload
        ct = msg.payload
        if codec.peek_kind(ct) is SealedMessage:
            ct = codec.decode(ct, SealedMessage).ct
        for serial, p in keyed:
            try:
                plain = crypto.aead_decrypt(p.key, ct)
            except AuthFailure:
                continue
            if serial in self.consumed:
                raise SerialReuse("serial already consumed")
            return p, plain
        raise AuthFailure("proof of possession is not sealed under an outstanding k_sud")


# observer


@dataclass(frozen=True)
class Attribution:
    ok: bool
    reason: str = ""
    imid: bytes = b""
    sh: bytes = b""
    m0: bytes = b""
    chain: TrustChain = TrustChain()


def verify_attribution(ca_vk: bytes, m1: bytes, m2: bytes, m3: bytes) -> Attribution:
    """External observer: does m3 attribute its message to a target on a certified device?"""
    try:
        cert = codec.decode(m1, CaCertificate).open(ca_vk)
        if cert is None:
            return Attribution(False, "m1 does not verify under the CA key")
        deleg = codec.decode(m2, DelegationCertificate).open(cert.dvk)
        if deleg is None:
            return Attribution(False, "m2 does not verify under the certified key")
        signed = codec.decode(m3, TargetSigned).signed
        ok, m0 = crypto.verify(deleg.vk, signed)
    except CaifError as exc:
        return Attribution(False, f"malformed: {type(exc).__name__}")
    if not ok:
        return Attribution(False, "m3 does not verify under the delegated key")
    if deleg.imid != cert.imid:
        return Attribution(False, "m2 names another device")
    if len(deleg.trch) < 2 or deleg.trch[0] != cert.dsh or deleg.trch[1] != cert.suh:
        return Attribution(False, "m2 chain does not continue from the certified services")
    return Attribution(True, "", cert.imid, deleg.sh, m0, codec.chain_push(deleg.trch, deleg.sh))


def compliant_attribution(att: Attribution, compliant: set[bytes]) -> bool:
    """Attribution is guaranteed only when every hash on the chain is compliant."""
    return att.ok and all(h in compliant for h in att.chain)
