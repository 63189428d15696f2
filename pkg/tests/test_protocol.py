import pytest
from hypothesis import given, settings, strategies as st

from caifsim import codec, crypto
from caifsim.codec import (
    AnchorMessage,
    AnchorReply,
    CaCertificate,
    DelegationCertificate,
    DistributionRequest,
    PopBody,
    ProofOfPossession,
    SealedMessage,
    SetupKeyRecord,
    TargetSigned,
    TrustChain,
)
from caifsim.crypto import SigningKeyPair
from caifsim.errors import CompliantHashRefused, ConfigError, FuseAlreadyBlown
from caifsim.protocol import run_kind
from caifsim.protocol.roles import METAL, PROGRAMS, Codes, verify_attribution
from caifsim.protocol.scenarios import (
    ATTACKS,
    KINDS,
    Deployment,
    chain_honesty,
    fuse_safety,
    run_anchor,
)
from caifsim.protocol.world import ChannelKind, Recv, World, prot_kind


def anchored(seed=0, **kw):
    dep = Deployment(seed, **kw)
    dev = dep.devices[0]
    dep.anchor(dev)
    dep.world.run()
    return dep, dev


# anchoring


def test_anchor_rejects_message_for_other_device():
    dep = Deployment(0)
    dev = dep.devices[0]
    dep.start(dev, "anchor")
    w = dep.world
    w.spawn("DA", dep.da.send_anchor("DA", b"imid-other", dep.h("anchor"), dep.h("distributor"),
                                     dep.name("anchor", dev)))
    w.run()
    assert w.actor(dep.name("anchor", dev)).aborted == "WrongDevice"
    assert not dev.anchor_fuse_blown and not dev.shared


def test_da_requires_nonce_echo():
    dep = Deployment(0)
    dev = dep.devices[0]
    w = dep.world

    def bad_anchor():
        msg = yield Recv()
        w.send("fake-anchor", msg.src, codec.encode(AnchorReply(b"wrong nonce")), METAL)

    w.spawn("fake-anchor", bad_anchor())
    w.spawn("DA", dep.da.send_anchor("DA", dev.imid, dep.h("anchor"), dep.h("distributor"), "fake-anchor"))
    w.run()
    assert w.actor("DA").aborted == "NoConfirm"
    assert dev.imid not in dep.da.k_s


def test_k_s_is_the_nested_derivation():
    dep, dev = anchored(3)
    r = crypto.kdf(crypto.LABEL_GROUP_SEED, dep.da.r0, [dev.imid])
    assert dep.da.k_s[dev.imid] == crypto.kdf(crypto.LABEL_ANCHOR_SECRET, r, [dev.imid])


def test_two_devices_get_distinct_k_s():
    res = run_anchor(1, devices=2)
    assert res.checks["distinct-k_s-per-device"] and res.ok


def test_second_anchor_refused_and_logged():
    dep, dev = anchored()
    with pytest.raises(FuseAlreadyBlown):
        dep.start(dev, "anchor")
    assert dep.world.find("", "start-refused")


def test_anchor_heap_zeroed_on_exit():
    dep, dev = anchored()
    sid = dep.world.actor(dep.name("anchor", dev)).sid
    assert set(dev.inspect_heap(sid)) == {0}


# distributor


def _distributor_world(seed=0):
    dep, dev = anchored(seed)
    dep.start(dev, "distributor", dep.h("anchor"))
    return dep, dev


def test_distributor_rejects_request_under_wrong_key():
    dep, dev = _distributor_world()
    req = DistributionRequest(dep.h("use-it"), TrustChain.of(dep.h("distributor"), dep.h("anchor")), b"")
    ct = crypto.aead_encrypt(bytes(32), codec.encode(req), dep.world.rng.substream("t"))
    dep.world.inject(dep.name("distributor", dev), codec.encode(SealedMessage(ct.to_bytes())))
    dep.world.run()
    assert dep.world.actor(dep.name("distributor", dev)).aborted == "AuthFailure"
    assert not dev.shared_of_kind(prot_kind(dep.h("use-it")))


def test_distributor_rejects_mismatched_chain():
    dep, dev = _distributor_world()
    wrong = TrustChain.of(dep.h("distributor"), dep.h("use-it"))
    req = DistributionRequest(dep.h("use-it"), wrong, b"")
    ct = crypto.aead_encrypt(dep.da.k_s[dev.imid], codec.encode(req), dep.world.rng.substream("t"))
    dep.world.inject(dep.name("distributor", dev), codec.encode(SealedMessage(ct.to_bytes())))
    dep.world.run()
    assert dep.world.actor(dep.name("distributor", dev)).aborted == "ChainMismatch"
    assert not dev.shared_of_kind(prot_kind(dep.h("use-it")))


def test_use_it_with_wrong_source_fails():
    dep, dev = anchored()
    da = dep.distribute(dev, "use-it", b"p", await_confirm=True)
    dep.start(dev, "use-it", dep.h("anchor"), da)
    dep.world.run()
    assert dep.world.actor(dep.name("use-it", dev)).aborted == "AuthFailure"
    assert not dep.da.accepted


# delegation pieces


def test_ca_rejects_altered_pop_fields():
    dep, dev = anchored()
    w = dep.world
    suh = dep.h("setup")
    k_sud = dep.ca.provision(dep.da, dev.imid, suh)
    trch = TrustChain.of(suh, dep.h("distributor"), dep.h("anchor"))
    req = dep.ca.request(dev.imid, dep.h("delegation"), suh, trch, key=k_sud)
    kp = SigningKeyPair.from_seed(bytes(32))
    pop = ProofOfPossession.issue(PopBody(req.serial, dev.imid, bytes(32), suh, trch, kp.verifying), kp)
    ct = crypto.aead_encrypt(k_sud, codec.encode(pop), w.rng.substream("t"))
    w.spawn(dep.ca.name, dep.ca.serve())
    w.inject(dep.ca.name, codec.encode(SealedMessage(ct.to_bytes())))
    w.run()
    assert dep.ca.refusals == ["FieldMismatch"] and not dep.ca.issued


def _record_for_delegation(dep, dev, source_code, chain):
    kp = SigningKeyPair.from_seed(bytes([7]) * 32)
    rec = SetupKeyRecord(dev.imid, chain, kp.signing, kp.verifying)
    with dev.wildcat(source_code, set()):
        ct = dev.protfor(dep.h("delegation"), codec.encode(rec))
    dev.store_shared(ct.to_bytes(), prot_kind(dep.h("delegation")))


def test_delegation_with_wrong_setup_source_fails():
    dep = Deployment(0)
    dev = dep.devices[0]
    _record_for_delegation(dep, dev, b"not the setup service",
                           TrustChain.of(dep.h("delegation"), dep.h("setup")))
    dep.start(dev, "delegation", dep.h("setup"), dep.h("target"))
    dep.world.run()
    assert dep.world.actor(dep.name("delegation", dev)).aborted == "AuthFailure"


def test_delegation_rejects_chain_with_other_head():
    dep = Deployment(0, compliant=[])
    dev = dep.devices[0]
    _record_for_delegation(dep, dev, dep.role_code("setup"), TrustChain.of(dep.h("target"), dep.h("setup")))
    dep.start(dev, "delegation", dep.h("setup"), dep.h("target"))
    dep.world.run()
    assert dep.world.actor(dep.name("delegation", dev)).aborted == "ChainMismatch"
    assert not dep.world.published


def test_observer_rejects_unrelated_signing_key():
    res = run_kind("delegate-anchored", 11)
    w = res.world
    pub = {codec.peek_kind(p): p for _, p in w.published}
    ca_vk = res.info["ca_vk"]
    m1, m2 = pub[CaCertificate], pub[DelegationCertificate]
    good = verify_attribution(ca_vk, m1, m2, pub[TargetSigned])
    assert good.ok
    rogue = SigningKeyPair.from_seed(bytes([9]) * 32)
    bad = codec.encode(TargetSigned(crypto.sign(rogue, b"m")))
    assert not verify_attribution(ca_vk, m1, m2, bad).ok
    assert not verify_attribution(rogue.verifying, m1, m2, pub[TargetSigned]).ok
    assert not verify_attribution(ca_vk, m1, m1, pub[TargetSigned]).ok


def test_codes_embed_trusted_hashes():
    a = Codes(bytes(32))
    b = Codes(bytes([1]) * 32)
    assert a.h("anchor") == b.h("anchor") and a.h("distributor") == b.h("distributor")
    assert a.h("setup") != b.h("setup") and a.h("target") != b.h("target")
    assert a.h("anchor") in a["distributor"]
    assert set(PROGRAMS) <= set(a.code)


# adversary model


def test_metal_room_is_invisible_and_open_channel_observed():
    dep, dev = anchored()
    items = dep.world.adversary.knowledge.order
    assert not any(codec.peek_kind(x) is AnchorMessage for x in items)
    assert dep.da.group_seed(dev.imid) not in dep.world.adversary.knowledge
    dep.world.send("x", "nobody", b"open payload")
    dep.world.send("x", "nobody", b"auth payload", ChannelKind.AUTHENTICATED)
    dep.world.release_pending()
    assert b"open payload" in dep.world.adversary.knowledge
    assert b"auth payload" in dep.world.adversary.knowledge


def test_knowledge_closure_decrypts_with_learned_keys():
    w = World(0)
    key = bytes([5]) * 32
    inner = codec.encode(TrustChain.of(bytes([6]) * 32))
    ct = crypto.aead_encrypt(key, inner, w.rng).to_bytes()
    w.adversary.observe(ct)
    assert bytes([6]) * 32 not in w.adversary.knowledge
    w.adversary.observe(key)
    assert bytes([6]) * 32 in w.adversary.knowledge


def test_synthesis_needs_known_key():
    w = World(0)
    with pytest.raises(PermissionError):
        w.adversary.mac(bytes(32), b"x")
    w.adversary.observe(bytes(32))
    assert w.adversary.mac(bytes(32), b"x") == crypto.mac(bytes(32), b"x")


def test_wildcat_refused_under_compliant_hash():
    dep, dev = anchored()
    with pytest.raises(CompliantHashRefused):
        dep.world.adversary.wc_attest(dev, dep.role_code("distributor"), b"v")
    tag = dep.world.adversary.wc_attest(dev, b"wildcat", b"v")
    assert dev.ckattest(crypto.code_hash(b"wildcat"), b"v", tag)


# audits


def test_chain_honesty_flags_forged_provenance():
    dep, dev = anchored()
    w = dep.world
    w.log("x", "chain-accept", imid=dev.imid, rid=0, by=dep.h("distributor"),
          chain=TrustChain.of(dep.h("distributor"), dep.h("use-it")))
    assert chain_honesty(w)


def test_fuse_safety_flags_double_anchor():
    dep, dev = anchored()
    assert fuse_safety(dep.world)
    dep.world.log("x", "anchor-complete", imid=dev.imid)
    assert not fuse_safety(dep.world)


def test_secrecy_audit_flags_leak():
    dep, dev = anchored()
    assert dep.audit.ok
    dep.world.adversary.observe(b"prefix" + dep.da.k_s[dev.imid])
    assert not dep.audit.ok and dep.audit.violations == ["k_s"]


# whole scenarios


@pytest.mark.parametrize("kind", list(KINDS) + [f"attack:{a}" for a in ATTACKS])
def test_every_scenario_passes(kind):
    res = run_kind(kind, 7)
    assert res.ok, {k: v for k, v in res.checks.items() if not v}


@pytest.mark.parametrize("kind", ["anchor", "distribute", "table1", "delegate-generic", "delegate-anchored"])
def test_digests_reproducible(kind):
    a, b, c = run_kind(kind, 7), run_kind(kind, 7), run_kind(kind, 8)
    assert a.world.trace_lines() == b.world.trace_lines()
    assert a.digest == b.digest != c.digest


@given(st.integers(0, 2**64 - 1), st.sampled_from(["distribute", "table1", "delegate-generic", "delegate-anchored"]))
@settings(max_examples=25)
def test_scenarios_pass_for_any_seed(seed, kind):
    assert run_kind(kind, seed).ok


@given(st.integers(0, 2**32))
@settings(max_examples=10)
def test_negative_control_exists_for_any_seed(seed):
    roles = ["anchor", "distributor", "use-it", "arh", "svh", "client", "setup", "delegation"]
    res = run_kind("delegate-anchored", seed, compliant=roles, adversary=["wc-retrieve"])
    assert res.checks["sk-exposed"] and res.checks["adversary-signature-attributed"]
    assert res.checks["attribution-not-guaranteed"]


def test_bad_config_values_rejected():
    with pytest.raises(ConfigError):
        run_kind("nonsense", 0)
    with pytest.raises(ConfigError):
        run_kind("attack:nonsense", 0)
    with pytest.raises(ConfigError):
        run_kind("anchor", 0, compliant=["nobody"])
    with pytest.raises(ConfigError):
        run_kind("anchor", 0, adversary=["wc-teleport"])
