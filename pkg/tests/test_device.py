import pytest
from hypothesis import given, strategies as st

from caifsim import crypto
from caifsim.crypto import Ciphertext, DeterministicRng
from caifsim.device import CaifDevice, Status
from caifsim.errors import (
    AlreadyActive,
    AuthFailure,
    CompliantHashRefused,
    FuseAlreadyBlown,
    NoActiveService,
    NoSuchRecord,
    NotRunnable,
)
from caifsim.ideal import IAttest, IRetrieve

IS = bytes(range(32))


def device(seed: int = 0) -> CaifDevice:
    return CaifDevice(IS, b"imid-test", DeterministicRng.from_int(seed))


def run_as(dev: CaifDevice, code: bytes) -> int:
    sid = dev.create_service(code)
    dev.start_service(sid)
    return sid


def test_rejects_short_secret():
    with pytest.raises(ValueError):
        CaifDevice(b"short", b"imid", DeterministicRng.from_int(0))


def test_service_lifecycle():
    dev = device()
    a = dev.create_service(b"a")
    b = dev.create_service(b"b")
    assert dev.services[a].hash == crypto.code_hash(b"a")
    dev.start_service(a)
    assert dev.active_hash == crypto.code_hash(b"a")
    with pytest.raises(AlreadyActive):
        dev.start_service(b)
    dev.yield_service()
    assert dev.active is None and dev.services[a].status is Status.RUNNABLE
    dev.start_service(a)
    dev.heap_write(b"key material")
    dev.exit_service()
    assert dev.inspect_heap(a) == bytes(12)
    with pytest.raises(NotRunnable):
        dev.start_service(a)
    with pytest.raises(NoActiveService):
        dev.yield_service()


def test_instructions_need_active_service():
    dev = device()
    for call in (lambda: dev.attestloc(b"v"), lambda: dev.protfor(b"r" * 32, b"v"),
                 lambda: dev.retrvfm(b"s" * 32, bytes(40))):
        with pytest.raises(NoActiveService):
            call()


def test_attest_and_check_any_process():
    dev = device()
    run_as(dev, b"a")
    tag = dev.attestloc(b"v")
    dev.yield_service()
    a = crypto.code_hash(b"a")
    assert dev.ckattest(a, b"v", tag)
    assert not dev.ckattest(crypto.code_hash(b"b"), b"v", tag)
    assert tag == crypto.mac(crypto.kdf(crypto.LABEL_ATTEST, IS, [a]), b"v")


def test_escrow_only_opens_for_named_pair():
    dev = device()
    a, b = crypto.code_hash(b"a"), crypto.code_hash(b"b")
    run_as(dev, b"a")
    ct = dev.protfor(b, b"secret")
    dev.yield_service()
    sid = run_as(dev, b"b")
    assert dev.retrvfm(a, ct) == b"secret"
    assert dev.inspect_heap(sid) == b"secret"
    with pytest.raises(AuthFailure):
        dev.retrvfm(b, ct)
    dev.yield_service()
    run_as(dev, b"c")
    with pytest.raises(AuthFailure):
        dev.retrvfm(a, ct.to_bytes())


@given(st.binary(max_size=100))
def test_protect_retrieve_roundtrip(v):
    dev = device()
    run_as(dev, b"a")
    ct = dev.protfor(crypto.code_hash(b"b"), v)
    dev.yield_service()
    run_as(dev, b"b")
    assert dev.retrvfm(crypto.code_hash(b"a"), Ciphertext.from_bytes(ct.to_bytes())) == v


def test_trace_records_failures():
    dev = device()
    with pytest.raises(NoActiveService):
        dev.attestloc(b"v")
    run_as(dev, b"b")
    with pytest.raises(AuthFailure):
        dev.retrvfm(crypto.code_hash(b"a"), bytes(40))
    assert type(dev.trace[0].command) is IAttest and not dev.trace[0].result
    assert type(dev.trace[1].command) is IRetrieve and dev.trace[1].result.reason == "AuthFailure"


def test_wildcat_refused_under_compliant_hash():
    dev = device()
    with pytest.raises(CompliantHashRefused):
        with dev.wildcat(b"good", {crypto.code_hash(b"good")}):
            pass
    with dev.wildcat(b"evil", {crypto.code_hash(b"good")}) as svc:
        assert svc.wildcat and dev.active_hash == crypto.code_hash(b"evil")
    assert dev.active is None


def test_fuse_blows_once():
    dev = device()
    assert not dev.anchor_fuse_blown
    dev.blow_anchor_fuse()
    with pytest.raises(FuseAlreadyBlown):
        dev.blow_anchor_fuse()


def test_shared_store_export_import():
    dev = device()
    dev.store_shared(b"one", "prot:aa")
    dev.store_shared(b"two")
    other = device(1)
    other.import_shared(dev.export_shared())
    assert [(r.kind, r.blob) for r in other.shared] == [("prot:aa", b"one"), ("blob", b"two")]
    assert [r.blob for r in other.shared_of_kind("prot:aa")] == [b"one"]
    with pytest.raises(NoSuchRecord):
        dev.read_shared(5)


def test_same_secret_same_keys_across_devices():
    a, b = device(0), CaifDevice(IS, b"other", DeterministicRng.from_int(1))
    run_as(a, b"s")
    ct = a.protfor(crypto.code_hash(b"r"), b"v")
    run_as(b, b"r")
    assert b.retrvfm(crypto.code_hash(b"s"), ct) == b"v"
