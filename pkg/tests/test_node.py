import random

import pytest

from prekms import conditions as cond
from prekms import pre
from prekms.errors import (
    BadAuth,
    ConditionFalse,
    DuplicatePolicy,
    NoEscrow,
    OutsideWindow,
    QuotaExceeded,
    Revoked,
    UnknownPolicy,
)
from prekms.group import TOY23
from prekms.ledger import EconomicsParams, Ledger
from prekms.node import (
    Node,
    PolicyStore,
    ReencryptRequest,
    deserialize_material,
    make_owner_auth,
    material_hash,
    new_policy_id,
    serialize_material,
)
from prekms.signing import SigningKeyPair


@pytest.fixture
def world(rng):
    ledger = Ledger(
        seed=3,
        balances={"owner": 10_000, "node-1": 10_000, "node-2": 10_000, "backbone": 20_000},
    )
    nodes = {}
    for nid in ("node-1", "node-2"):
        kp = pre.keygen(TOY23, rng)
        nodes[nid] = Node(nid, ledger, TOY23.element_to_bytes(kp.pk))
        ledger.deposit_stake(nid, 500, lock_blocks=10_000)
    # a large staked bystander carrying background policies, so the share
    # quota leaves each test node a few slots
    ledger.register_node("backbone", b"\xbb")
    ledger.deposit_stake("backbone", 9_000, lock_blocks=10_000)
    for i in range(100):
        ledger.register_policy(f"bg{i}", "backbone", "someone", f"bge{i}", "00")
    return ledger, nodes


def deploy_simple(ledger, node, rng, *, owner="owner", t_start=0, t_end=100,
                  condition=None, material=None, signer=None):
    signer = signer or SigningKeyPair.generate(rng)
    if material is None:
        a = pre.keygen(TOY23, rng)
        b = pre.keygen(TOY23, rng)
        material = pre.rekey(TOY23, a.sk, b.sk)
    escrow = ledger.escrow_policy(owner, node.node_id, fee=100, duration=max(1, t_end - t_start), collateral=50)
    pid = new_policy_id(rng)
    node.deploy_policy(
        policy_id=pid,
        material=material,
        t_start=t_start,
        t_end=t_end,
        condition=condition or cond.always(),
        escrow_ref=escrow,
        owner_verify_key=signer.verify_key,
    )
    return pid, signer, material, escrow


def test_deploy_then_reencrypt_in_window(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    a = pre.keygen(TOY23, rng)
    b = pre.keygen(TOY23, rng)
    rk = pre.rekey(TOY23, a.sk, b.sk)
    pid, signer, _, _ = deploy_simple(ledger, node, rng, material=rk)
    m = TOY23.random_element(rng)
    ct = pre.encrypt_elem(TOY23, a.pk, m, rng)
    resp = node.handle_reencrypt(ReencryptRequest(pid, ct.to_bytes()))
    assert resp.kind == "ciphertext"
    out = pre.PRECiphertext.from_bytes(resp.payload)
    assert pre.decrypt_elem(TOY23, b.sk, out) == m


def test_deploy_duplicate_policy(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, signer, material, _ = deploy_simple(ledger, node, rng)
    escrow2 = ledger.escrow_policy("owner", node.node_id, 100, 100, 50)
    with pytest.raises(DuplicatePolicy):
        node.deploy_policy(
            policy_id=pid,
            material=material,
            t_start=0,
            t_end=100,
            condition=cond.always(),
            escrow_ref=escrow2,
            owner_verify_key=signer.verify_key,
        )


def test_deploy_requires_escrow(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    signer = SigningKeyPair.generate(rng)
    a, b = pre.keygen(TOY23, rng), pre.keygen(TOY23, rng)
    with pytest.raises(NoEscrow):
        node.deploy_policy(
            policy_id=new_policy_id(rng),
            material=pre.rekey(TOY23, a.sk, b.sk),
            t_start=0,
            t_end=10,
            condition=cond.always(),
            escrow_ref="nope",
            owner_verify_key=signer.verify_key,
        )
    # escrow naming the *other* node is just as invalid
    escrow = ledger.escrow_policy("owner", "node-2", 100, 100, 50)
    with pytest.raises(NoEscrow):
        node.deploy_policy(
            policy_id=new_policy_id(rng),
            material=pre.rekey(TOY23, a.sk, b.sk),
            t_start=0,
            t_end=10,
            condition=cond.always(),
            escrow_ref=escrow,
            owner_verify_key=signer.verify_key,
        )


def test_deploy_beyond_quota(rng):
    ledger = Ledger(seed=1, balances={"owner": 100_000, "small": 1_000, "big": 10_000})
    small = Node("small", ledger, b"\x01")
    Node("big", ledger, b"\x02")
    ledger.deposit_stake("small", 100, 10_000)   # 10% of stake
    ledger.deposit_stake("big", 900, 10_000)
    # seed the directory so the fraction cap binds
    for i in range(89):
        ledger.register_policy(f"bg{i}", "big", "owner", f"be{i}", "00")
    for i in range(11):
        deploy_simple(ledger, small, rng)
    assert not ledger.quota_allows("small")
    with pytest.raises(QuotaExceeded):
        deploy_simple(ledger, small, rng)


def test_reencrypt_unknown_policy(world, rng):
    _, nodes = world
    with pytest.raises(UnknownPolicy):
        nodes["node-1"].handle_reencrypt(ReencryptRequest("missing", b""))


def test_window_enforcement_and_erasure_on_expiry(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, *_ = deploy_simple(ledger, node, rng, t_start=0, t_end=3)
    a = pre.keygen(TOY23, rng)
    ct = pre.encrypt_elem(TOY23, a.pk, 13, rng).to_bytes()
    node.handle_reencrypt(ReencryptRequest(pid, ct))
    for _ in range(4):
        ledger.advance_block()
    with pytest.raises(OutsideWindow):
        node.handle_reencrypt(ReencryptRequest(pid, ct))
    assert node.store.records[pid].material is None   # erased, not just refused
    assert node.store.records[pid].status == "expired"
    # escrow settled at full term: miner keeps collateral + fee
    escrow = ledger.escrows[node.store.records[pid].escrow_ref]
    assert escrow.state == "completed"


def test_not_yet_started_window(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, *_ = deploy_simple(ledger, node, rng, t_start=5, t_end=10)
    a = pre.keygen(TOY23, rng)
    ct = pre.encrypt_elem(TOY23, a.pk, 13, rng).to_bytes()
    with pytest.raises(OutsideWindow):
        node.handle_reencrypt(ReencryptRequest(pid, ct))


def test_condition_payment_gate(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    gate = cond.payment_observed("reader", "owner", 25)
    pid, *_ = deploy_simple(ledger, node, rng, condition=gate)
    ledger.credit("reader", 100)
    a = pre.keygen(TOY23, rng)
    ct = pre.encrypt_elem(TOY23, a.pk, 13, rng).to_bytes()
    with pytest.raises(ConditionFalse):
        node.handle_reencrypt(ReencryptRequest(pid, ct))
    ledger.record_payment("reader", "owner", 25)
    resp = node.handle_reencrypt(ReencryptRequest(pid, ct))
    assert resp.kind == "ciphertext"


def test_revoke_then_reencrypt(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, signer, _, escrow = deploy_simple(ledger, node, rng)
    auth = make_owner_auth(signer, "revoke", pid, rng)
    result = node.revoke_policy(pid, auth)
    # revoked at t=0: owner refunded the full fee
    assert result["settlement"] == {"owner": 100, "miner": 50, "seized": 0}
    a = pre.keygen(TOY23, rng)
    ct = pre.encrypt_elem(TOY23, a.pk, 13, rng).to_bytes()
    with pytest.raises(Revoked):
        node.handle_reencrypt(ReencryptRequest(pid, ct))
    assert node.store.records[pid].material is None


def test_revoke_by_non_owner(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, signer, *_ = deploy_simple(ledger, node, rng)
    mallory = SigningKeyPair.generate(rng)
    with pytest.raises(BadAuth):
        node.revoke_policy(pid, make_owner_auth(mallory, "revoke", pid, rng))
    # a true owner signature for a *different* op is refused too
    with pytest.raises(BadAuth):
        node.revoke_policy(pid, make_owner_auth(signer, "renew", pid, rng))


def test_renew_extends_window(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, signer, *_ = deploy_simple(ledger, node, rng, t_end=5)
    a = pre.keygen(TOY23, rng)
    ct = pre.encrypt_elem(TOY23, a.pk, 13, rng).to_bytes()
    node.renew_policy(pid, 20, make_owner_auth(signer, "renew", pid, rng))
    for _ in range(8):
        ledger.advance_block()
    assert node.handle_reencrypt(ReencryptRequest(pid, ct)).kind == "ciphertext"


def test_renew_rejects_shorter_window(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, signer, *_ = deploy_simple(ledger, node, rng, t_end=50)
    with pytest.raises(BadAuth):
        node.renew_policy(pid, 10, make_owner_auth(signer, "renew", pid, rng))


def test_renew_revoked_policy_is_unknown(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    pid, signer, *_ = deploy_simple(ledger, node, rng)
    node.revoke_policy(pid, make_owner_auth(signer, "revoke", pid, rng))
    with pytest.raises(UnknownPolicy):
        node.renew_policy(pid, 200, make_owner_auth(signer, "renew", pid, rng))


def test_list_policies_scoped_to_owner(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    assert node.list_policies(
        make_owner_auth(SigningKeyPair.generate(rng), "list", "", rng)
    ) == []
    pid_a, signer_a, *_ = deploy_simple(ledger, node, rng)
    pid_b, signer_b, *_ = deploy_simple(ledger, node, rng)
    rows_a = node.list_policies(make_owner_auth(signer_a, "list", "", rng))
    assert [r["policy_id"] for r in rows_a] == [pid_a]
    assert "material" not in rows_a[0]
    node.revoke_policy(pid_a, make_owner_auth(signer_a, "revoke", pid_a, rng))
    rows_a = node.list_policies(make_owner_auth(signer_a, "list", "", rng))
    assert rows_a[0]["status"] == "revoked"


def test_delegated_and_share_material_paths(world, rng):
    ledger, nodes = world
    node = nodes["node-1"]
    a, b = pre.keygen(TOY23, rng), pre.keygen(TOY23, rng)
    bundle = pre.delegate(TOY23, a.sk, b.pk, rng)
    pid, *_ = deploy_simple(ledger, node, rng, material=bundle)
    m = TOY23.random_element(rng)
    ct = pre.encrypt_elem(TOY23, a.pk, m, rng)
    resp = node.handle_reencrypt(ReencryptRequest(pid, ct.to_bytes()))
    assert resp.kind == "delegated"
    msg = pre.ReencryptedMessage.from_bytes(resp.payload)
    assert pre.decrypt_delegated(TOY23, b.sk, msg) == m

    rk = pre.rekey(TOY23, a.sk, b.sk)
    shares = pre.split_rekey_additive(rk, 2, rng)
    pid1, *_ = deploy_simple(ledger, node, rng, material=shares[0])
    pid2, *_ = deploy_simple(ledger, nodes["node-2"], rng, material=shares[1])
    from prekms.node import decode_partial

    p1 = decode_partial(node.handle_reencrypt(ReencryptRequest(pid1, ct.to_bytes())).payload)
    p2 = decode_partial(
        nodes["node-2"].handle_reencrypt(ReencryptRequest(pid2, ct.to_bytes())).payload
    )
    combined = pre.combine_shares(TOY23, ct.c1, [p1, p2], shares[0].scheme, hops=ct.hops)
    assert pre.decrypt_elem(TOY23, b.sk, combined) == m


# --- persistence ------------------------------------------------------------------


def test_store_reload_reproduces_active_set(tmp_path, rng):
    ledger = Ledger(seed=9, balances={"owner": 10_000, "n": 10_000})
    node = Node("n", ledger, b"\x05", store_dir=tmp_path / "n")
    ledger.deposit_stake("n", 500, 10_000)
    pid_live, signer, material, _ = deploy_simple(ledger, node, rng)
    pid_dead, signer2, *_ = deploy_simple(ledger, node, rng)
    node.revoke_policy(pid_dead, make_owner_auth(signer2, "revoke", pid_dead, rng))

    # abrupt termination: a brand-new store object reads the same directory
    reloaded = PolicyStore(tmp_path / "n")
    assert set(reloaded.records) == {pid_live, pid_dead}
    live = reloaded.records[pid_live]
    assert live.status == "active"
    assert serialize_material(live.material) == serialize_material(material)
    dead = reloaded.records[pid_dead]
    assert dead.status == "revoked" and dead.material is None


def test_store_scan_no_material_bytes_after_erase(tmp_path, rng):
    ledger = Ledger(seed=9, balances={"owner": 10_000, "n": 10_000})
    node = Node("n", ledger, b"\x05", store_dir=tmp_path / "n")
    ledger.deposit_stake("n", 500, 10_000)
    a, b = pre.keygen(TOY23, rng), pre.keygen(TOY23, rng)
    bundle = pre.delegate(TOY23, a.sk, b.pk, rng)
    pid, signer, *_ = deploy_simple(ledger, node, rng, material=bundle)
    needle = bundle.wrapped_eph  # high-entropy bytes unique to this material
    blobs = b"".join(p.read_bytes() for p in (tmp_path / "n").rglob("*") if p.is_file())
    assert needle in blobs
    node.revoke_policy(pid, make_owner_auth(signer, "revoke", pid, rng))
    blobs = b"".join(p.read_bytes() for p in (tmp_path / "n").rglob("*") if p.is_file())
    assert needle not in blobs


def test_material_serialization_round_trip(rng):
    a, b = pre.keygen(TOY23, rng), pre.keygen(TOY23, rng)
    for material in (
        pre.rekey(TOY23, a.sk, b.sk),
        pre.delegate(TOY23, a.sk, b.pk, rng),
        pre.split_rekey_threshold(pre.rekey(TOY23, a.sk, b.sk), 2, 3, rng)[1],
    ):
        blob = serialize_material(material)
        assert deserialize_material(blob) == material
        assert len(material_hash(material)) == 64
