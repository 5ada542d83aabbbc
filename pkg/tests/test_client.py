import random

import pytest

from prekms import conditions as cond
from prekms.client import Client, Identity, NetworkEnv
from prekms.errors import ConditionFalse, OutsideWindow, UnknownName, UnknownPolicy
from prekms.group import TOY23
from prekms.ledger import Ledger
from prekms.node import Node
from prekms.storage import MemoryStore


def make_world(n_nodes=3, seed=11):
    rng = random.Random(seed)
    balances = {"alice": 50_000, "bob": 10_000, "carol": 10_000}
    for i in range(n_nodes):
        balances[f"n{i}"] = 50_000
    ledger = Ledger(seed=seed, balances=balances)
    env = NetworkEnv(ledger, MemoryStore())
    for i in range(n_nodes):
        nid = f"n{i}"
        pk = rng.getrandbits(64).to_bytes(8, "big")
        env.handles[nid] = Node(nid, ledger, pk)
        ledger.deposit_stake(nid, 1_000, 100_000)
    alice = Client(Identity.generate("alice", TOY23, rng), env, rng)
    bob = Client(Identity.generate("bob", TOY23, rng), env, rng)
    return ledger, env, alice, bob, rng


def test_write_read_self():
    _, _, alice, _, _ = make_world()
    alice.write("notes/today.txt", b"own data")
    assert alice.read("notes/today.txt") == b"own data"


def test_share_read_through_three_node_network():
    ledger, env, alice, bob, _ = make_world(3)
    alice.write("docs/a.txt", b"hello bob")
    receipt = alice.share(bob.identity.enc.pk, "docs/a.txt", duration=100)
    assert bob.read("docs/a.txt", owner=alice.address) == b"hello bob"
    # material landed on a real node, policy registry knows it
    assert all(pid in ledger.policies for pid in receipt.policy_ids)


def test_read_without_policy_denied():
    _, _, alice, bob, _ = make_world()
    alice.write("docs/a.txt", b"private")
    with pytest.raises(UnknownPolicy):
        bob.read("docs/a.txt", owner=alice.address)


def test_subtree_share_scopes_access():
    ledger, env, alice, bob, _ = make_world()
    alice.write("db/user", b"admin")
    alice.write("db/pass", b"hunter2")
    alice.write("api/key", b"secret-api")
    alice.share(bob.identity.enc.pk, "db", duration=100)
    assert bob.read("db/user", owner=alice.address) == b"admin"
    assert bob.read("db/pass", owner=alice.address) == b"hunter2"
    with pytest.raises(UnknownPolicy):
        bob.read("api/key", owner=alice.address)


def test_revoke_then_read_fails():
    ledger, env, alice, bob, _ = make_world()
    alice.write("f.txt", b"fleeting")
    receipt = alice.share(bob.identity.enc.pk, "f.txt", duration=100)
    assert bob.read("f.txt", owner=alice.address) == b"fleeting"
    alice.revoke_share(receipt.share_id)
    with pytest.raises(UnknownPolicy):
        bob.read("f.txt", owner=alice.address)


def test_share_with_payment_condition():
    ledger, env, alice, bob, _ = make_world()
    ledger.credit("bob", 100)
    alice.write("paid.txt", b"paywalled")
    gate = cond.payment_observed("bob", "alice", 30)
    receipt = alice.share(bob.identity.enc.pk, "paid.txt", duration=100, condition=gate)
    with pytest.raises(ConditionFalse):
        bob.read("paid.txt", owner=alice.address)
    bob.pay("alice", 30)
    assert bob.read("paid.txt", owner=alice.address) == b"paywalled"


def test_share_expiry_window():
    ledger, env, alice, bob, _ = make_world()
    alice.write("t.txt", b"timed")
    alice.share(bob.identity.enc.pk, "t.txt", duration=5)
    assert bob.read("t.txt", owner=alice.address) == b"timed"
    for _ in range(6):
        ledger.advance_block()
    with pytest.raises(OutsideWindow):
        bob.read("t.txt", owner=alice.address)


def test_renew_extends_access():
    ledger, env, alice, bob, _ = make_world()
    alice.write("r.txt", b"renewable")
    receipt = alice.share(bob.identity.enc.pk, "r.txt", duration=5)
    alice.renew_share(receipt.share_id, 20)
    for _ in range(10):
        ledger.advance_block()
    assert bob.read("r.txt", owner=alice.address) == b"renewable"


def test_split_key_share_m_of_m():
    ledger, env, alice, bob, _ = make_world(4)
    alice.write("s.txt", b"split custody")
    receipt = alice.share(bob.identity.enc.pk, "s.txt", duration=100, split=(3, 3))
    nodes = {nid for _, nid in receipt.manifest["split"]["shares"]}
    assert len(nodes) == 3   # shares on distinct nodes
    assert bob.read("s.txt", owner=alice.address) == b"split custody"


def test_split_key_share_threshold():
    ledger, env, alice, bob, _ = make_world(4)
    alice.write("s.txt", b"2 of 3")
    receipt = alice.share(bob.identity.enc.pk, "s.txt", duration=100, split=(2, 3))
    # even with one share node revoked, 2 of 3 still suffice
    pid, nid = receipt.manifest["split"]["shares"][0]
    from prekms.node import make_owner_auth

    auth = make_owner_auth(alice.identity.signer, "revoke", pid, alice.rng)
    env.handle(nid).revoke_policy(pid, auth)
    assert bob.read("s.txt", owner=alice.address) == b"2 of 3"


def test_delete_removes_data_and_policies():
    ledger, env, alice, bob, _ = make_world()
    cid = alice.write("d.txt", b"doomed")
    alice.share(bob.identity.enc.pk, "d.txt", duration=100)
    assert bob.read("d.txt", owner=alice.address) == b"doomed"
    alice.delete("d.txt")
    assert cid not in env.storage
    with pytest.raises(UnknownName):
        alice.read("d.txt")
    with pytest.raises((UnknownPolicy, UnknownName)):
        bob.read("d.txt", owner=alice.address)


def test_secrets_namespace():
    ledger, env, alice, bob, _ = make_world()
    alice.secret_set("db/password", b"s3cr3t")
    assert alice.secret_get("db/password") == b"s3cr3t"
    alice.share(bob.identity.enc.pk, "secrets/db", duration=50)
    assert bob.secret_get("db/password", owner=alice.address) == b"s3cr3t"
    with pytest.raises(UnknownName):
        alice.secret_get("db/missing")


def test_list_policies_across_nodes():
    ledger, env, alice, bob, _ = make_world()
    alice.write("x.txt", b"x")
    alice.write("deep/y.txt", b"y")
    alice.share(bob.identity.enc.pk, "x.txt", duration=100)
    alice.share(bob.identity.enc.pk, "deep", duration=100)
    rows = alice.list_policies()
    assert len(rows) >= 3   # delegation + hop + delegation
    assert all(row["owner_verify_key"] == alice.identity.signer.verify_key.hex() for row in rows)
    assert bob.list_policies() == []


def test_no_plaintext_or_dek_in_storage():
    ledger, env, alice, bob, _ = make_world()
    secret = b"the plaintext that must not leak into the store"
    alice.write("leakcheck.txt", secret)
    blob = b"".join(env.storage.get(cid) for cid in env.storage.ids())
    assert secret not in blob
