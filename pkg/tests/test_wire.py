import pytest

from prekms import conditions as cond
from prekms import pre
from prekms.errors import BadAuth, NodeUnavailable, UnknownPolicy
from prekms.group import TOY23
from prekms.ledger import Ledger
from prekms.node import Node, ReencryptRequest, make_owner_auth, new_policy_id
from prekms.signing import SigningKeyPair
from prekms.wire import HTTPNodeClient, NodeServer


@pytest.fixture
def served_node(rng):
    ledger = Ledger(seed=4, balances={"owner": 10_000, "n": 10_000})
    node = Node("n", ledger, b"\x07")
    ledger.deposit_stake("n", 500, 10_000)
    with NodeServer(node) as server:
        yield ledger, node, HTTPNodeClient(server.endpoint)


def test_ping(served_node):
    ledger, node, client = served_node
    resp = client.ping()
    assert resp["node_id"] == "n" and resp["ok"]


def test_full_policy_lifecycle_over_http(served_node, rng):
    ledger, node, client = served_node
    signer = SigningKeyPair.generate(rng)
    a, b = pre.keygen(TOY23, rng), pre.keygen(TOY23, rng)
    escrow = ledger.escrow_policy("owner", "n", 100, 50, 25)
    pid = new_policy_id(rng)
    client.deploy_policy(
        policy_id=pid,
        material=pre.rekey(TOY23, a.sk, b.sk),
        t_start=0,
        t_end=50,
        condition=cond.always(),
        escrow_ref=escrow,
        owner_verify_key=signer.verify_key,
    )
    m = TOY23.random_element(rng)
    ct = pre.encrypt_elem(TOY23, a.pk, m, rng)
    resp = client.handle_reencrypt(ReencryptRequest(pid, ct.to_bytes()))
    assert resp.kind == "ciphertext"
    assert pre.decrypt_elem(TOY23, b.sk, pre.PRECiphertext.from_bytes(resp.payload)) == m

    rows = client.list_policies(make_owner_auth(signer, "list", "", rng))
    assert [r["policy_id"] for r in rows] == [pid]

    client.renew_policy(pid, 80, make_owner_auth(signer, "renew", pid, rng))
    assert node.store.records[pid].t_end == 80

    client.revoke_policy(pid, make_owner_auth(signer, "revoke", pid, rng))
    assert node.store.records[pid].status == "revoked"


def test_error_codes_travel(served_node, rng):
    ledger, node, client = served_node
    with pytest.raises(UnknownPolicy):
        client.handle_reencrypt(ReencryptRequest("missing", b"\x00"))
    signer = SigningKeyPair.generate(rng)
    with pytest.raises(UnknownPolicy):
        client.revoke_policy("missing", make_owner_auth(signer, "revoke", "missing", rng))


def test_bad_auth_travels(served_node, rng):
    ledger, node, client = served_node
    signer = SigningKeyPair.generate(rng)
    a, b = pre.keygen(TOY23, rng), pre.keygen(TOY23, rng)
    escrow = ledger.escrow_policy("owner", "n", 100, 50, 25)
    pid = new_policy_id(rng)
    client.deploy_policy(
        policy_id=pid,
        material=pre.rekey(TOY23, a.sk, b.sk),
        t_start=0,
        t_end=50,
        condition=cond.always(),
        escrow_ref=escrow,
        owner_verify_key=signer.verify_key,
    )
    mallory = SigningKeyPair.generate(rng)
    with pytest.raises(BadAuth):
        client.revoke_policy(pid, make_owner_auth(mallory, "revoke", pid, rng))


def test_unreachable_endpoint():
    client = HTTPNodeClient("http://127.0.0.1:9", timeout=0.5)
    with pytest.raises(NodeUnavailable):
        client.ping()
