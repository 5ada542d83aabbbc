import pytest

from prekms import pre
from prekms.envelope import decrypt_data_delegated, encrypt_data
from prekms.errors import NotADescendant
from prekms.hierarchy import KeyHierarchy, resolve_hierarchical_edek


def test_depth_two_share(toy, rng):
    # file under a shared directory: two hop re-encryptions + delegation
    owner = KeyHierarchy(toy, rng)
    recipient = pre.keygen(toy, rng)
    file_node = owner.add_file("docs/reports/q3.txt")
    env = encrypt_data(toy, file_node.keypair.pk, b"quarterly numbers", rng)

    grant = owner.grant_directory("docs", recipient.pk, rng)
    reenc = resolve_hierarchical_edek("docs/reports/q3.txt", env.edek, grant)
    assert reenc.c_e.hops == 3  # reports->docs is 2 edges + delegated hop
    assert decrypt_data_delegated(toy, recipient.sk, env, reenc) == b"quarterly numbers"


def test_depth_one_single_reencryption(toy, rng):
    owner = KeyHierarchy(toy, rng)
    recipient = pre.keygen(toy, rng)
    node = owner.add_file("top.txt")
    env = encrypt_data(toy, node.keypair.pk, b"direct", rng)
    grant = owner.grant_directory("top.txt", recipient.pk, rng)
    reenc = resolve_hierarchical_edek("top.txt", env.edek, grant)
    assert reenc.c_e.hops == 1
    assert decrypt_data_delegated(toy, recipient.sk, env, reenc) == b"direct"


def test_sibling_not_shared(toy, rng):
    owner = KeyHierarchy(toy, rng)
    recipient = pre.keygen(toy, rng)
    owner.add_file("shared/inside.txt")
    secret_node = owner.add_file("private/outside.txt")
    env = encrypt_data(toy, secret_node.keypair.pk, b"not yours", rng)
    grant = owner.grant_directory("shared", recipient.pk, rng)
    with pytest.raises(NotADescendant):
        resolve_hierarchical_edek("private/outside.txt", env.edek, grant)


def test_grant_covers_all_descendants(toy, rng):
    owner = KeyHierarchy(toy, rng)
    recipient = pre.keygen(toy, rng)
    paths = ["db/user", "db/pass", "db/deep/nested"]
    envs = {}
    for p in paths:
        node = owner.add_file(p)
        envs[p] = encrypt_data(toy, node.keypair.pk, p.encode(), rng)
    grant = owner.grant_directory("db", recipient.pk, rng)
    for p in paths:
        reenc = resolve_hierarchical_edek(p, envs[p].edek, grant)
        assert decrypt_data_delegated(toy, recipient.sk, envs[p], reenc) == p.encode()


def test_file_vs_directory_conflicts(toy, rng):
    owner = KeyHierarchy(toy, rng)
    owner.add_file("a/b")
    with pytest.raises(NotADescendant):
        owner.ensure_dir("a/b")
    with pytest.raises(NotADescendant):
        owner.add_file("a")


def test_unknown_path(toy, rng):
    owner = KeyHierarchy(toy, rng)
    with pytest.raises(NotADescendant):
        owner.get("nope")
