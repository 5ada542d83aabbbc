import random

import pytest

from prekms import envelope, pre
from prekms.envelope import (
    Envelope,
    decrypt_data,
    decrypt_data_delegated,
    encrypt_data,
    reencrypt_envelope,
    rejoin_edek,
    rotate_edeks,
    rotate_keys,
    split_edek,
)
from prekms.errors import BadAuthTag, BadSignature, MalformedHeader
from prekms.group import MODP2048, TOY23
from prekms.signing import SigningKeyPair


def test_round_trip_small_and_1mib(big, rng):
    kp = pre.keygen(big, rng)
    for size in (1, 100, 1 << 20):
        data = rng.getrandbits(8 * size).to_bytes(size, "big")
        env = encrypt_data(big, kp.pk, data, rng)
        assert decrypt_data(big, kp.sk, env) == data


def test_probabilistic_encryption(toy, rng):
    kp = pre.keygen(toy, rng)
    e1 = encrypt_data(toy, kp.pk, b"same data", rng)
    e2 = encrypt_data(toy, kp.pk, b"same data", rng)
    assert e1.edek != e2.edek
    assert e1.body != e2.body


def test_body_tamper_detection(toy, rng):
    kp = pre.keygen(toy, rng)
    env = encrypt_data(toy, kp.pk, b"payload bytes", rng)
    for i in range(len(env.body)):
        mangled = bytearray(env.body)
        mangled[i] ^= 0x40
        bad = Envelope(env.suite, env.flags, env.edek, env.nonce, bytes(mangled))
        with pytest.raises(BadAuthTag):
            decrypt_data(toy, kp.sk, bad)


def test_rejects_empty_data(toy, rng):
    kp = pre.keygen(toy, rng)
    with pytest.raises(ValueError):
        encrypt_data(toy, kp.pk, b"", rng)


def test_signed_payload_round_trip(toy, rng):
    kp = pre.keygen(toy, rng)
    signer = SigningKeyPair.generate(rng)
    env = encrypt_data(toy, kp.pk, b"attributed", rng, sign_with=signer)
    assert decrypt_data(toy, kp.sk, env) == b"attributed"
    assert envelope.signer_of(toy, kp.sk, env) == signer.verify_key


def test_signature_verified_only_after_decrypt(toy, rng):
    # the signature is inside the plaintext: an observer of the envelope
    # bytes cannot see the signer key anywhere
    kp = pre.keygen(toy, rng)
    signer = SigningKeyPair.generate(rng)
    env = encrypt_data(toy, kp.pk, b"attributed", rng, sign_with=signer)
    assert signer.verify_key not in env.to_bytes()


def test_bad_signature_surfaces_after_decrypt(toy, rng):
    kp = pre.keygen(toy, rng)
    signer = SigningKeyPair.generate(rng)
    env = encrypt_data(toy, kp.pk, b"data", rng, sign_with=signer)
    # forge: re-wrap the same payload but swap one signature byte, keeping
    # the symmetric layer intact
    seed = pre.decrypt_elem(toy, kp.sk, env.edek)
    from prekms import symcrypto

    payload = symcrypto.open_sealed(
        env.suite, envelope.derive_dek(toy, seed), env.nonce, env.body, env.header_aad()
    )
    corrupt = bytearray(payload)
    corrupt[40] ^= 1  # inside the signature field
    body = symcrypto.seal(
        env.suite, envelope.derive_dek(toy, seed), env.nonce, bytes(corrupt), env.header_aad()
    )
    bad = Envelope(env.suite, env.flags, env.edek, env.nonce, body)
    with pytest.raises(BadSignature):
        decrypt_data(toy, kp.sk, bad)


def test_delegated_read_path(toy, rng):
    alice = pre.keygen(toy, rng)
    bob = pre.keygen(toy, rng)
    env = encrypt_data(toy, alice.pk, b"for bob, via a node", rng)
    bundle = pre.delegate(toy, alice.sk, bob.pk, rng)
    edek, shell = split_edek(env)
    reenc = pre.reencrypt_delegated(bundle, edek)   # node-side transform
    assert decrypt_data_delegated(toy, bob.sk, env, reenc) == b"for bob, via a node"


def test_split_rejoin_bit_identical(toy, rng):
    kp = pre.keygen(toy, rng)
    env = encrypt_data(toy, kp.pk, b"splittable", rng)
    edek, shell = split_edek(env)
    assert rejoin_edek(edek, shell).to_bytes() == env.to_bytes()


def test_split_empty_body(toy, rng):
    kp = pre.keygen(toy, rng)
    seed = toy.random_element(rng)
    edek = pre.encrypt_elem(toy, kp.pk, seed, rng)
    header_only = Envelope(1, 0, edek, b"\x00" * 12, b"")
    got_edek, shell = split_edek(header_only)
    assert got_edek == edek
    assert rejoin_edek(got_edek, shell) == header_only


def test_truncated_header_is_malformed():
    with pytest.raises(MalformedHeader):
        Envelope.from_bytes(b"NKMS\x01\x01")
    with pytest.raises(MalformedHeader):
        Envelope.from_bytes(b"JUNKJUNKJUNKJUNK")


def test_envelope_serialization_round_trip(toy, rng):
    kp = pre.keygen(toy, rng)
    env = encrypt_data(toy, kp.pk, b"roundtrippable", rng, aont=True)
    assert Envelope.from_bytes(env.to_bytes()) == env


def test_dek_bytes_never_in_envelope(toy):
    # 10,000 trials: the derived symmetric key must not appear in the
    # serialized artifact
    rng = random.Random(2024)
    kp = pre.keygen(toy, rng)
    hits = 0
    for _ in range(10_000):
        env = encrypt_data(toy, kp.pk, b"scan me", rng)
        seed = pre.decrypt_elem(toy, kp.sk, env.edek)
        dek = envelope.derive_dek(toy, seed)
        if dek in env.to_bytes():
            hits += 1
    assert hits == 0


def test_end_to_end_with_aont_and_signature(big, rng):
    alice = pre.keygen(big, rng)
    bob = pre.keygen(big, rng)
    signer = SigningKeyPair.generate(rng)
    data = bytes(rng.getrandbits(8) for _ in range(10_000))
    env = encrypt_data(big, alice.pk, data, rng, sign_with=signer, aont=True)
    bundle = pre.delegate(big, alice.sk, bob.pk, rng)
    reenc = pre.reencrypt_delegated(bundle, env.edek)
    assert decrypt_data_delegated(big, bob.sk, env, reenc) == data


# --- key rotation ----------------------------------------------------------


def _store_of(group, pk, rng, n=8):
    store = {}
    plain = {}
    for i in range(n):
        data = f"object {i}".encode()
        env = encrypt_data(group, pk, data, rng)
        store[f"obj{i}"] = env.to_bytes()
        plain[f"obj{i}"] = data
    return store, plain


def test_rotation_v1_to_v2(toy, rng):
    v1 = pre.keygen(toy, rng)
    v2 = pre.keygen(toy, rng)
    while v2.sk == v1.sk:
        v2 = pre.keygen(toy, rng)
    store, plain = _store_of(toy, v1.pk, rng)
    rk = rotate_keys(toy, v1.sk, v2.sk)
    assert rotate_edeks(store, rk) == len(store)
    for name, blob in store.items():
        env = Envelope.from_bytes(blob)
        assert decrypt_data(toy, v2.sk, env) == plain[name]
        try:
            recovered = decrypt_data(toy, v1.sk, env)
        except Exception:
            recovered = None
        assert recovered != plain[name]


def test_rotation_empty_store(toy, rng):
    v1 = pre.keygen(toy, rng)
    v2 = pre.keygen(toy, rng)
    assert rotate_edeks({}, rotate_keys(toy, v1.sk, v2.sk)) == 0


def test_double_rotation_equals_composed(toy, rng):
    v1, v2, v3 = (pre.keygen(toy, rng) for _ in range(3))
    store_a, plain = _store_of(toy, v1.pk, rng)
    store_b = dict(store_a)
    rk12 = rotate_keys(toy, v1.sk, v2.sk)
    rk23 = rotate_keys(toy, v2.sk, v3.sk)
    rotate_edeks(store_a, rk12)
    rotate_edeks(store_a, rk23)
    rotate_edeks(store_b, pre.compose_rekeys(rk12, rk23))
    for name in store_a:
        env_a = Envelope.from_bytes(store_a[name])
        env_b = Envelope.from_bytes(store_b[name])
        assert (env_a.edek.c1, env_a.edek.c2) == (env_b.edek.c1, env_b.edek.c2)
        assert decrypt_data(toy, v3.sk, env_a) == plain[name]


def test_reencrypt_envelope_keeps_body(toy, rng):
    a = pre.keygen(toy, rng)
    b = pre.keygen(toy, rng)
    env = encrypt_data(toy, a.pk, b"hop", rng)
    out = reencrypt_envelope(env, pre.rekey(toy, a.sk, b.sk))
    assert out.body == env.body and out.nonce == env.nonce
    assert decrypt_data(toy, b.sk, out) == b"hop"
