"""Hybrid-encryption envelopes: bulk data under a fresh symmetric DEK, the
DEK's seed element under a PRE public key (the EDEK).

On-disk layout, bit-exact and versioned:

    "NKMS" | version(1) | suite(1) | flags(1) | edek_len(2 BE) | edek
           | nonce(12) | body

The header is parseable without any keys so that an EDEK can be split out,
re-encrypted by a node, and spliced back in. The EDEK is therefore *not*
covered by the body's AAD; everything else in the header is.

The DEK itself is KDF(serialized seed element) and exists only in memory; the
seed element is what the PRE layer encrypts, keeping the group math on group
elements while the symmetric layer gets a uniform key.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import MutableMapping

from . import pre, symcrypto
from .aont import aont_decode, aont_encode
from .errors import BadSignature, MalformedHeader
from .group import PrimeOrderGroup, Rng
from .pre import PRECiphertext, ReencryptedMessage, ReKey
from .signing import SIGNATURE_LEN, VERIFY_KEY_LEN, SigningKeyPair, verify_signature

EDEK = PRECiphertext

MAGIC = b"NKMS"
VERSION = 1
FLAG_AONT = 0x01
FLAG_SIGNED = 0x02

_DEK_INFO = b"prekms dek v1"


@dataclass(frozen=True)
class Envelope:
    suite: int
    flags: int
    edek: EDEK
    nonce: bytes
    body: bytes

    @property
    def aont(self) -> bool:
        return bool(self.flags & FLAG_AONT)

    @property
    def signed(self) -> bool:
        return bool(self.flags & FLAG_SIGNED)

    def header_aad(self) -> bytes:
        return MAGIC + bytes([VERSION, self.suite, self.flags])

    def to_bytes(self) -> bytes:
        edek = self.edek.to_bytes()
        return (
            self.header_aad()
            + len(edek).to_bytes(2, "big")
            + edek
            + self.nonce
            + self.body
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        if len(data) < 9 or data[:4] != MAGIC:
            raise MalformedHeader("not an envelope")
        if data[4] != VERSION:
            raise MalformedHeader(f"unsupported version {data[4]}")
        suite, flags = data[5], data[6]
        edek_len = int.from_bytes(data[7:9], "big")
        if len(data) < 9 + edek_len + symcrypto.NONCE_LEN:
            raise MalformedHeader("truncated envelope")
        try:
            edek = PRECiphertext.from_bytes(data[9:9 + edek_len])
        except Exception:
            raise MalformedHeader("bad EDEK field") from None
        off = 9 + edek_len
        nonce = data[off:off + symcrypto.NONCE_LEN]
        return cls(suite, flags, edek, nonce, data[off + symcrypto.NONCE_LEN:])


def derive_dek(group: PrimeOrderGroup, seed_elem: int) -> bytes:
    return symcrypto.hkdf_sha256(group.element_to_bytes(seed_elem), _DEK_INFO)


def encrypt_data(
    group: PrimeOrderGroup,
    pk: int,
    data: bytes,
    rng: Rng,
    *,
    sign_with: SigningKeyPair | None = None,
    aont: bool = False,
    suite: int = symcrypto.SUITE_AES256GCM,
) -> Envelope:
    if not data:
        raise ValueError("refusing to wrap empty data")
    payload = data
    flags = 0
    if sign_with is not None:
        flags |= FLAG_SIGNED
        payload = sign_with.verify_key + sign_with.sign(payload) + payload
    if aont:
        flags |= FLAG_AONT
        payload = aont_encode(payload, rng)
    seed = group.random_element(rng)
    edek = pre.encrypt_elem(group, pk, seed, rng)
    nonce = symcrypto.new_nonce(rng)
    aad = MAGIC + bytes([VERSION, suite, flags])
    body = symcrypto.seal(suite, derive_dek(group, seed), nonce, payload, aad)
    return Envelope(suite, flags, edek, nonce, body)


def open_with_seed(group: PrimeOrderGroup, seed_elem: int, env: Envelope) -> bytes:
    """Open the body given the recovered DEK seed; reverses AONT and checks
    the embedded signature when flagged."""
    payload = symcrypto.open_sealed(
        env.suite, derive_dek(group, seed_elem), env.nonce, env.body, env.header_aad()
    )
    if env.aont:
        payload = aont_decode(payload)
    if env.signed:
        if len(payload) < VERIFY_KEY_LEN + SIGNATURE_LEN:
            raise BadSignature("signed payload too short")
        vk = payload[:VERIFY_KEY_LEN]
        sig = payload[VERIFY_KEY_LEN:VERIFY_KEY_LEN + SIGNATURE_LEN]
        data = payload[VERIFY_KEY_LEN + SIGNATURE_LEN:]
        verify_signature(vk, data, sig)
        return data
    return payload


def decrypt_data(group: PrimeOrderGroup, sk: int, env: Envelope) -> bytes:
    seed = pre.decrypt_elem(group, sk, env.edek)
    return open_with_seed(group, seed, env)


def decrypt_data_delegated(
    group: PrimeOrderGroup, sk_b: int, env: Envelope, reenc: ReencryptedMessage
) -> bytes:
    """B's path: the node already transformed the EDEK into `reenc`."""
    seed = pre.decrypt_delegated(group, sk_b, reenc)
    return open_with_seed(group, seed, env)


def signer_of(group: PrimeOrderGroup, sk: int, env: Envelope) -> bytes | None:
    """Verify and return the embedded signer's key, None when unsigned."""
    if not env.signed:
        return None
    seed = pre.decrypt_elem(group, sk, env.edek)
    payload = symcrypto.open_sealed(
        env.suite, derive_dek(group, seed), env.nonce, env.body, env.header_aad()
    )
    if env.aont:
        payload = aont_decode(payload)
    vk = payload[:VERIFY_KEY_LEN]
    sig = payload[VERIFY_KEY_LEN:VERIFY_KEY_LEN + SIGNATURE_LEN]
    verify_signature(vk, payload[VERIFY_KEY_LEN + SIGNATURE_LEN:], sig)
    return vk


# --- splitting the EDEK out for node-side transformation ----------------------


def split_edek(env: Envelope) -> tuple[EDEK, bytes]:
    """Partition into the EDEK and the rest of the serialized envelope.

    The shell keeps header, nonce and body untouched, so rejoining with a
    (possibly re-encrypted) EDEK of the same group is lossless.
    """
    blob = env.to_bytes()
    edek_len = int.from_bytes(blob[7:9], "big")
    shell = blob[:9] + blob[9 + edek_len:]
    return env.edek, shell


def rejoin_edek(edek: EDEK, shell: bytes) -> Envelope:
    if len(shell) < 9 or shell[:4] != MAGIC:
        raise MalformedHeader("bad envelope shell")
    edek_bytes = edek.to_bytes()
    declared = int.from_bytes(shell[7:9], "big")
    if declared != len(edek_bytes):
        raise MalformedHeader("EDEK length does not match shell header")
    return Envelope.from_bytes(shell[:9] + edek_bytes + shell[9:])


def reencrypt_envelope(env: Envelope, rk: ReKey) -> Envelope:
    return replace(env, edek=pre.reencrypt(rk, env.edek))


# --- key rotation ---------------------------------------------------------------


def rotate_keys(group: PrimeOrderGroup, sk_v1: int, sk_v2: int) -> ReKey:
    """Sharing with one's future self: a rekey from the old key to the new."""
    return pre.rekey(group, sk_v1, sk_v2)


def rotate_edeks(store: MutableMapping[str, bytes], rk: ReKey) -> int:
    """Re-encrypt every envelope's EDEK in place; returns the rewrite count.

    Requires exclusive access to the store for the duration; the old EDEKs
    are gone once this returns.
    """
    rewritten = 0
    for name in list(store):
        env = Envelope.from_bytes(store[name])
        store[name] = reencrypt_envelope(env, rk).to_bytes()
        rewritten += 1
    return rewritten
