"""Symmetric building blocks: AEAD suite registry, key derivation, and the
authenticated public-key wrapping used to seal ephemeral scalars.

The suite id is the envelope header's agility point; only AES-256-GCM is
registered for now.
"""

from __future__ import annotations

import hashlib

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import BadAuthTag, WrongRecipient
from .group import PrimeOrderGroup, Rng

SUITE_AES256GCM = 1
KEY_LEN = 32
NONCE_LEN = 12


def hkdf_sha256(ikm: bytes, info: bytes, length: int = KEY_LEN) -> bytes:
    """RFC 5869 extract-and-expand with a fixed zero salt."""
    prk = _hmac(b"\x00" * 32, ikm)
    out = b""
    block = b""
    counter = 1
    while len(out) < length:
        block = _hmac(prk, block + info + bytes([counter]))
        out += block
        counter += 1
    return out[:length]


def _hmac(key: bytes, msg: bytes) -> bytes:
    import hmac

    return hmac.new(key, msg, hashlib.sha256).digest()


def new_nonce(rng: Rng) -> bytes:
    return rng.getrandbits(8 * NONCE_LEN).to_bytes(NONCE_LEN, "big")


def seal(suite: int, key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    if suite != SUITE_AES256GCM:
        raise ValueError(f"unknown cipher suite {suite}")
    return AESGCM(key).encrypt(nonce, plaintext, aad)


def open_sealed(suite: int, key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if suite != SUITE_AES256GCM:
        raise ValueError(f"unknown cipher suite {suite}")
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag:
        raise BadAuthTag("authentication failed") from None


# --- sealing a scalar to a public key ----------------------------------------
#
# ElGamal-style shared secret -> HKDF -> AES-GCM over the fixed-length scalar
# encoding. The GCM tag is what turns a wrong secret key into WrongRecipient
# instead of silent garbage.

_WRAP_INFO = b"prekms scalar wrap v1"


def wrap_scalar(group: PrimeOrderGroup, pk: int, scalar: int, rng: Rng) -> bytes:
    t = group.random_scalar(rng)
    eph = group.exp(group.g, t)
    shared = group.exp(pk, t)
    key = hkdf_sha256(group.element_to_bytes(eph) + group.element_to_bytes(shared), _WRAP_INFO)
    nonce = new_nonce(rng)
    ct = seal(SUITE_AES256GCM, key, nonce, group.scalar_to_bytes(scalar))
    return group.element_to_bytes(eph) + nonce + ct


def unwrap_scalar(group: PrimeOrderGroup, sk: int, wrapped: bytes) -> int:
    eb = group.element_bytes
    if len(wrapped) < eb + NONCE_LEN + group.scalar_bytes + 16:
        raise WrongRecipient("wrapped scalar truncated")
    try:
        eph = group.element_from_bytes(wrapped[:eb])
    except Exception:
        raise WrongRecipient("bad ephemeral element") from None
    nonce = wrapped[eb:eb + NONCE_LEN]
    ct = wrapped[eb + NONCE_LEN:]
    shared = group.exp(eph, sk)
    key = hkdf_sha256(group.element_to_bytes(eph) + group.element_to_bytes(shared), _WRAP_INFO)
    try:
        raw = open_sealed(SUITE_AES256GCM, key, nonce, ct)
    except BadAuthTag:
        raise WrongRecipient("not wrapped for this key") from None
    return group.scalar_from_bytes(raw)
