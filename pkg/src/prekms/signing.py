"""Ed25519 signing identities.

Signing keys are a separate type from encryption keys on purpose: the two
must never be the same material, and the type system is what enforces that
here (no conversion between SigningKeyPair and pre.KeyPair exists).
"""

from __future__ import annotations

from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import BadSignature
from .group import Rng

VERIFY_KEY_LEN = 32
SIGNATURE_LEN = 64


@dataclass(frozen=True)
class SigningKeyPair:
    seed: bytes          # 32-byte Ed25519 seed
    verify_key: bytes    # 32-byte public key

    @classmethod
    def generate(cls, rng: Rng) -> "SigningKeyPair":
        seed = rng.getrandbits(256).to_bytes(32, "big")
        return cls.from_seed(seed)

    @classmethod
    def from_seed(cls, seed: bytes) -> "SigningKeyPair":
        priv = Ed25519PrivateKey.from_private_bytes(seed)
        from cryptography.hazmat.primitives.serialization import (
            Encoding,
            PublicFormat,
        )

        pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(seed, pub)

    def sign(self, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.seed).sign(message)


def verify_signature(verify_key: bytes, message: bytes, signature: bytes) -> None:
    try:
        Ed25519PublicKey.from_public_bytes(verify_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        raise BadSignature("signature does not verify") from None
