"""Proxy re-encryption over a pluggable prime-order group.

The scheme is the classic bidirectional, multi-hop, interactive form:

    keypair:    pk = g^sk
    encrypt:    c = (m * g^r, pk^r)
    rekey:      rk(a->b) = sk_b * sk_a^-1  (mod q)
    reencrypt:  (c1, c2) -> (c1, c2^rk)        [deterministic]
    decrypt:    m = c1 / c2^(sk^-1)

Re-encryption keys compose (rk_ab * rk_bc = rk_ac) and invert, which is what
the multi-hop and rotation layers build on. Delegation to a public key uses a
fresh ephemeral keypair: the node gets rk(a->e), the recipient gets sk_e
sealed to their public key.

Everything here is a pure function over immutable inputs; randomness enters
only through the caller's rng handle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from . import symcrypto
from .errors import InsufficientShares, OutOfGroup, ZeroKey
from .group import GROUPS_BY_CODE, PrimeOrderGroup, Rng

WIRE_VERSION = 1


@dataclass(frozen=True)
class KeyPair:
    group: PrimeOrderGroup
    sk: int
    pk: int


@dataclass(frozen=True)
class PRECiphertext:
    group: PrimeOrderGroup
    c1: int          # m * g^r
    c2: int          # pk^r
    hops: int = 0    # metadata only; the scheme itself is unbounded multi-hop

    def to_bytes(self) -> bytes:
        if not 0 <= self.hops <= 255:
            raise ValueError("hop counter out of wire range")
        return bytes([WIRE_VERSION, self.group.wire_code]) + \
            self.group.element_to_bytes(self.c1) + \
            self.group.element_to_bytes(self.c2) + bytes([self.hops])

    @classmethod
    def from_bytes(cls, data: bytes) -> "PRECiphertext":
        if len(data) < 3 or data[0] != WIRE_VERSION:
            raise OutOfGroup("bad ciphertext framing")
        group = GROUPS_BY_CODE.get(data[1])
        if group is None:
            raise OutOfGroup(f"unknown group code {data[1]}")
        eb = group.element_bytes
        if len(data) != 2 + 2 * eb + 1:
            raise OutOfGroup("ciphertext length mismatch")
        c1 = group.element_from_bytes(data[2:2 + eb])
        c2 = group.element_from_bytes(data[2 + eb:2 + 2 * eb])
        return cls(group, c1, c2, data[-1])


@dataclass(frozen=True)
class ReKey:
    group: PrimeOrderGroup
    factor: int      # sk_dst * sk_src^-1 mod q

    def to_bytes(self) -> bytes:
        return bytes([WIRE_VERSION, self.group.wire_code]) + self.group.scalar_to_bytes(self.factor)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReKey":
        group = _group_of(data)
        factor = group.scalar_from_bytes(data[2:])
        if factor == 0:
            raise ZeroKey("zero re-encryption key")
        return cls(group, factor)


@dataclass(frozen=True)
class DelegationBundle:
    """Material a node holds to serve a public-key delegation.

    `rk_ae` transforms ciphertexts toward the ephemeral key; `wrapped_eph`
    carries sk_e sealed to the recipient and travels with every re-encryption
    result. `pk_e` is retained so tests and audits can check the wrap.
    """

    rk_ae: ReKey
    wrapped_eph: bytes
    pk_e: int

    def to_bytes(self) -> bytes:
        group = self.rk_ae.group
        rk = self.rk_ae.to_bytes()
        return rk + group.element_to_bytes(self.pk_e) + \
            len(self.wrapped_eph).to_bytes(2, "big") + self.wrapped_eph

    @classmethod
    def from_bytes(cls, data: bytes) -> "DelegationBundle":
        group = _group_of(data)
        off = 2 + group.scalar_bytes
        rk = ReKey.from_bytes(data[:off])
        pk_e = group.element_from_bytes(data[off:off + group.element_bytes])
        off += group.element_bytes
        n = int.from_bytes(data[off:off + 2], "big")
        wrapped = data[off + 2:off + 2 + n]
        if len(wrapped) != n:
            raise OutOfGroup("bundle truncated")
        return cls(rk, wrapped, pk_e)


@dataclass(frozen=True)
class ReencryptedMessage:
    c_e: PRECiphertext
    wrapped_eph: bytes

    def to_bytes(self) -> bytes:
        ct = self.c_e.to_bytes()
        return ct + len(self.wrapped_eph).to_bytes(2, "big") + self.wrapped_eph

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReencryptedMessage":
        group = _group_of(data)
        ct_len = 2 + 2 * group.element_bytes + 1
        ct = PRECiphertext.from_bytes(data[:ct_len])
        n = int.from_bytes(data[ct_len:ct_len + 2], "big")
        return cls(ct, data[ct_len + 2:ct_len + 2 + n])


class ShareKind(enum.Enum):
    ADDITIVE = "additive-m-of-m"
    THRESHOLD = "threshold-m-of-n"


@dataclass(frozen=True)
class ShareScheme:
    kind: ShareKind
    m: int
    n: int


@dataclass(frozen=True)
class ReKeyShare:
    group: PrimeOrderGroup
    index: int
    value: int
    scheme: ShareScheme

    def to_bytes(self) -> bytes:
        kind = 1 if self.scheme.kind is ShareKind.ADDITIVE else 2
        return bytes([WIRE_VERSION, self.group.wire_code, kind]) + \
            self.index.to_bytes(2, "big") + \
            self.scheme.m.to_bytes(2, "big") + self.scheme.n.to_bytes(2, "big") + \
            self.group.scalar_to_bytes(self.value)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReKeyShare":
        group = _group_of(data)
        kind = ShareKind.ADDITIVE if data[2] == 1 else ShareKind.THRESHOLD
        index = int.from_bytes(data[3:5], "big")
        m = int.from_bytes(data[5:7], "big")
        n = int.from_bytes(data[7:9], "big")
        value = group.scalar_from_bytes(data[9:])
        return cls(group, index, value, ShareScheme(kind, m, n))


@dataclass(frozen=True)
class PartialReencryption:
    index: int
    c2_part: int


@dataclass(frozen=True)
class ChallengeEntry:
    input: PRECiphertext
    expected_output: PRECiphertext


@dataclass(frozen=True)
class ChallengePack:
    entries: tuple[ChallengeEntry, ...]
    pk_owner: int


def _group_of(data: bytes) -> PrimeOrderGroup:
    if len(data) < 2 or data[0] != WIRE_VERSION:
        raise OutOfGroup("bad framing")
    group = GROUPS_BY_CODE.get(data[1])
    if group is None:
        raise OutOfGroup(f"unknown group code {data[1]}")
    return group


# --- key generation and the basic cycle ---------------------------------------

def keygen(group: PrimeOrderGroup, rng: Rng) -> KeyPair:
    sk = group.random_scalar(rng)   # nonzero by construction
    return KeyPair(group, sk, group.exp(group.g, sk))


def encrypt_elem(group: PrimeOrderGroup, pk: int, m: int, rng: Rng) -> PRECiphertext:
    group.check_member(m)
    group.check_member(pk)
    r = group.random_scalar(rng, nonzero=not group.permits_zero_r)
    return PRECiphertext(group, group.mul(m, group.exp(group.g, r)), group.exp(pk, r))


def decrypt_elem(group: PrimeOrderGroup, sk: int, ct: PRECiphertext) -> int:
    if sk % group.q == 0:
        raise ZeroKey("secret key is zero")
    shared = group.exp(ct.c2, group.scalar_inv(sk))   # g^r
    return group.mul(ct.c1, group.inv(shared))


def rekey(group: PrimeOrderGroup, sk_src: int, sk_dst: int) -> ReKey:
    if sk_src % group.q == 0 or sk_dst % group.q == 0:
        raise ZeroKey("re-encryption keys need two nonzero secrets")
    return ReKey(group, group.scalar_mul(sk_dst, group.scalar_inv(sk_src)))


def reencrypt(rk: ReKey, ct: PRECiphertext) -> PRECiphertext:
    group = ct.group
    return PRECiphertext(group, ct.c1, group.exp(ct.c2, rk.factor), ct.hops + 1)


def compose_rekeys(rk_ab: ReKey, rk_bc: ReKey) -> ReKey:
    group = rk_ab.group
    return ReKey(group, group.scalar_mul(rk_ab.factor, rk_bc.factor))


def invert_rekey(rk: ReKey) -> ReKey:
    return ReKey(rk.group, rk.group.scalar_inv(rk.factor))


# --- public-key delegation via an ephemeral keypair -----------------------------

def delegate(group: PrimeOrderGroup, sk_a: int, pk_b: int, rng: Rng) -> DelegationBundle:
    group.check_member(pk_b)
    eph = keygen(group, rng)
    rk_ae = rekey(group, sk_a, eph.sk)
    wrapped = symcrypto.wrap_scalar(group, pk_b, eph.sk, rng)
    # eph.sk is not retained anywhere past this frame
    return DelegationBundle(rk_ae, wrapped, eph.pk)


def reencrypt_delegated(bundle: DelegationBundle, ct: PRECiphertext) -> ReencryptedMessage:
    return ReencryptedMessage(reencrypt(bundle.rk_ae, ct), bundle.wrapped_eph)


def decrypt_delegated(group: PrimeOrderGroup, sk_b: int, msg: ReencryptedMessage) -> int:
    sk_e = symcrypto.unwrap_scalar(group, sk_b, msg.wrapped_eph)
    return decrypt_elem(group, sk_e, msg.c_e)


# --- split-key re-encryption ------------------------------------------------

def split_rekey_additive(rk: ReKey, m: int, rng: Rng) -> list[ReKeyShare]:
    if m < 1:
        raise InsufficientShares("need at least one share")
    group = rk.group
    scheme = ShareScheme(ShareKind.ADDITIVE, m, m)
    head = [rng.randrange(group.q) for _ in range(m - 1)]
    last = (rk.factor - sum(head)) % group.q
    values = head + [last]
    return [ReKeyShare(group, i + 1, v, scheme) for i, v in enumerate(values)]


def split_rekey_threshold(rk: ReKey, m: int, n: int, rng: Rng) -> list[ReKeyShare]:
    if not 1 <= m <= n:
        raise InsufficientShares(f"threshold {m} of {n} is not satisfiable")
    group = rk.group
    coeffs = [rk.factor] + [rng.randrange(group.q) for _ in range(m - 1)]
    scheme = ShareScheme(ShareKind.THRESHOLD, m, n)
    return [
        ReKeyShare(group, i, _poly_eval(coeffs, i, group.q), scheme)
        for i in range(1, n + 1)
    ]


def _poly_eval(coeffs: list[int], x: int, q: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % q
    return acc


def apply_share(share: ReKeyShare, ct: PRECiphertext) -> PartialReencryption:
    return PartialReencryption(share.index, ct.group.exp(ct.c2, share.value))


def lagrange_at_zero(indices: list[int], q: int) -> dict[int, int]:
    """Lagrange coefficients lambda_i such that P(0) = sum lambda_i * P(i)."""
    coeffs = {}
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j == i:
                continue
            num = (num * j) % q
            den = (den * (j - i)) % q
        coeffs[i] = (num * pow(den, -1, q)) % q
    return coeffs


def combine_shares(
    group: PrimeOrderGroup,
    c1: int,
    parts: list[PartialReencryption],
    scheme: ShareScheme,
    hops: int = 0,
) -> PRECiphertext:
    indices = [p.index for p in parts]
    if len(set(indices)) != len(indices):
        raise InsufficientShares("duplicate share indices")
    if scheme.kind is ShareKind.ADDITIVE:
        if set(indices) != set(range(1, scheme.m + 1)):
            raise InsufficientShares(f"additive scheme needs all {scheme.m} parts")
        c2 = 1
        for p in parts:
            c2 = group.mul(c2, p.c2_part)
    else:
        if len(parts) < scheme.m:
            raise InsufficientShares(f"need {scheme.m} distinct parts, got {len(parts)}")
        used = parts[:scheme.m]
        lam = lagrange_at_zero([p.index for p in used], group.q)
        c2 = 1
        for p in used:
            c2 = group.mul(c2, group.exp(p.c2_part, lam[p.index]))
    return PRECiphertext(group, c1, c2, hops + 1)


# --- challenge packs -----------------------------------------------------------
#
# Re-encryption is deterministic, so (input, expected output) pairs over throwaway
# plaintexts prove node misbehavior without touching real traffic.

def make_challenge_pack(rk: ReKey, pk_owner: int, n: int, rng: Rng) -> ChallengePack:
    if n < 1:
        raise ValueError("a pack needs at least one entry")
    group = rk.group
    entries = []
    for _ in range(n):
        m = group.random_element(rng)
        ct = encrypt_elem(group, pk_owner, m, rng)
        entries.append(ChallengeEntry(ct, reencrypt(rk, ct)))
    return ChallengePack(tuple(entries), pk_owner)


def verify_challenge_entry(entry: ChallengeEntry, observed: PRECiphertext) -> bool:
    exp = entry.expected_output
    return (
        observed.group is exp.group
        and observed.c1 == exp.c1
        and observed.c2 == exp.c2
        and observed.hops == exp.hops
    )


def strip_hops(ct: PRECiphertext) -> PRECiphertext:
    return replace(ct, hops=0)
