"""Encrypted streams: every block has its own random DEK, and each block
announces the *next* block's DEK so consumers never wait on a key round trip.

Two ways into the chain:

* block 0 carries its own EDEK (the owner / first-subscriber entry point);
* every block carries ``edek_next`` — a PRE ciphertext of the next block's
  DEK seed under the channel key — so a consumer holding blocks >= k needs a
  single node re-encryption (of block k's edek_next) to decrypt everything
  from k+1 onward: the seed for block i+1 also rides inside block i's
  encrypted body, which chains without further round trips.

Block bodies are AONT-treated by default (streamed media is the classic
key-scraping target).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from . import pre, symcrypto
from .aont import aont_decode, aont_encode
from .envelope import EDEK, derive_dek
from .errors import MalformedHeader, MissingPredecessor
from .group import GROUPS_BY_CODE, PrimeOrderGroup, Rng

_FLAG_SELF = 0x01
_FLAG_NEXT = 0x02
_FLAG_AONT = 0x04


@dataclass(frozen=True)
class StreamBlock:
    seq: int
    edek_next: EDEK | None
    nonce: bytes
    body: bytes
    edek_self: EDEK | None = None   # present on block 0 only
    aont: bool = True

    def _flags(self) -> int:
        return (
            (_FLAG_SELF if self.edek_self else 0)
            | (_FLAG_NEXT if self.edek_next else 0)
            | (_FLAG_AONT if self.aont else 0)
        )

    def aad(self) -> bytes:
        return b"NKSB" + self.seq.to_bytes(4, "big") + bytes([self._flags()])

    def to_bytes(self) -> bytes:
        out = [self.seq.to_bytes(4, "big"), bytes([self._flags()])]
        for edek in (self.edek_self, self.edek_next):
            if edek is not None:
                blob = edek.to_bytes()
                out.append(len(blob).to_bytes(2, "big"))
                out.append(blob)
        out.append(self.nonce)
        out.append(self.body)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "StreamBlock":
        if len(data) < 5:
            raise MalformedHeader("stream block truncated")
        seq = int.from_bytes(data[:4], "big")
        flags = data[4]
        off = 5

        def take_edek() -> EDEK:
            nonlocal off
            n = int.from_bytes(data[off:off + 2], "big")
            edek = pre.PRECiphertext.from_bytes(data[off + 2:off + 2 + n])
            off += 2 + n
            return edek

        edek_self = take_edek() if flags & _FLAG_SELF else None
        edek_next = take_edek() if flags & _FLAG_NEXT else None
        nonce = data[off:off + symcrypto.NONCE_LEN]
        body = data[off + symcrypto.NONCE_LEN:]
        return cls(seq, edek_next, nonce, body, edek_self, bool(flags & _FLAG_AONT))


def stream_encrypt(
    group: PrimeOrderGroup,
    pk: int,
    chunks: Iterable[bytes],
    rng: Rng,
    *,
    aont: bool = True,
    suite: int = symcrypto.SUITE_AES256GCM,
) -> Iterator[StreamBlock]:
    it = iter(chunks)
    try:
        current = next(it)
    except StopIteration:
        return
    seq = 0
    seed = group.random_element(rng)
    edek_self = pre.encrypt_elem(group, pk, seed, rng)
    while True:
        try:
            upcoming = next(it)
        except StopIteration:
            upcoming = None
        next_seed = group.random_element(rng) if upcoming is not None else None
        edek_next = (
            pre.encrypt_elem(group, pk, next_seed, rng) if next_seed is not None else None
        )
        payload = aont_encode(current, rng) if aont else current
        plain = (
            group.element_to_bytes(next_seed) if next_seed is not None else b""
        ) + payload
        nonce = symcrypto.new_nonce(rng)
        block = StreamBlock(seq, edek_next, nonce, b"", edek_self, aont)
        body = symcrypto.seal(suite, derive_dek(group, seed), nonce, plain, block.aad())
        yield StreamBlock(seq, edek_next, nonce, body, edek_self, aont)
        if upcoming is None:
            return
        current, seed, edek_self = upcoming, next_seed, None
        seq += 1


def _open_block(
    group: PrimeOrderGroup, seed: int, block: StreamBlock, suite: int
) -> tuple[bytes, int | None]:
    plain = symcrypto.open_sealed(
        suite, derive_dek(group, seed), block.nonce, block.body, block.aad()
    )
    next_seed = None
    if block.edek_next is not None:
        next_seed = group.element_from_bytes(plain[:group.element_bytes])
        plain = plain[group.element_bytes:]
    data = aont_decode(plain) if block.aont else plain
    return data, next_seed


def stream_decrypt_from(
    group: PrimeOrderGroup,
    first_seed: int,
    blocks: Iterable[StreamBlock],
    *,
    suite: int = symcrypto.SUITE_AES256GCM,
) -> Iterator[bytes]:
    """Decrypt a contiguous run of blocks given the first block's DEK seed."""
    seed: int | None = first_seed
    expect: int | None = None
    for block in blocks:
        if expect is not None and block.seq != expect:
            raise MissingPredecessor(f"expected block {expect}, got {block.seq}")
        if seed is None:
            raise MissingPredecessor(f"no key chained for block {block.seq}")
        data, seed = _open_block(group, seed, block, suite)
        expect = block.seq + 1
        yield data


def stream_decrypt(
    group: PrimeOrderGroup,
    sk: int,
    blocks: Iterable[StreamBlock],
    *,
    suite: int = symcrypto.SUITE_AES256GCM,
) -> bytes:
    """Owner path: starts from block 0's own EDEK."""
    it = iter(blocks)
    try:
        head = next(it)
    except StopIteration:
        return b""
    if head.seq != 0 or head.edek_self is None:
        raise MissingPredecessor("stream must start at block 0 (which carries its EDEK)")
    seed = pre.decrypt_elem(group, sk, head.edek_self)

    def chain() -> Iterator[StreamBlock]:
        yield head
        yield from it

    return b"".join(stream_decrypt_from(group, seed, chain(), suite=suite))
