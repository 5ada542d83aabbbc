"""All-or-nothing transform (package transform).

Counters the key-scraping pattern where a delegatee bulk-downloads small
EDEKs and decrypts the bulk data later: after this transform, recovering any
of the plaintext requires every block of the package.

Layout (all lengths fixed by construction):

    u64 original length
    ceil(len/4096) masked 4096-byte blocks (last block zero-padded)
    32-byte masked inner key   (inner key XOR H(i || block_i) over all blocks)
    32-byte integrity tag      (H(tag-domain || inner key || length || n))

Each block is masked with an AES-256-CTR keystream under the random inner
key, with the block index as nonce, so a missing or modified block corrupts
the recovered inner key and the tag check fails.
"""

from __future__ import annotations

import hashlib
import struct

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import AontIntegrityError
from .group import Rng

BLOCK_SIZE = 4096
KEY_SIZE = 32
_LEN = 8
_TAG_DOMAIN = b"prekms aont tag v1"


def _keystream(key: bytes, index: int, length: int) -> bytes:
    nonce = struct.pack(">QQ", 0, index)
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return enc.update(b"\x00" * length)


def _block_hash(index: int, block: bytes) -> bytes:
    return hashlib.sha256(struct.pack(">Q", index) + block).digest()


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _tag(inner_key: bytes, length: int, nblocks: int) -> bytes:
    return hashlib.sha256(
        _TAG_DOMAIN + inner_key + struct.pack(">QQ", length, nblocks)
    ).digest()


def encoded_len(data_len: int) -> int:
    nblocks = max(1, -(-data_len // BLOCK_SIZE))
    return _LEN + nblocks * BLOCK_SIZE + KEY_SIZE + KEY_SIZE


def aont_encode(data: bytes, rng: Rng) -> bytes:
    inner_key = rng.getrandbits(8 * KEY_SIZE).to_bytes(KEY_SIZE, "big")
    nblocks = max(1, -(-len(data) // BLOCK_SIZE))
    padded = data.ljust(nblocks * BLOCK_SIZE, b"\x00")
    out = [struct.pack(">Q", len(data))]
    key_mask = bytearray(KEY_SIZE)
    for i in range(nblocks):
        block = padded[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE]
        masked = _xor(block, _keystream(inner_key, i, BLOCK_SIZE))
        out.append(masked)
        key_mask = bytearray(_xor(key_mask, _block_hash(i, masked)))
    out.append(_xor(inner_key, bytes(key_mask)))
    out.append(_tag(inner_key, len(data), nblocks))
    return b"".join(out)


def aont_decode(package: bytes) -> bytes:
    if len(package) < _LEN + BLOCK_SIZE + 2 * KEY_SIZE:
        raise AontIntegrityError("package too short")
    body_len = len(package) - _LEN - 2 * KEY_SIZE
    if body_len % BLOCK_SIZE != 0:
        raise AontIntegrityError("package is not block-aligned")
    nblocks = body_len // BLOCK_SIZE
    (length,) = struct.unpack(">Q", package[:_LEN])
    if max(1, -(-length // BLOCK_SIZE)) != nblocks:
        raise AontIntegrityError("length field inconsistent with block count")
    key_mask = bytearray(KEY_SIZE)
    blocks = []
    for i in range(nblocks):
        start = _LEN + i * BLOCK_SIZE
        masked = package[start:start + BLOCK_SIZE]
        blocks.append(masked)
        key_mask = bytearray(_xor(key_mask, _block_hash(i, masked)))
    masked_key = package[_LEN + body_len:_LEN + body_len + KEY_SIZE]
    inner_key = _xor(masked_key, bytes(key_mask))
    tag = package[-KEY_SIZE:]
    if tag != _tag(inner_key, length, nblocks):
        raise AontIntegrityError("package incomplete or modified")
    data = b"".join(
        _xor(blocks[i], _keystream(inner_key, i, BLOCK_SIZE)) for i in range(nblocks)
    )
    return data[:length]
