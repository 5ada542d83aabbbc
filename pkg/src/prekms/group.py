"""Prime-order cyclic groups used as the substrate for all re-encryption math.

Two backends are registered:

* ``modp2048`` — a 2048-bit Schnorr group (multiplicative subgroup of Z_p* of
  256-bit prime order q). The default for real envelopes.
* ``toy23`` — the subgroup of order q=11 generated by 2 in Z_23*. Small enough
  that every test oracle can enumerate all scalars and messages exhaustively.

Group elements and scalars are plain ints; all structure lives in the
``PrimeOrderGroup`` handle, which also owns the canonical fixed-length
big-endian encodings.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import OutOfGroup, ZeroKey

# Any RNG with the random.Random surface works: seeded random.Random for
# deterministic simulation, random.SystemRandom for real key material.
Rng = random.Random


def system_rng() -> random.Random:
    return random.SystemRandom()


@dataclass(frozen=True)
class PrimeOrderGroup:
    """Cyclic group of prime order q inside Z_p*, generated by g."""

    group_id: str
    wire_code: int          # single byte used in serialized ciphertexts
    p: int                  # modulus
    q: int                  # subgroup order, prime
    g: int                  # generator of the order-q subgroup
    element_bytes: int
    scalar_bytes: int
    permits_zero_r: bool = False   # degenerate randomness, test groups only
    _elements: frozenset[int] | None = field(default=None, repr=False)

    # --- group operations ---------------------------------------------

    def exp(self, base: int, e: int) -> int:
        return pow(base, e % self.q, self.p)

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.p

    def inv(self, a: int) -> int:
        return pow(a, -1, self.p)

    def is_member(self, x: int) -> bool:
        return 0 < x < self.p and pow(x, self.q, self.p) == 1

    def check_member(self, x: int) -> int:
        if not self.is_member(x):
            raise OutOfGroup(f"{x} is not in the order-{self.q} subgroup of {self.group_id}")
        return x

    # --- scalar field (mod q) -------------------------------------------

    def scalar(self, v: int) -> int:
        return v % self.q

    def scalar_inv(self, s: int) -> int:
        s %= self.q
        if s == 0:
            raise ZeroKey("scalar has no inverse")
        return pow(s, -1, self.q)

    def scalar_mul(self, a: int, b: int) -> int:
        return (a * b) % self.q

    # --- sampling --------------------------------------------------------

    def random_scalar(self, rng: Rng, nonzero: bool = True) -> int:
        while True:
            s = rng.randrange(self.q)
            if s or not nonzero:
                return s

    def random_element(self, rng: Rng) -> int:
        """Uniform over the subgroup (includes the identity)."""
        return self.exp(self.g, rng.randrange(self.q))

    # --- canonical encodings ---------------------------------------------

    def element_to_bytes(self, x: int) -> bytes:
        return x.to_bytes(self.element_bytes, "big")

    def element_from_bytes(self, b: bytes) -> int:
        if len(b) != self.element_bytes:
            raise OutOfGroup(f"expected {self.element_bytes} bytes, got {len(b)}")
        return self.check_member(int.from_bytes(b, "big"))

    def scalar_to_bytes(self, s: int) -> bytes:
        return (s % self.q).to_bytes(self.scalar_bytes, "big")

    def scalar_from_bytes(self, b: bytes) -> int:
        if len(b) != self.scalar_bytes:
            raise OutOfGroup(f"expected {self.scalar_bytes} bytes, got {len(b)}")
        v = int.from_bytes(b, "big")
        if v >= self.q:
            raise OutOfGroup("scalar not reduced mod q")
        return v

    def elements(self) -> frozenset[int]:
        """All subgroup elements; only callable on test-sized groups."""
        if self._elements is None:
            if self.q > 1 << 16:
                raise ValueError("group too large to enumerate")
            elems = set()
            x = 1
            for _ in range(self.q):
                elems.add(x)
                x = self.mul(x, self.g)
            object.__setattr__(self, "_elements", frozenset(elems))
        return self._elements


# 2048-bit modulus with a 256-bit prime-order subgroup. Constants were derived
# from SHA-256 chains and fixed; tests re-check primality and subgroup order.
_MODP2048_Q = int(
    "DF7B1D39CB6E057368A9BF7EDB8F423FE361C0AD1F781AEF82792C0734AD7D6F", 16
)
_MODP2048_P = int(
    "C3B23892FBDA5751D9A79CD5BBD9BDD5BD619F2D15992634E53E1B9AF33DA175"
    "66E42224E4948D13C0B43F6DD9856F3355742D69E7A3849256C50B628D879091"
    "11FF216333407B2051EFD3C2818E9FC7D6FD7BE9411F94DE6847F09ED1F1362D"
    "409BB84FF888F174651466DA2D66C4996D48E31722373E16DF30C35FA77E3E7A"
    "B05A3DF3FF6DFCC55B5551FA98BD8DD71BE4BAA48618C3CCC1CE419718DA2F3F"
    "2B8312BD8BC3CCC9FD12614AB2664C070471BF2DBD334D4D0D095D3BE78AA27C"
    "2CBAA383DD019A0D7C8B6073237C644A3B7449C11006D3AF8E7E1103888C92CD"
    "A588385EB2AC19ABDE320130B5245D18E6D76751D865755107919242A8AC6013", 16
)
_MODP2048_G = int(
    "A1A15463517C5D7049870A5A1CDBD667DD7C6D0D654F82DB73EB22DDC8FE4CCD"
    "1BFC10EA3AD74FA8C23896197CEF4F5B4C5FF8A597DBDEC3367F7B1D540D4A51"
    "35EBBEC19D23481CBEB7900306274A6A572633910605BEE8FDED754B5997685A"
    "A58B7F19872D62CE6B945C6628C53CECD41E028CB70B267ADB9337453567613A"
    "F36B8B3F069DD79B9625AE736D486B14994A3A64E923D0B0CE3C7D21FB6BEB43"
    "CAD2ACD97FDD481EE5C5231C8B9776B849E34620A76E146B87A42743C9803EC7"
    "99610104D47964C4FA5FD53E33B69F071C3839EE91677766D7953AE79452DF94"
    "0DE8133B0C96047C58951829953CC8872D48971D573760E9B360CE491CC83D48", 16
)

MODP2048 = PrimeOrderGroup(
    group_id="modp2048",
    wire_code=2,
    p=_MODP2048_P,
    q=_MODP2048_Q,
    g=_MODP2048_G,
    element_bytes=256,
    scalar_bytes=32,
)

# p=23, q=11, g=2: small enough that 110 scalar pairs x 11 messages x 10
# nonces can be enumerated in oracles.
TOY23 = PrimeOrderGroup(
    group_id="toy23",
    wire_code=1,
    p=23,
    q=11,
    g=2,
    element_bytes=1,
    scalar_bytes=1,
    permits_zero_r=True,
)

GROUPS: dict[str, PrimeOrderGroup] = {g.group_id: g for g in (MODP2048, TOY23)}
GROUPS_BY_CODE: dict[int, PrimeOrderGroup] = {g.wire_code: g for g in GROUPS.values()}

DEFAULT_GROUP = MODP2048


def get_group(group_id: str) -> PrimeOrderGroup:
    try:
        return GROUPS[group_id]
    except KeyError:
        raise OutOfGroup(f"unknown group {group_id!r}") from None
