"""RSA blind signatures with a full-domain hash.

A medical institute endorses a report without seeing it: the reporter
wraps the hashed message with a random invertible factor, the institute
exponentiates with its private key, and the reporter divides the factor
back out. The result verifies like an ordinary RSA-FDH signature.

Two profiles coexist. Production keys are 2048-bit with the SHA-256
counter-mode domain hash. Tests may build tiny keypairs directly and pass
``identity_domain_map`` so every value stays hand-checkable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import gmpy2

DEFAULT_PUBLIC_EXPONENT = 65537
PRODUCTION_KEY_BITS = 2048
MIID_LEN = 8


def _powmod(base: int, exp: int, mod: int) -> int:
    return int(gmpy2.powmod(base, exp, mod))


@dataclass(frozen=True)
class PublicKey:
    n: int
    e: int

    @property
    def byte_length(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True)
class InstituteKeyPair:
    """RSA parameters plus the institute's 8-byte identifier.

    ``p``/``q`` are retained when known so signing can take the CRT fast
    path; they are never serialized.
    """

    miid: bytes
    n: int
    e: int
    d: int = field(repr=False)
    p: int | None = field(default=None, repr=False)
    q: int | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if len(self.miid) != MIID_LEN:
            raise ValueError(f"MIID must be {MIID_LEN} bytes")

    @property
    def public_key(self) -> PublicKey:
        return PublicKey(self.n, self.e)


@dataclass(frozen=True)
class BlindingFactor:
    r: int


@dataclass(frozen=True)
class BlindedMessage:
    value: int


@dataclass(frozen=True)
class Endorsement:
    signature: int

    def to_bytes(self, pub: PublicKey) -> bytes:
        """Big-endian at full modulus width."""
        return self.signature.to_bytes(pub.byte_length, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Endorsement":
        return cls(int.from_bytes(data, "big"))


def normalize_miid(miid: str | bytes) -> bytes:
    """Canonical 8-byte ASCII identifier, space-padded on the right."""
    raw = miid.encode("ascii") if isinstance(miid, str) else miid
    if not raw or len(raw) > MIID_LEN:
        raise ValueError(f"MIID must be 1..{MIID_LEN} bytes, got {len(raw)!r}")
    if not all(0x20 <= b < 0x7F for b in raw):
        raise ValueError("MIID must be printable ASCII")
    return raw.ljust(MIID_LEN, b" ")


def full_domain_hash(message: bytes, n: int) -> int:
    """Deterministic map of a message into [0, n).

    SHA-256 in counter mode expands the message to 16 bytes beyond the
    modulus width before reduction, keeping the mod-n bias negligible.
    """
    if n < 4:
        raise ValueError("modulus too small for domain hashing")
    width = (n.bit_length() + 7) // 8 + 16
    blocks = []
    counter = 0
    while 32 * len(blocks) < width:
        blocks.append(hashlib.sha256(message + counter.to_bytes(4, "big")).digest())
        counter += 1
    return int.from_bytes(b"".join(blocks)[:width], "big") % n


def identity_domain_map(message: bytes, n: int) -> int:
    """Test profile: read the message as an integer, no hashing."""
    value = int.from_bytes(message, "big")
    if value >= n:
        raise ValueError("message too large for identity domain map")
    return value


def blind_with_factor(message: bytes, pub: PublicKey, r: int, domain_hash=full_domain_hash) -> BlindedMessage:
    """Wrap the hashed message with a caller-chosen blinding factor."""
    if not 1 <= r < pub.n:
        raise ValueError("blinding factor out of range")
    if math.gcd(r, pub.n) != 1:
        raise ValueError("blinding factor not invertible")
    m = domain_hash(message, pub.n)
    return BlindedMessage(m * _powmod(r, pub.e, pub.n) % pub.n)


def blind(message: bytes, pub: PublicKey, rng, domain_hash=full_domain_hash) -> tuple[BlindedMessage, BlindingFactor]:
    """Blind a message with a fresh random factor drawn from `rng`."""
    while True:
        r = rng.randrange(2, pub.n)
        if math.gcd(r, pub.n) == 1:
            break
    return blind_with_factor(message, pub, r, domain_hash), BlindingFactor(r)


def sign_blinded(blinded: BlindedMessage, keypair: InstituteKeyPair) -> int:
    """Institute-side exponentiation of a blinded value."""
    if keypair.p is not None and keypair.q is not None:
        # CRT path: two half-size exponentiations instead of one full one.
        p, q = keypair.p, keypair.q
        sp = _powmod(blinded.value % p, keypair.d % (p - 1), p)
        sq = _powmod(blinded.value % q, keypair.d % (q - 1), q)
        qinv = int(gmpy2.invert(q, p))
        return sq + q * ((qinv * (sp - sq)) % p)
    return _powmod(blinded.value, keypair.d, keypair.n)


def unblind(blinded_sig: int, factor: BlindingFactor, pub: PublicKey) -> Endorsement:
    """Divide out the blinding factor, leaving a plain RSA-FDH signature."""
    try:
        r_inv = int(gmpy2.invert(factor.r, pub.n))
    except ZeroDivisionError as exc:
        raise ValueError("blinding factor not invertible") from exc
    return Endorsement(blinded_sig * r_inv % pub.n)


def verify(message: bytes, sig: Endorsement, pub: PublicKey, domain_hash=full_domain_hash) -> bool:
    """True iff sig^e equals the domain hash of the message, mod n."""
    if not 0 <= sig.signature < pub.n:
        return False
    return _powmod(sig.signature, pub.e, pub.n) == domain_hash(message, pub.n)


def generate_keypair(miid: str | bytes, rng, bits: int = PRODUCTION_KEY_BITS) -> InstituteKeyPair:
    """Deterministic RSA keypair from a seeded RNG.

    Prime candidates are drawn from `rng` with the top two bits set and
    bumped to the next prime, so a fixed seed always yields the same key.
    """
    if bits < 32 or bits % 2 != 0:
        raise ValueError("key size must be an even number of bits, at least 32")
    half = bits // 2
    e = DEFAULT_PUBLIC_EXPONENT
    while True:
        p = int(gmpy2.next_prime(rng.getrandbits(half) | (3 << (half - 2)) | 1))
        q = int(gmpy2.next_prime(rng.getrandbits(half) | (3 << (half - 2)) | 1))
        if p == q:
            continue
        n = p * q
        phi = (p - 1) * (q - 1)
        if n.bit_length() != bits or math.gcd(e, phi) != 1:
            continue
        d = int(gmpy2.invert(e, phi))
        return InstituteKeyPair(normalize_miid(miid), n, e, d, p, q)


def serialize_public_key(miid: bytes, pub: PublicKey) -> bytes:
    """miid(8) || len(e) u16 LE || e || len(n) u16 LE || n, integers big-endian."""
    if len(miid) != MIID_LEN:
        raise ValueError(f"MIID must be {MIID_LEN} bytes")
    e_bytes = pub.e.to_bytes((pub.e.bit_length() + 7) // 8 or 1, "big")
    n_bytes = pub.n.to_bytes((pub.n.bit_length() + 7) // 8 or 1, "big")
    if len(e_bytes) > 0xFFFF or len(n_bytes) > 0xFFFF:
        raise ValueError("key component too large to serialize")
    return (
        miid
        + len(e_bytes).to_bytes(2, "little")
        + e_bytes
        + len(n_bytes).to_bytes(2, "little")
        + n_bytes
    )


def parse_public_key(data: bytes) -> tuple[bytes, PublicKey]:
    """Inverse of serialize_public_key; raises ValueError on malformed input."""
    if len(data) < MIID_LEN + 4:
        raise ValueError("public key serialization too short")
    miid = data[:MIID_LEN]
    off = MIID_LEN
    e_len = int.from_bytes(data[off : off + 2], "little")
    off += 2
    if off + e_len + 2 > len(data):
        raise ValueError("truncated public exponent")
    e = int.from_bytes(data[off : off + e_len], "big")
    off += e_len
    n_len = int.from_bytes(data[off : off + 2], "little")
    off += 2
    if off + n_len != len(data):
        raise ValueError("bad modulus length")
    n = int.from_bytes(data[off:], "big")
    if n < 4 or e < 2:
        raise ValueError("implausible key parameters")
    return miid, PublicKey(n, e)
