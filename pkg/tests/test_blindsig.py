import random

import pytest

from entrace.blindsig import (
    BlindedMessage,
    BlindingFactor,
    Endorsement,
    InstituteKeyPair,
    blind,
    blind_with_factor,
    full_domain_hash,
    generate_keypair,
    identity_domain_map,
    normalize_miid,
    parse_public_key,
    serialize_public_key,
    sign_blinded,
    unblind,
    verify,
)

TINY = InstituteKeyPair(normalize_miid("TINY"), n=33, e=3, d=7)
TINY_PUB = TINY.public_key


@pytest.fixture(scope="module")
def keypair():
    return generate_keypair("CLINIC01", random.Random(1234), bits=1024)


def test_worked_example_blind():
    blinded = blind_with_factor(b"\x04", TINY_PUB, 2, domain_hash=identity_domain_map)
    assert blinded.value == (4 * pow(2, 3, 33)) % 33 == 32


def test_worked_example_unit_factor():
    blinded = blind_with_factor(b"\x04", TINY_PUB, 1, domain_hash=identity_domain_map)
    assert blinded.value == 4


def test_worked_example_sign_and_unblind():
    sig = sign_blinded(BlindedMessage(32), TINY)
    assert sig == pow(32, 7, 33) == 32
    endorsement = unblind(sig, BlindingFactor(2), TINY_PUB)
    assert endorsement.signature == 16
    assert pow(16, 3, 33) == 4
    assert verify(b"\x04", endorsement, TINY_PUB, domain_hash=identity_domain_map)


def test_sign_blinded_edge_values():
    assert sign_blinded(BlindedMessage(1), TINY) == 1
    assert sign_blinded(BlindedMessage(0), TINY) == 0
    assert not verify(b"\x04", Endorsement(0), TINY_PUB, domain_hash=identity_domain_map)


def test_blinding_changes_value_unless_unit():
    import math

    # for m=4 and n=33, r^3 = 1 (mod 33) only at r=1, so every other r blinds
    for r in range(2, 33):
        if math.gcd(r, 33) != 1:
            continue
        blinded = blind_with_factor(b"\x04", TINY_PUB, r, domain_hash=identity_domain_map)
        assert blinded.value != 4


def test_blind_factor_validation():
    with pytest.raises(ValueError):
        blind_with_factor(b"\x04", TINY_PUB, 3, domain_hash=identity_domain_map)  # gcd(3, 33) != 1
    with pytest.raises(ValueError):
        blind_with_factor(b"\x04", TINY_PUB, 0, domain_hash=identity_domain_map)
    with pytest.raises(ValueError):
        unblind(5, BlindingFactor(11), TINY_PUB)  # 11 divides 33


def test_fdh_deterministic():
    n = TINY_PUB.n
    assert full_domain_hash(b"report", n) == full_domain_hash(b"report", n)
    assert full_domain_hash(b"report", n) != full_domain_hash(b"repors", n)
    with pytest.raises(ValueError):
        full_domain_hash(b"x", 3)


def test_fdh_uniformity_smoke():
    # chi-square over the 33 residue classes; dof=32, generous 0.9999 bound
    n = 33
    counts = [0] * n
    rng = random.Random(99)
    trials = 10_000
    for _ in range(trials):
        counts[full_domain_hash(rng.randbytes(12), n)] += 1
    expected = trials / n
    statistic = sum((c - expected) ** 2 / expected for c in counts)
    assert statistic < 80.0, f"chi-square statistic {statistic:.1f} too large"


def test_identity_map_bounds():
    assert identity_domain_map(b"\x04", 33) == 4
    with pytest.raises(ValueError):
        identity_domain_map(b"\xff", 33)


def test_round_trip_production_keys(keypair):
    rng = random.Random(77)
    pub = keypair.public_key
    for _ in range(50):
        message = rng.randbytes(20)
        blinded, factor = blind(message, pub, rng)
        endorsement = unblind(sign_blinded(blinded, keypair), factor, pub)
        assert verify(message, endorsement, pub)


def test_crt_matches_plain_exponentiation(keypair):
    plain = InstituteKeyPair(keypair.miid, keypair.n, keypair.e, keypair.d)
    rng = random.Random(31)
    for _ in range(10):
        value = rng.randrange(1, keypair.n)
        fast = sign_blinded(BlindedMessage(value), keypair)
        slow = sign_blinded(BlindedMessage(value), plain)
        assert fast == slow == pow(value, keypair.d, keypair.n)


def test_verify_matches_pow_oracle(keypair):
    # implementation exponentiates via gmpy2; cross-check with builtin pow
    rng = random.Random(13)
    pub = keypair.public_key
    message = rng.randbytes(20)
    blinded, factor = blind(message, pub, rng)
    endorsement = unblind(sign_blinded(blinded, keypair), factor, pub)
    assert pow(endorsement.signature, pub.e, pub.n) == full_domain_hash(message, pub.n)


def test_bit_flip_rejected(keypair):
    rng = random.Random(5)
    pub = keypair.public_key
    message = rng.randbytes(20)
    blinded, factor = blind(message, pub, rng)
    endorsement = unblind(sign_blinded(blinded, keypair), factor, pub)
    raw = endorsement.to_bytes(pub)
    for _ in range(64):
        flipped = bytearray(raw)
        bit = rng.randrange(len(raw) * 8)
        flipped[bit // 8] ^= 1 << (bit % 8)
        assert not verify(message, Endorsement.from_bytes(bytes(flipped)), pub)


def test_cross_key_rejected(keypair):
    other = generate_keypair("CLINIC02", random.Random(4321), bits=1024)
    rng = random.Random(6)
    message = rng.randbytes(20)
    blinded, factor = blind(message, other.public_key, rng)
    endorsement = unblind(sign_blinded(blinded, other), factor, other.public_key)
    assert verify(message, endorsement, other.public_key)
    assert not verify(message, endorsement, keypair.public_key)


def test_unforgeability_scan(keypair):
    rng = random.Random(1001)
    pub = keypair.public_key
    message = rng.randbytes(20)
    for _ in range(10_000):
        assert not verify(message, Endorsement(rng.randrange(pub.n)), pub)


def test_blindness_no_repeats(keypair):
    rng = random.Random(2002)
    pub = keypair.public_key
    message = b"same message every time."
    target = full_domain_hash(message, pub.n)
    seen = set()
    for _ in range(10_000):
        blinded, _ = blind(message, pub, rng)
        assert blinded.value != target
        seen.add(blinded.value)
    assert len(seen) == 10_000


def test_fourteen_pairs_endorsed_independently(keypair):
    rng = random.Random(88)
    pub = keypair.public_key
    messages = [rng.randbytes(20) for _ in range(14)]
    endorsements = []
    for message in messages:
        blinded, factor = blind(message, pub, rng)
        endorsements.append(unblind(sign_blinded(blinded, keypair), factor, pub))
    for i, endorsement in enumerate(endorsements):
        for j, message in enumerate(messages):
            assert verify(message, endorsement, pub) == (i == j)


def test_keygen_deterministic_and_sized():
    a = generate_keypair("LAB", random.Random(42), bits=512)
    b = generate_keypair("LAB", random.Random(42), bits=512)
    assert (a.n, a.e, a.d) == (b.n, b.e, b.d)
    assert a.n.bit_length() == 512
    c = generate_keypair("LAB", random.Random(43), bits=512)
    assert c.n != a.n
    with pytest.raises(ValueError):
        generate_keypair("LAB", random.Random(1), bits=30)


def test_public_key_serialization_layout():
    data = serialize_public_key(normalize_miid("TINY"), TINY_PUB)
    assert data == b"TINY    " + b"\x01\x00" + b"\x03" + b"\x01\x00" + b"\x21"


def test_public_key_serialization_round_trip(keypair):
    data = serialize_public_key(keypair.miid, keypair.public_key)
    miid, pub = parse_public_key(data)
    assert miid == keypair.miid
    assert pub == keypair.public_key
    with pytest.raises(ValueError):
        parse_public_key(data[:-1])
    with pytest.raises(ValueError):
        parse_public_key(b"short")


def test_endorsement_serialization(keypair):
    pub = keypair.public_key
    endorsement = Endorsement(123456789)
    raw = endorsement.to_bytes(pub)
    assert len(raw) == pub.byte_length
    assert Endorsement.from_bytes(raw) == endorsement


def test_normalize_miid():
    assert normalize_miid("LAB") == b"LAB     "
    assert normalize_miid("EIGHTCHR") == b"EIGHTCHR"
    with pytest.raises(ValueError):
        normalize_miid("NINECHARS")
    with pytest.raises(ValueError):
        normalize_miid("")
    with pytest.raises(ValueError):
        normalize_miid("bad\x01")
