import dataclasses
import random
import struct

import pytest

from entrace import keysched
from entrace.keysched import (
    KeyRing,
    TemporaryExposureKey,
    advance_key_ring,
    day_start,
    decode_metadata,
    decode_tek,
    decrypt_metadata,
    derive_rpi,
    derive_rpik,
    encode_metadata,
    encode_tek,
    encrypt_metadata,
    generate_tek,
    interval_number,
    rpi_window,
    window_id_bytes,
)
from oracles import aes128_ctr, aes128_encrypt_block, hkdf_sha256

ZERO_TEK = TemporaryExposureKey(bytes(16), 0)

# Frozen reference values, computed with the oracles in oracles.py.
RPIK_ZERO_HEX = "57e4c5f2ceeb86a849542209e846a4d9"
RPI_ZERO_RPIK_J0_HEX = "2450a6642f1e48f44bf04902c500d743"
RPI_ZERO_TEK_J0_HEX = "f252a8a76c6012a86337d54f914b53b5"
SEED42_KEY_HEX = "9d79b1a37f31801cd11a6706fb40d6bd"
AEM_ZERO_TEK_J0_HEX = "edca161b"


def test_oracle_self_checks():
    ikm = bytes.fromhex("0b" * 22)
    salt = bytes.fromhex("000102030405060708090a0b0c")
    info = bytes.fromhex("f0f1f2f3f4f5f6f7f8f9")
    okm = hkdf_sha256(ikm, salt, info, 42)
    assert okm.hex() == (
        "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865"
    )
    key = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
    pt = bytes.fromhex("00112233445566778899aabbccddeeff")
    assert aes128_encrypt_block(key, pt).hex() == "69c4e0d86a7b0430d8cdb78070b4c55a"


def test_interval_number_examples():
    assert interval_number(0) == 0
    assert interval_number(600) == 1
    assert interval_number(1609459200) == 1609459200 // 600 == 2682432


def test_interval_number_range_errors():
    with pytest.raises(ValueError):
        interval_number(-1)
    with pytest.raises(ValueError):
        interval_number(2**32 * 600)
    assert interval_number(2**32 * 600 - 1) == 2**32 - 1


def test_interval_number_monotone():
    rng = random.Random(7)
    samples = sorted(rng.randrange(2**32 * 600) for _ in range(500))
    values = [interval_number(s) for s in samples]
    assert values == sorted(values)


def test_generate_tek_reference_run():
    tek = generate_tek(random.Random(42), 1440)
    assert tek.base_interval == 1440
    assert tek.key.hex() == SEED42_KEY_HEX


def test_generate_tek_aligns_down():
    tek = generate_tek(random.Random(42), 1501)
    assert tek.base_interval == 1440


def test_generate_tek_deterministic():
    assert generate_tek(random.Random(42), 1440) == generate_tek(random.Random(42), 1440)


def test_tek_validation():
    with pytest.raises(ValueError):
        TemporaryExposureKey(bytes(15), 0)
    with pytest.raises(ValueError):
        TemporaryExposureKey(bytes(16), 143)
    with pytest.raises(dataclasses.FrozenInstanceError):
        tek = TemporaryExposureKey(bytes(16), 0)
        tek.key = bytes(16)


def test_derive_rpik_known_answer():
    rpik = derive_rpik(ZERO_TEK)
    assert rpik.key.hex() == RPIK_ZERO_HEX
    assert rpik.key == hkdf_sha256(bytes(16), b"", b"EN-RPIK", 16)


def test_derive_rpik_deterministic_and_collision_free():
    rng = random.Random(11)
    seen = set()
    for _ in range(10_000):
        key = rng.randbytes(16)
        tek = TemporaryExposureKey(key, 0)
        rpik = derive_rpik(tek)
        assert derive_rpik(tek) == rpik
        seen.add(rpik.key)
    assert len(seen) == 10_000


def test_derive_rpi_known_answer():
    zero_rpik = keysched.RollingProximityKey(bytes(16))
    rpi = derive_rpi(zero_rpik, 0)
    assert rpi.id.hex() == RPI_ZERO_RPIK_J0_HEX
    assert rpi.id == aes128_encrypt_block(bytes(16), b"EN-RPI" + bytes(6) + struct.pack("<I", 0))
    assert rpi.interval == 0


def test_derive_rpi_matches_oracle_across_intervals():
    rng = random.Random(3)
    rpik = keysched.RollingProximityKey(rng.randbytes(16))
    for j in [0, 1, 144, 2**31, 2**32 - 1]:
        block = b"EN-RPI" + bytes(6) + struct.pack("<I", j)
        assert derive_rpi(rpik, j).id == aes128_encrypt_block(rpik.key, block)
    assert derive_rpi(rpik, 5).id != derive_rpi(rpik, 6).id


def test_derive_rpi_second_party_reproduces():
    rng = random.Random(9)
    tek = generate_tek(rng, 288)
    ours = derive_rpi(derive_rpik(tek), 300)
    theirs = derive_rpi(derive_rpik(TemporaryExposureKey(tek.key, tek.base_interval)), 300)
    assert ours == theirs


def test_rpi_window_covers_exactly_one_day():
    tek = generate_tek(random.Random(5), 1440)
    window = rpi_window(tek)
    assert len(window) == 144
    assert [r.interval for r in window] == list(range(1440, 1584))
    rpik = derive_rpik(tek)
    for k in (0, 1, 77, 143):
        assert window[k].id == derive_rpi(rpik, 1440 + k).id
    assert window_id_bytes(tek.key, tek.base_interval) == tuple(r.id for r in window)


def test_fourteen_keys_give_2016_distinct_ids():
    rng = random.Random(17)
    ids = set()
    for day in range(14):
        tek = generate_tek(rng, day * 144)
        ids.update(r.id for r in rpi_window(tek))
    assert len(ids) == 14 * 144 == 2016


def test_metadata_round_trip_random():
    rng = random.Random(23)
    for _ in range(200):
        tek = generate_tek(rng, 0)
        j = rng.randrange(144)
        plaintext = rng.randbytes(4)
        aem = encrypt_metadata(tek, j, plaintext)
        assert aem.plaintext == plaintext
        assert decrypt_metadata(tek, j, aem.ciphertext) == plaintext


def test_metadata_known_answer():
    plain = encode_metadata(-40)
    assert plain.hex() == "40d80000"
    aem = encrypt_metadata(ZERO_TEK, 0, plain)
    assert aem.ciphertext.hex() == AEM_ZERO_TEK_J0_HEX
    aemk = hkdf_sha256(bytes(16), b"", b"EN-AEMK", 16)
    nonce = bytes.fromhex(RPI_ZERO_TEK_J0_HEX)
    assert aem.ciphertext == aes128_ctr(aemk, nonce, plain)
    assert decode_metadata(plain) == (0x40, -40)


def test_metadata_wrong_key_detectable():
    rng = random.Random(31)
    tek = generate_tek(rng, 0)
    other = generate_tek(rng, 0)
    plaintext = encode_metadata(-40)
    aem = encrypt_metadata(tek, 3, plaintext)
    assert decrypt_metadata(other, 3, aem.ciphertext) != plaintext


def test_metadata_interval_bounds():
    tek = generate_tek(random.Random(1), 1440)
    with pytest.raises(ValueError):
        encrypt_metadata(tek, 1439, bytes(4))
    with pytest.raises(ValueError):
        encrypt_metadata(tek, 1584, bytes(4))
    with pytest.raises(ValueError):
        encrypt_metadata(tek, 1440, bytes(5))


def test_key_ring_growth_and_eviction():
    rng = random.Random(2)
    ring = KeyRing()
    ring = advance_key_ring(ring, 0, rng)
    assert len(ring.entries) == 1
    again = advance_key_ring(ring, 100, rng)
    assert again is ring  # same day: no new key
    for day in range(1, 20):
        ring = advance_key_ring(ring, day * 144 + 7, rng)
    assert len(ring.entries) == 14
    bases = [t.base_interval for t in ring.entries]
    assert bases == [d * 144 for d in range(6, 20)]


def test_key_ring_rejects_bad_shapes():
    rng = random.Random(4)
    a = generate_tek(rng, 0)
    b = generate_tek(rng, 144)
    with pytest.raises(ValueError):
        KeyRing((b, a))
    with pytest.raises(ValueError):
        KeyRing(tuple(generate_tek(rng, d * 144) for d in range(15)))
    ring = KeyRing((a, b))
    assert ring.key_for(150) == b
    assert ring.key_for(300) is None


def test_tek_serialization_round_trip():
    rng = random.Random(8)
    for _ in range(50):
        tek = generate_tek(rng, rng.randrange(0, 2**32 - 144, 144))
        encoded = encode_tek(tek)
        assert len(encoded) == 20
        assert decode_tek(encoded) == tek
    with pytest.raises(ValueError):
        decode_tek(b"short")


def test_day_start():
    assert day_start(0) == 0
    assert day_start(143) == 0
    assert day_start(144) == 144
    assert day_start(1501) == 1440
