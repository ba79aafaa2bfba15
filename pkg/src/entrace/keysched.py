"""Application-side key schedule for interval-based proximity beacons.

Compatible with the published EN (exposure notification) crypto profile:
time is counted in 10-minute intervals since the Unix epoch, each day
(144 intervals) gets one 128-bit temporary exposure key (TEK), and every
interval's rolling proximity identifier (RPI) is a single AES block under
an HKDF-derived key. Beacon metadata travels AES-CTR encrypted under a
second derived key, with the interval's RPI as the counter block.

All key material originates from the caller-supplied RNG; nothing in this
module accepts externally fabricated TEK bytes except the explicit
serialization helpers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

SECONDS_PER_INTERVAL = 600
INTERVALS_PER_DAY = 144
MAX_INTERVAL = 2**32
KEY_RING_CAPACITY = 14
RETENTION_INTERVALS = KEY_RING_CAPACITY * INTERVALS_PER_DAY

RPIK_INFO = b"EN-RPIK"
AEMK_INFO = b"EN-AEMK"
RPI_PREFIX = b"EN-RPI"

METADATA_VERSION = 0x40
METADATA_LEN = 4
TEK_LEN = 16
TEK_ENCODED_LEN = TEK_LEN + 4


def interval_number(unix_seconds: int) -> int:
    """Map a Unix timestamp to its 10-minute interval number."""
    if unix_seconds < 0 or unix_seconds >= MAX_INTERVAL * SECONDS_PER_INTERVAL:
        raise ValueError(f"timestamp out of range: {unix_seconds}")
    return unix_seconds // SECONDS_PER_INTERVAL


def day_start(interval: int) -> int:
    """First interval of the 144-interval day containing `interval`."""
    _check_interval(interval)
    return interval - interval % INTERVALS_PER_DAY


def _check_interval(interval: int) -> None:
    if not 0 <= interval < MAX_INTERVAL:
        raise ValueError(f"interval out of range: {interval}")


@dataclass(frozen=True)
class TemporaryExposureKey:
    """One day's 128-bit exposure key with its base interval."""

    key: bytes
    base_interval: int

    def __post_init__(self) -> None:
        if len(self.key) != TEK_LEN:
            raise ValueError(f"TEK must be {TEK_LEN} bytes, got {len(self.key)}")
        _check_interval(self.base_interval)
        if self.base_interval % INTERVALS_PER_DAY != 0:
            raise ValueError(f"base interval {self.base_interval} not day-aligned")


@dataclass(frozen=True)
class RollingProximityKey:
    key: bytes

    def __post_init__(self) -> None:
        if len(self.key) != 16:
            raise ValueError("RPIK must be 16 bytes")


@dataclass(frozen=True)
class RollingProximityID:
    id: bytes
    interval: int


@dataclass(frozen=True)
class AssociatedMetadata:
    """Beacon metadata in both clear and encrypted form."""

    plaintext: bytes
    ciphertext: bytes


@dataclass(frozen=True)
class KeyRing:
    """Up to 14 TEKs, oldest first, base intervals strictly increasing."""

    entries: tuple[TemporaryExposureKey, ...] = ()

    def __post_init__(self) -> None:
        if len(self.entries) > KEY_RING_CAPACITY:
            raise ValueError(f"key ring holds at most {KEY_RING_CAPACITY} TEKs")
        for prev, cur in zip(self.entries, self.entries[1:]):
            gap = cur.base_interval - prev.base_interval
            if gap <= 0 or gap % INTERVALS_PER_DAY != 0:
                raise ValueError("key ring base intervals must increase by whole days")

    def newest(self) -> TemporaryExposureKey | None:
        return self.entries[-1] if self.entries else None

    def key_for(self, interval: int) -> TemporaryExposureKey | None:
        """TEK whose validity window covers `interval`, if present."""
        base = day_start(interval)
        for tek in self.entries:
            if tek.base_interval == base:
                return tek
        return None


def generate_tek(rng, now: int) -> TemporaryExposureKey:
    """Draw a fresh day key from the application's RNG.

    The base interval is aligned down to the start of `now`'s day.
    """
    _check_interval(now)
    return TemporaryExposureKey(rng.randbytes(TEK_LEN), day_start(now))


def advance_key_ring(ring: KeyRing, now: int, rng) -> KeyRing:
    """Append a fresh TEK when a new day begins, keeping at most 14."""
    base = day_start(now)
    newest = ring.newest()
    if newest is not None and newest.base_interval >= base:
        return ring
    tek = generate_tek(rng, now)
    entries = ring.entries + (tek,)
    if len(entries) > KEY_RING_CAPACITY:
        entries = entries[-KEY_RING_CAPACITY:]
    return KeyRing(entries)


@lru_cache(maxsize=8192)
def _rpik_bytes(tek_key: bytes) -> bytes:
    kdf = HKDF(algorithm=hashes.SHA256(), length=16, salt=None, info=RPIK_INFO)
    return kdf.derive(tek_key)


@lru_cache(maxsize=8192)
def _aemk_bytes(tek_key: bytes) -> bytes:
    kdf = HKDF(algorithm=hashes.SHA256(), length=16, salt=None, info=AEMK_INFO)
    return kdf.derive(tek_key)


def derive_rpik(tek: TemporaryExposureKey) -> RollingProximityKey:
    """Derive the rolling proximity identifier key from a TEK."""
    return RollingProximityKey(_rpik_bytes(tek.key))


def _rpi_block(j: int) -> bytes:
    return RPI_PREFIX + bytes(6) + struct.pack("<I", j)


def derive_rpi(rpik: RollingProximityKey, j: int) -> RollingProximityID:
    """One AES-128 block: the beacon identifier for interval `j`."""
    _check_interval(j)
    enc = Cipher(algorithms.AES(rpik.key), modes.ECB()).encryptor()
    return RollingProximityID(enc.update(_rpi_block(j)) + enc.finalize(), j)


@lru_cache(maxsize=8192)
def _window_bytes(tek_key: bytes, base_interval: int) -> tuple[bytes, ...]:
    # One ECB pass over all 144 blocks; bit-identical to per-block encryption.
    enc = Cipher(algorithms.AES(_rpik_bytes(tek_key)), modes.ECB()).encryptor()
    buf = enc.update(b"".join(_rpi_block(base_interval + k) for k in range(INTERVALS_PER_DAY)))
    buf += enc.finalize()
    return tuple(buf[16 * k : 16 * (k + 1)] for k in range(INTERVALS_PER_DAY))

def rpi_window(tek: TemporaryExposureKey) -> list[RollingProximityID]:
    """All 144 identifiers a TEK is valid for, in interval order."""
    ids = _window_bytes(tek.key, tek.base_interval)
    return [RollingProximityID(ids[k], tek.base_interval + k) for k in range(INTERVALS_PER_DAY)]


def window_id_bytes(tek_key: bytes, base_interval: int) -> tuple[bytes, ...]:
    """The 144 raw identifier values for a key, cheapest form for matching."""
    if len(tek_key) != TEK_LEN:
        raise ValueError(f"TEK must be {TEK_LEN} bytes")
    return _window_bytes(tek_key, base_interval)


def encode_metadata(tx_power: int, version: int = METADATA_VERSION) -> bytes:
    """Pack version and signed transmit power into the 4-byte beacon metadata."""
    return struct.pack("<Bb2x", version, tx_power)


def decode_metadata(plaintext: bytes) -> tuple[int, int]:
    version, tx_power = struct.unpack("<Bb2x", plaintext)
    return version, tx_power


def _metadata_stream(tek: TemporaryExposureKey, j: int, data: bytes) -> bytes:
    nonce = _window_bytes(tek.key, tek.base_interval)[j - tek.base_interval]
    enc = Cipher(algorithms.AES(_aemk_bytes(tek.key)), modes.CTR(nonce)).encryptor()
    return enc.update(data) + enc.finalize()


def encrypt_metadata(tek: TemporaryExposureKey, j: int, plaintext: bytes) -> AssociatedMetadata:
    """Encrypt 4 metadata bytes for interval `j` under the TEK-derived key."""
    if len(plaintext) != METADATA_LEN:
        raise ValueError(f"metadata plaintext must be {METADATA_LEN} bytes")
    if not tek.base_interval <= j < tek.base_interval + INTERVALS_PER_DAY:
        raise ValueError(f"interval {j} outside TEK window")
    return AssociatedMetadata(plaintext, _metadata_stream(tek, j, plaintext))


def decrypt_metadata(tek: TemporaryExposureKey, j: int, ciphertext: bytes) -> bytes:
    """Recover metadata sent at interval `j` by a holder of the TEK."""
    if len(ciphertext) != METADATA_LEN:
        raise ValueError(f"metadata ciphertext must be {METADATA_LEN} bytes")
    if not tek.base_interval <= j < tek.base_interval + INTERVALS_PER_DAY:
        raise ValueError(f"interval {j} outside TEK window")
    return _metadata_stream(tek, j, ciphertext)


def encode_tek(tek: TemporaryExposureKey) -> bytes:
    """Wire form: 16 key bytes followed by the base interval, little-endian."""
    return tek.key + struct.pack("<I", tek.base_interval)


def decode_tek(data: bytes) -> TemporaryExposureKey:
    if len(data) != TEK_ENCODED_LEN:
        raise ValueError(f"encoded TEK must be {TEK_ENCODED_LEN} bytes, got {len(data)}")
    return TemporaryExposureKey(data[:TEK_LEN], struct.unpack("<I", data[TEK_LEN:])[0])
