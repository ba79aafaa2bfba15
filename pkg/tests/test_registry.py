import random

import pytest

from entrace.blindsig import generate_keypair, normalize_miid, serialize_public_key
from entrace.registry import DEFAULT_CHURN_WINDOW, KeyRegistry, UnknownInstituteError

MIID = normalize_miid("CLINIC01")


def _key_bytes(seed: int, miid: bytes = MIID) -> bytes:
    keypair = generate_keypair(miid, random.Random(seed), bits=256)
    return serialize_public_key(miid, keypair.public_key)


def test_first_registration_is_active():
    registry = KeyRegistry()
    entry = registry.register(MIID, _key_bytes(1), now=0)
    assert entry.active
    assert registry.lookup(MIID) == entry
    assert registry.lookup_key(MIID).n > 0


def test_reregistration_keeps_history():
    registry = KeyRegistry()
    registry.register(MIID, _key_bytes(1), now=0)
    registry.register(MIID, _key_bytes(2), now=100)
    history = registry.history(MIID)
    assert len(history) == 2
    assert [e.active for e in history] == [False, True]
    assert registry.lookup(MIID).registered_at == 100
    assert len(registry.verification_keys(MIID)) == 2


def test_identical_key_rejected():
    registry = KeyRegistry()
    registry.register(MIID, _key_bytes(1), now=0)
    with pytest.raises(ValueError):
        registry.register(MIID, _key_bytes(1), now=5)


def test_malformed_key_rejected():
    registry = KeyRegistry()
    with pytest.raises(ValueError):
        registry.register(MIID, b"not a key", now=0)
    with pytest.raises(ValueError):
        registry.register(normalize_miid("OTHER"), _key_bytes(1), now=0)  # MIID mismatch


def test_unknown_miid():
    registry = KeyRegistry()
    with pytest.raises(UnknownInstituteError):
        registry.lookup(normalize_miid("NOBODY"))


def test_churn_one_key_per_month_not_flagged():
    registry = KeyRegistry()
    month = 30 * 144
    for i in range(4):
        registry.register(MIID, _key_bytes(i + 1), now=i * month)
    for i in range(4):
        report = registry.audit_key_churn(MIID, (i * month, i * month + DEFAULT_CHURN_WINDOW - 1))
        assert report.registrations == 1
        assert not report.flagged


def test_churn_five_keys_in_a_day_flagged():
    registry = KeyRegistry()
    for i in range(5):
        registry.register(MIID, _key_bytes(i + 1), now=i * 10)
    report = registry.audit_key_churn(MIID, (0, 143))
    assert report.registrations == 5
    assert report.flagged


def test_churn_empty_history_not_flagged():
    registry = KeyRegistry()
    report = registry.audit_key_churn(MIID, (0, DEFAULT_CHURN_WINDOW - 1))
    assert report.registrations == 0
    assert not report.flagged


def test_churn_per_endorsement_rotation_always_flagged():
    registry = KeyRegistry()
    endorsements = 6
    for i in range(endorsements):
        registry.register(MIID, _key_bytes(i + 1), now=i)
    report = registry.audit_key_churn(MIID, (0, DEFAULT_CHURN_WINDOW - 1), threshold=1)
    assert report.flagged
    assert report.registrations == endorsements


def test_export_import_round_trip():
    registry = KeyRegistry()
    other = normalize_miid("LAB2")
    registry.register(MIID, _key_bytes(1), now=0)
    registry.register(other, _key_bytes(7, other), now=3)
    registry.register(MIID, _key_bytes(2), now=9)
    lines = registry.export_lines()
    assert len(lines) == 3
    clone = KeyRegistry.import_lines(lines)
    assert clone.export_lines() == lines
    assert clone.lookup(MIID).registered_at == 9
    assert clone.lookup(other).registered_at == 3


def test_history_append_only():
    registry = KeyRegistry()
    registry.register(MIID, _key_bytes(1), now=0)
    before = registry.history(MIID)[0]
    registry.register(MIID, _key_bytes(2), now=50)
    after = registry.history(MIID)[0]
    assert before.public_key == after.public_key
    assert before.registered_at == after.registered_at
