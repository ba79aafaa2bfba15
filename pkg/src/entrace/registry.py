"""Append-only public registry of institute verification keys.

Every registration is retained, so third parties can both resolve the
current key for a MIID and audit how often an institute rotates keys.
Rapid rotation is the deanonymization lever: an institute using a fresh
key per endorsement can link reports back to reporters, so the registry
ships a churn audit that flags exactly that pattern.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .blindsig import PublicKey, parse_public_key

DEFAULT_CHURN_WINDOW = 14 * 144  # intervals: the key-retention horizon
DEFAULT_CHURN_THRESHOLD = 1


class UnknownInstituteError(KeyError):
    pass


@dataclass(frozen=True)
class RegistryEntry:
    miid: bytes
    public_key: bytes
    registered_at: int
    active: bool


@dataclass(frozen=True)
class ChurnReport:
    miid: bytes
    window: tuple[int, int]
    registrations: int
    threshold: int
    flagged: bool


class KeyRegistry:
    """History-preserving MIID -> public key map; single writer, many readers."""

    def __init__(self) -> None:
        self._entries: list[RegistryEntry] = []

    def register(self, miid: bytes, public_key: bytes, now: int) -> RegistryEntry:
        """Activate a key for `miid`, deactivating but retaining any prior one."""
        embedded_miid, _ = parse_public_key(public_key)
        if embedded_miid != miid:
            raise ValueError("serialized key names a different MIID")
        current = self._active_index(miid)
        if current is not None and self._entries[current].public_key == public_key:
            raise ValueError("identical key already registered for this MIID")
        if current is not None:
            old = self._entries[current]
            self._entries[current] = RegistryEntry(old.miid, old.public_key, old.registered_at, False)
        entry = RegistryEntry(miid, public_key, now, True)
        self._entries.append(entry)
        return entry

    def _active_index(self, miid: bytes) -> int | None:
        for i in range(len(self._entries) - 1, -1, -1):
            if self._entries[i].miid == miid and self._entries[i].active:
                return i
        return None

    def lookup(self, miid: bytes) -> RegistryEntry:
        """The single active entry for `miid`."""
        idx = self._active_index(miid)
        if idx is None:
            raise UnknownInstituteError(f"no active key for MIID {miid!r}")
        return self._entries[idx]

    def lookup_key(self, miid: bytes) -> PublicKey:
        _, pub = parse_public_key(self.lookup(miid).public_key)
        return pub

    def history(self, miid: bytes) -> list[RegistryEntry]:
        return [e for e in self._entries if e.miid == miid]

    def all_entries(self) -> list[RegistryEntry]:
        return list(self._entries)

    def verification_keys(self, miid: bytes) -> list[PublicKey]:
        """Every key ever registered for `miid`, oldest first."""
        return [parse_public_key(e.public_key)[1] for e in self.history(miid)]

    def audit_key_churn(
        self,
        miid: bytes,
        window: tuple[int, int],
        threshold: int = DEFAULT_CHURN_THRESHOLD,
    ) -> ChurnReport:
        """Count registrations inside [window_start, window_end] and flag excess.

        The default threshold of one registration per retention horizon means
        any per-endorsement key rotation trips the flag.
        """
        start, end = window
        count = sum(1 for e in self.history(miid) if start <= e.registered_at <= end)
        return ChurnReport(miid, (start, end), count, threshold, count > threshold)

    def export_lines(self) -> list[str]:
        """One JSON object per entry, in registration order."""
        return [
            json.dumps(
                {
                    "miid": e.miid.decode("ascii"),
                    "key": e.public_key.hex(),
                    "registered_at": e.registered_at,
                    "active": e.active,
                },
                sort_keys=True,
            )
            for e in self._entries
        ]

    @classmethod
    def import_lines(cls, lines) -> "KeyRegistry":
        registry = cls()
        for line in lines:
            if not line.strip():
                continue
            rec = json.loads(line)
            registry._entries.append(
                RegistryEntry(
                    rec["miid"].encode("ascii"),
                    bytes.fromhex(rec["key"]),
                    int(rec["registered_at"]),
                    bool(rec["active"]),
                )
            )
        return registry
