"""The three protocol roles: phone agent, medical institute, ledger server.

A phone generates its own day keys, broadcasts derived beacons, and stores
the beacons it hears. After a positive test it obtains one blind signature
per ⟨TEK, base interval⟩ pair from the institute (which sees only blinded
values) and submits the endorsed reports to the ledger. The ledger gates
reports on signature verification, batches them per epoch, shuffles,
builds the epoch tree, and anchors the root on the chain. Phones download
publications, re-derive each root, check the anchor, and match derived
identifiers against their beacon stores.

All actors append their observable events to a shared trace so a consumer
group can audit the run afterwards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import keysched
from .blindsig import (
    BlindedMessage,
    Endorsement,
    InstituteKeyPair,
    blind,
    serialize_public_key,
    sign_blinded,
    unblind,
    verify,
)
from .chain import SimChain
from .keysched import (
    INTERVALS_PER_DAY,
    RETENTION_INTERVALS,
    KeyRing,
    advance_key_ring,
    encode_metadata,
    encode_tek,
)
from .merkle import EpochBatch, build_root, finalize_epoch
from .registry import KeyRegistry, UnknownInstituteError
from .trace import AuditTrace

REPORT_VERSION = 0x01
REPORT_HEADER_LEN = 1 + 16 + 4 + 8 + 2

ACK_OK = "ok"
REJECT_BAD_SIGNATURE = "bad_signature"
REJECT_UNKNOWN_MIID = "unknown_miid"
REJECT_DUPLICATE = "duplicate"
REJECT_LOCAL_VERIFY = "local_verify_failed"


class TokenRefusedError(RuntimeError):
    """Institute refused the test token (unknown, reused, or expired)."""


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class EndorsedReport:
    """⟨TEK, base interval, MIID, signature⟩ as stored on the public ledger."""

    tek: bytes
    base_interval: int
    miid: bytes
    signature: bytes

    def signed_message(self) -> bytes:
        return self.tek + struct.pack("<I", self.base_interval)

    def encode(self) -> bytes:
        return (
            bytes([REPORT_VERSION])
            + self.tek
            + struct.pack("<I", self.base_interval)
            + self.miid
            + struct.pack("<H", len(self.signature))
            + self.signature
        )

    @classmethod
    def decode(cls, data: bytes) -> "EndorsedReport":
        report, used = cls.decode_prefix(data)
        if used != len(data):
            raise ValueError("trailing bytes after report")
        return report

    @classmethod
    def decode_prefix(cls, data: bytes) -> tuple["EndorsedReport", int]:
        """Decode one report from the front of `data`; returns bytes consumed."""
        if len(data) < REPORT_HEADER_LEN:
            raise ValueError("report too short")
        if data[0] != REPORT_VERSION:
            raise ValueError(f"unsupported report version {data[0]:#x}")
        tek = data[1:17]
        base_interval = struct.unpack("<I", data[17:21])[0]
        miid = data[21:29]
        sig_len = struct.unpack("<H", data[29:31])[0]
        end = REPORT_HEADER_LEN + sig_len
        if len(data) < end:
            raise ValueError("truncated signature")
        return cls(tek, base_interval, miid, data[31:end]), end


@dataclass(frozen=True)
class EpochPublication:
    """One finalized epoch: shuffled reports, their root, and the anchor."""

    epoch_id: int
    reports: tuple[EndorsedReport, ...]
    root: bytes
    anchor_block: int
    already_stored: bool = False

    def encode(self) -> bytes:
        head = (
            struct.pack("<I", self.epoch_id)
            + struct.pack("<I", len(self.reports))
            + self.root
            + struct.pack("<Q", self.anchor_block)
        )
        return head + b"".join(r.encode() for r in self.reports)

    @classmethod
    def decode(cls, data: bytes) -> "EpochPublication":
        if len(data) < 48:
            raise ValueError("publication too short")
        epoch_id = struct.unpack("<I", data[:4])[0]
        count = struct.unpack("<I", data[4:8])[0]
        root = data[8:40]
        anchor_block = struct.unpack("<Q", data[40:48])[0]
        reports = []
        off = 48
        for _ in range(count):
            report, used = EndorsedReport.decode_prefix(data[off:])
            reports.append(report)
            off += used
        if off != len(data):
            raise ValueError("trailing bytes after publication")
        return cls(epoch_id, tuple(reports), root, anchor_block)


def publication_manifest_entry(pub: EpochPublication, file_name: str) -> dict:
    return {
        "epoch_id": pub.epoch_id,
        "file": file_name,
        "report_count": len(pub.reports),
        "root": pub.root.hex(),
        "anchor_block": pub.anchor_block,
        "already_stored": pub.already_stored,
    }


@dataclass(frozen=True)
class BeaconRecord:
    """One heard beacon: identifier, metadata ciphertext, capture interval."""

    rpi: bytes
    aem_ciphertext: bytes
    captured_at: int


@dataclass(frozen=True)
class Notification:
    phone: int
    tek: bytes
    base_interval: int
    matched_intervals: tuple[int, ...]
    issued_at: int


class PublicationMatcher:
    """Shared re-derivation cache mapping window identifiers back to reports.

    Every phone performs the same 144-identifier re-derivation per
    published TEK, so the derived windows are computed once and shared;
    matching decisions stay per-phone.
    """

    def __init__(self) -> None:
        self._windows: dict[int, list[tuple[bytes, str, int, int]]] = {}
        self.index: dict[bytes, tuple[str, int, int]] = {}

    def ingest(self, pub: EpochPublication) -> list[tuple[bytes, str, int, int]]:
        if pub.epoch_id in self._windows:
            return self._windows[pub.epoch_id]
        entries = []
        for report in pub.reports:
            tek_hex = report.tek.hex()
            ids = keysched.window_id_bytes(report.tek, report.base_interval)
            for k, rpi in enumerate(ids):
                j = report.base_interval + k
                entries.append((rpi, tek_hex, report.base_interval, j))
                self.index[rpi] = (tek_hex, report.base_interval, j)
        self._windows[pub.epoch_id] = entries
        return entries


class PhoneAgent:
    """Application-side protocol state for one simulated phone."""

    def __init__(
        self,
        phone_id: int,
        rng,
        trace: AuditTrace | None = None,
        registry: KeyRegistry | None = None,
        tx_power: int = -40,
        match_threshold: int = 1,
        epoch_length: int = INTERVALS_PER_DAY,
        blocks_per_interval: int = 1,
        retention_intervals: int = RETENTION_INTERVALS,
    ) -> None:
        self.phone_id = phone_id
        self.ring = KeyRing()
        self.tx_power = tx_power
        self.match_threshold = match_threshold
        self.epoch_length = epoch_length
        self.blocks_per_interval = blocks_per_interval
        self.retention_intervals = retention_intervals
        self.exposure_log: list[Notification] = []
        self.last_download_epoch = -1
        self._rng = rng
        self._trace = trace if trace is not None else AuditTrace()
        self._registry = registry
        self._store: dict[bytes, list[tuple[int, bytes]]] = {}  # rpi -> [(interval, aem)]
        self._pending: list[tuple[bytes, int]] = []
        self._matched: dict[tuple[str, int], set[int]] = {}
        self._notified: set[tuple[str, int]] = set()
        self._accepted_reports: set[tuple[str, int]] = set()
        self._trace.add(
            "phones",
            {"phone": phone_id, "tx_power": tx_power, "version": keysched.METADATA_VERSION},
        )

    # -- key schedule -------------------------------------------------

    def advance_day(self, now: int) -> None:
        """Generate the day key if a new day has begun; evict stale beacons."""
        ring = advance_key_ring(self.ring, now, self._rng)
        if ring is not self.ring:
            tek = ring.newest()
            self._trace.add(
                "teks",
                {
                    "phone": self.phone_id,
                    "tek": tek.key.hex(),
                    "base_interval": tek.base_interval,
                    "generated_at": now,
                },
            )
            self.ring = ring
        self._evict(now)

    def _evict(self, now: int) -> None:
        horizon = now - self.retention_intervals
        if horizon <= 0:
            return
        for rpi in list(self._store):
            kept = [(t, aem) for t, aem in self._store[rpi] if t >= horizon]
            if kept:
                self._store[rpi] = kept
            else:
                del self._store[rpi]

    # -- radio --------------------------------------------------------

    def broadcast(self, now: int) -> tuple[bytes, bytes]:
        """This interval's beacon: (rolling proximity id, encrypted metadata)."""
        tek = self.ring.key_for(now)
        if tek is None:
            raise ProtocolError(f"phone {self.phone_id} has no key for interval {now}")
        rpi = keysched.window_id_bytes(tek.key, tek.base_interval)[now - tek.base_interval]
        aem = keysched.encrypt_metadata(tek, now, encode_metadata(self.tx_power)).ciphertext
        return rpi, aem

    def receive(self, rpi: bytes, aem: bytes, now: int) -> None:
        """Store a heard beacon, once per (identifier, interval)."""
        seen = self._store.get(rpi)
        if seen is not None and any(t == now for t, _ in seen):
            return
        if seen is None:
            self._store[rpi] = [(now, aem)]
        else:
            seen.append((now, aem))
        self._pending.append((rpi, now))

    def beacon_count(self) -> int:
        return sum(len(v) for v in self._store.values())

    def has_beacon(self, rpi: bytes) -> bool:
        return rpi in self._store

    def beacon_records(self) -> list[BeaconRecord]:
        """The beacon store as records, in receipt order per identifier."""
        return [
            BeaconRecord(rpi, aem, t)
            for rpi, sightings in self._store.items()
            for t, aem in sightings
        ]

    # -- reporting ----------------------------------------------------

    def request_endorsements(self, institute: "MedicalInstitute", token: str, now: int) -> list[EndorsedReport]:
        """One blind/sign/unblind round per ring entry; institute sees only blinds."""
        if not self.ring.entries:
            raise ProtocolError("key ring is empty, nothing to endorse")
        if self._registry is None:
            raise ProtocolError("phone has no registry access")
        pub = self._registry.lookup_key(institute.miid)
        blinded = []
        factors = []
        for tek in self.ring.entries:
            bm, factor = blind(encode_tek(tek), pub, self._rng)
            blinded.append(bm)
            factors.append(factor)
        blind_sigs = institute.endorse(token, [bm.value for bm in blinded], now)
        reports = []
        for tek, factor, blind_sig in zip(self.ring.entries, factors, blind_sigs):
            endorsement = unblind(blind_sig, factor, pub)
            message = encode_tek(tek)
            if not verify(message, endorsement, pub):
                raise ProtocolError("institute returned an invalid blind signature")
            reports.append(
                EndorsedReport(tek.key, tek.base_interval, institute.miid, endorsement.to_bytes(pub))
            )
        return reports

    def submit_report(self, ledger: "LedgerServer", reports: list[EndorsedReport], now: int) -> list[tuple[EndorsedReport, str]]:
        """Consent to and submit endorsed reports; returns per-report ack codes."""
        acks = []
        for report in reports:
            if self._registry is not None:
                pub = self._registry.lookup_key(report.miid)
                if not verify(report.signed_message(), Endorsement.from_bytes(report.signature), pub):
                    acks.append((report, REJECT_LOCAL_VERIFY))
                    continue
            self._trace.add(
                "consents",
                {
                    "phone": self.phone_id,
                    "tek": report.tek.hex(),
                    "base_interval": report.base_interval,
                    "interval": now,
                },
            )
            _, code = ledger.accept_report(report)
            acks.append((report, code))
        return acks

    # -- download & match ----------------------------------------------

    def _verify_publication(self, pub: EpochPublication, chain: SimChain) -> tuple[bool, str]:
        if not pub.reports:
            return False, "empty_publication"
        root, _ = build_root([r.encode() for r in pub.reports])
        if root != pub.root:
            return False, "root_mismatch"
        if not chain.is_stored(pub.root):
            return False, "missing_anchor"
        blocks_per_epoch = self.epoch_length * self.blocks_per_interval
        if not chain.plausibility_window(pub.root, pub.epoch_id, blocks_per_epoch):
            return False, "implausible_anchor_time"
        return True, ""

    def download_and_match(
        self,
        publications: list[EpochPublication],
        matcher: PublicationMatcher,
        chain: SimChain,
        now: int,
    ) -> list[Notification]:
        """Verify new publications, re-derive identifiers, match, and notify."""
        for pub in publications:
            ok, reason = self._verify_publication(pub, chain)
            if not ok:
                self._trace.add(
                    "alerts",
                    {"phone": self.phone_id, "reason": reason, "epoch": pub.epoch_id, "interval": now},
                )
                continue
            if pub.already_stored:
                self._trace.add(
                    "alerts",
                    {"phone": self.phone_id, "reason": "root_already_stored", "epoch": pub.epoch_id, "interval": now},
                )
            for rpi, tek_hex, base, j in matcher.ingest(pub):
                self._accepted_reports.add((tek_hex, base))
                seen = self._store.get(rpi)
                if seen and any(base <= t < base + INTERVALS_PER_DAY for t, _ in seen):
                    self._matched.setdefault((tek_hex, base), set()).add(j)
            self.last_download_epoch = max(self.last_download_epoch, pub.epoch_id)
        for rpi, t in self._pending:
            hit = matcher.index.get(rpi)
            if hit is not None:
                tek_hex, base, j = hit
                if (tek_hex, base) in self._accepted_reports and base <= t < base + INTERVALS_PER_DAY:
                    self._matched.setdefault((tek_hex, base), set()).add(j)
        self._pending.clear()
        fresh = []
        for (tek_hex, base), hits in self._matched.items():
            if len(hits) >= self.match_threshold and (tek_hex, base) not in self._notified:
                self._notified.add((tek_hex, base))
                note = Notification(self.phone_id, bytes.fromhex(tek_hex), base, tuple(sorted(hits)), now)
                self.exposure_log.append(note)
                self._trace.add(
                    "notifications",
                    {
                        "phone": self.phone_id,
                        "tek": tek_hex,
                        "base_interval": base,
                        "matched_intervals": sorted(hits),
                        "interval": now,
                    },
                )
                fresh.append(note)
        return fresh


class MedicalInstitute:
    """Issues single-use test tokens and blind-signs whatever they authorize."""

    def __init__(self, keypair: InstituteKeyPair, rng, trace: AuditTrace | None = None, token_lifetime: int = INTERVALS_PER_DAY) -> None:
        self.keypair = keypair
        self.token_lifetime = token_lifetime
        self.transcript: list[tuple[int, int]] = []  # (blinded value, interval)
        self._rng = rng
        self._trace = trace if trace is not None else AuditTrace()
        self._tokens: dict[str, dict] = {}

    @property
    def miid(self) -> bytes:
        return self.keypair.miid

    def register(self, registry: KeyRegistry, now: int) -> None:
        registry.register(self.miid, serialize_public_key(self.miid, self.keypair.public_key), now)

    def rotate_key(self, registry: KeyRegistry, new_keypair: InstituteKeyPair, now: int) -> None:
        if new_keypair.miid != self.miid:
            raise ValueError("rotated key must keep the same MIID")
        self.keypair = new_keypair
        self.register(registry, now)

    def issue_test_token(self, person: int, now: int) -> str:
        """Single-use endorsement authorization tied to a recorded positive test."""
        token = f"{self._rng.getrandbits(64):016x}"
        self._tokens[token] = {"person": person, "expires": now + self.token_lifetime, "used": False}
        return token

    def endorse(self, token: str, blinded_values: list[int], now: int) -> list[int]:
        """Blind-sign each value after validating the token; records transcript."""
        info = self._tokens.get(token)
        if info is None:
            raise TokenRefusedError("unknown token")
        if info["used"]:
            raise TokenRefusedError("token already used")
        if now > info["expires"]:
            raise TokenRefusedError("token expired")
        info["used"] = True
        signatures = []
        for value in blinded_values:
            self.transcript.append((value, now))
            self._trace.add(
                "institute",
                {"miid": self.miid.decode("ascii"), "blinded": f"{value:x}", "interval": now},
            )
            signatures.append(sign_blinded(BlindedMessage(value), self.keypair))
        return signatures


class LedgerServer:
    """Gatekeeping, per-epoch batching, and anchoring for endorsed reports."""

    def __init__(
        self,
        registry: KeyRegistry,
        chain: SimChain,
        rng,
        epoch_length: int = INTERVALS_PER_DAY,
        trace: AuditTrace | None = None,
        workers: int = 1,
    ) -> None:
        self.registry = registry
        self.chain = chain
        self.epoch_length = epoch_length
        self.signature_verifications = 0
        self.digest_count = 0
        self.epoch_digest_counts: list[int] = []
        self.anchor_stores = 0
        self._rng = rng
        self._trace = trace if trace is not None else AuditTrace()
        self._workers = workers
        self._epoch_id = 0
        self._reports: list[EndorsedReport] = []
        self._seen: set[tuple[bytes, int]] = set()

    @property
    def current_epoch(self) -> int:
        return self._epoch_id

    def accept_report(self, report: EndorsedReport) -> tuple[bool, str]:
        """Verify against the registered institute key and queue for this epoch."""
        key = (report.tek, report.base_interval)
        if key in self._seen:
            return False, REJECT_DUPLICATE
        try:
            pub = self.registry.lookup_key(report.miid)
        except UnknownInstituteError:
            return False, REJECT_UNKNOWN_MIID
        self.signature_verifications += 1
        if not verify(report.signed_message(), Endorsement.from_bytes(report.signature), pub):
            return False, REJECT_BAD_SIGNATURE
        self._seen.add(key)
        self._reports.append(report)
        return True, ACK_OK

    def insert_unchecked(self, report: EndorsedReport) -> None:
        """Misbehaving-operator path: queue a report without verification.

        Exists so adversarial scenarios can exercise the audit; an honest
        deployment has no call site for this.
        """
        self._seen.add((report.tek, report.base_interval))
        self._reports.append(report)

    def finalize_and_anchor(self) -> EpochPublication | None:
        """Close the epoch: shuffle, build the tree, anchor the root once.

        Empty epochs publish nothing but still advance the epoch counter.
        """
        epoch_id = self._epoch_id
        self._epoch_id += 1
        if not self._reports:
            return None
        batch = EpochBatch(
            epoch_id,
            [r.encode() for r in self._reports],
            shuffle_seed=self._rng.getrandbits(63),
        )
        self._reports = []
        self._seen = set()
        tree = finalize_epoch(batch, workers=self._workers)
        receipt = self.chain.store(tree.root)
        self.anchor_stores += 1
        self.digest_count += tree.digest_count
        self.epoch_digest_counts.append(tree.digest_count)
        reports = tuple(EndorsedReport.decode(data) for data in batch.reports)
        return EpochPublication(epoch_id, reports, tree.root, receipt.block_number, receipt.already_stored)
