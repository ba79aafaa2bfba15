"""Consumer-group audit: six independent checks over an instrumented trace.

The checks (rows A through F of the audit report) verify, in order: that
every broadcast beacon derives from an application-logged key, that no
extra beacon content was transmitted, that beacon metadata decrypts to
what the application sent, that every published report carries a valid
institute signature (and that institutes are not churning keys to
deanonymize reporters), that publications are anchored at plausible times
and contain no unconsented reports, and that every exposure notification
is backed by beacons a co-located second device actually captured.

Beacon anomalies are attributed by a fixed rule: if the expected beacon
for a (sender, interval) is absent from the capture, the key schedule
itself was subverted (row A); if the expected beacon is present but extra
underivable beacons accompany it, the transmission path injected content
(row B). Checks read the trace only; they never consult the simulator's
injection bookkeeping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .blindsig import Endorsement, verify
from .chain import SimChain
from .keysched import INTERVALS_PER_DAY, TemporaryExposureKey, decrypt_metadata, encode_metadata, window_id_bytes
from .merkle import build_root
from .registry import DEFAULT_CHURN_WINDOW, KeyRegistry
from .trace import AuditTrace

VERDICT_CLEAN = "clean"
VERDICT_DETECTED = "detected"
VERDICT_SUSPECTED = "suspected"


class AuditError(RuntimeError):
    """A check could not run to a verdict (required trace stream missing)."""


@dataclass(frozen=True)
class AuditFinding:
    check_id: str
    verdict: str
    evidence: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def clean(self) -> bool:
        return self.verdict == VERDICT_CLEAN


def _require(trace: AuditTrace, check_id: str, *streams: str) -> None:
    for stream in streams:
        if not trace.has_stream(stream):
            raise AuditError(f"check {check_id} inconclusive: trace stream {stream!r} missing")


def _tek_log(trace: AuditTrace) -> dict[tuple[int, int], bytes]:
    """(phone, day base interval) -> application-generated TEK bytes."""
    log = {}
    for rec in trace.records("teks"):
        log[(rec["phone"], rec["base_interval"])] = bytes.fromhex(rec["tek"])
    return log


def _expected_rpi(log: dict[tuple[int, int], bytes], sender: int, interval: int) -> bytes | None:
    base = interval - interval % INTERVALS_PER_DAY
    tek_key = log.get((sender, base))
    if tek_key is None:
        return None
    return window_id_bytes(tek_key, base)[interval - base]


def _beacons_by_slot(trace: AuditTrace) -> dict[tuple[int, int], list[tuple[int, dict]]]:
    slots: dict[tuple[int, int], list[tuple[int, dict]]] = {}
    for idx, rec in enumerate(trace.records("radio")):
        slots.setdefault((rec["sender"], rec["interval"]), []).append((idx, rec))
    return slots


def check_tek_generation(trace: AuditTrace) -> AuditFinding:
    """Row A: every captured self-beacon must derive from a logged app key."""
    _require(trace, "A", "teks", "radio")
    log = _tek_log(trace)
    evidence = []
    for (sender, interval), group in _beacons_by_slot(trace).items():
        expected = _expected_rpi(log, sender, interval)
        observed = {bytes.fromhex(rec["rpi"]) for _, rec in group}
        if expected is None or expected not in observed:
            evidence.extend(trace.record_id("radio", idx) for idx, _ in group)
    if evidence:
        return AuditFinding("A", VERDICT_DETECTED, tuple(evidence), ("beacon underivable from application key log",))
    return AuditFinding("A", VERDICT_CLEAN)


def check_beacon_content(trace: AuditTrace) -> AuditFinding:
    """Row B: no transmitted beacon beyond the derivable one per interval."""
    _require(trace, "B", "teks", "radio")
    log = _tek_log(trace)
    evidence = []
    for (sender, interval), group in _beacons_by_slot(trace).items():
        expected = _expected_rpi(log, sender, interval)
        if expected is None or expected not in {bytes.fromhex(rec["rpi"]) for _, rec in group}:
            continue  # key-schedule anomaly; attributed to row A
        for idx, rec in group:
            if bytes.fromhex(rec["rpi"]) != expected:
                evidence.append(trace.record_id("radio", idx))
    if evidence:
        return AuditFinding(
            "B",
            VERDICT_DETECTED,
            tuple(evidence),
            ("beacon content not reproducible from the sender's key",
             "secret process in the receiving OS is suspected"),
        )
    return AuditFinding("B", VERDICT_CLEAN)


def check_metadata(trace: AuditTrace) -> AuditFinding:
    """Row C: captured metadata must decrypt to what the application sent."""
    _require(trace, "C", "teks", "radio", "phones")
    log = _tek_log(trace)
    expected_plain = {
        rec["phone"]: encode_metadata(rec["tx_power"], rec["version"])
        for rec in trace.records("phones")
    }
    evidence = []
    for idx, rec in enumerate(trace.records("radio")):
        sender, interval = rec["sender"], rec["interval"]
        expected = _expected_rpi(log, sender, interval)
        if expected is None or bytes.fromhex(rec["rpi"]) != expected:
            continue  # underivable beacons are rows A/B; their metadata key is unknown
        base = interval - interval % INTERVALS_PER_DAY
        tek = TemporaryExposureKey(log[(sender, base)], base)
        plain = decrypt_metadata(tek, interval, bytes.fromhex(rec["aem"]))
        if plain != expected_plain.get(sender):
            evidence.append(trace.record_id("radio", idx))
    if evidence:
        return AuditFinding(
            "C",
            VERDICT_DETECTED,
            tuple(evidence),
            ("metadata does not decrypt to the application's payload",
             "secret process in the receiving OS is suspected"),
        )
    return AuditFinding("C", VERDICT_CLEAN)


def _registry_from_records(records: list[dict]) -> KeyRegistry:
    return KeyRegistry.import_lines(json.dumps(rec) for rec in records)


def check_reporting(trace: AuditTrace) -> AuditFinding:
    """Row D: published reports verify under registered keys; churn is flagged."""
    _require(trace, "D", "registry")
    registry = _registry_from_records(trace.records("registry"))
    evidence = []
    notes = []
    for pub in trace.publications:
        for pos, report in enumerate(pub.reports):
            keys = registry.verification_keys(report.miid)
            sig = Endorsement.from_bytes(report.signature)
            if not any(verify(report.signed_message(), sig, key) for key in keys):
                evidence.append(f"publication:{pub.epoch_id}:{pos}")
    if evidence:
        notes.append("published report without a valid institute signature")
    churn_evidence = []
    seen_miids = []
    for rec in trace.records("registry"):
        miid = rec["miid"].encode("ascii")
        if miid not in seen_miids:
            seen_miids.append(miid)
    for miid in seen_miids:
        times = [e.registered_at for e in registry.history(miid)]
        for start in times:
            report = registry.audit_key_churn(miid, (start, start + DEFAULT_CHURN_WINDOW - 1))
            if report.flagged:
                churn_evidence.extend(
                    trace.record_id("registry", i)
                    for i, rec in enumerate(trace.records("registry"))
                    if rec["miid"].encode("ascii") == miid
                )
                notes.append("key churn can link endorsements to reporters")
                break
    if evidence:
        return AuditFinding("D", VERDICT_DETECTED, tuple(evidence + churn_evidence), tuple(notes))
    if churn_evidence:
        return AuditFinding("D", VERDICT_SUSPECTED, tuple(churn_evidence), tuple(notes))
    return AuditFinding("D", VERDICT_CLEAN)


def check_stored_reports(trace: AuditTrace) -> AuditFinding:
    """Row E: roots recompute and anchor plausibly; no unconsented reports."""
    _require(trace, "E", "teks", "consents")
    if trace.chain_state is None:
        raise AuditError("check E inconclusive: chain snapshot missing")
    chain = SimChain.from_state(trace.chain_state)
    epoch_length = int(trace.run_config.get("epoch_length", INTERVALS_PER_DAY))
    blocks_per_interval = int(trace.run_config.get("blocks_per_interval", 1))
    blocks_per_epoch = epoch_length * blocks_per_interval
    evidence = []
    notes = []
    for pub in trace.publications:
        root, _ = build_root([r.encode() for r in pub.reports])
        if root != pub.root:
            evidence.append(f"publication:{pub.epoch_id}")
            notes.append("published report set does not reproduce its root")
            continue
        if chain.get_stored(root) == 0:
            evidence.append(f"publication:{pub.epoch_id}")
            notes.append("publication root was never anchored")
            continue
        if not chain.plausibility_window(root, pub.epoch_id, blocks_per_epoch):
            evidence.append(f"publication:{pub.epoch_id}")
            notes.append("publication root anchored at an implausible time")
    owners = {}
    for idx, rec in enumerate(trace.records("teks")):
        owners[(rec["tek"], rec["base_interval"])] = (rec["phone"], idx)
    consents = {(rec["phone"], rec["tek"], rec["base_interval"]) for rec in trace.records("consents")}
    for pub in trace.publications:
        for pos, report in enumerate(pub.reports):
            owner = owners.get((report.tek.hex(), report.base_interval))
            if owner is None:
                continue  # fabricated key material, not a compromise of a real phone
            phone, tek_idx = owner
            if (phone, report.tek.hex(), report.base_interval) not in consents:
                evidence.append(f"publication:{pub.epoch_id}:{pos}")
                evidence.append(trace.record_id("teks", tek_idx))
                notes.append("a real phone's key was published without its consent")
    if evidence:
        return AuditFinding("E", VERDICT_DETECTED, tuple(evidence), tuple(dict.fromkeys(notes)))
    return AuditFinding("E", VERDICT_CLEAN)


def check_matching(trace: AuditTrace) -> AuditFinding:
    """Row F: every notification is backed by second-device beacon captures."""
    _require(trace, "F", "notifications", "second_device")
    threshold = int(trace.run_config.get("match_threshold", 1))
    captured: dict[int, dict[bytes, list[int]]] = {}
    for rec in trace.records("second_device"):
        captured.setdefault(rec["phone"], {}).setdefault(bytes.fromhex(rec["rpi"]), []).append(rec["interval"])
    evidence = []
    for idx, rec in enumerate(trace.records("notifications")):
        phone_capture = captured.get(rec["phone"], {})
        base = rec["base_interval"]
        tek_key = bytes.fromhex(rec["tek"])
        hits = 0
        for k, rpi in enumerate(window_id_bytes(tek_key, base)):
            seen = phone_capture.get(rpi)
            if seen and any(base <= t < base + INTERVALS_PER_DAY for t in seen):
                hits += 1
        if hits < threshold:
            evidence.append(trace.record_id("notifications", idx))
    if evidence:
        return AuditFinding(
            "F",
            VERDICT_DETECTED,
            tuple(evidence),
            ("notification with no matching beacon in the second-device capture",),
        )
    return AuditFinding("F", VERDICT_CLEAN)


CHECKS = (
    ("A", check_tek_generation),
    ("B", check_beacon_content),
    ("C", check_metadata),
    ("D", check_reporting),
    ("E", check_stored_reports),
    ("F", check_matching),
)


def run_full_audit(trace: AuditTrace) -> list[AuditFinding]:
    """All six checks, in row order A through F."""
    return [check(trace) for _, check in CHECKS]


def findings_report(findings: list[AuditFinding]) -> dict:
    """JSON-ready audit report."""
    return {
        "clean": all(f.clean for f in findings),
        "detected_rows": [f.check_id for f in findings if f.verdict == VERDICT_DETECTED],
        "suspected_rows": [f.check_id for f in findings if f.verdict == VERDICT_SUSPECTED],
        "findings": [
            {
                "row": f.check_id,
                "verdict": f.verdict,
                "evidence": list(f.evidence),
                "notes": list(f.notes),
            }
            for f in findings
        ],
    }
