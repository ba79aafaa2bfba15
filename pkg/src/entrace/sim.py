"""Deterministic scenario runner for the full protocol.

A scenario pins the population, the co-location schedule (explicit,
random, or both), who tests positive when, and which adversarial
behaviors to inject. One seed fully determines a run: every actor draws
from its own label-derived RNG, the event loop iterates in a fixed order,
and trace output uses canonical formatting, so equal (scenario, seed)
pairs produce byte-identical artifacts.

The harness also carries the brute-force ground-truth oracle: expected
notifications are computed from the contact schedule alone, with no
protocol cryptography, and honest runs must match it exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .actors import (
    ACK_OK,
    EndorsedReport,
    LedgerServer,
    MedicalInstitute,
    PhoneAgent,
    PublicationMatcher,
)
from .blindsig import BlindedMessage, Endorsement, full_domain_hash, generate_keypair, sign_blinded
from .chain import SimChain
from .keysched import (
    INTERVALS_PER_DAY,
    TemporaryExposureKey,
    day_start,
    encode_metadata,
    encode_tek,
    encrypt_metadata,
    window_id_bytes,
)
from .registry import KeyRegistry
from .trace import AuditTrace

THREAT_IDS = ("1a", "1b", "1c", "1d", "1e", "2a", "2b", "3a")


class ScenarioError(ValueError):
    """Scenario validation failure; the message names the offending field."""


@dataclass(frozen=True)
class ThreatInjection:
    threat_id: str
    target: int
    at_interval: int
    agent: int | None = None  # colluding agent for 2a
    contact_intervals: int = 3  # co-location span for 2a


@dataclass(frozen=True)
class InfectionEvent:
    agent: int
    test_interval: int


@dataclass(frozen=True)
class Scenario:
    agents: int
    duration: int
    seed: int = 0
    epoch_length: int = INTERVALS_PER_DAY
    match_threshold: int = 1
    blocks_per_interval: int = 1
    rsa_bits: int = 2048
    miid: str = "INSTITUT"
    token_lifetime: int = INTERVALS_PER_DAY
    tx_power: int = -40
    contacts: tuple[tuple[int, int, int], ...] = ()
    contact_rate: float = 0.0  # random meetings per agent per day
    infected: tuple[InfectionEvent, ...] = ()
    threats: tuple[ThreatInjection, ...] = ()

    def validate(self) -> None:
        if self.agents < 1:
            raise ScenarioError("agents: must be at least 1")
        if self.duration < 1:
            raise ScenarioError("duration: must be at least 1 interval")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed: must fit in 64 bits")
        if self.epoch_length < 1:
            raise ScenarioError("epoch_length: must be at least 1")
        if self.match_threshold < 1:
            raise ScenarioError("match_threshold: must be at least 1")
        if self.blocks_per_interval < 1:
            raise ScenarioError("blocks_per_interval: must be at least 1")
        if self.rsa_bits < 32 or self.rsa_bits % 2:
            raise ScenarioError("rsa_bits: must be an even number of bits, at least 32")
        if self.contact_rate < 0:
            raise ScenarioError("contact_rate: must be nonnegative")
        if not -128 <= self.tx_power <= 127:
            raise ScenarioError("tx_power: must fit a signed byte")
        for i, contact in enumerate(self.contacts):
            a, b, t = contact
            if not (0 <= a < self.agents and 0 <= b < self.agents):
                raise ScenarioError(f"contacts[{i}]: agent out of range")
            if a == b:
                raise ScenarioError(f"contacts[{i}]: an agent cannot contact itself")
            if not 0 <= t < self.duration:
                raise ScenarioError(f"contacts[{i}].interval: outside the run duration")
        for i, event in enumerate(self.infected):
            if not 0 <= event.agent < self.agents:
                raise ScenarioError(f"infected[{i}].agent: out of range")
            if not 0 <= event.test_interval < self.duration:
                raise ScenarioError(f"infected[{i}].test_interval: outside the run duration")
        for i, threat in enumerate(self.threats):
            if threat.threat_id not in THREAT_IDS:
                raise ScenarioError(f"threats[{i}].id: unknown threat {threat.threat_id!r}")
            if not 0 <= threat.target < self.agents:
                raise ScenarioError(f"threats[{i}].target: out of range")
            if not 0 <= threat.at_interval < self.duration:
                raise ScenarioError(f"threats[{i}].at: outside the run duration")
            if threat.threat_id == "2a":
                if threat.agent is None:
                    raise ScenarioError(f"threats[{i}].agent: required for threat 2a")
                if not 0 <= threat.agent < self.agents or threat.agent == threat.target:
                    raise ScenarioError(f"threats[{i}].agent: out of range or equal to target")

    @classmethod
    def from_mapping(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ScenarioError("scenario: expected a mapping at the top level")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ScenarioError(f"{key}: unknown scenario field")
        kwargs = dict(data)
        contacts = []
        for i, item in enumerate(kwargs.get("contacts", []) or []):
            if not (isinstance(item, (list, tuple)) and len(item) == 3):
                raise ScenarioError(f"contacts[{i}]: expected [a, b, interval]")
            contacts.append((int(item[0]), int(item[1]), int(item[2])))
        kwargs["contacts"] = tuple(contacts)
        infected = []
        for i, item in enumerate(kwargs.get("infected", []) or []):
            try:
                infected.append(InfectionEvent(int(item["agent"]), int(item["test_interval"])))
            except (KeyError, TypeError) as exc:
                raise ScenarioError(f"infected[{i}]: expected {{agent, test_interval}}") from exc
        kwargs["infected"] = tuple(infected)
        threats = []
        for i, item in enumerate(kwargs.get("threats", []) or []):
            try:
                threats.append(
                    ThreatInjection(
                        str(item["id"]),
                        int(item["target"]),
                        int(item["at"]),
                        int(item["agent"]) if "agent" in item else None,
                        int(item.get("contact_intervals", 3)),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ScenarioError(f"threats[{i}]: expected {{id, target, at}}") from exc
        kwargs["threats"] = tuple(threats)
        scenario = cls(**kwargs)
        scenario.validate()
        return scenario

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"scenario: cannot parse {path}: {exc}") from exc
        return cls.from_mapping(data)


def inject_threat(scenario: Scenario, threat: ThreatInjection) -> Scenario:
    """A copy of the scenario with one more adversarial behavior scheduled."""
    out = dataclasses.replace(scenario, threats=scenario.threats + (threat,))
    out.validate()
    return out


def derive_seed(root: int, *labels: str) -> int:
    """Stable per-purpose sub-seed; labels keep independent streams apart."""
    material = (f"{root}|" + "/".join(labels)).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


@dataclass(frozen=True)
class ContactOracle:
    """Ground-truth co-location set, independent of all protocol code."""

    agents: int
    contacts: frozenset[tuple[int, int, int]]  # (low agent, high agent, interval)

    def pair_intervals(self) -> dict[tuple[int, int], list[int]]:
        pairs: dict[tuple[int, int], list[int]] = {}
        for a, b, t in self.contacts:
            pairs.setdefault((a, b), []).append(t)
        return pairs


def oracle_expected_notifications(
    oracle: ContactOracle,
    reports: list[tuple[int, str, int]],
    match_threshold: int,
) -> set[tuple[int, str]]:
    """Who must be notified, by brute force over the contact schedule.

    `reports` carries (reporter, tek hex, base interval) from the run's
    ground-truth bookkeeping; the tek hex is an opaque label here.
    """
    pairs = oracle.pair_intervals()
    expected: set[tuple[int, str]] = set()
    for reporter, tek_hex, base in reports:
        for other in range(oracle.agents):
            if other == reporter:
                continue
            key = (min(reporter, other), max(reporter, other))
            hits = sum(1 for t in pairs.get(key, ()) if base <= t < base + INTERVALS_PER_DAY)
            if hits >= match_threshold:
                expected.add((other, tek_hex))
    return expected


@dataclass
class RunMetrics:
    notifications: int = 0
    expected_notifications: int = 0
    true_positives: int = 0
    precision: float = 1.0
    recall: float = 1.0
    reports_published: int = 0
    epochs_published: int = 0
    digest_count: int = 0
    epoch_digest_counts: list[int] = field(default_factory=list)
    signature_verifications: int = 0
    anchor_stores: int = 0
    wall_time_s: float = 0.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunResult:
    scenario: Scenario
    metrics: RunMetrics
    trace: AuditTrace
    publications: list
    oracle: ContactOracle


def _build_contacts(scenario: Scenario) -> list[tuple[int, int, int]]:
    """Explicit plus seeded-random co-locations, plus 2a staged approaches."""
    contacts: set[tuple[int, int, int]] = set()
    for a, b, t in scenario.contacts:
        contacts.add((min(a, b), max(a, b), t))
    if scenario.contact_rate > 0 and scenario.agents > 1:
        rng = random.Random(derive_seed(scenario.seed, "contacts"))
        days = (scenario.duration + INTERVALS_PER_DAY - 1) // INTERVALS_PER_DAY
        meetings_per_day = max(1, round(scenario.agents * scenario.contact_rate / 2))
        for d in range(days):
            span = min(INTERVALS_PER_DAY, scenario.duration - d * INTERVALS_PER_DAY)
            for _ in range(meetings_per_day):
                a = rng.randrange(scenario.agents)
                b = rng.randrange(scenario.agents - 1)
                if b >= a:
                    b += 1
                t = d * INTERVALS_PER_DAY + rng.randrange(span)
                contacts.add((min(a, b), max(a, b), t))
    for threat in scenario.threats:
        if threat.threat_id == "2a":
            start = max(0, threat.at_interval - threat.contact_intervals)
            for t in range(start, threat.at_interval):
                contacts.add(
                    (min(threat.agent, threat.target), max(threat.agent, threat.target), t)
                )
    return sorted(contacts)


def _run_config(scenario: Scenario, contact_count: int) -> dict:
    return {
        "agents": scenario.agents,
        "duration": scenario.duration,
        "seed": scenario.seed,
        "epoch_length": scenario.epoch_length,
        "match_threshold": scenario.match_threshold,
        "blocks_per_interval": scenario.blocks_per_interval,
        "rsa_bits": scenario.rsa_bits,
        "miid": scenario.miid,
        "tx_power": scenario.tx_power,
        "token_lifetime": scenario.token_lifetime,
        "contact_count": contact_count,
        "threats": [t.threat_id for t in scenario.threats],
    }


def run(scenario: Scenario, out_dir: str | Path | None = None, workers: int = 1) -> RunResult:
    """Execute the scenario timeline on the virtual interval clock."""
    scenario.validate()
    started = time.perf_counter()
    seed = scenario.seed

    contacts = _build_contacts(scenario)
    oracle = ContactOracle(scenario.agents, frozenset(contacts))
    contacts_by_interval: dict[int, list[tuple[int, int]]] = {}
    for a, b, t in contacts:
        contacts_by_interval.setdefault(t, []).append((a, b))

    trace = AuditTrace(run_config=_run_config(scenario, len(contacts)))
    chain = SimChain()
    registry = KeyRegistry()
    keypair = generate_keypair(
        scenario.miid, random.Random(derive_seed(seed, "institute", scenario.miid)), bits=scenario.rsa_bits
    )
    institute = MedicalInstitute(
        keypair, random.Random(derive_seed(seed, "tokens")), trace, scenario.token_lifetime
    )
    institute.register(registry, now=0)
    ledger = LedgerServer(
        registry, chain, random.Random(derive_seed(seed, "ledger")), scenario.epoch_length, trace, workers=workers
    )
    phones = [
        PhoneAgent(
            i,
            random.Random(derive_seed(seed, "phone", str(i))),
            trace,
            registry,
            tx_power=scenario.tx_power,
            match_threshold=scenario.match_threshold,
            epoch_length=scenario.epoch_length,
            blocks_per_interval=scenario.blocks_per_interval,
        )
        for i in range(scenario.agents)
    ]
    matcher = PublicationMatcher()

    tests_by_interval: dict[int, list[int]] = {}
    for event in scenario.infected:
        tests_by_interval.setdefault(event.test_interval, []).append(event.agent)
    for threat in scenario.threats:
        if threat.threat_id == "2a":
            tests_by_interval.setdefault(threat.at_interval, []).append(threat.agent)

    threat_rng = random.Random(derive_seed(seed, "threats"))
    tek_overrides: dict[tuple[int, int], bytes] = {}  # (phone, day base) -> marker key
    beacon_injections: dict[int, list[tuple[int, bytes, bytes]]] = {}
    metadata_overrides: dict[tuple[int, int], bytes] = {}
    notification_injections: dict[int, list[int]] = {}
    report_injections: dict[int, list[ThreatInjection]] = {}
    for threat in scenario.threats:
        if threat.threat_id == "1a":
            base = day_start(threat.at_interval)
            tek_overrides[(threat.target, base)] = threat_rng.randbytes(16)
        elif threat.threat_id == "1b":
            beacon_injections.setdefault(threat.at_interval, []).append(
                (threat.target, threat_rng.randbytes(16), threat_rng.randbytes(4))
            )
        elif threat.threat_id == "1c":
            metadata_overrides[(threat.target, threat.at_interval)] = threat_rng.randbytes(4)
        elif threat.threat_id == "1e":
            notification_injections.setdefault(threat.at_interval, []).append(threat.target)
        elif threat.threat_id in ("2b", "3a"):
            report_injections.setdefault(threat.at_interval, []).append(threat)
        elif threat.threat_id == "1d":
            trace.add(
                "injections",
                {
                    "threat": "1d",
                    "target": threat.target,
                    "interval": threat.at_interval,
                    "note": "no marker channel: keys never leave the application",
                },
            )

    ground_truth_reports: list[tuple[int, str, int]] = []
    publications = []

    def beacon_payload(sender: int, t: int) -> tuple[bytes, bytes]:
        base = day_start(t)
        marker = tek_overrides.get((sender, base))
        if marker is not None:
            marker_tek = TemporaryExposureKey(marker, base)
            rpi = window_id_bytes(marker, base)[t - base]
            aem = encrypt_metadata(marker_tek, t, encode_metadata(scenario.tx_power)).ciphertext
        else:
            rpi, aem = phones[sender].broadcast(t)
        override = metadata_overrides.get((sender, t))
        if override is not None:
            aem = override
            trace.add("injections", {"threat": "1c", "target": sender, "interval": t})
        return rpi, aem

    for t in range(scenario.duration):
        if t % INTERVALS_PER_DAY == 0:
            for phone in phones:
                phone.advance_day(t)
            for (target, base), marker in sorted(tek_overrides.items()):
                if base == t:
                    trace.add(
                        "injections",
                        {"threat": "1a", "target": target, "interval": t, "marker_tek": marker.hex()},
                    )

        pairs = contacts_by_interval.get(t, ())
        if pairs:
            peers: dict[int, list[int]] = {}
            for a, b in pairs:
                peers.setdefault(a, []).append(b)
                peers.setdefault(b, []).append(a)
            payloads = {}
            for sender in sorted(peers):
                rpi, aem = beacon_payload(sender, t)
                payloads[sender] = (rpi, aem)
                trace.add("radio", {"sender": sender, "interval": t, "rpi": rpi.hex(), "aem": aem.hex()})
            for sender in sorted(peers):
                rpi, aem = payloads[sender]
                for receiver in sorted(set(peers[sender])):
                    phones[receiver].receive(rpi, aem, t)
                    trace.add(
                        "second_device",
                        {"phone": receiver, "interval": t, "rpi": rpi.hex(), "aem": aem.hex()},
                    )

        for target, rpi, aem in beacon_injections.get(t, ()):
            trace.add("radio", {"sender": target, "interval": t, "rpi": rpi.hex(), "aem": aem.hex()})
            trace.add("injections", {"threat": "1b", "target": target, "interval": t, "rpi": rpi.hex()})
            for a, b in contacts_by_interval.get(t, ()):
                receiver = b if a == target else a if b == target else None
                if receiver is not None:
                    phones[receiver].receive(rpi, aem, t)
                    trace.add(
                        "second_device",
                        {"phone": receiver, "interval": t, "rpi": rpi.hex(), "aem": aem.hex()},
                    )

        for agent in tests_by_interval.get(t, ()):
            token = institute.issue_test_token(agent, t)
            reports = phones[agent].request_endorsements(institute, token, t)
            for report, code in phones[agent].submit_report(ledger, reports, t):
                if code == ACK_OK:
                    ground_truth_reports.append((agent, report.tek.hex(), report.base_interval))

        for threat in report_injections.get(t, ()):
            if threat.threat_id == "2b":
                forged = EndorsedReport(
                    threat_rng.randbytes(16),
                    day_start(t),
                    keypair.miid,
                    threat_rng.randbytes(keypair.public_key.byte_length),
                )
                ledger.insert_unchecked(forged)
                trace.add(
                    "injections",
                    {"threat": "2b", "target": threat.target, "interval": t, "tek": forged.tek.hex()},
                )
            else:  # 3a: institute signs a real phone's exfiltrated key
                victim_tek = phones[threat.target].ring.key_for(t)
                message = encode_tek(victim_tek)
                signature = Endorsement(
                    sign_blinded(BlindedMessage(full_domain_hash(message, keypair.n)), keypair)
                )
                fake = EndorsedReport(
                    victim_tek.key,
                    victim_tek.base_interval,
                    keypair.miid,
                    signature.to_bytes(keypair.public_key),
                )
                ledger.accept_report(fake)
                trace.add(
                    "injections",
                    {"threat": "3a", "target": threat.target, "interval": t, "tek": victim_tek.key.hex()},
                )

        for target in notification_injections.get(t, ()):
            if publications and publications[-1].reports:
                ref = publications[-1].reports[0]
                tek_hex, base = ref.tek.hex(), ref.base_interval
            else:
                tek_hex, base = threat_rng.randbytes(16).hex(), day_start(t)
            trace.add(
                "notifications",
                {
                    "phone": target,
                    "tek": tek_hex,
                    "base_interval": base,
                    "matched_intervals": [base],
                    "interval": t,
                },
            )
            trace.add("injections", {"threat": "1e", "target": target, "interval": t, "tek": tek_hex})

        if (t + 1) % scenario.epoch_length == 0 or t + 1 == scenario.duration:
            pub = ledger.finalize_and_anchor()
            fresh = [pub] if pub is not None else []
            if pub is not None:
                publications.append(pub)
                trace.publications.append(pub)
            for phone in phones:
                phone.download_and_match(fresh, matcher, chain, t)

        chain.advance_block(scenario.blocks_per_interval)

    for line in registry.export_lines():
        trace.add("registry", json.loads(line))
    trace.chain_state = chain.export_state()

    protocol_notes = {(rec["phone"], rec["tek"]) for rec in trace.records("notifications")}
    expected = oracle_expected_notifications(oracle, ground_truth_reports, scenario.match_threshold)
    true_positives = len(protocol_notes & expected)
    metrics = RunMetrics(
        notifications=len(protocol_notes),
        expected_notifications=len(expected),
        true_positives=true_positives,
        precision=true_positives / len(protocol_notes) if protocol_notes else 1.0,
        recall=true_positives / len(expected) if expected else 1.0,
        reports_published=sum(len(p.reports) for p in publications),
        epochs_published=len(publications),
        digest_count=ledger.digest_count,
        epoch_digest_counts=list(ledger.epoch_digest_counts),
        signature_verifications=ledger.signature_verifications,
        anchor_stores=chain.store_calls,
        wall_time_s=time.perf_counter() - started,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trace.save(out / "trace")
        (out / "metrics.json").write_text(json.dumps(metrics.as_dict(), sort_keys=True, indent=2))

    return RunResult(scenario, metrics, trace, publications, oracle)
