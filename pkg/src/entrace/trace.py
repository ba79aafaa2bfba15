"""Instrumentation trace shared by the simulation, actors, and auditor.

A trace is a set of append-only record streams (application TEK logs,
radio capture, second-device capture, institute transcripts, consent and
notification events, registry and chain snapshots) plus the published
epoch files. During a run everything is collected in memory; ``save``
writes one JSONL file per stream with deterministic formatting so equal
runs produce byte-identical directories.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .actors import EpochPublication

STREAMS = (
    "teks",
    "phones",
    "radio",
    "second_device",
    "institute",
    "consents",
    "notifications",
    "alerts",
    "registry",
    "injections",
)

CHAIN_FILE = "chain.json"
RUN_FILE = "run.json"
PUBLICATION_DIR = "publications"
MANIFEST_FILE = "manifest.json"


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class AuditTrace:
    """Append-only record streams consumed read-only by the audit checks."""

    def __init__(self, run_config: dict | None = None) -> None:
        self.streams: dict[str, list[dict]] = {name: [] for name in STREAMS}
        self.publications: list["EpochPublication"] = []
        self.chain_state: dict | None = None
        self.run_config: dict = dict(run_config or {})

    def add(self, stream: str, record: dict) -> None:
        if stream not in self.streams:
            raise KeyError(f"unknown trace stream {stream!r}")
        self.streams[stream].append(record)

    def records(self, stream: str) -> list[dict]:
        return self.streams.get(stream, [])

    def has_stream(self, stream: str) -> bool:
        return stream in self.streams

    def record_id(self, stream: str, index: int) -> str:
        return f"{stream}:{index}"

    def save(self, trace_dir: str | Path) -> Path:
        """Write streams, chain snapshot, run config, and publications."""
        from .actors import publication_manifest_entry  # local import: avoid cycle

        root = Path(trace_dir)
        root.mkdir(parents=True, exist_ok=True)
        for name in STREAMS:
            path = root / f"{name}.jsonl"
            with path.open("w", encoding="utf-8") as fh:
                for record in self.streams[name]:
                    fh.write(_dumps(record) + "\n")
        if self.chain_state is not None:
            (root / CHAIN_FILE).write_text(json.dumps(self.chain_state, sort_keys=True, indent=2))
        (root / RUN_FILE).write_text(json.dumps(self.run_config, sort_keys=True, indent=2))
        pub_dir = root / PUBLICATION_DIR
        pub_dir.mkdir(exist_ok=True)
        manifest = []
        for pub in self.publications:
            name = f"epoch_{pub.epoch_id:05d}.bin"
            (pub_dir / name).write_bytes(pub.encode())
            manifest.append(publication_manifest_entry(pub, name))
        (pub_dir / MANIFEST_FILE).write_text(json.dumps(manifest, sort_keys=True, indent=2))
        return root

    @classmethod
    def load(cls, trace_dir: str | Path) -> "AuditTrace":
        from .actors import EpochPublication

        root = Path(trace_dir)
        if not root.is_dir():
            raise FileNotFoundError(f"trace directory not found: {root}")
        trace = cls()
        trace.streams = {}
        for name in STREAMS:
            path = root / f"{name}.jsonl"
            if path.exists():
                with path.open(encoding="utf-8") as fh:
                    trace.streams[name] = [json.loads(line) for line in fh if line.strip()]
        chain_path = root / CHAIN_FILE
        if chain_path.exists():
            trace.chain_state = json.loads(chain_path.read_text())
        run_path = root / RUN_FILE
        if run_path.exists():
            trace.run_config = json.loads(run_path.read_text())
        manifest_path = root / PUBLICATION_DIR / MANIFEST_FILE
        if manifest_path.exists():
            for entry in json.loads(manifest_path.read_text()):
                data = (root / PUBLICATION_DIR / entry["file"]).read_bytes()
                trace.publications.append(EpochPublication.decode(data))
        return trace
