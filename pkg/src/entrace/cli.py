"""Command-line entry points.

Subcommands: keygen (institute keypairs), simulate (run a scenario and
write traces/publications), audit (run the six checks over a trace
directory), verify (recompute a publication root against the chain
snapshot), and match (offline beacon matching for a saved phone state).

Exit codes: 0 on success/clean, 2 when an audit or verification detects
misbehavior, 1 on errors. ENTRACE_OUT provides the output directory when
--out is omitted; no other environment variables are consulted.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from .actors import EpochPublication
from .auditor import AuditError, findings_report, run_full_audit
from .blindsig import generate_keypair, serialize_public_key
from .chain import SimChain
from .keysched import INTERVALS_PER_DAY, window_id_bytes
from .merkle import build_root
from .sim import Scenario, ScenarioError, run
from .trace import AuditTrace

OUT_ENV_VAR = "ENTRACE_OUT"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DETECTED = 2


def _resolve_out(value: str | None) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env)
    raise SystemExit(f"no output directory: pass --out or set {OUT_ENV_VAR}")


def _cmd_keygen(args) -> int:
    rng = random.Random(args.seed)
    keypair = generate_keypair(args.miid, rng, bits=args.bits)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = keypair.miid.decode("ascii").strip()
    key_path = out / f"{name}.key.json"
    key_path.write_text(
        json.dumps(
            {
                "miid": keypair.miid.decode("ascii"),
                "bits": args.bits,
                "n": f"{keypair.n:x}",
                "e": f"{keypair.e:x}",
                "d": f"{keypair.d:x}",
                "p": f"{keypair.p:x}",
                "q": f"{keypair.q:x}",
            },
            indent=2,
            sort_keys=True,
        )
    )
    pub_path = out / f"{name}.pub"
    pub_path.write_bytes(serialize_public_key(keypair.miid, keypair.public_key))
    print(f"wrote {key_path} and {pub_path}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    scenario = Scenario.from_file(args.scenario)
    if args.seed is not None:
        import dataclasses

        scenario = dataclasses.replace(scenario, seed=args.seed)
        scenario.validate()
    out = _resolve_out(args.out)
    result = run(scenario, out_dir=out, workers=args.workers)
    m = result.metrics
    print(
        f"simulated {scenario.agents} agents for {scenario.duration} intervals: "
        f"{m.reports_published} reports in {m.epochs_published} epochs, "
        f"{m.notifications} notifications (expected {m.expected_notifications}), "
        f"precision {m.precision:.3f} recall {m.recall:.3f}"
    )
    print(f"artifacts in {out}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    trace = AuditTrace.load(args.trace)
    findings = run_full_audit(trace)
    report = findings_report(findings)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_DETECTED if report["detected_rows"] else EXIT_OK


def _cmd_verify(args) -> int:
    publication = EpochPublication.decode(Path(args.publication).read_bytes())
    chain = SimChain.from_state(json.loads(Path(args.chain).read_text()))
    problems = []
    root = b""
    if not publication.reports:
        problems.append("publication carries no reports")
    else:
        root, _ = build_root([r.encode() for r in publication.reports])
        if root != publication.root:
            problems.append("recomputed root does not match the published root")
    stored = chain.get_stored(publication.root)
    if stored == 0:
        problems.append("published root is not anchored on the chain")
    result = {
        "epoch_id": publication.epoch_id,
        "reports": len(publication.reports),
        "root": publication.root.hex(),
        "recomputed_root": root.hex(),
        "anchored_at_block": stored,
        "ok": not problems,
        "problems": problems,
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK if not problems else EXIT_DETECTED


def _cmd_match(args) -> int:
    state = json.loads(Path(args.phone_state).read_text())
    threshold = int(state.get("match_threshold", 1))
    store: dict[bytes, list[int]] = {}
    for beacon in state.get("beacons", []):
        store.setdefault(bytes.fromhex(beacon["rpi"]), []).append(int(beacon["captured_at"]))
    pub_dir = Path(args.publications)
    notifications = []
    for path in sorted(pub_dir.glob("*.bin")):
        publication = EpochPublication.decode(path.read_bytes())
        for report in publication.reports:
            base = report.base_interval
            hits = []
            for k, rpi in enumerate(window_id_bytes(report.tek, base)):
                seen = store.get(rpi)
                if seen and any(base <= t < base + INTERVALS_PER_DAY for t in seen):
                    hits.append(base + k)
            if len(hits) >= threshold:
                notifications.append(
                    {"tek": report.tek.hex(), "base_interval": base, "matched_intervals": hits}
                )
    print(json.dumps({"notifications": notifications}, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entrace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    keygen = sub.add_parser("keygen", help="generate an institute keypair")
    keygen.add_argument("--miid", required=True, help="institute identifier, up to 8 ASCII chars")
    keygen.add_argument("--bits", type=int, default=2048)
    keygen.add_argument("--seed", type=int, default=None, help="seed for reproducible keys")
    keygen.add_argument("--out", default=None, help=f"output directory (or {OUT_ENV_VAR})")
    keygen.set_defaults(func=_cmd_keygen)

    simulate = sub.add_parser("simulate", help="run a scenario deterministically")
    simulate.add_argument("--scenario", required=True, help="YAML scenario file")
    simulate.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    simulate.add_argument("--out", default=None, help=f"output directory (or {OUT_ENV_VAR})")
    simulate.add_argument("--workers", type=int, default=1, help="tree-build worker threads")
    simulate.set_defaults(func=_cmd_simulate)

    audit = sub.add_parser("audit", help="run the six checks over a saved trace")
    audit.add_argument("--trace", required=True, help="trace directory from simulate")
    audit.set_defaults(func=_cmd_audit)

    verify = sub.add_parser("verify", help="re-derive a publication root and check its anchor")
    verify.add_argument("--publication", required=True, help="epoch publication .bin file")
    verify.add_argument("--chain", required=True, help="chain snapshot JSON")
    verify.set_defaults(func=_cmd_verify)

    match = sub.add_parser("match", help="offline matching of a phone state against publications")
    match.add_argument("--phone-state", required=True, help="JSON file with stored beacons")
    match.add_argument("--publications", required=True, help="directory of publication .bin files")
    match.set_defaults(func=_cmd_match)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, AuditError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
