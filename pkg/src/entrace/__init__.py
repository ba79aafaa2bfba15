"""Exposure notification without trusted intermediaries.

Library, simulator, and CLI for a contact-tracing protocol in which the
application generates its own keys, positive-test reports are endorsed by
medical institutes through blind signatures, report batches are anchored
on a (simulated) blockchain via a Merkle accumulator, and a consumer
group can audit every intermediary's behavior from an instrumented trace.
"""

from .actors import (
    BeaconRecord,
    EndorsedReport,
    EpochPublication,
    LedgerServer,
    MedicalInstitute,
    Notification,
    PhoneAgent,
    TokenRefusedError,
)
from .auditor import AuditError, AuditFinding, findings_report, run_full_audit
from .blindsig import (
    BlindedMessage,
    BlindingFactor,
    Endorsement,
    InstituteKeyPair,
    PublicKey,
    blind,
    full_domain_hash,
    generate_keypair,
    sign_blinded,
    unblind,
    verify,
)
from .chain import AnchorReceipt, SimChain
from .keysched import (
    KeyRing,
    TemporaryExposureKey,
    advance_key_ring,
    decrypt_metadata,
    derive_rpi,
    derive_rpik,
    encrypt_metadata,
    generate_tek,
    interval_number,
    rpi_window,
)
from .merkle import EpochBatch, MerkleProof, MerkleTree, build_root, finalize_epoch, leaf_hash, node_hash, prove, verify_proof
from .registry import KeyRegistry, RegistryEntry, UnknownInstituteError
from .sim import ContactOracle, RunMetrics, Scenario, ScenarioError, ThreatInjection, inject_threat, oracle_expected_notifications, run
from .trace import AuditTrace

__version__ = "0.1.0"
