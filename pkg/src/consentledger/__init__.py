"""Verifiable consent ledger and data-protection audit toolkit."""

from __future__ import annotations

__version__ = "0.1.0"

from .audit import (
    AuditConfig,
    AuditReport,
    impact_assessment,
    issue_certificate,
    run_audit,
    verify_certificate,
)
from .canonical import canonical_bytes, decode_canonical
from .clock import FixedClock, SystemClock
from .compliance import (
    check_breach_timeliness,
    check_children,
    check_purpose_limitation,
    check_retention,
    check_sharing,
    check_withdrawal_enforcement,
    restrict_disclosure,
    right_to_access,
)
from .consent import ConsentEvent, ConsentForm, establish, modify, record_propagation, validate_form, withdraw
from .crypto import Directory, KeyPair, PartyIdentity, Role, TimestampAuthority, generate_identity, sign, verify
from .findings import Finding, Severity
from .ledger import Ledger, anchor, inclusion_proof, latest_consent, verify_chain, verify_inclusion
from .minimization import CategoryTaxonomy, CollectionClass, CollectionPlan, classify, lint_plan
from .records import record_breach, record_correction, record_erasure, record_processing
from .transparency import export_transparency_summary

__all__ = [
    "AuditConfig", "AuditReport", "CategoryTaxonomy", "CollectionClass", "CollectionPlan", "ConsentEvent",
    "ConsentForm", "Directory", "Finding", "FixedClock", "KeyPair", "Ledger", "PartyIdentity", "Role",
    "Severity", "SystemClock", "TimestampAuthority", "anchor", "canonical_bytes", "check_breach_timeliness",
    "check_children", "check_purpose_limitation", "check_retention", "check_sharing",
    "check_withdrawal_enforcement", "classify", "decode_canonical", "establish", "export_transparency_summary",
    "generate_identity", "impact_assessment", "inclusion_proof", "issue_certificate", "latest_consent",
    "lint_plan", "modify", "record_breach", "record_correction", "record_erasure", "record_processing",
    "record_propagation", "restrict_disclosure", "right_to_access", "run_audit", "sign", "validate_form",
    "verify", "verify_certificate", "verify_chain", "verify_inclusion", "withdraw",
]
