"""Command-line front end: ``consentledger <group> <command> [options]``.

Exit codes: 0 success, 1 domain violation, 2 usage error, 3 integrity failure.
Errors print one tab-separated line to stderr: ``error<TAB>CODE<TAB>message``.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import socketserver
import sys
import threading
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, TextIO

import tomli

from . import __version__
from .audit import (
    AuditConfig,
    AuditReport,
    default_validity,
    grade_at_least,
    impact_assessment,
    issue_certificate,
    run_audit,
    verify_certificate,
)
from .canonical import canonical_bytes, decode_canonical, from_plain, load_document
from .clock import Clock, parse_instant
from .compliance import (
    CHECK_ALIASES,
    LEDGER_CHECKS,
    CheckSettings,
    LedgerView,
    restrict_disclosure,
    right_to_access,
)
from .config import ToolConfig
from .consent import (
    ChildConsent,
    ConsentEvent,
    ConsentForm,
    ExplicitAck,
    PurposeSpec,
    Retention,
    RetentionKind,
    attest_minor,
    establish,
    modify,
    record_propagation,
    validate_form,
    withdraw,
)
from .crypto import Role, digest
from .errors import (
    ConfigError,
    ConsentLedgerError,
    IntegrityError,
    MalformedKeyError,
    MalformedSignatureError,
    UsageError,
)
from .findings import sort_findings
from .keystore import KEY_DIR_ENV, KeyStore
from .ledger import ConsentIndex, InclusionProof, Ledger, anchor, inclusion_proof, latest_consent, verify_inclusion
from .minimization import CategoryTaxonomy, classify, minimization_report, plans_from_toml
from .records import Action, Certificate, record_breach, record_correction, record_erasure, record_processing
from .transparency import export_transparency_summary


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message, code="USAGE")


def exit_code(exc: ConsentLedgerError) -> int:
    if isinstance(exc, (IntegrityError, MalformedKeyError, MalformedSignatureError)):
        return 3
    if isinstance(exc, UsageError):
        return 2
    return 1


@dataclass
class Context:
    config: ToolConfig
    out: TextIO
    clock: Clock
    _ledger: Ledger | None = field(default=None, repr=False)
    _taxonomy: CategoryTaxonomy | None = field(default=None, repr=False)

    @property
    def keys(self) -> KeyStore:
        return KeyStore(self.config.key_dir)

    @property
    def ledger(self) -> Ledger:
        if self._ledger is None:
            self._ledger = Ledger.open(self.config.ledger, self.keys.directory())
        return self._ledger

    def verified_ledger(self) -> Ledger:
        ledger = self.ledger
        verdict = ledger.verify_chain()
        if not verdict.ok:
            raise IntegrityError(f"entry {verdict.first_bad_index}: {verdict.reason}", code="CHAIN_INVALID")
        if ledger.path is not None and ledger.path.exists():
            head = ledger.check_head_file()
            if not head.ok:
                raise IntegrityError(head.reason, code="HEAD_MISMATCH")
        return ledger

    @property
    def taxonomy(self) -> CategoryTaxonomy:
        if self._taxonomy is None:
            path = self.config.taxonomy
            self._taxonomy = CategoryTaxonomy.load(path) if path else CategoryTaxonomy.default()
        return self._taxonomy

    def audit_config(self, path: str | None) -> AuditConfig:
        path = path or self.config.audit_config
        return AuditConfig.load(path, self.taxonomy) if path else AuditConfig()

    def print(self, *parts: Any) -> None:
        print("\t".join(str(p) for p in parts), file=self.out)

    def emit(self, document: Any, out_path: str | None = None) -> None:
        data = canonical_bytes(document) + b"\n"
        if out_path:
            Path(out_path).write_bytes(data)
        else:
            self.out.write(data.decode("utf-8"))

    def append(self, payload: Any) -> None:
        entry = self.verified_ledger().append(payload)
        self.print(entry.index, entry.payload_kind.value, entry.payload_digest.hex())

    def tsa(self):
        return _TsaSession(self)


class _TsaSession:
    """Loads the local TSA and persists its counter after a successful write."""

    def __init__(self, ctx: Context) -> None:
        self.ctx = ctx

    def __enter__(self):
        self.tsa = self.ctx.keys.tsa(self.ctx.clock)
        return self.tsa

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.ctx.keys.save_tsa(self.tsa)


# ---------------------------------------------------------------- input documents


def _read_mapping(path: str) -> Mapping[str, Any]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}", code="NO_FILE") from None
    try:
        if path.endswith(".toml"):
            return tomli.loads(data.decode("utf-8"))
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot parse {path}: {exc}", code="BAD_INPUT") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path} must hold an object", code="BAD_INPUT")
    return doc


def form_from_mapping(doc: Mapping[str, Any], guardian_key=None) -> ConsentForm:
    """Build a form from the human-edited layout shown in the README."""
    if "@type" in doc:
        return from_plain(dict(doc), ConsentForm)
    try:
        purposes = tuple(
            PurposeSpec(p["purpose_id"], p.get("description", ""), frozenset(p.get("data_categories", ())),
                        bool(p.get("requires_explicit_ack", False)))
            for p in doc.get("purposes", ())
        )
        ret = doc.get("retention", {})
        retention = Retention(RetentionKind(ret.get("kind", "FIXED")), int(ret.get("days", 0)))
        ack = doc.get("explicit_ack")
        explicit = ExplicitAck(ack.get("affirmation", ""), {k: bool(v) for k, v in ack.get("checked", {}).items()}) \
            if ack else None
        tps = doc.get("third_parties")
        child = None
        if "child" in doc:
            guardian = doc["child"].get("guardian")
            att = attest_minor(doc["principal"], guardian_key) if guardian_key is not None else None
            child = ChildConsent(guardian, att)
        return ConsentForm(
            doc.get("form_id", ""), doc.get("principal", ""), doc.get("fiduciary", ""), purposes,
            None if tps is None else tuple(tps), retention, bool(doc.get("cross_border", False)),
            doc.get("destination"), explicit, child,
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise UsageError(f"bad consent form: {exc!r}", code="BAD_INPUT") from None


def _load_form(ctx: Context, path: str) -> tuple[ConsentForm, Any]:
    doc = _read_mapping(path)
    guardian_key = None
    guardian = (doc.get("child") or {}).get("guardian") if "@type" not in doc else None
    if guardian:
        guardian_key = ctx.keys.load_key(guardian)
    form = form_from_mapping(doc, guardian_key)
    if form.child is not None and form.child.guardian and guardian_key is None:
        guardian_key = ctx.keys.load_key(form.child.guardian)
    return form, guardian_key


def _consent_ref(ctx: Context, ref: str) -> tuple[int, ConsentEvent]:
    ledger = ctx.verified_ledger()
    if ref.isdigit():
        i = int(ref)
        if i >= len(ledger):
            raise UsageError(f"no entry {i}", code="OUT_OF_RANGE")
        ev = ledger.payload(i)
        if not isinstance(ev, ConsentEvent):
            raise UsageError(f"entry {i} is not a consent event", code="NOT_CONSENT")
        return i, ev
    try:
        key = bytes.fromhex(ref)
    except ValueError:
        raise UsageError(f"{ref!r} is neither an index nor a digest", code="BAD_REF") from None
    found = ConsentIndex(ledger).by_digest.get(key)
    if found is None:
        raise UsageError(f"no consent event with digest {ref}", code="BAD_REF")
    return found


def _instant(text: str | None) -> int | None:
    if text is None:
        return None
    try:
        return parse_instant(text)
    except ValueError as exc:
        raise UsageError(str(exc), code="BAD_INSTANT") from None


def _csv(text: str) -> list[str]:
    return [s for s in (t.strip() for t in text.split(",")) if s]


# ---------------------------------------------------------------- commands


def cmd_keys_generate(ctx: Context, a) -> int:
    key = ctx.keys.generate(Role(a.role), a.id, seed=a.seed, overwrite=a.force)
    ctx.print(key.party_id, key.identity.role.value, key.identity.key_fingerprint.hex())
    return 0


def cmd_keys_list(ctx: Context, a) -> int:
    for ident in sorted(ctx.keys.directory(), key=lambda i: i.party_id):
        ctx.print(ident.party_id, ident.role.value, ident.key_fingerprint.hex())
    return 0


def cmd_consent_establish(ctx: Context, a) -> int:
    form, guardian_key = _load_form(ctx, a.form)
    keys = ctx.keys
    with ctx.tsa() as tsa:
        event = establish(form, keys.load_key(form.principal), keys.load_key(form.fiduciary), tsa,
                          guardian_key=guardian_key, taxonomy=ctx.taxonomy)
        ctx.append(event)
    return 0


def cmd_consent_modify(ctx: Context, a) -> int:
    _, prior = _consent_ref(ctx, a.prior)
    form, guardian_key = _load_form(ctx, a.form)
    keys = ctx.keys
    with ctx.tsa() as tsa:
        event = modify(prior, form, keys.load_key(form.principal), keys.load_key(form.fiduciary), tsa,
                       guardian_key=guardian_key, taxonomy=ctx.taxonomy)
        ctx.append(event)
    return 0


def cmd_consent_withdraw(ctx: Context, a) -> int:
    _, prior = _consent_ref(ctx, a.prior)
    keys = ctx.keys
    with ctx.tsa() as tsa:
        event = withdraw(prior, keys.load_key(prior.principal), keys.load_key(prior.fiduciary), tsa,
                         reason=a.reason)
        ctx.append(event)
    return 0


def cmd_consent_propagate(ctx: Context, a) -> int:
    _, w = _consent_ref(ctx, a.withdrawal)
    with ctx.tsa() as tsa:
        ctx.append(record_propagation(w, ctx.keys.load_key(a.party), tsa))
    return 0


def cmd_consent_validate(ctx: Context, a) -> int:
    form, _ = _load_form(ctx, a.form)
    result = validate_form(form, ctx.taxonomy, ctx.keys.directory())
    for v in result.violations:
        ctx.print(v.code, v.detail)
    if result.ok:
        ctx.print("ok")
    return 0 if result.ok else 1


def cmd_record_processing(ctx: Context, a) -> int:
    _, ev = _consent_ref(ctx, a.consent)
    with ctx.tsa() as tsa:
        rec = record_processing(
            ctx.keys.load_key(a.actor), tsa, processing_id=a.id, consent_ref=ev.digest,
            purpose_id=a.purpose, categories=_csv(a.categories), action=Action(a.action),
            counterparty=a.counterparty,
        )
        ctx.append(rec)
    return 0


def cmd_record_erasure(ctx: Context, a) -> int:
    with ctx.tsa() as tsa:
        ctx.append(record_erasure(ctx.keys.load_key(a.fiduciary), tsa, principal=a.principal,
                                  categories=_csv(a.categories), method_note=a.note))
    return 0


def cmd_record_breach(ctx: Context, a) -> int:
    ctx.append(record_breach(
        ctx.keys.load_key(a.fiduciary), breach_id=a.id, description=a.description,
        categories=_csv(a.categories), detected_at=_instant(a.detected),
        reported_to_authority_at=_instant(a.reported), high_risk=a.high_risk,
        principal_notified_at=_instant(a.notified),
    ))
    return 0


def cmd_record_correction(ctx: Context, a) -> int:
    keys = ctx.keys
    with ctx.tsa() as tsa:
        ctx.append(record_correction(keys.load_key(a.principal), keys.load_key(a.fiduciary), tsa,
                                     field_path=a.field, old_value=a.old.encode(), new_value=a.new.encode()))
    return 0


def cmd_ledger_append(ctx: Context, a) -> int:
    try:
        payload = load_document(Path(a.payload).read_bytes())
    except OSError as exc:
        raise UsageError(f"cannot read {a.payload}: {exc.strerror}", code="NO_FILE") from None
    ctx.append(payload)
    return 0


def cmd_ledger_verify(ctx: Context, a) -> int:
    ledger = ctx.ledger
    verdict = ledger.verify_chain(a.from_index, a.to_index)
    if not verdict.ok:
        raise IntegrityError(f"entry {verdict.first_bad_index}: {verdict.reason}", code="CHAIN_INVALID")
    if a.to_index is None and ledger.path is not None and ledger.path.exists():
        head = ledger.check_head_file()
        if not head.ok:
            raise IntegrityError(head.reason, code="HEAD_MISMATCH")
    ctx.print("ok", len(ledger), ledger.head_hash.hex() if len(ledger) else "-")
    return 0


def cmd_ledger_latest(ctx: Context, a) -> int:
    res = latest_consent(ctx.verified_ledger(), a.principal, a.fiduciary)
    if res.event is None:
        ctx.print(res.status.value)
    else:
        ctx.print(res.status.value, res.index, res.event.digest.hex(), res.event.form_id)
    return 0


def cmd_ledger_prove(ctx: Context, a) -> int:
    ledger = ctx.verified_ledger()
    if not 0 <= a.index < len(ledger):
        raise UsageError(f"no entry {a.index}", code="OUT_OF_RANGE")
    ctx.emit(inclusion_proof(ledger, a.index), a.out)
    return 0


def cmd_ledger_check_proof(ctx: Context, a) -> int:
    proof = decode_canonical(Path(a.proof).read_bytes().rstrip(b"\n"), InclusionProof)
    if not verify_inclusion(bytes.fromhex(a.head), proof):
        raise IntegrityError("proof does not lead to the given head", code="PROOF_INVALID")
    ctx.print("ok", proof.index, proof.head_index)
    return 0


def cmd_ledger_anchor(ctx: Context, a) -> int:
    ledger = ctx.verified_ledger()
    counter = ctx.keys.load_key(a.countersign) if a.countersign else None
    record = anchor(ledger, ctx.keys.load_key(a.fiduciary), countersign_key=counter)
    ctx.print(len(ledger) - 1, "ANCHOR", record.head_index, record.head_hash.hex())
    return 0


def cmd_comply_check(ctx: Context, a) -> int:
    ledger = ctx.verified_ledger()
    names = _csv(a.checks) if a.checks else sorted(LEDGER_CHECKS)
    checks = []
    for name in names:
        check_id = CHECK_ALIASES.get(name, name)
        if check_id not in LEDGER_CHECKS:
            raise UsageError(f"unknown check {name!r}", code="UNKNOWN_CHECK")
        checks.append(check_id)
    settings = ctx.audit_config(a.config).settings if (a.config or ctx.config.audit_config) else CheckSettings()
    view = LedgerView(ledger)
    now = _instant(a.as_of)
    findings = []
    for check_id in sorted(set(checks)):
        findings.extend(LEDGER_CHECKS[check_id](view, now, settings).findings)
    findings = sort_findings(findings)
    for f in findings:
        ctx.print(f.line())
    return 1 if any(f.severity.failing for f in findings) else 0


def cmd_comply_access(ctx: Context, a) -> int:
    ctx.emit(right_to_access(ctx.verified_ledger(), a.principal, a.fiduciary), a.out)
    return 0


def cmd_comply_restrict(ctx: Context, a) -> int:
    try:
        order = Path(a.order).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read order {a.order}: {exc.strerror}", code="ORDER_REQUIRED") from None
    ledger = ctx.verified_ledger()
    with ctx.tsa() as tsa:
        entry = restrict_disclosure(ledger, ctx.keys.load_key(a.fiduciary), tsa, principal=a.principal,
                                    order_ref=digest(order))
    ctx.print(entry.index, entry.payload_kind.value, entry.payload_digest.hex())
    return 0


def cmd_minimize_lint(ctx: Context, a) -> int:
    report = minimization_report(plans_from_toml(Path(a.plan).read_text(encoding="utf-8"), ctx.taxonomy),
                                 ctx.taxonomy)
    for f in report.findings:
        ctx.print(f.line())
    ctx.print("pass" if report.passed else "fail", report.over_collection_count)
    return 0 if report.passed else 1


def cmd_minimize_classify(ctx: Context, a) -> int:
    for cid in a.categories:
        ctx.print(cid, classify(cid, ctx.taxonomy).value)
    return 0


def _report_exit(ctx: Context, report: AuditReport, config: AuditConfig, out: str | None) -> int:
    ctx.emit(report, out)
    if out:
        ctx.print(report.kind, f"{report.score:.6f}", report.grade)
    return 0 if grade_at_least(report.grade, config.min_certificate_grade) else 1


def cmd_audit_run(ctx: Context, a) -> int:
    config = ctx.audit_config(a.config)
    ledger = Ledger.open(a.ledger, ctx.keys.directory()) if a.ledger else ctx.ledger
    return _report_exit(ctx, run_audit(ledger, config, ctx.clock, ctx.taxonomy), config, a.out)


def cmd_audit_assess(ctx: Context, a) -> int:
    config = ctx.audit_config(a.config)
    plans = plans_from_toml(Path(a.plan).read_text(encoding="utf-8"), ctx.taxonomy) if a.plan else None
    ledger = None if a.no_ledger else ctx.ledger
    report = impact_assessment(ledger, config, ctx.clock, plans, ctx.taxonomy)
    return _report_exit(ctx, report, config, a.out)


def _load_report(path: str) -> AuditReport:
    return decode_canonical(Path(path).read_bytes().rstrip(b"\n"), AuditReport)


def cmd_audit_certify(ctx: Context, a) -> int:
    report = _load_report(a.report)
    config = ctx.audit_config(a.config)
    valid_from, valid_until = default_validity(report, config)
    if a.valid_until:
        valid_until = _instant(a.valid_until)
    cert = issue_certificate(report, ctx.keys.load_key(a.auditor), (valid_from, valid_until),
                             min_grade=config.min_certificate_grade)
    ctx.emit(cert, a.out)
    if a.append:
        ctx.append(cert)
    return 0


def cmd_audit_verify_cert(ctx: Context, a) -> int:
    cert = decode_canonical(Path(a.cert).read_bytes().rstrip(b"\n"), Certificate)
    report = _load_report(a.report)
    if not verify_certificate(cert, report, ctx.keys.load_identity(a.auditor)):
        raise IntegrityError("certificate does not match the report or auditor", code="CERTIFICATE_INVALID")
    ctx.print("ok", cert.grade, cert.fiduciary)
    return 0


def cmd_transparency_export(ctx: Context, a) -> int:
    ctx.emit(export_transparency_summary(ctx.ledger), a.out)
    return 0


def cmd_serve(ctx: Context, a) -> int:
    serve(a.socket, ctx.config)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="consentledger", description="Verifiable consent ledger and data-protection audit tool.")
    p.add_argument("--version", action="version", version=f"consentledger {__version__}")
    p.add_argument("--config", dest="tool_config", help="tool config TOML (default $CONSENTLEDGER_CONFIG)")
    p.add_argument("--key-dir", help=f"key directory (overrides config and ${KEY_DIR_ENV})")
    p.add_argument("--ledger-file", dest="ledger_file", help="ledger file (overrides config)")
    p.add_argument("--taxonomy", help="category taxonomy TOML")
    p.add_argument("--now", help="fixed ISO instant for this run (makes runs replayable)")
    groups = p.add_subparsers(dest="group", metavar="<group>", parser_class=_Parser)
    groups.required = True

    def group(name: str, help_text: str):
        sub = groups.add_parser(name, help=help_text).add_subparsers(dest="command", metavar="<command>",
                                                                      parser_class=_Parser)
        sub.required = True
        return sub

    def command(sub, name: str, fn: Callable, help_text: str, *, writes: bool = False):
        c = sub.add_parser(name, help=help_text, description=help_text)
        c.set_defaults(fn=fn, writes=writes)
        return c

    keys = group("keys", "key management")
    c = command(keys, "generate", cmd_keys_generate, "create a key pair and identity file", writes=True)
    c.add_argument("--role", required=True, choices=[r.value for r in Role])
    c.add_argument("--id", help="party id (default derived from the key)")
    c.add_argument("--seed", help="derive the key from a seed (replayable fixtures only)")
    c.add_argument("--force", action="store_true", help="overwrite an existing key")
    command(keys, "list", cmd_keys_list, "list known identities")

    consent = group("consent", "consent lifecycle")
    c = command(consent, "establish", cmd_consent_establish, "establish consent from a form", writes=True)
    c.add_argument("--form", required=True)
    c = command(consent, "modify", cmd_consent_modify, "supersede a consent with a new form", writes=True)
    c.add_argument("--prior", required=True, help="entry index or digest of the superseded event")
    c.add_argument("--form", required=True)
    c = command(consent, "withdraw", cmd_consent_withdraw, "withdraw a consent", writes=True)
    c.add_argument("--prior", required=True)
    c.add_argument("--reason", default="")
    c = command(consent, "propagate", cmd_consent_propagate, "record a third party's withdrawal receipt",
                writes=True)
    c.add_argument("--withdrawal", required=True)
    c.add_argument("--party", required=True)
    c = command(consent, "validate", cmd_consent_validate, "check a form without signing it")
    c.add_argument("--form", required=True)

    record = group("record", "processing evidence")
    c = command(record, "processing", cmd_record_processing, "record a processing event", writes=True)
    c.add_argument("--actor", required=True)
    c.add_argument("--consent", required=True, help="entry index or digest of the consent relied on")
    c.add_argument("--purpose", required=True)
    c.add_argument("--categories", required=True, help="comma-separated category ids")
    c.add_argument("--action", required=True, choices=[x.value for x in Action])
    c.add_argument("--counterparty")
    c.add_argument("--id", required=True, help="processing id")
    c = command(record, "erasure", cmd_record_erasure, "record an erasure receipt", writes=True)
    c.add_argument("--fiduciary", required=True)
    c.add_argument("--principal", required=True)
    c.add_argument("--categories", required=True)
    c.add_argument("--note", default="")
    c = command(record, "breach", cmd_record_breach, "record a personal data breach", writes=True)
    c.add_argument("--fiduciary", required=True)
    c.add_argument("--id", required=True)
    c.add_argument("--description", default="")
    c.add_argument("--categories", default="")
    c.add_argument("--detected", required=True, help="ISO instant")
    c.add_argument("--reported", help="ISO instant the authority was notified")
    c.add_argument("--notified", help="ISO instant principals were notified")
    c.add_argument("--high-risk", action="store_true")
    c = command(record, "correction", cmd_record_correction, "record a data correction", writes=True)
    c.add_argument("--principal", required=True)
    c.add_argument("--fiduciary", required=True)
    c.add_argument("--field", required=True)
    c.add_argument("--old", required=True)
    c.add_argument("--new", required=True)

    ledger = group("ledger", "ledger operations")
    c = command(ledger, "append", cmd_ledger_append, "append a canonical payload document", writes=True)
    c.add_argument("--payload", required=True)
    c = command(ledger, "verify", cmd_ledger_verify, "verify the hash chain and signatures")
    c.add_argument("--from", dest="from_index", type=int, default=0)
    c.add_argument("--to", dest="to_index", type=int)
    c = command(ledger, "latest", cmd_ledger_latest, "resolve the governing consent for a pair")
    c.add_argument("--principal", required=True)
    c.add_argument("--fiduciary", required=True)
    c = command(ledger, "prove", cmd_ledger_prove, "emit an inclusion proof for an entry")
    c.add_argument("--index", type=int, required=True)
    c.add_argument("--out")
    c = command(ledger, "check-proof", cmd_ledger_check_proof, "check an inclusion proof against a head hash")
    c.add_argument("--proof", required=True)
    c.add_argument("--head", required=True)
    c = command(ledger, "anchor", cmd_ledger_anchor, "sign and append a checkpoint of the head", writes=True)
    c.add_argument("--fiduciary", required=True)
    c.add_argument("--countersign")

    comply = group("comply", "compliance checks and principal rights")
    c = command(comply, "check", cmd_comply_check, "run compliance checks; exit 1 on violations")
    c.add_argument("--checks", help="comma-separated check ids (default all)")
    c.add_argument("--as-of", help="ISO instant for time-based checks (default latest ledger time)")
    c.add_argument("--config", help="audit config supplying check settings")
    c = command(comply, "access", cmd_comply_access, "right-to-access summary for a principal")
    c.add_argument("--principal", required=True)
    c.add_argument("--fiduciary", required=True)
    c.add_argument("--out")
    c = command(comply, "restrict", cmd_comply_restrict, "record a disclosure restriction order", writes=True)
    c.add_argument("--fiduciary", required=True)
    c.add_argument("--principal", required=True)
    c.add_argument("--order", required=True, help="file holding the adjudicating officer's order")

    minimize = group("minimize", "data minimization")
    c = command(minimize, "lint", cmd_minimize_lint, "lint collection plans for over-collection")
    c.add_argument("plan")
    c = command(minimize, "classify", cmd_minimize_classify, "show the collection class of categories")
    c.add_argument("categories", nargs="+")

    audit = group("audit", "audits and certificates")
    c = command(audit, "run", cmd_audit_run, "audit the ledger; exit 0 iff grade meets the minimum")
    c.add_argument("--config")
    c.add_argument("--ledger", help="ledger file (default from tool config)")
    c.add_argument("--out")
    c = command(audit, "assess", cmd_audit_assess, "impact assessment of a declared plan")
    c.add_argument("--config")
    c.add_argument("--plan")
    c.add_argument("--no-ledger", action="store_true", help="lint the plan only")
    c.add_argument("--out")
    c = command(audit, "certify", cmd_audit_certify, "issue an auditor certificate for a report")
    c.add_argument("--report", required=True)
    c.add_argument("--auditor", required=True)
    c.add_argument("--config")
    c.add_argument("--valid-until")
    c.add_argument("--out")
    c.add_argument("--append", action="store_true", help="also append the certificate to the ledger")
    c = command(audit, "verify-cert", cmd_audit_verify_cert, "verify a certificate against its report")
    c.add_argument("--cert", required=True)
    c.add_argument("--report", required=True)
    c.add_argument("--auditor", required=True)

    transparency = group("transparency", "public disclosures")
    c = command(transparency, "export", cmd_transparency_export, "export the transparency summary")
    c.add_argument("--out")

    c = groups.add_parser("serve", help="serve the same commands over a local socket")
    c.set_defaults(fn=cmd_serve, writes=False)
    c.add_argument("--socket", required=True)
    return p


def _context(args, out: TextIO, env: Mapping[str, str]) -> Context:
    config = ToolConfig.load(args.tool_config, dict(env))
    key_dir = args.key_dir or env.get(KEY_DIR_ENV)
    if key_dir:
        config = replace(config, key_dir=Path(key_dir))
    if args.ledger_file:
        config = replace(config, ledger=Path(args.ledger_file))
    if args.taxonomy:
        config = replace(config, taxonomy=Path(args.taxonomy))
    if args.now:
        try:
            parse_instant(args.now)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        config = replace(config, clock=args.now)
    config.validate()
    return Context(config, out, config.make_clock())


_WRITE_LOCK = threading.Lock()


def dispatch(argv: Sequence[str], stdout: TextIO | None = None, stderr: TextIO | None = None,
             env: Mapping[str, str] | None = None) -> int:
    """Run one command; returns the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    env = os.environ if env is None else env
    try:
        args = build_parser().parse_args(list(argv))
        ctx = _context(args, stdout, env)
        if args.writes:
            with _WRITE_LOCK:
                return args.fn(ctx, args)
        return args.fn(ctx, args)
    except ConsentLedgerError as exc:
        message = str(exc).replace("\n", " ")
        prefix = f"{exc.code}: "
        print(f"error\t{exc.code}\t{message.removeprefix(prefix)}", file=stderr)
        return exit_code(exc)
    except SystemExit as exc:  # --help and --version
        return exc.code if isinstance(exc.code, int) else 0
    except OSError as exc:
        print(f"error\tIO\t{exc.strerror}: {exc.filename}", file=stderr)
        return 2


# ---------------------------------------------------------------- service mode


class _Handler(socketserver.StreamRequestHandler):
    """One JSON request per line: ``{"argv": [...]}``; one JSON response per line."""

    def handle(self) -> None:
        for raw in self.rfile:
            try:
                request = json.loads(raw)
                argv = [str(x) for x in request["argv"]]
            except (ValueError, KeyError, TypeError):
                response = {"exit": 2, "stdout": "", "stderr": "error\tUSAGE\tbad request\n"}
            else:
                if argv and argv[0] == "serve":
                    argv = []
                out, err = io.StringIO(), io.StringIO()
                base = self.server.base_argv
                code = dispatch([*base, *argv], out, err, env={})
                response = {"exit": code, "stdout": out.getvalue(), "stderr": err.getvalue()}
            self.wfile.write(json.dumps(response, sort_keys=True).encode() + b"\n")
            self.wfile.flush()


class _Server(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True


def serve(socket_path: str | Path, config: ToolConfig) -> None:
    """Serve dispatch on a unix socket until interrupted. Writes are serialized."""
    path = Path(socket_path)
    if path.exists():
        path.unlink()
    with _Server(str(path), _Handler) as server:
        server.base_argv = _base_argv(config)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            path.unlink(missing_ok=True)


def _base_argv(config: ToolConfig) -> list[str]:
    argv = ["--key-dir", str(config.key_dir), "--ledger-file", str(config.ledger)]
    if config.taxonomy:
        argv += ["--taxonomy", str(config.taxonomy)]
    if config.clock != "real":
        argv += ["--now", config.clock]
    return argv


def main(argv: Sequence[str] | None = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
