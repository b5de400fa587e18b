"""Data-protection audit: check registry, weighted trust score, grades, certificates.

score = 100 * sum(weight_c * pass_ratio_c) / sum(weight_c) over enabled
checks, folded in check_id order. Any FATAL finding (broken chain,
forked consent, dangling consent reference) forces score 0 and grade F,
and an open VIOLATION caps the grade at ``violation_grade_cap``.
Reports are deterministic so anyone holding the ledger can recompute them.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .canonical import canonical_bytes, payload_type
from .clock import DAY, Clock
from .compliance import (
    CHECK_ALIASES,
    LEDGER_CHECKS,
    CheckResult,
    CheckSettings,
    LedgerView,
    _result,
)
from .crypto import ZERO_DIGEST, Directory, KeyPair, PartyIdentity, Role, digest, document_digest
from .errors import CertificationRefused, ConfigError, DomainError
from .findings import Finding, Severity, sort_findings
from .ledger import ConsentIndex, ConsentStatus, Ledger, PayloadKind
from .minimization import (
    CHECK_ID as MINIMIZATION,
)
from .minimization import (
    CategoryTaxonomy,
    CollectionClass,
    CollectionPlan,
    classify,
    lint_plan,
    plans_from_dicts,
)
from .records import Certificate

CHAIN_INTEGRITY = "chain_integrity"
PLAN_CONSENT = "plan_consent"

ALL_CHECKS = tuple(sorted([*LEDGER_CHECKS, MINIMIZATION]))
GRADES = ("A", "B", "C", "D", "F")


@payload_type
@dataclass(frozen=True)
class GradeBand:
    threshold: float
    grade: str


DEFAULT_BANDS = (GradeBand(90.0, "A"), GradeBand(75.0, "B"), GradeBand(60.0, "C"),
                 GradeBand(40.0, "D"), GradeBand(0.0, "F"))


@payload_type
@dataclass(frozen=True)
class AuditConfig:
    fiduciary: str = ""
    enabled_checks: frozenset[str] = frozenset(ALL_CHECKS)
    weights: dict[str, float] = field(default_factory=dict)
    grade_bands: tuple[GradeBand, ...] = DEFAULT_BANDS
    settings: CheckSettings = CheckSettings()
    min_certificate_grade: str = "B"
    audit_frequency_days: int = 365
    violation_grade_cap: str | None = "B"
    plans: tuple[CollectionPlan, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "enabled_checks",
                           frozenset(CHECK_ALIASES.get(c, c) for c in self.enabled_checks))
        object.__setattr__(self, "weights",
                           {CHECK_ALIASES.get(k, k): float(v) for k, v in sorted(self.weights.items())})

    def weight(self, check_id: str) -> float:
        return self.weights.get(check_id, 1.0)

    def validate(self, known: Iterable[str] = ALL_CHECKS) -> None:
        known = set(known)
        unknown = self.enabled_checks - known
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}")
        if not self.enabled_checks:
            raise ConfigError("no checks enabled")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("weights must be non-negative")
        if sum(self.weight(c) for c in self.enabled_checks) <= 0:
            raise ConfigError("weights of enabled checks must sum to more than zero")
        bands = self.grade_bands
        if not bands or bands[-1].threshold != 0 or bands[0].threshold > 100:
            raise ConfigError("grade bands must cover [0, 100]")
        for hi, lo in zip(bands, bands[1:]):
            if not hi.threshold > lo.threshold:
                raise ConfigError("grade band thresholds must strictly decrease")
        grades = [b.grade for b in bands]
        if any(g not in GRADES for g in grades) or [GRADES.index(g) for g in grades] != sorted(
                {GRADES.index(g) for g in grades}):
            raise ConfigError("grade bands must list distinct grades from best to worst")
        if self.min_certificate_grade not in GRADES:
            raise ConfigError(f"unknown grade {self.min_certificate_grade!r}")
        if self.violation_grade_cap is not None and self.violation_grade_cap not in GRADES:
            raise ConfigError(f"unknown grade {self.violation_grade_cap!r}")
        if self.audit_frequency_days <= 0:
            raise ConfigError("audit frequency must be positive")

    def grade_for(self, score: float, has_violation: bool = False) -> str:
        grade = next((b.grade for b in self.grade_bands if score >= b.threshold), self.grade_bands[-1].grade)
        cap = self.violation_grade_cap
        if has_violation and cap is not None and GRADES.index(grade) < GRADES.index(cap):
            return cap
        return grade

    @classmethod
    def from_toml(cls, text: str, taxonomy: CategoryTaxonomy | None = None) -> AuditConfig:
        """Parse an audit configuration file; see README for the layout."""
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"bad audit config: {exc}") from None
        taxonomy = taxonomy or CategoryTaxonomy.default()
        try:
            kwargs = {}
            if "fiduciary" in doc:
                kwargs["fiduciary"] = str(doc["fiduciary"])
            if "enabled_checks" in doc:
                kwargs["enabled_checks"] = frozenset(doc["enabled_checks"])
            if "weights" in doc:
                kwargs["weights"] = {k: float(v) for k, v in doc["weights"].items()}
            if "grade_bands" in doc:
                bands = sorted(((float(v), k) for k, v in doc["grade_bands"].items()), reverse=True)
                kwargs["grade_bands"] = tuple(GradeBand(t, g) for t, g in bands)
            if "min_certificate_grade" in doc:
                kwargs["min_certificate_grade"] = str(doc["min_certificate_grade"])
            if "violation_grade_cap" in doc:
                cap = str(doc["violation_grade_cap"])
                kwargs["violation_grade_cap"] = None if cap in ("", "none") else cap
            if "audit_frequency_days" in doc:
                kwargs["audit_frequency_days"] = int(doc["audit_frequency_days"])
            s = doc.get("settings", {})
            kwargs["settings"] = CheckSettings(
                breach_window_hours=int(s.get("breach_window_hours", 72)),
                propagation_grace_days=int(s.get("propagation_grace_days", 7)),
                guardian_fiduciaries=frozenset(s.get("guardian_fiduciaries", ())),
                prohibited_child_purposes=frozenset(
                    s.get("prohibited_child_purposes", ("profiling", "advertising"))),
            )
            kwargs["plans"] = tuple(plans_from_dicts(doc.get("plan", []), taxonomy))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"bad audit config: {exc}") from None
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path, taxonomy: CategoryTaxonomy | None = None) -> AuditConfig:
        return cls.from_toml(Path(path).read_text(encoding="utf-8"), taxonomy)


@payload_type
@dataclass(frozen=True)
class CheckSummary:
    check_id: str
    evaluated: int
    failed: int
    pass_ratio: float
    weight: float


@payload_type
@dataclass(frozen=True)
class AuditReport:
    kind: str
    fiduciary: str
    audited_head_index: int
    audited_head_hash: bytes
    ledger_digest: bytes
    config_digest: bytes
    chain_ok: bool
    findings: tuple[Finding, ...]
    checks: tuple[CheckSummary, ...]
    score: float
    grade: str
    produced_at: int

    @property
    def violations(self) -> list[Finding]:
        return [f for f in self.findings if f.severity.failing]

    def passed_checks(self) -> frozenset[str]:
        return frozenset(c.check_id for c in self.checks if c.failed == 0)


def weighted_score(checks: Iterable[CheckSummary]) -> float:
    checks = sorted(checks, key=lambda c: c.check_id)
    total = sum(c.weight for c in checks)
    if total <= 0:
        return 0.0
    return 100.0 * sum(c.weight * c.pass_ratio for c in checks) / total


def _minimization_result(plans: Iterable[CollectionPlan], taxonomy: CategoryTaxonomy) -> CheckResult:
    findings, subjects = [], []
    for plan in plans:
        subjects.extend(f"plan:{plan.purpose_id}/category:{c}" for c in plan.requested_categories)
        findings.extend(lint_plan(plan, taxonomy))
    return _result(MINIMIZATION, findings, subjects)


def _assemble(kind: str, config: AuditConfig, ledger: Ledger | None, chain_ok: bool,
              head: tuple[int, bytes], findings: list[Finding], results: list[CheckResult],
              produced_at: int) -> AuditReport:
    summaries = tuple(
        CheckSummary(r.check_id, r.evaluated, r.failed, r.pass_ratio, config.weight(r.check_id))
        for r in sorted(results, key=lambda r: r.check_id)
    )
    for r in results:
        findings.extend(r.findings)
    findings = sort_findings(findings)
    fatal = any(f.severity is Severity.FATAL for f in findings)
    score = 0.0 if fatal or not chain_ok else weighted_score(summaries)
    violation = any(f.severity is Severity.VIOLATION for f in findings)
    grade = "F" if fatal or not chain_ok else config.grade_for(score, violation)
    return AuditReport(
        kind, config.fiduciary, head[0], head[1],
        digest(ledger.to_bytes()) if ledger is not None else ZERO_DIGEST,
        document_digest(config), chain_ok, tuple(findings), summaries, score, grade, produced_at,
    )


def _integrity(ledger: Ledger) -> tuple[bool, tuple[int, bytes], list[Finding]]:
    verdict = ledger.verify_chain()
    if not verdict.ok:
        bad = verdict.first_bad_index
        head = (bad - 1, ledger.entry(bad - 1).entry_hash) if bad else (-1, ZERO_DIGEST)
        return False, head, [Finding(CHAIN_INTEGRITY, "CHAIN_BROKEN", Severity.FATAL, f"entry:{bad}",
                                     (bad,), verdict.reason)]
    head = (ledger.head_index, ledger.head_hash)
    findings = []
    if ledger.path is not None:
        hv = ledger.check_head_file()
        if not hv.ok:
            findings.append(Finding(CHAIN_INTEGRITY, "HEAD_MISMATCH", Severity.FATAL,
                                    f"entry:{hv.first_bad_index}", (hv.first_bad_index,), hv.reason))
    for code, message, indices in ConsentIndex(ledger).check_all():
        findings.append(Finding(CHAIN_INTEGRITY, code, Severity.FATAL, f"entry:{indices[0]}",
                                tuple(indices), message))
    return True, head, findings


def run_audit(ledger: Ledger, config: AuditConfig, clock: Clock,
              taxonomy: CategoryTaxonomy | None = None) -> AuditReport:
    """Verify the chain, run every enabled check, and score the result."""
    config.validate()
    taxonomy = taxonomy or CategoryTaxonomy.default()
    now = int(clock.now())
    chain_ok, head, findings = _integrity(ledger)
    results: list[CheckResult] = []
    if chain_ok:
        view = LedgerView(ledger)
        for check_id in sorted(config.enabled_checks):
            if check_id == MINIMIZATION:
                results.append(_minimization_result(config.plans, taxonomy))
            else:
                results.append(LEDGER_CHECKS[check_id](view, now, config.settings))
    return _assemble("AUDIT", config, ledger, chain_ok, head, findings, results, now)


def plans_from_history(ledger: Ledger, taxonomy: CategoryTaxonomy | None = None) -> list[CollectionPlan]:
    """One plan per purpose seen in processing, bounded by the highest class it touched."""
    taxonomy = taxonomy or CategoryTaxonomy.default()
    seen: dict[str, set[str]] = {}
    for _, ev in ledger.items(PayloadKind.PROCESSING):
        seen.setdefault(ev.purpose_id, set()).update(ev.categories_touched)
    plans = []
    for purpose, cats in sorted(seen.items()):
        bound = max((classify(c, taxonomy) for c in cats), key=lambda k: k.level,
                    default=CollectionClass.ZERO)
        plans.append(CollectionPlan(purpose, frozenset(cats), bound))
    return plans


def _plan_consent_result(plans: Iterable[CollectionPlan], ledger: Ledger) -> CheckResult:
    index = ConsentIndex(ledger)
    forms = []
    for pair in sorted(index.by_pair):
        res = index.resolve(pair)
        if res.status is ConsentStatus.ACTIVE:
            forms.append(res.event.form)
    findings, subjects = [], []
    for plan in plans:
        subj = f"plan:{plan.purpose_id}"
        subjects.append(subj)
        covered = any(
            (p := form.purpose(plan.purpose_id)) is not None
            and plan.requested_categories <= p.data_categories
            for form in forms
        )
        if not covered:
            findings.append(Finding(PLAN_CONSENT, "PLAN_NOT_CONSENTED", Severity.VIOLATION, subj, (),
                                    f"no active consent covers purpose {plan.purpose_id} with the "
                                    "requested categories"))
    return _result(PLAN_CONSENT, findings, subjects)


def impact_assessment(ledger: Ledger | None, config: AuditConfig, clock: Clock,
                      plans: Iterable[CollectionPlan] | None = None,
                      taxonomy: CategoryTaxonomy | None = None) -> AuditReport:
    """Score a declared future processing plan instead of recorded history.

    Plans are linted for over-collection and, when a ledger is given,
    checked against the active consents it records.
    """
    config.validate()
    taxonomy = taxonomy or CategoryTaxonomy.default()
    plans = tuple(config.plans if plans is None else plans)
    now = int(clock.now())
    results = [_minimization_result(plans, taxonomy)]
    chain_ok, head, findings = True, (-1, ZERO_DIGEST), []
    if ledger is not None:
        chain_ok, head, findings = _integrity(ledger)
        if chain_ok and not findings:
            results.append(_plan_consent_result(plans, ledger))
    return _assemble("ASSESSMENT", config, ledger, chain_ok, head, findings, results, now)


def grade_at_least(grade: str, minimum: str) -> bool:
    return GRADES.index(grade) <= GRADES.index(minimum)


def issue_certificate(report: AuditReport, auditor_key: KeyPair, validity: tuple[int, int], *,
                      min_grade: str = "B") -> Certificate:
    """Bind the auditor's signature to ``report`` for the ``(valid_from, valid_until)`` interval."""
    if report.kind != "AUDIT":
        raise CertificationRefused("only audit reports can be certified")
    if not grade_at_least(report.grade, min_grade):
        raise CertificationRefused(f"grade {report.grade} is below the minimum {min_grade}")
    if auditor_key.identity.role is not Role.AUDITOR:
        raise DomainError("certificates are signed by auditors", code="KEY_MISMATCH")
    valid_from, valid_until = validity
    return Certificate.create(
        keys={"auditor_signature": auditor_key}, report_digest=document_digest(report),
        fiduciary=report.fiduciary, auditor=auditor_key.party_id, grade=report.grade,
        score=report.score, valid_from=valid_from, valid_until=valid_until,
    )


def default_validity(report: AuditReport, config: AuditConfig) -> tuple[int, int]:
    return report.produced_at, report.produced_at + config.audit_frequency_days * DAY


def verify_certificate(cert: Certificate, report: AuditReport, auditor_identity: PartyIdentity) -> bool:
    if cert.auditor != auditor_identity.party_id or auditor_identity.role is not Role.AUDITOR:
        return False
    if cert.report_digest != document_digest(report):
        return False
    if (cert.grade, cert.score, cert.fiduciary) != (report.grade, report.score, report.fiduciary):
        return False
    return cert.verification_problem(Directory([auditor_identity])) is None


def report_bytes(report: AuditReport) -> bytes:
    return canonical_bytes(report)


def recompute_score(report: AuditReport) -> float:
    """Recompute the score from the per-check summaries (for independent review)."""
    if not report.chain_ok or any(f.severity is Severity.FATAL for f in report.findings):
        return 0.0
    return weighted_score(report.checks)


def summarize(report: AuditReport) -> Mapping[str, object]:
    return {
        "kind": report.kind,
        "score": report.score,
        "grade": report.grade,
        "violations": len(report.violations),
        "checks": {c.check_id: c.pass_ratio for c in report.checks},
    }
