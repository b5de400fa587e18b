"""Consent forms and their signed lifecycle: ESTABLISH -> MODIFY* -> WITHDRAW?.

Every event is signed by the principal and the fiduciary (and by the
guardian when the form covers a child) over the canonical bytes of
``(kind, form or withdrawal notice, supersedes)``, and stamped by the
timestamp authority over the digest of those same bytes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

from .canonical import canonical_bytes, payload_type
from .crypto import (
    Directory,
    KeyPair,
    Role,
    Signature,
    TimestampAuthority,
    TimestampToken,
    digest,
    document_digest,
    key_matches,
    verify,
    verify_timestamp,
)
from .errors import DomainError, ValidationFailed
from .minimization import CategoryTaxonomy, CollectionClass, classify


class EventKind(str, enum.Enum):
    ESTABLISH = "ESTABLISH"
    MODIFY = "MODIFY"
    WITHDRAW = "WITHDRAW"


# (kind of the superseded event, kind of the new event); None = no predecessor.
ALLOWED_TRANSITIONS = frozenset({
    (None, EventKind.ESTABLISH),
    (EventKind.ESTABLISH, EventKind.MODIFY),
    (EventKind.MODIFY, EventKind.MODIFY),
    (EventKind.ESTABLISH, EventKind.WITHDRAW),
    (EventKind.MODIFY, EventKind.WITHDRAW),
})


def transition_allowed(prior: EventKind | None, new: EventKind) -> bool:
    return (prior, new) in ALLOWED_TRANSITIONS


class RetentionKind(str, enum.Enum):
    FIXED = "FIXED"
    REVIEW = "REVIEW"


@payload_type
@dataclass(frozen=True)
class Retention:
    kind: RetentionKind
    days: int

    @classmethod
    def fixed(cls, days: int) -> Retention:
        return cls(RetentionKind.FIXED, days)

    @classmethod
    def review(cls, days: int) -> Retention:
        return cls(RetentionKind.REVIEW, days)


@payload_type
@dataclass(frozen=True)
class PurposeSpec:
    purpose_id: str
    description: str
    data_categories: frozenset[str]
    requires_explicit_ack: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "data_categories", frozenset(self.data_categories))


@payload_type
@dataclass(frozen=True)
class ExplicitAck:
    affirmation: str
    checked: dict[str, bool]


@payload_type
@dataclass(frozen=True)
class AgeClaim:
    subject: str
    guardian: str
    subject_is_adult: bool
    guardian_consents: bool


@payload_type
@dataclass(frozen=True)
class AgeAttestation:
    """Guardian-signed statement that the subject is a minor and the guardian consents."""

    subject: str
    guardian: str
    subject_is_adult: bool
    guardian_consents: bool
    signature: Signature

    def claim_bytes(self) -> bytes:
        return canonical_bytes(AgeClaim(self.subject, self.guardian, self.subject_is_adult,
                                        self.guardian_consents))


def attest_minor(subject: str, guardian_key: KeyPair) -> AgeAttestation:
    claim = AgeClaim(subject, guardian_key.party_id, False, True)
    return AgeAttestation(subject, guardian_key.party_id, False, True,
                          guardian_key.sign(canonical_bytes(claim)))


@payload_type
@dataclass(frozen=True)
class ChildConsent:
    guardian: str | None
    age_attestation: AgeAttestation | None = None


@payload_type
@dataclass(frozen=True)
class ConsentForm:
    form_id: str
    principal: str
    fiduciary: str
    purposes: tuple[PurposeSpec, ...]
    # None means the list was never declared, which is invalid; () is a declared empty list.
    third_parties: tuple[str, ...] | None
    retention: Retention
    cross_border: bool = False
    destination: str | None = None
    explicit_ack: ExplicitAck | None = None
    child: ChildConsent | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "purposes", tuple(sorted(self.purposes, key=lambda p: p.purpose_id)))
        if self.third_parties is not None:
            object.__setattr__(self, "third_parties", tuple(sorted(self.third_parties)))

    def purpose(self, purpose_id: str) -> PurposeSpec | None:
        for p in self.purposes:
            if p.purpose_id == purpose_id:
                return p
        return None

    @property
    def categories(self) -> frozenset[str]:
        out: set[str] = set()
        for p in self.purposes:
            out |= p.data_categories
        return frozenset(out)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def validate_form(form: ConsentForm, taxonomy: CategoryTaxonomy | None = None,
                  directory: Directory | None = None) -> ValidationResult:
    """Check every ConsentForm invariant.

    Raises UnknownCategoryError for categories missing from ``taxonomy``.
    When ``directory`` is given, the age attestation signature is checked too.
    """
    taxonomy = taxonomy or CategoryTaxonomy.default()
    out: list[Violation] = []

    def bad(code: str, detail: str) -> None:
        out.append(Violation(code, detail))

    if not form.form_id:
        bad("EMPTY_FORM_ID", "form_id is empty")
    if not form.principal or not form.fiduciary:
        bad("MISSING_PARTY", "principal and fiduciary must be named")
    elif form.principal == form.fiduciary:
        bad("PRINCIPAL_IS_FIDUCIARY", "principal and fiduciary are the same party")
    if not form.purposes:
        bad("NO_PURPOSES", "at least one purpose is required")
    seen: set[str] = set()
    checked = form.explicit_ack.checked if form.explicit_ack else {}
    affirmed = bool(form.explicit_ack and form.explicit_ack.affirmation.strip())
    for p in form.purposes:
        if p.purpose_id in seen:
            bad("DUPLICATE_PURPOSE", p.purpose_id)
        seen.add(p.purpose_id)
        if not p.description.strip():
            bad("EMPTY_DESCRIPTION", p.purpose_id)
        if not p.data_categories:
            bad("EMPTY_CATEGORIES", p.purpose_id)
        sensitive = [c for c in sorted(p.data_categories)
                     if classify(c, taxonomy) is CollectionClass.SPI_PD]
        if sensitive and not p.requires_explicit_ack:
            bad("EXPLICIT_ACK_FLAG_MISSING", f"{p.purpose_id} touches {', '.join(sensitive)}")
        if (sensitive or p.requires_explicit_ack) and not (affirmed and checked.get(p.purpose_id) is True):
            bad("EXPLICIT_ACK_MISSING", p.purpose_id)
    if form.third_parties is None:
        bad("THIRD_PARTIES_UNDECLARED", "third-party list must be declared, even if empty")
    elif form.principal in form.third_parties or form.fiduciary in form.third_parties:
        bad("INVALID_THIRD_PARTY", "a consent party cannot be its own third party")
    if form.retention.days <= 0:
        bad("RETENTION_NOT_POSITIVE", str(form.retention.days))
    if form.cross_border and not form.destination:
        bad("CROSS_BORDER_DESTINATION_MISSING", "cross-border consent needs a destination")
    if form.child is not None:
        _validate_child(form, directory, bad)
    return ValidationResult(tuple(out))


def _validate_child(form: ConsentForm, directory: Directory | None, bad) -> None:
    child = form.child
    if not child.guardian:
        bad("GUARDIAN_REQUIRED", "child consent names no guardian")
        return
    if child.guardian == form.principal:
        bad("GUARDIAN_IS_PRINCIPAL", "guardian must differ from the principal")
    att = child.age_attestation
    if att is None:
        bad("AGE_ATTESTATION_MISSING", "child consent needs a guardian age attestation")
        return
    if (att.subject != form.principal or att.guardian != child.guardian
            or att.subject_is_adult or not att.guardian_consents):
        bad("AGE_ATTESTATION_INVALID", "attestation does not state a consenting guardian for a minor")
    elif directory is not None:
        guardian = directory.get(child.guardian)
        if guardian is None or not verify(guardian, att.claim_bytes(), att.signature):
            bad("AGE_ATTESTATION_INVALID", "attestation signature does not verify")


@payload_type
@dataclass(frozen=True)
class WithdrawalNotice:
    principal: str
    fiduciary: str
    form_id: str
    third_parties: tuple[str, ...]
    reason: str = ""


@payload_type
@dataclass(frozen=True)
class ConsentBody:
    kind: EventKind
    form: ConsentForm | None
    notice: WithdrawalNotice | None
    supersedes: bytes | None


@payload_type
@dataclass(frozen=True)
class ConsentEvent:
    kind: EventKind
    form: ConsentForm | None
    notice: WithdrawalNotice | None
    supersedes: bytes | None
    timestamp: TimestampToken
    principal_signature: Signature
    fiduciary_signature: Signature
    guardian_signature: Signature | None = None

    @property
    def principal(self) -> str:
        return (self.form or self.notice).principal

    @property
    def fiduciary(self) -> str:
        return (self.form or self.notice).fiduciary

    @property
    def pair(self) -> tuple[str, str]:
        return (self.principal, self.fiduciary)

    @property
    def form_id(self) -> str:
        return (self.form or self.notice).form_id

    @property
    def third_parties(self) -> tuple[str, ...]:
        if self.form is not None:
            return self.form.third_parties or ()
        return self.notice.third_parties

    def body_bytes(self) -> bytes:
        return canonical_bytes(ConsentBody(self.kind, self.form, self.notice, self.supersedes))

    @cached_property
    def digest(self) -> bytes:
        return document_digest(self)

    def verification_problem(self, directory: Directory) -> str | None:
        return event_problem(self, directory)


def event_problem(event: ConsentEvent, directory: Directory) -> str | None:
    """Return why ``event`` fails verification, or None when it verifies."""
    if event.kind is EventKind.WITHDRAW:
        if event.form is not None or event.notice is None:
            return "withdrawal must carry a notice and no form"
    elif event.form is None or event.notice is not None:
        return f"{event.kind.value} must carry a form and no notice"
    if (event.kind is EventKind.ESTABLISH) != (event.supersedes is None):
        return "only ESTABLISH may omit supersedes"
    if event.supersedes is not None and len(event.supersedes) != 32:
        return "supersedes is not a digest"
    body = event.body_bytes()
    for party, sig, role in (
        (event.principal, event.principal_signature, Role.PRINCIPAL),
        (event.fiduciary, event.fiduciary_signature, Role.FIDUCIARY),
    ):
        ident = directory.get(party)
        if ident is None or ident.role is not role:
            return f"unknown {role.value.lower()} {party!r}"
        if not verify(ident, body, sig):
            return f"{role.value.lower()} signature does not verify"
    child = event.form.child if event.form is not None else None
    if child is not None:
        guardian = directory.get(child.guardian) if child.guardian else None
        if guardian is None or guardian.role is not Role.GUARDIAN:
            return "unknown guardian"
        if event.guardian_signature is None or not verify(guardian, body, event.guardian_signature):
            return "guardian signature missing or invalid"
        att = child.age_attestation
        if att is None or not verify(guardian, att.claim_bytes(), att.signature):
            return "age attestation does not verify"
    elif event.guardian_signature is not None:
        return "unexpected guardian signature"
    return timestamp_problem(event.timestamp, digest(body), directory)


def timestamp_problem(token: TimestampToken, payload_digest: bytes, directory: Directory) -> str | None:
    tsa = directory.by_fingerprint(token.tsa_signature.signer_fingerprint)
    if tsa is None or tsa.role is not Role.TSA:
        return "timestamp issued by an unknown authority"
    if not verify_timestamp(token, tsa, payload_digest):
        return "timestamp does not verify"
    return None


def _require_key(key: KeyPair | None, party_id: str, role: Role) -> KeyPair:
    if key is None:
        raise DomainError(f"{role.value.lower()} key required", code="KEY_MISMATCH")
    if key.identity.party_id != party_id or key.identity.role is not role:
        raise DomainError(
            f"key for {key.identity.party_id!r} ({key.identity.role.value}) cannot sign as "
            f"{role.value.lower()} {party_id!r}", code="KEY_MISMATCH")
    if not key_matches(key, key.identity):
        raise DomainError("private key does not match its identity", code="KEY_MISMATCH")
    return key


def _sign_event(kind: EventKind, form: ConsentForm | None, notice: WithdrawalNotice | None,
                supersedes: bytes | None, principal_key: KeyPair, fiduciary_key: KeyPair,
                guardian_key: KeyPair | None, tsa: TimestampAuthority) -> ConsentEvent:
    body = canonical_bytes(ConsentBody(kind, form, notice, supersedes))
    token = tsa.issue(digest(body))
    return ConsentEvent(
        kind, form, notice, supersedes, token,
        principal_key.sign(body), fiduciary_key.sign(body),
        guardian_key.sign(body) if guardian_key is not None else None,
    )


def _checked_form(form: ConsentForm, principal_key: KeyPair, fiduciary_key: KeyPair,
                  guardian_key: KeyPair | None, taxonomy: CategoryTaxonomy | None) -> KeyPair | None:
    result = validate_form(form, taxonomy)
    if not result.ok:
        raise ValidationFailed(result.violations)
    _require_key(principal_key, form.principal, Role.PRINCIPAL)
    _require_key(fiduciary_key, form.fiduciary, Role.FIDUCIARY)
    if form.child is None:
        if guardian_key is not None:
            raise DomainError("guardian key given for an adult form", code="KEY_MISMATCH")
        return None
    _require_key(guardian_key, form.child.guardian, Role.GUARDIAN)
    att = form.child.age_attestation
    if not verify(guardian_key.identity, att.claim_bytes(), att.signature):
        raise ValidationFailed([Violation("AGE_ATTESTATION_INVALID", "attestation signature does not verify")])
    return guardian_key


def establish(form: ConsentForm, principal_key: KeyPair, fiduciary_key: KeyPair,
              tsa: TimestampAuthority, *, guardian_key: KeyPair | None = None,
              taxonomy: CategoryTaxonomy | None = None) -> ConsentEvent:
    guardian_key = _checked_form(form, principal_key, fiduciary_key, guardian_key, taxonomy)
    return _sign_event(EventKind.ESTABLISH, form, None, None,
                       principal_key, fiduciary_key, guardian_key, tsa)


def _check_successor(prior: ConsentEvent, new: EventKind) -> None:
    if not transition_allowed(prior.kind, new):
        if prior.kind is EventKind.WITHDRAW:
            raise DomainError("consent was withdrawn; establish a new form instead",
                              code="CONSENT_TERMINATED")
        raise DomainError(f"{prior.kind.value} -> {new.value} is not allowed", code="INVALID_TRANSITION")


def _check_after(event: ConsentEvent, prior: ConsentEvent) -> ConsentEvent:
    if event.timestamp.sequence <= prior.timestamp.sequence:
        raise DomainError("timestamp does not follow the superseded event", code="TIMESTAMP_ORDER")
    return event


def modify(prior: ConsentEvent, new_form: ConsentForm, principal_key: KeyPair,
           fiduciary_key: KeyPair, tsa: TimestampAuthority, *,
           guardian_key: KeyPair | None = None,
           taxonomy: CategoryTaxonomy | None = None) -> ConsentEvent:
    """Supersede ``prior`` with ``new_form``.

    Fiduciary-initiated policy updates go through here as well; they still
    need a fresh principal signature.
    """
    _check_successor(prior, EventKind.MODIFY)
    if (new_form.principal, new_form.fiduciary) != prior.pair:
        raise DomainError("new form names a different principal/fiduciary pair", code="PAIR_MISMATCH")
    guardian_key = _checked_form(new_form, principal_key, fiduciary_key, guardian_key, taxonomy)
    event = _sign_event(EventKind.MODIFY, new_form, None, prior.digest,
                        principal_key, fiduciary_key, guardian_key, tsa)
    return _check_after(event, prior)


def withdraw(prior: ConsentEvent, principal_key: KeyPair, fiduciary_key: KeyPair,
             tsa: TimestampAuthority, *, reason: str = "") -> ConsentEvent:
    _check_successor(prior, EventKind.WITHDRAW)
    _require_key(principal_key, prior.principal, Role.PRINCIPAL)
    _require_key(fiduciary_key, prior.fiduciary, Role.FIDUCIARY)
    notice = WithdrawalNotice(prior.principal, prior.fiduciary, prior.form_id,
                              tuple(prior.third_parties), reason)
    event = _sign_event(EventKind.WITHDRAW, None, notice, prior.digest,
                        principal_key, fiduciary_key, None, tsa)
    return _check_after(event, prior)


@payload_type
@dataclass(frozen=True)
class WithdrawalAck:
    withdrawal_digest: bytes
    third_party: str


@payload_type
@dataclass(frozen=True)
class WithdrawalPropagation:
    """A listed third party's signed acknowledgment that it was told of a withdrawal."""

    withdrawal_digest: bytes
    third_party: str
    timestamp: TimestampToken
    acknowledgment_signature: Signature

    def ack_bytes(self) -> bytes:
        return canonical_bytes(WithdrawalAck(self.withdrawal_digest, self.third_party))

    def verification_problem(self, directory: Directory) -> str | None:
        ident = directory.get(self.third_party)
        if ident is None:
            return f"unknown third party {self.third_party!r}"
        body = self.ack_bytes()
        if not verify(ident, body, self.acknowledgment_signature):
            return "acknowledgment signature does not verify"
        return timestamp_problem(self.timestamp, digest(body), directory)


def record_propagation(withdrawal: ConsentEvent, third_party_key: KeyPair,
                       tsa: TimestampAuthority) -> WithdrawalPropagation:
    if withdrawal.kind is not EventKind.WITHDRAW:
        raise DomainError("propagation receipts acknowledge withdrawals only", code="NOT_A_WITHDRAWAL")
    party = third_party_key.party_id
    if party not in withdrawal.notice.third_parties:
        raise DomainError(f"{party!r} is not a listed recipient", code="NOT_A_RECIPIENT")
    if not key_matches(third_party_key, third_party_key.identity):
        raise DomainError("private key does not match its identity", code="KEY_MISMATCH")
    ack = canonical_bytes(WithdrawalAck(withdrawal.digest, party))
    token = tsa.issue(digest(ack))
    if token.sequence <= withdrawal.timestamp.sequence:
        raise DomainError("receipt timestamp precedes the withdrawal", code="TIMESTAMP_ORDER")
    return WithdrawalPropagation(withdrawal.digest, party, token, third_party_key.sign(ack))
