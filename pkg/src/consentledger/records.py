"""Signed activity evidence audited against consent.

Each record signs the canonical bytes of its own fields minus the
signature fields. Records with a TSA timestamp have it issued over the
digest of the fields minus signatures and timestamp, so time is bound to
content before the parties sign.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Any, ClassVar

from .canonical import fields_bytes, payload_type
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
)
from .consent import timestamp_problem
from .errors import DomainError


class Action(str, enum.Enum):
    COLLECT = "COLLECT"
    STORE = "STORE"
    ANALYZE = "ANALYZE"
    SHARE = "SHARE"
    DISCLOSE = "DISCLOSE"
    TRANSFER_CROSS_BORDER = "TRANSFER_CROSS_BORDER"


DISCLOSING_ACTIONS = frozenset({Action.SHARE, Action.DISCLOSE})


class SignedRecord:
    """Mixin for records that carry their own signatures.

    ``SIGNERS`` maps each signature field to the field naming the party who
    signs it (plus the roles that party may hold).
    """

    SIGNERS: ClassVar[dict[str, tuple[str, tuple[Role, ...]]]] = {}
    TIMESTAMP_FIELD: ClassVar[str | None] = "timestamp"

    def _values(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def signing_bytes(self) -> bytes:
        return fields_bytes(type(self), self._values(), set(self.SIGNERS))

    def stamping_digest(self) -> bytes:
        exclude = set(self.SIGNERS) | ({self.TIMESTAMP_FIELD} if self.TIMESTAMP_FIELD else set())
        return digest(fields_bytes(type(self), self._values(), exclude))

    @cached_property
    def digest(self) -> bytes:
        return document_digest(self)

    def verification_problem(self, directory: Directory) -> str | None:
        body = self.signing_bytes()
        for sig_field, (party_field, roles) in self.SIGNERS.items():
            party = getattr(self, party_field)
            ident = directory.get(party)
            if ident is None or ident.role not in roles:
                return f"unknown signer {party!r} for {sig_field}"
            if not verify(ident, body, getattr(self, sig_field)):
                return f"{sig_field} does not verify"
        if self.TIMESTAMP_FIELD:
            return timestamp_problem(getattr(self, self.TIMESTAMP_FIELD), self.stamping_digest(), directory)
        return None

    @classmethod
    def create(cls, *, tsa: TimestampAuthority | None = None, keys: dict[str, KeyPair], **values):
        """Build, timestamp and sign a record.

        ``keys`` maps each signature field to the signing KeyPair, whose party
        id must match the record's party field for that signature.
        """
        for sig_field, (party_field, roles) in cls.SIGNERS.items():
            key = keys.get(sig_field)
            if key is None:
                raise DomainError(f"missing key for {sig_field}", code="KEY_MISMATCH")
            if key.party_id != values[party_field] or key.identity.role not in roles:
                raise DomainError(f"{key.party_id!r} cannot sign {sig_field} for "
                                  f"{values[party_field]!r}", code="KEY_MISMATCH")
            if not key_matches(key, key.identity):
                raise DomainError("private key does not match its identity", code="KEY_MISMATCH")
        excluded = set(cls.SIGNERS)
        if cls.TIMESTAMP_FIELD:
            if tsa is None:
                raise DomainError("a timestamp authority is required", code="TSA_REQUIRED")
            stamp = digest(fields_bytes(cls, values, excluded))
            values[cls.TIMESTAMP_FIELD] = tsa.issue(stamp)
        body = fields_bytes(cls, values)
        for sig_field in cls.SIGNERS:
            values[sig_field] = keys[sig_field].sign(body)
        return cls(**values)


_ACTOR_ROLES = (Role.FIDUCIARY, Role.PROCESSOR, Role.THIRD_PARTY)


@payload_type
@dataclass(frozen=True)
class ProcessingEvent(SignedRecord):
    SIGNERS = {"actor_signature": ("actor", _ACTOR_ROLES)}

    processing_id: str
    actor: str
    consent_ref: bytes
    purpose_id: str
    categories_touched: frozenset[str]
    action: Action
    counterparty: str | None
    timestamp: TimestampToken
    actor_signature: Signature

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories_touched", frozenset(self.categories_touched))
        if not self.categories_touched:
            raise ValueError("categories_touched must be non-empty")


def record_processing(actor_key: KeyPair, tsa: TimestampAuthority, *, processing_id: str,
                      consent_ref: bytes, purpose_id: str, categories, action: Action,
                      counterparty: str | None = None) -> ProcessingEvent:
    if not categories:
        raise DomainError("processing must touch at least one category", code="EMPTY_CATEGORIES")
    return ProcessingEvent.create(
        tsa=tsa, keys={"actor_signature": actor_key}, processing_id=processing_id,
        actor=actor_key.party_id, consent_ref=consent_ref, purpose_id=purpose_id,
        categories_touched=frozenset(categories), action=Action(action), counterparty=counterparty,
    )


@payload_type
@dataclass(frozen=True)
class ErasureReceipt(SignedRecord):
    """Fiduciary's signed statement that it erased the listed categories."""

    SIGNERS = {"fiduciary_signature": ("fiduciary", (Role.FIDUCIARY,))}

    principal: str
    fiduciary: str
    categories_erased: frozenset[str]
    method_note: str
    timestamp: TimestampToken
    fiduciary_signature: Signature

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories_erased", frozenset(self.categories_erased))
        if not self.categories_erased:
            raise ValueError("categories_erased must be non-empty")


def record_erasure(fiduciary_key: KeyPair, tsa: TimestampAuthority, *, principal: str,
                   categories, method_note: str = "") -> ErasureReceipt:
    if not categories:
        raise DomainError("an erasure receipt must name categories", code="EMPTY_CATEGORIES")
    return ErasureReceipt.create(
        tsa=tsa, keys={"fiduciary_signature": fiduciary_key}, principal=principal,
        fiduciary=fiduciary_key.party_id, categories_erased=frozenset(categories),
        method_note=method_note,
    )


@payload_type
@dataclass(frozen=True)
class BreachRecord(SignedRecord):
    """A breach as declared by the fiduciary; instants are epoch seconds.

    ``high_risk`` is a declared input, never inferred.
    """

    SIGNERS = {"fiduciary_signature": ("fiduciary", (Role.FIDUCIARY,))}
    TIMESTAMP_FIELD = None

    breach_id: str
    fiduciary: str
    description: str
    categories_affected: frozenset[str]
    detected_at: int
    reported_to_authority_at: int | None
    high_risk: bool
    principal_notified_at: int | None
    fiduciary_signature: Signature

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories_affected", frozenset(self.categories_affected))
        if self.reported_to_authority_at is not None and self.reported_to_authority_at < self.detected_at:
            raise ValueError("breach reported before it was detected")


def record_breach(fiduciary_key: KeyPair, *, breach_id: str, description: str, categories,
                  detected_at: int, reported_to_authority_at: int | None = None,
                  high_risk: bool = False, principal_notified_at: int | None = None) -> BreachRecord:
    if reported_to_authority_at is not None and reported_to_authority_at < detected_at:
        raise DomainError("breach reported before it was detected", code="INVALID_BREACH")
    return BreachRecord.create(
        keys={"fiduciary_signature": fiduciary_key}, breach_id=breach_id,
        fiduciary=fiduciary_key.party_id, description=description,
        categories_affected=frozenset(categories), detected_at=detected_at,
        reported_to_authority_at=reported_to_authority_at, high_risk=high_risk,
        principal_notified_at=principal_notified_at,
    )


@payload_type
@dataclass(frozen=True)
class CorrectionEvent(SignedRecord):
    SIGNERS = {
        "principal_signature": ("principal", (Role.PRINCIPAL,)),
        "fiduciary_signature": ("fiduciary", (Role.FIDUCIARY,)),
    }

    principal: str
    fiduciary: str
    field_path: str
    old_value_digest: bytes
    new_value_digest: bytes
    timestamp: TimestampToken
    principal_signature: Signature
    fiduciary_signature: Signature

    def __post_init__(self) -> None:
        if self.old_value_digest == self.new_value_digest:
            raise ValueError("a correction must change the value")


def record_correction(principal_key: KeyPair, fiduciary_key: KeyPair, tsa: TimestampAuthority, *,
                      field_path: str, old_value: bytes, new_value: bytes) -> CorrectionEvent:
    """Record a correction by value digests; the values themselves never enter the ledger."""
    old, new = digest(old_value), digest(new_value)
    if old == new:
        raise DomainError("a correction must change the value", code="NO_CHANGE")
    return CorrectionEvent.create(
        tsa=tsa, keys={"principal_signature": principal_key, "fiduciary_signature": fiduciary_key},
        principal=principal_key.party_id, fiduciary=fiduciary_key.party_id, field_path=field_path,
        old_value_digest=old, new_value_digest=new,
    )


@payload_type
@dataclass(frozen=True)
class DisclosureRestriction(SignedRecord):
    """Marker that an adjudicating officer's order restricts disclosure for a pair."""

    SIGNERS = {"fiduciary_signature": ("fiduciary", (Role.FIDUCIARY,))}

    principal: str
    fiduciary: str
    order_ref: bytes
    timestamp: TimestampToken
    fiduciary_signature: Signature

    def __post_init__(self) -> None:
        if len(self.order_ref) != 32:
            raise ValueError("order_ref must be a 32-byte document digest")


@payload_type
@dataclass(frozen=True)
class Certificate(SignedRecord):
    SIGNERS = {"auditor_signature": ("auditor", (Role.AUDITOR,))}
    TIMESTAMP_FIELD = None

    report_digest: bytes
    fiduciary: str
    auditor: str
    grade: str
    score: float
    valid_from: int
    valid_until: int
    auditor_signature: Signature

    def __post_init__(self) -> None:
        if self.valid_until <= self.valid_from:
            raise ValueError("empty validity interval")
