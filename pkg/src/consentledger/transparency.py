"""Machine-readable transparency summary derived from a ledger."""

from __future__ import annotations

from dataclasses import dataclass

from .canonical import payload_type
from .consent import RetentionKind
from .errors import IntegrityError
from .ledger import ConsentIndex, ConsentStatus, Ledger, PayloadKind

UNDECLARED = "UNDECLARED"

# Disclosure items a ledger cannot evidence; an operator has to publish these separately.
NOT_DERIVABLE = (
    "contact_details_of_data_protection_officer",
    "grievance_redressal_procedure",
    "rights_exercise_procedure",
    "sources_of_collected_data",
)


@payload_type
@dataclass(frozen=True)
class RetentionPolicy:
    form_id: str
    kind: RetentionKind
    days: int


@payload_type
@dataclass(frozen=True)
class TransparencySummary:
    fiduciaries: tuple[str, ...]
    active_consents: int
    withdrawn_consents: int
    categories_collected: tuple[str, ...]
    purposes: tuple[str, ...]
    third_parties: tuple[str, ...]
    retention_policies: tuple[RetentionPolicy, ...]
    cross_border_destinations: tuple[str, ...]
    breach_count: int
    last_audit_grade: str
    last_audit_score: float | None
    undeclared: tuple[str, ...]


def export_transparency_summary(ledger: Ledger) -> TransparencySummary:
    """Summarize what the ledger discloses about currently active consents.

    Raises IntegrityError if the chain does not verify.
    """
    verdict = ledger.verify_chain()
    if not verdict.ok:
        raise IntegrityError(f"entry {verdict.first_bad_index}: {verdict.reason}", code="CHAIN_INVALID")
    index = ConsentIndex(ledger)
    categories, purposes, parties, destinations = set(), set(), set(), set()
    fiduciaries, retention = set(), set()
    active = withdrawn = 0
    for pair in sorted(index.by_pair):
        res = index.resolve(pair)
        fiduciaries.add(pair[1])
        if res.status is ConsentStatus.WITHDRAWN:
            withdrawn += 1
        if res.status is not ConsentStatus.ACTIVE:
            continue
        active += 1
        form = res.event.form
        categories |= form.categories
        purposes.update(p.purpose_id for p in form.purposes)
        parties.update(form.third_parties or ())
        retention.add(RetentionPolicy(form.form_id, form.retention.kind, form.retention.days))
        if form.cross_border and form.destination:
            destinations.add(form.destination)
    breaches = sum(1 for _ in ledger.items(PayloadKind.BREACH))
    certs = [c for _, c in ledger.items(PayloadKind.CERTIFICATE)]
    grade = certs[-1].grade if certs else UNDECLARED
    score = certs[-1].score if certs else None
    undeclared = list(NOT_DERIVABLE)
    if not certs:
        undeclared.append("last_audit_grade")
    return TransparencySummary(
        tuple(sorted(fiduciaries)), active, withdrawn, tuple(sorted(categories)), tuple(sorted(purposes)),
        tuple(sorted(parties)), tuple(sorted(retention, key=lambda r: (r.form_id, r.kind.value, r.days))),
        tuple(sorted(destinations)), breaches, grade, score, tuple(sorted(undeclared)),
    )
