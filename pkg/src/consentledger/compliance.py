"""Compliance checkers comparing recorded activity with recorded consent.

Every checker is a pure function of a verified ledger (plus, where time
matters, an ``as_of`` instant). A checker evaluates a set of subjects
(usually ledger entries) and emits findings; a subject *fails* when it has
a VIOLATION or FATAL finding. Processing events are bound to consent by
digest: the referenced consent event, its chain, and the latest
form-bearing event at or before it (the *governing form*) decide what the
event was allowed to do.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

from .canonical import payload_type
from .clock import DAY, HOUR
from .consent import ConsentEvent, ConsentForm, EventKind, RetentionKind, WithdrawalPropagation
from .crypto import KeyPair, TimestampAuthority
from .errors import ChainStructureError, DomainError
from .findings import Finding, Severity, sort_findings
from .ledger import ConsentChain, ConsentIndex, ConsentStatus, Ledger, LedgerEntry, PayloadKind
from .records import (
    DISCLOSING_ACTIONS,
    Action,
    BreachRecord,
    DisclosureRestriction,
    ErasureReceipt,
    ProcessingEvent,
)

PURPOSE = "purpose_limitation"
WITHDRAWAL = "withdrawal_enforcement"
RETENTION = "retention"
SHARING = "sharing"
BREACH = "breach_timeliness"
CHILDREN = "children"

SHARING_ACTIONS = DISCLOSING_ACTIONS | {Action.TRANSFER_CROSS_BORDER}


@payload_type
@dataclass(frozen=True)
class CheckSettings:
    """Tunable windows. Defaults are policy choices, not legal values."""

    breach_window_hours: int = 72
    propagation_grace_days: int = 7
    guardian_fiduciaries: frozenset[str] = frozenset()
    prohibited_child_purposes: frozenset[str] = frozenset({"profiling", "advertising"})


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    findings: tuple[Finding, ...]
    evaluated: int
    failed: int

    @property
    def pass_ratio(self) -> float:
        if self.evaluated == 0:
            return 1.0
        return (self.evaluated - self.failed) / self.evaluated


def _result(check_id: str, findings: list[Finding], subjects: Iterable[str]) -> CheckResult:
    subjects = set(subjects)
    failed = {f.subject for f in findings if f.severity.failing and f.subject in subjects}
    return CheckResult(check_id, tuple(sort_findings(findings)), len(subjects), len(failed))


@dataclass
class _Ref:
    index: int
    event: ConsentEvent
    chain: ConsentChain
    form: ConsentForm


class LedgerView:
    """Decoded, indexed snapshot of a ledger shared by all checkers."""

    def __init__(self, ledger: Ledger) -> None:
        self.ledger = ledger
        self.consents = ConsentIndex(ledger)
        self.processing: list[tuple[int, ProcessingEvent]] = []
        self.propagations: list[tuple[int, WithdrawalPropagation]] = []
        self.erasures: list[tuple[int, ErasureReceipt]] = []
        self.breaches: list[tuple[int, BreachRecord]] = []
        self.restrictions: list[tuple[int, DisclosureRestriction]] = []
        self.latest_wall_time = 0
        buckets = {
            PayloadKind.PROCESSING: self.processing,
            PayloadKind.PROPAGATION: self.propagations,
            PayloadKind.ERASURE: self.erasures,
            PayloadKind.BREACH: self.breaches,
            PayloadKind.RESTRICTION: self.restrictions,
        }
        for idx, payload in ledger.items():
            bucket = buckets.get(ledger.entry(idx).payload_kind)
            if bucket is not None:
                bucket.append((idx, payload))
            ts = getattr(payload, "timestamp", None)
            if ts is not None:
                self.latest_wall_time = max(self.latest_wall_time, ts.wall_time)

    def as_of(self, now: int | None) -> int:
        return self.latest_wall_time if now is None else now

    def resolve(self, index: int, ev: ProcessingEvent) -> _Ref | None:
        """The consent a processing event cites, or None if it cites nothing recorded before it."""
        hit = self.consents.by_digest.get(ev.consent_ref)
        if hit is None or hit[0] >= index:
            return None
        j, event = hit
        chain = self.consents.chain_of(ev.consent_ref)
        return _Ref(j, event, chain, governing_form(chain, j))

    def successor_index(self, chain: ConsentChain, index: int) -> int | None:
        pos = chain.indices.index(index)
        return chain.indices[pos + 1] if pos + 1 < len(chain.indices) else None


def governing_form(chain: ConsentChain, index: int) -> ConsentForm:
    pos = chain.indices.index(index)
    for ev in reversed(chain.events[: pos + 1]):
        if ev.form is not None:
            return ev.form
    raise ChainStructureError("consent chain has no form", (chain.indices[0],), code="INVALID_TRANSITION")


def _view(source: Ledger | LedgerView) -> LedgerView:
    return source if isinstance(source, LedgerView) else LedgerView(source)


def _entry(i: int) -> str:
    return f"entry:{i}"


def run_purpose_limitation(source: Ledger | LedgerView) -> CheckResult:
    view = _view(source)
    findings, subjects = [], []
    for i, ev in view.processing:
        subj = _entry(i)
        subjects.append(subj)
        ref = view.resolve(i, ev)
        if ref is None:
            findings.append(Finding(PURPOSE, "DANGLING_CONSENT_REF", Severity.FATAL, subj, (i,),
                                    "processing cites a consent event not recorded before it"))
            continue
        cite = (i, ref.index)
        if ref.event.kind is EventKind.WITHDRAW:
            findings.append(Finding(PURPOSE, "REF_TO_WITHDRAWAL", Severity.VIOLATION, subj, cite,
                                    "processing cites a withdrawal as its consent"))
            continue
        form = ref.form
        if ev.actor != form.fiduciary and ev.actor not in (form.third_parties or ()):
            findings.append(Finding(PURPOSE, "ACTOR_NOT_AUTHORIZED", Severity.VIOLATION, subj, cite,
                                    f"{ev.actor} is neither the fiduciary nor a listed third party"))
        purpose = form.purpose(ev.purpose_id)
        if purpose is None:
            findings.append(Finding(PURPOSE, "PURPOSE_NOT_CONSENTED", Severity.VIOLATION, subj, cite,
                                    f"purpose {ev.purpose_id} is not in the consent"))
        elif not ev.categories_touched <= purpose.data_categories:
            extra = ", ".join(sorted(ev.categories_touched - purpose.data_categories))
            findings.append(Finding(PURPOSE, "CATEGORY_NOT_CONSENTED", Severity.VIOLATION, subj, cite,
                                    f"categories {extra} are outside purpose {ev.purpose_id}"))
        nxt = view.successor_index(ref.chain, ref.index)
        if nxt is not None and nxt < i:
            findings.append(Finding(PURPOSE, "STALE_CONSENT_REF", Severity.WARN, subj, (i, ref.index, nxt),
                                    f"cited consent was superseded by entry {nxt}"))
    return _result(PURPOSE, findings, subjects)


def run_withdrawal_enforcement(source: Ledger | LedgerView, as_of: int | None = None,
                               settings: CheckSettings | None = None) -> CheckResult:
    view = _view(source)
    settings = settings or CheckSettings()
    now = view.as_of(as_of)
    findings, subjects = [], []
    for i, ev in view.processing:
        ref = view.resolve(i, ev)
        if ref is None:
            continue
        subj = _entry(i)
        subjects.append(subj)
        if not ref.chain.withdrawn:
            continue
        w_idx, w = ref.chain.leaf_index, ref.chain.leaf
        if (ev.timestamp.sequence, i) > (w.timestamp.sequence, w_idx):
            findings.append(Finding(WITHDRAWAL, "PROCESSING_AFTER_WITHDRAWAL", Severity.VIOLATION, subj,
                                    (i, w_idx), f"processing follows the withdrawal at entry {w_idx}"))
    acked = {(p.withdrawal_digest, p.third_party) for _, p in view.propagations}
    grace = settings.propagation_grace_days * DAY
    for w_idx, w in view.consents.events():
        if w.kind is not EventKind.WITHDRAW:
            continue
        for party in sorted(set(w.notice.third_parties)):
            subj = f"{_entry(w_idx)}/party:{party}"
            subjects.append(subj)
            if (w.digest, party) in acked:
                continue
            overdue = now - w.timestamp.wall_time > grace
            findings.append(Finding(
                WITHDRAWAL, "PROPAGATION_INCOMPLETE",
                Severity.VIOLATION if overdue else Severity.WARN, subj, (w_idx,),
                f"{party} has not acknowledged the withdrawal"
                + (" within the grace window" if overdue else ""),
            ))
    return _result(WITHDRAWAL, findings, subjects)


def _pair_chains(view: LedgerView) -> list[tuple[tuple[str, str], ConsentChain]]:
    out = []
    for pair in sorted(view.consents.by_pair):
        try:
            chains = view.consents.chains(pair)
        except ChainStructureError:
            continue
        out.extend((pair, c) for c in chains)
    return out


def run_retention(source: Ledger | LedgerView, as_of: int | None = None) -> CheckResult:
    view = _view(source)
    now = view.as_of(as_of)
    findings, subjects = [], []
    for pair, chain in _pair_chains(view):
        if chain.withdrawn:
            continue
        root_idx, leaf_idx = chain.indices[0], chain.leaf_index
        subj = _entry(root_idx)
        subjects.append(subj)
        form = chain.leaf.form
        if form.retention.kind is RetentionKind.FIXED:
            if now <= chain.root.timestamp.wall_time + form.retention.days * DAY:
                continue
            erased: set[str] = set()
            for e_idx, receipt in view.erasures:
                if e_idx > root_idx and (receipt.principal, receipt.fiduciary) == pair:
                    erased |= receipt.categories_erased
            if not form.categories <= erased:
                cite = (root_idx,) if leaf_idx == root_idx else (root_idx, leaf_idx)
                findings.append(Finding(RETENTION, "RETENTION_EXCEEDED", Severity.VIOLATION, subj, cite,
                                        f"retention of {form.retention.days} days elapsed without "
                                        "erasure of every consented category"))
        elif now > chain.leaf.timestamp.wall_time + form.retention.days * DAY:
            findings.append(Finding(RETENTION, "RETENTION_REVIEW_DUE", Severity.WARN, subj, (leaf_idx,),
                                    f"review interval of {form.retention.days} days elapsed"))
    return _result(RETENTION, findings, subjects)


def run_sharing(source: Ledger | LedgerView) -> CheckResult:
    view = _view(source)
    findings, subjects = [], []
    for i, ev in view.processing:
        if ev.action not in SHARING_ACTIONS:
            continue
        ref = view.resolve(i, ev)
        if ref is None:
            continue
        subj = _entry(i)
        subjects.append(subj)
        form = ref.form
        listed = set(form.third_parties or ())
        if ev.action in DISCLOSING_ACTIONS:
            if (ev.counterparty not in listed
                    or (ev.actor != form.fiduciary and ev.actor not in listed)):
                findings.append(Finding(SHARING, "UNLISTED_THIRD_PARTY", Severity.VIOLATION, subj,
                                        (i, ref.index), f"{ev.actor} -> {ev.counterparty} is not a "
                                        "listed sharing relationship"))
            pair = ref.event.pair
            for r_idx, r in view.restrictions:
                if r_idx < i and (r.principal, r.fiduciary) == pair:
                    findings.append(Finding(SHARING, "DISCLOSURE_RESTRICTED", Severity.VIOLATION, subj,
                                            (i, r_idx), f"disclosure restricted by order at entry {r_idx}"))
                    break
        elif not form.cross_border:
            findings.append(Finding(SHARING, "CROSS_BORDER_NOT_CONSENTED", Severity.VIOLATION, subj,
                                    (i, ref.index), "consent does not allow cross-border transfer"))
    return _result(SHARING, findings, subjects)


def run_breach_timeliness(source: Ledger | LedgerView, settings: CheckSettings | None = None) -> CheckResult:
    view = _view(source)
    settings = settings or CheckSettings()
    window = settings.breach_window_hours * HOUR
    findings, subjects = [], []
    for i, b in view.breaches:
        subj = _entry(i)
        subjects.append(subj)
        if b.reported_to_authority_at is None:
            findings.append(Finding(BREACH, "BREACH_NOT_REPORTED", Severity.VIOLATION, subj, (i,),
                                    f"breach {b.breach_id} was never reported to the authority"))
        elif b.reported_to_authority_at - b.detected_at > window:
            findings.append(Finding(BREACH, "BREACH_REPORTED_LATE", Severity.VIOLATION, subj, (i,),
                                    f"breach {b.breach_id} reported after the "
                                    f"{settings.breach_window_hours}h window"))
        if b.high_risk and b.principal_notified_at is None:
            findings.append(Finding(BREACH, "PRINCIPAL_NOT_NOTIFIED", Severity.VIOLATION, subj, (i,),
                                    f"high-risk breach {b.breach_id} not notified to principals"))
    return _result(BREACH, findings, subjects)


def run_children(source: Ledger | LedgerView, settings: CheckSettings | None = None) -> CheckResult:
    """Guardian data fiduciaries may not analyze data for profiling or advertising."""
    view = _view(source)
    settings = settings or CheckSettings()
    findings, subjects = [], []
    for i, ev in view.processing:
        if ev.actor not in settings.guardian_fiduciaries:
            continue
        subj = _entry(i)
        subjects.append(subj)
        if ev.action is Action.ANALYZE and ev.purpose_id in settings.prohibited_child_purposes:
            findings.append(Finding(CHILDREN, "GUARDIAN_FIDUCIARY_PROHIBITION", Severity.VIOLATION, subj,
                                    (i,), f"guardian data fiduciary {ev.actor} analyzed data for "
                                    f"{ev.purpose_id}"))
    return _result(CHILDREN, findings, subjects)


def check_purpose_limitation(ledger: Ledger | LedgerView) -> list[Finding]:
    return list(run_purpose_limitation(ledger).findings)


def check_withdrawal_enforcement(ledger: Ledger | LedgerView, as_of: int | None = None,
                                 settings: CheckSettings | None = None) -> list[Finding]:
    return list(run_withdrawal_enforcement(ledger, as_of, settings).findings)


def check_retention(ledger: Ledger | LedgerView, now: int | None = None) -> list[Finding]:
    return list(run_retention(ledger, now).findings)


def check_sharing(ledger: Ledger | LedgerView) -> list[Finding]:
    return list(run_sharing(ledger).findings)


def check_breach_timeliness(ledger: Ledger | LedgerView, settings: CheckSettings | None = None) -> list[Finding]:
    return list(run_breach_timeliness(ledger, settings).findings)


def check_children(ledger: Ledger | LedgerView, settings: CheckSettings | None = None) -> list[Finding]:
    return list(run_children(ledger, settings).findings)


# check_id -> runner(view, as_of, settings)
LEDGER_CHECKS: dict[str, Callable[[LedgerView, int | None, CheckSettings], CheckResult]] = {
    PURPOSE: lambda v, now, s: run_purpose_limitation(v),
    WITHDRAWAL: lambda v, now, s: run_withdrawal_enforcement(v, now, s),
    RETENTION: lambda v, now, s: run_retention(v, now),
    SHARING: lambda v, now, s: run_sharing(v),
    BREACH: lambda v, now, s: run_breach_timeliness(v, s),
    CHILDREN: lambda v, now, s: run_children(v, s),
}

CHECK_ALIASES = {
    "purpose": PURPOSE, "withdrawal": WITHDRAWAL, "retention": RETENTION,
    "sharing": SHARING, "breach": BREACH, "children": CHILDREN,
}


def restrict_disclosure(ledger: Ledger, fiduciary_key: KeyPair, tsa: TimestampAuthority, *,
                        principal: str, order_ref: bytes | None) -> LedgerEntry:
    """Record an adjudicating officer's order restricting further disclosure for a pair."""
    if not order_ref:
        raise DomainError("restriction requires an adjudicating officer's order", code="ORDER_REQUIRED")
    if len(order_ref) != 32:
        raise DomainError("order_ref must be a document digest", code="ORDER_REQUIRED")
    marker = DisclosureRestriction.create(
        tsa=tsa, keys={"fiduciary_signature": fiduciary_key}, principal=principal,
        fiduciary=fiduciary_key.party_id, order_ref=bytes(order_ref),
    )
    return ledger.append(marker)


@payload_type
@dataclass(frozen=True)
class AccessSummary:
    """What a principal may learn about processing of their data: metadata only."""

    principal: str
    fiduciary: str
    status: ConsentStatus
    active_form: ConsentForm | None = None
    withdrawn_at: int | None = None
    categories_touched: frozenset[str] = frozenset()
    processing_counts: dict[str, int] = field(default_factory=dict)
    shared_with: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return self.status is ConsentStatus.NONE and not self.processing_counts


def right_to_access(ledger: Ledger | LedgerView, principal: str, fiduciary: str) -> AccessSummary:
    view = _view(ledger)
    pair = (principal, fiduciary)
    resolution = view.consents.resolve(pair)
    if resolution.status is ConsentStatus.NONE:
        return AccessSummary(principal, fiduciary, ConsentStatus.NONE)
    touched: set[str] = set()
    counts: dict[str, int] = {}
    shared: set[str] = set()
    for i, ev in view.processing:
        ref = view.resolve(i, ev)
        if ref is None or ref.event.pair != pair:
            continue
        touched |= ev.categories_touched
        counts[ev.purpose_id] = counts.get(ev.purpose_id, 0) + 1
        if ev.action in SHARING_ACTIONS and ev.counterparty:
            shared.add(ev.counterparty)
    withdrawn = resolution.status is ConsentStatus.WITHDRAWN
    return AccessSummary(
        principal, fiduciary, resolution.status,
        None if withdrawn else resolution.event.form,
        resolution.event.timestamp.wall_time if withdrawn else None,
        frozenset(touched), dict(sorted(counts.items())), tuple(sorted(shared)),
    )
