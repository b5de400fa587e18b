"""Independent brute-force oracles.

These re-derive results from the raw list of ledger payloads with naive
scans, sharing no indexing code with the library under test.
"""

from __future__ import annotations

import networkx as nx

from consentledger.clock import DAY, HOUR
from consentledger.consent import ConsentEvent, EventKind, RetentionKind, WithdrawalPropagation
from consentledger.records import (
    Action,
    BreachRecord,
    DisclosureRestriction,
    ErasureReceipt,
    ProcessingEvent,
)

FORKED = "FORKED"


# ---------------------------------------------------------------- latest consent


def latest_consent_oracle(payloads: list, pair: tuple[str, str]):
    """Return ("NONE"|"ACTIVE"|"WITHDRAWN", index) or (FORKED, None) via a DAG of supersedes edges."""
    g = nx.DiGraph()
    by_digest = {}
    for i, p in enumerate(payloads):
        if isinstance(p, ConsentEvent) and p.pair == pair:
            g.add_node(i, kind=p.kind)
            by_digest.setdefault(p.digest, i)
    for i in g.nodes:
        parent = payloads[i].supersedes
        if parent is not None:
            g.add_edge(by_digest[parent], i)
    if any(g.out_degree(n) > 1 for n in g.nodes):
        return FORKED, None
    sinks = []
    for comp in nx.weakly_connected_components(g):
        order = list(nx.topological_sort(g.subgraph(comp)))
        sinks.append(order[-1])
    active = [s for s in sinks if g.nodes[s]["kind"] is not EventKind.WITHDRAW]
    if len(active) > 1:
        return FORKED, None
    if active:
        return "ACTIVE", active[0]
    if sinks:
        return "WITHDRAWN", max(sinks)
    return "NONE", None


# ---------------------------------------------------------------- compliance checks


def _consents(payloads):
    return [(i, p) for i, p in enumerate(payloads) if isinstance(p, ConsentEvent)]


def _first_with_digest(payloads, d):
    for i, p in _consents(payloads):
        if p.digest == d:
            return i
    return None


def _walk_chain(payloads, j):
    """All indices on the supersedes chain through j, root first, following first children."""
    up = [j]
    while payloads[up[-1]].supersedes is not None:
        parent = _first_with_digest(payloads, payloads[up[-1]].supersedes)
        if parent is None:
            break
        up.append(parent)
    chain = list(reversed(up))
    while True:
        kids = [i for i, p in _consents(payloads) if p.supersedes == payloads[chain[-1]].digest]
        if not kids:
            return chain
        chain.append(min(kids))


def _form_at(payloads, chain, j):
    pos = chain.index(j)
    for k in reversed(chain[: pos + 1]):
        if payloads[k].form is not None:
            return payloads[k].form
    return None


def _ref(payloads, i, ev):
    j = _first_with_digest(payloads, ev.consent_ref)
    if j is None or j >= i:
        return None
    return j


def _as_of(payloads, as_of):
    if as_of is not None:
        return as_of
    walls = [p.timestamp.wall_time for p in payloads if getattr(p, "timestamp", None) is not None]
    return max(walls, default=0)


def _pair_is_broken(payloads, pair):
    evs = [(i, p) for i, p in _consents(payloads) if p.pair == pair]
    digests = {p.digest for _, p in evs}
    for i, p in evs:
        if p.supersedes is not None:
            if p.supersedes not in digests:
                return True
            parent = payloads[_first_with_digest(payloads, p.supersedes)]
            if parent.kind is EventKind.WITHDRAW:
                return True
        kids = [k for k, q in evs if q.supersedes == p.digest]
        if len(kids) > 1:
            return True
    leaves = []
    for i, p in evs:
        if p.kind is EventKind.ESTABLISH:
            chain = _walk_chain(payloads, i)
            leaves.append(payloads[chain[-1]])
    return sum(1 for leaf in leaves if leaf.kind is not EventKind.WITHDRAW) > 1


def oracle_findings(payloads: list, *, as_of: int | None = None, breach_window_hours: int = 72,
                    grace_days: int = 7, guardian_fiduciaries=frozenset(),
                    prohibited=frozenset({"profiling", "advertising"})) -> set[tuple]:
    """Set of (check_id, code, severity, subject, indices) over every ledger check."""
    now = _as_of(payloads, as_of)
    out: set[tuple] = set()

    def add(check, code, sev, *idx, subject=None):
        out.add((check, code, sev, subject or f"entry:{idx[0]}", tuple(idx)))

    processing = [(i, p) for i, p in enumerate(payloads) if isinstance(p, ProcessingEvent)]

    for i, ev in processing:
        j = _ref(payloads, i, ev)
        if j is None:
            add("purpose_limitation", "DANGLING_CONSENT_REF", "FATAL", i)
            continue
        cited = payloads[j]
        chain = _walk_chain(payloads, j)
        # purpose limitation
        if cited.kind is EventKind.WITHDRAW:
            add("purpose_limitation", "REF_TO_WITHDRAWAL", "VIOLATION", i, j)
        else:
            form = _form_at(payloads, chain, j)
            if ev.actor != form.fiduciary and ev.actor not in (form.third_parties or ()):
                add("purpose_limitation", "ACTOR_NOT_AUTHORIZED", "VIOLATION", i, j)
            spec = [p for p in form.purposes if p.purpose_id == ev.purpose_id]
            if not spec:
                add("purpose_limitation", "PURPOSE_NOT_CONSENTED", "VIOLATION", i, j)
            elif not set(ev.categories_touched) <= set(spec[0].data_categories):
                add("purpose_limitation", "CATEGORY_NOT_CONSENTED", "VIOLATION", i, j)
            pos = chain.index(j)
            if pos + 1 < len(chain) and chain[pos + 1] < i:
                add("purpose_limitation", "STALE_CONSENT_REF", "WARN", i, j, chain[pos + 1])
        # withdrawal enforcement
        last = chain[-1]
        if payloads[last].kind is EventKind.WITHDRAW:
            w = payloads[last]
            if ev.timestamp.sequence > w.timestamp.sequence or (
                    ev.timestamp.sequence == w.timestamp.sequence and i > last):
                add("withdrawal_enforcement", "PROCESSING_AFTER_WITHDRAWAL", "VIOLATION", i, last)
        # sharing
        if ev.action in (Action.SHARE, Action.DISCLOSE, Action.TRANSFER_CROSS_BORDER):
            form = _form_at(payloads, chain, j)
            listed = set(form.third_parties or ())
            if ev.action is Action.TRANSFER_CROSS_BORDER:
                if not form.cross_border:
                    add("sharing", "CROSS_BORDER_NOT_CONSENTED", "VIOLATION", i, j)
            else:
                if ev.counterparty not in listed or (ev.actor != form.fiduciary and ev.actor not in listed):
                    add("sharing", "UNLISTED_THIRD_PARTY", "VIOLATION", i, j)
                restrictions = [r for r in range(i) if isinstance(payloads[r], DisclosureRestriction)
                                and (payloads[r].principal, payloads[r].fiduciary) == cited.pair]
                if restrictions:
                    add("sharing", "DISCLOSURE_RESTRICTED", "VIOLATION", i, restrictions[0])

    for i, ev in processing:
        if ev.actor in guardian_fiduciaries and ev.action is Action.ANALYZE and ev.purpose_id in prohibited:
            add("children", "GUARDIAN_FIDUCIARY_PROHIBITION", "VIOLATION", i)

    for w_idx, w in _consents(payloads):
        if w.kind is not EventKind.WITHDRAW:
            continue
        for party in set(w.notice.third_parties):
            acked = any(isinstance(p, WithdrawalPropagation) and p.withdrawal_digest == w.digest
                        and p.third_party == party for p in payloads)
            if not acked:
                sev = "VIOLATION" if now - w.timestamp.wall_time > grace_days * DAY else "WARN"
                add("withdrawal_enforcement", "PROPAGATION_INCOMPLETE", sev, w_idx,
                    subject=f"entry:{w_idx}/party:{party}")

    pairs = {p.pair for _, p in _consents(payloads)}
    for pair in pairs:
        if _pair_is_broken(payloads, pair):
            continue
        for r, root in _consents(payloads):
            if root.pair != pair or root.kind is not EventKind.ESTABLISH:
                continue
            chain = _walk_chain(payloads, r)
            leaf_i = chain[-1]
            leaf = payloads[leaf_i]
            if leaf.kind is EventKind.WITHDRAW:
                continue
            form = leaf.form
            days = form.retention.days
            if form.retention.kind is RetentionKind.FIXED:
                if now > root.timestamp.wall_time + days * DAY:
                    erased = set()
                    for e, p in enumerate(payloads):
                        if isinstance(p, ErasureReceipt) and e > r and (p.principal, p.fiduciary) == pair:
                            erased |= set(p.categories_erased)
                    cats = set()
                    for spec in form.purposes:
                        cats |= set(spec.data_categories)
                    if not cats <= erased:
                        idx = (r,) if leaf_i == r else (r, leaf_i)
                        add("retention", "RETENTION_EXCEEDED", "VIOLATION", *idx)
            elif now > leaf.timestamp.wall_time + days * DAY:
                add("retention", "RETENTION_REVIEW_DUE", "WARN", leaf_i, subject=f"entry:{r}")

    for i, b in enumerate(payloads):
        if not isinstance(b, BreachRecord):
            continue
        if b.reported_to_authority_at is None:
            add("breach_timeliness", "BREACH_NOT_REPORTED", "VIOLATION", i)
        elif b.reported_to_authority_at > b.detected_at + breach_window_hours * HOUR:
            add("breach_timeliness", "BREACH_REPORTED_LATE", "VIOLATION", i)
        if b.high_risk and b.principal_notified_at is None:
            add("breach_timeliness", "PRINCIPAL_NOT_NOTIFIED", "VIOLATION", i)
    return out


def findings_as_set(findings) -> set[tuple]:
    return {(f.check_id, f.code, f.severity.value, f.subject, tuple(f.indices)) for f in findings}
