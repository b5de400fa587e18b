"""Deterministic fixture builder shared by the test modules."""

from __future__ import annotations

from consentledger.clock import DAY, FixedClock
from consentledger.consent import (
    ConsentForm,
    ExplicitAck,
    PurposeSpec,
    Retention,
    establish,
    modify,
    record_propagation,
    withdraw,
)
from consentledger.crypto import Directory, Role, TimestampAuthority, keypair_from_secret
from consentledger.keystore import seeded_secret
from consentledger.ledger import Ledger
from consentledger.records import Action, record_breach, record_erasure, record_processing

T0 = 1_704_067_200  # 2024-01-01T00:00:00Z

ROLES = {
    "alice": Role.PRINCIPAL,
    "bob": Role.PRINCIPAL,
    "carol": Role.PRINCIPAL,
    "shop": Role.FIDUCIARY,
    "bank": Role.FIDUCIARY,
    "courier": Role.THIRD_PARTY,
    "ads": Role.THIRD_PARTY,
    "cloud": Role.PROCESSOR,
    "guardian": Role.GUARDIAN,
    "auditor": Role.AUDITOR,
    "auditor2": Role.AUDITOR,
    "tsa": Role.TSA,
}


def key(party: str, seed: str = "fixture"):
    return keypair_from_secret(seeded_secret(seed, party), ROLES[party], party)


def purpose(pid: str, *cats: str, desc: str | None = None, explicit: bool = False) -> PurposeSpec:
    return PurposeSpec(pid, desc if desc is not None else f"{pid} purpose", frozenset(cats), explicit)


def simple_form(form_id: str = "f1", principal: str = "alice", fiduciary: str = "shop", *,
                purposes=None, third_parties=("courier",), retention=None, cross_border=False,
                destination=None, explicit_ack=None) -> ConsentForm:
    purposes = purposes or (purpose("account_service", "name", "email"),
                            purpose("delivery", "name", "postal_address"))
    return ConsentForm(form_id, principal, fiduciary, tuple(purposes), third_parties,
                       retention or Retention.fixed(365), cross_border, destination, explicit_ack)


def explicit_for(*purpose_ids: str) -> ExplicitAck:
    return ExplicitAck("I explicitly agree", {p: True for p in purpose_ids})


class World:
    """Keys, a fixed clock, a TSA and an in-memory ledger, all deterministic."""

    def __init__(self, start: int = T0, seed: str = "fixture", path=None) -> None:
        self.keys = {name: key(name, seed) for name in ROLES}
        self.directory = Directory(k.identity for k in self.keys.values())
        self.clock = FixedClock(start)
        self.tsa = TimestampAuthority(self.keys["tsa"], self.clock)
        self.ledger = Ledger.open(path, self.directory) if path else Ledger(self.directory)

    def tick(self, seconds: int = 60) -> None:
        self.clock.advance(seconds)

    def day(self, n: float) -> None:
        self.clock.advance(int(n * DAY))

    def append(self, payload):
        self.ledger.append(payload)
        return len(self.ledger) - 1

    def establish(self, form: ConsentForm, **kw):
        self.tick()
        ev = establish(form, self.keys[form.principal], self.keys[form.fiduciary], self.tsa, **kw)
        return self.append(ev), ev

    def modify(self, prior, form: ConsentForm, **kw):
        self.tick()
        ev = modify(prior, form, self.keys[form.principal], self.keys[form.fiduciary], self.tsa, **kw)
        return self.append(ev), ev

    def withdraw(self, prior, reason: str = ""):
        self.tick()
        ev = withdraw(prior, self.keys[prior.principal], self.keys[prior.fiduciary], self.tsa, reason=reason)
        return self.append(ev), ev

    def propagate(self, w, party: str):
        self.tick()
        return self.append(record_propagation(w, self.keys[party], self.tsa))

    def process(self, consent, *, actor: str = "shop", purpose_id: str = "account_service",
                categories=("name",), action: Action = Action.STORE, counterparty: str | None = None,
                processing_id: str | None = None, consent_ref: bytes | None = None):
        self.tick()
        rec = record_processing(
            self.keys[actor], self.tsa, processing_id=processing_id or f"p{len(self.ledger)}",
            consent_ref=consent_ref if consent_ref is not None else consent.digest,
            purpose_id=purpose_id, categories=categories, action=action, counterparty=counterparty,
        )
        return self.append(rec)

    def erase(self, principal: str, categories, fiduciary: str = "shop"):
        self.tick()
        return self.append(record_erasure(self.keys[fiduciary], self.tsa, principal=principal,
                                          categories=categories))

    def breach(self, breach_id: str = "b1", *, fiduciary: str = "shop", detected_at: int | None = None,
               reported_after: int | None = 3600, high_risk: bool = False, notified_after: int | None = None):
        detected = self.clock.now() if detected_at is None else detected_at
        return self.append(record_breach(
            self.keys[fiduciary], breach_id=breach_id, description="incident",
            categories={"email"}, detected_at=detected,
            reported_to_authority_at=None if reported_after is None else detected + reported_after,
            high_risk=high_risk,
            principal_notified_at=None if notified_after is None else detected + notified_after,
        ))


FIVE_CHECKS = frozenset({"purpose_limitation", "withdrawal_enforcement", "retention", "sharing",
                         "breach_timeliness"})


def five_check_fixture() -> World:
    """Four processing events, one of them after the withdrawal; nothing else can fail.

    Hand-derived score with equal weights over FIVE_CHECKS:
    purpose 4/4, withdrawal 3/4, retention 0/0 -> 1, sharing 0/0 -> 1, breach 0/0 -> 1,
    so 100 * (1 + 0.75 + 1 + 1 + 1) / 5 = 95.0.
    """
    w = World()
    _, e = w.establish(simple_form(third_parties=()))
    for _ in range(3):
        w.process(e)
    w.withdraw(e)
    w.process(e)
    return w


def replay_scenario() -> World:
    """establish, process x3, modify, process, withdraw, late processing."""
    w = World()
    _, e = w.establish(simple_form(third_parties=()))
    w.process(e)
    w.process(e, categories=("email",))
    w.process(e, purpose_id="delivery", categories=("postal_address",))
    _, m = w.modify(e, simple_form("f2", third_parties=(), purposes=(purpose("account_service", "name", "email"),)))
    w.process(m)
    w.withdraw(m)
    w.process(m)
    return w
