"""The seven acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

from __future__ import annotations

import dataclasses
import itertools
import random
import tempfile
import time
from collections import defaultdict
from pathlib import Path


from consentledger.audit import (
    AuditConfig,
    AuditReport,
    issue_certificate,
    report_bytes,
    run_audit,
    verify_certificate,
)
from consentledger.canonical import canonical_bytes, decode_canonical
from consentledger.clock import DAY, FixedClock
from consentledger.compliance import LEDGER_CHECKS, CheckSettings, LedgerView
from consentledger.consent import (
    ChildConsent,
    ConsentEvent,
    EventKind,
    ExplicitAck,
    WithdrawalNotice,
    _sign_event,
    attest_minor,
    establish,
    modify,
    withdraw,
)
from consentledger.crypto import Signature, verify
from consentledger.errors import ConsentLedgerError, DomainError, ForkedConsentError
from consentledger.findings import Finding, Severity
from consentledger.ledger import ConsentIndex, Ledger, latest_consent
from consentledger.minimization import CategoryTaxonomy, minimization_report, plans_from_toml

import scenario
from conftest import ACCEPTANCE
from generators import PAIRS, random_compliance_ledger, random_form, random_lifecycle
from helpers import FIVE_CHECKS, World, five_check_fixture, purpose, replay_scenario, simple_form
from oracles import FORKED, findings_as_set, latest_consent_oracle, oracle_findings

DATA = Path(__file__).parent / "data"


def record(n: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (ok, title, detail)
    print(f"{'PASS' if ok else 'FAIL'} [{n}] {title}: {detail}")
    assert ok, detail


def flip(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


# ---------------------------------------------------------------- 1


def two_hundred_entries() -> World:
    rng = random.Random(1)
    w = World()
    while len(w.ledger) < 200:
        w.tick()
        pair = rng.choice(PAIRS)
        res = latest_consent(w.ledger, *pair)
        if res.event is None or res.event.kind is EventKind.WITHDRAW:
            w.establish(random_form(rng, pair, f"f{len(w.ledger)}"))
        elif rng.random() < 0.1:
            w.modify(res.event, random_form(rng, pair, f"f{len(w.ledger)}"))
        elif rng.random() < 0.05:
            w.breach(f"b{len(w.ledger)}")
        else:
            pid = rng.choice(res.event.form.purposes)
            w.process(res.event, actor=pair[1], purpose_id=pid.purpose_id,
                      categories=sorted(pid.data_categories)[:1])
    return w


def test_1_chain_tamper_evidence():
    w = two_hundred_entries()
    data = w.ledger.to_bytes()
    assert len(w.ledger) == 200 and Ledger.from_bytes(data, w.directory).verify_chain().ok
    rng = random.Random(11)
    trials, missed = 600, []
    start = time.perf_counter()
    for bit in rng.sample(range(len(data) * 8), trials):
        try:
            detected = not Ledger.from_bytes(flip(data, bit), w.directory).verify_chain().ok
        except ConsentLedgerError:
            detected = True
        if not detected:
            missed.append(bit)
    elapsed = time.perf_counter() - start
    record(1, "chain tamper evidence", not missed and elapsed < 10,
           f"{trials} single-bit flips, {len(missed)} undetected, {elapsed:.2f}s")


# ---------------------------------------------------------------- 2


def test_2_latest_consent_oracle():
    mismatches, forks, raised = [], 0, 0
    for seed in range(1000):
        rng = random.Random(seed)
        w = random_lifecycle(rng, rng.randint(1, 20))
        payloads = [p for _, p in w.ledger.items()]
        for pair in PAIRS[:2]:
            want = latest_consent_oracle(payloads, pair)
            try:
                res = latest_consent(w.ledger, *pair)
                got = (res.status.value, res.index)
            except ForkedConsentError as exc:
                got = (FORKED, None)
                raised += exc.code == "FORKED_CONSENT"
            forks += want[0] == FORKED
            if got != want:
                mismatches.append((seed, pair, got, want))
    record(2, "latest-consent oracle equivalence", not mismatches and forks > 0 and raised == forks,
           f"1000 sequences, {forks} forked pairs all raised FORKED_CONSENT, {len(mismatches)} mismatches")


# ---------------------------------------------------------------- 3


def test_3_compliance_oracle():
    settings = CheckSettings(guardian_fiduciaries=frozenset({"bank"}))
    mismatched, total = [], 0
    for seed in range(500):
        w = random_compliance_ledger(random.Random(50_000 + seed), 50)
        view = LedgerView(w.ledger)
        want = defaultdict(set)
        for f in oracle_findings([p for _, p in w.ledger.items()], guardian_fiduciaries={"bank"}):
            want[f[0]].add(f)
        for check_id, fn in LEDGER_CHECKS.items():
            got = findings_as_set(fn(view, None, settings).findings)
            total += len(got)
            if got != want[check_id]:
                mismatched.append((seed, check_id))
    record(3, "compliance checker oracle equivalence", not mismatched,
           f"500 ledgers x {len(LEDGER_CHECKS)} checkers, {total} findings, {len(mismatched)} mismatched sets")


# ---------------------------------------------------------------- 4


def _forge(w: World, kind: EventKind, prior: ConsentEvent | None) -> ConsentEvent:
    """A correctly signed event that bypasses the builder's transition guard."""
    w.tick()
    form = simple_form(f"f{len(w.ledger)}") if kind is not EventKind.WITHDRAW else None
    notice = WithdrawalNotice("alice", "shop", "f1", ()) if kind is EventKind.WITHDRAW else None
    return _sign_event(kind, form, notice, prior.digest if prior else None,
                       w.keys["alice"], w.keys["shop"], None, w.tsa)


def _transition_outcome(first: EventKind, second: EventKind) -> tuple[bool, bool]:
    """(builder accepts, ledger accepts) for ``second`` superseding ``first``."""
    w = World()
    _, root = w.establish(simple_form())
    prior = root
    if first is EventKind.MODIFY:
        _, prior = w.modify(root, simple_form("f2"))
    elif first is EventKind.WITHDRAW:
        _, prior = w.withdraw(root)
    try:
        if second is EventKind.MODIFY:
            modify(prior, simple_form("f9"), w.keys["alice"], w.keys["shop"], w.tsa)
        elif second is EventKind.WITHDRAW:
            withdraw(prior, w.keys["alice"], w.keys["shop"], w.tsa)
        builder = second is not EventKind.ESTABLISH  # establish never takes a prior
    except DomainError:
        builder = False
    try:
        w.ledger.append(_forge(w, second, prior))
        ledger_ok = not ConsentIndex(w.ledger).check_all()
    except DomainError:
        ledger_ok = False
    return builder, ledger_ok


def _violating_ack_forms(rng: random.Random, w: World, n: int):
    sensitive = ["health_data", "biometric_template", "financial_info"]
    for i in range(n):
        cats = {rng.choice(sensitive), *rng.sample(["name", "email"], rng.randint(0, 2))}
        flagged = rng.random() < 0.7
        p = purpose(f"p{i}", *cats, explicit=flagged)
        ack = rng.choice([
            None,
            ExplicitAck("", {p.purpose_id: True}),
            ExplicitAck("   ", {p.purpose_id: True}),
            ExplicitAck("I agree", {p.purpose_id: False}),
            ExplicitAck("I agree", {"other": True}),
            ExplicitAck("I agree", {p.purpose_id: True}) if not flagged else None,
        ])
        yield simple_form(f"a{i}", purposes=(p,), explicit_ack=ack), None


def _violating_guardian_forms(rng: random.Random, w: World, n: int):
    good = attest_minor("alice", w.keys["guardian"])
    for i in range(n):
        variant = rng.randrange(8)
        guardian, att, gkey = "guardian", good, w.keys["guardian"]
        if variant == 0:
            guardian = None
        elif variant == 1:
            att = None
        elif variant == 2:
            att = attest_minor("bob", w.keys["guardian"])
        elif variant == 3:
            att = dataclasses.replace(good, subject_is_adult=True)
        elif variant == 4:
            att = dataclasses.replace(good, guardian_consents=False)
        elif variant == 5:
            sig = good.signature
            att = dataclasses.replace(good, signature=Signature(
                sig.signer_fingerprint, sig.algorithm_id, flip(sig.value, rng.randrange(512))))
        elif variant == 6:
            gkey = None
        else:
            gkey = w.keys["auditor"]
        yield dataclasses.replace(simple_form(f"g{i}"), child=ChildConsent(guardian, att)), gkey


def test_4_lifecycle_grammar():
    grammar = {(EventKind.ESTABLISH, EventKind.MODIFY), (EventKind.MODIFY, EventKind.MODIFY),
               (EventKind.ESTABLISH, EventKind.WITHDRAW), (EventKind.MODIFY, EventKind.WITHDRAW)}
    wrong = []
    for pair in itertools.product(EventKind, EventKind):
        builder, ledger_ok = _transition_outcome(*pair)
        if builder != (pair in grammar) or ledger_ok != (pair in grammar):
            wrong.append(pair)
    rng = random.Random(4)
    w = World()
    accepted = total = 0
    for gen in (_violating_ack_forms, _violating_guardian_forms):
        for form, gkey in gen(rng, w, 300):
            total += 1
            try:
                establish(form, w.keys["alice"], w.keys["shop"], w.tsa, guardian_key=gkey)
                accepted += 1
            except ConsentLedgerError:
                pass
    record(4, "lifecycle grammar and form invariants", not wrong and accepted == 0,
           f"9 transition pairs, {len(wrong)} wrong; {total} violating forms, {accepted} accepted")


# ---------------------------------------------------------------- 5


def test_5_audit_determinism_and_score():
    clock = FixedClock(1_800_000_000)
    a = report_bytes(run_audit(scenario_world_ledger(), AuditConfig(), clock))
    b = report_bytes(run_audit(scenario_world_ledger(), AuditConfig(), clock))
    tax = CategoryTaxonomy.default()
    present = minimization_report(plans_from_toml((DATA / "pan_present.toml").read_text(), tax), tax)
    modified = minimization_report(plans_from_toml((DATA / "pan_modified.toml").read_text(), tax), tax)
    score = run_audit(five_check_fixture().ledger, AuditConfig(enabled_checks=FIVE_CHECKS), clock).score
    ok = a == b and modified.passed and not present.passed and abs(score - 95.0) <= 1e-9
    record(5, "audit determinism and score exactness", ok,
           f"reports identical={a == b}, modified-PAN pass={modified.passed}, "
           f"original-PAN pass={present.passed}, five-check score={score!r}")


def scenario_world_ledger() -> Ledger:
    return replay_scenario().ledger


# ---------------------------------------------------------------- 6


def accepted(check) -> bool:
    """A malformed-signature error is a rejection, same as a False verdict."""
    try:
        return bool(check())
    except ConsentLedgerError:
        return False


def test_6_signatures_and_certificates():
    rng = random.Random(6)
    w = World()
    _, e = w.establish(simple_form())
    w.process(e)
    w.breach()
    _, x = w.withdraw(e)
    w.propagate(x, "courier")
    report = run_audit(w.ledger, AuditConfig(fiduciary="shop"), FixedClock(w.clock.now() + DAY))
    now = w.clock.now()
    cert = issue_certificate(report, w.keys["auditor"], (now, now + 365 * DAY))
    signed = [p for _, p in w.ledger.items()] + [cert]
    forged = 0
    for _ in range(1000):
        obj = rng.choice(signed)
        data = canonical_bytes(obj)
        mutated = flip(data, rng.randrange(len(data) * 8))
        try:
            candidate = decode_canonical(mutated, type(obj))
        except (ConsentLedgerError, ValueError, TypeError, KeyError):
            continue
        forged += accepted(lambda: candidate.verification_problem(w.directory) is None)
    raw_forged = 0
    for _ in range(1000):
        msg = rng.randbytes(rng.randint(1, 64))
        sig = w.keys["shop"].sign(msg)
        if rng.random() < 0.5:
            ok = accepted(lambda: verify(w.keys["shop"].identity, flip(msg, rng.randrange(len(msg) * 8)), sig))
        else:
            bad = Signature(sig.signer_fingerprint, sig.algorithm_id, flip(sig.value, rng.randrange(512)))
            ok = accepted(lambda: verify(w.keys["shop"].identity, msg, bad))
        raw_forged += ok
    report_data = report_bytes(report)
    cert_accepted = 0
    for _ in range(300):
        try:
            mutated_report = decode_canonical(flip(report_data, rng.randrange(len(report_data) * 8)),
                                              type(report))
        except (ConsentLedgerError, ValueError, TypeError, KeyError):
            continue
        cert_accepted += accepted(lambda: verify_certificate(cert, mutated_report, w.keys["auditor"].identity))
    extra = Finding("sharing", "UNLISTED_THIRD_PARTY", Severity.VIOLATION, "entry:1", (1, 0), "")
    edits = {"score": 1.0, "grade": "F", "findings": (*report.findings, extra),
             "audited_head_hash": bytes(32), "fiduciary": "bank", "produced_at": report.produced_at + 1}
    for field, value in edits.items():
        cert_accepted += verify_certificate(cert, dataclasses.replace(report, **{field: value}),
                                            w.keys["auditor"].identity)
    intact = verify_certificate(cert, report, w.keys["auditor"].identity)
    ok = forged == 0 and raw_forged == 0 and cert_accepted == 0 and intact
    record(6, "signature and certificate non-repudiation", ok,
           f"2000 mutate-and-verify trials, {forged + raw_forged} forged acceptances; "
           f"{cert_accepted} mutated reports accepted by the certificate")


# ---------------------------------------------------------------- 7


def test_7_end_to_end_replay():
    with tempfile.TemporaryDirectory() as one, tempfile.TemporaryDirectory() as two:
        first, second = scenario.run(Path(one)), scenario.run(Path(two))
    golden = {name: (scenario.GOLDEN / name).read_bytes() for name in scenario.ARTIFACTS}
    report = decode_canonical(first["report.json"].rstrip(b"\n"), AuditReport)
    withdrawal = [f for f in report.findings
                  if f.check_id == "withdrawal_enforcement" and f.severity.value == "VIOLATION"]
    ok = first == second == golden and len(withdrawal) == 1 and report.grade != "A"
    record(7, "end-to-end replay", ok,
           f"{len(withdrawal)} withdrawal VIOLATION ({withdrawal[0].code if withdrawal else '-'}), "
           f"grade {report.grade}, runs identical={first == second}, golden match={first == golden}")
