from __future__ import annotations

import pytest

from consentledger.audit import AuditConfig, issue_certificate, run_audit
from consentledger.clock import DAY
from consentledger.errors import IntegrityError
from consentledger.ledger import Ledger
from consentledger.transparency import UNDECLARED, export_transparency_summary

from helpers import World, simple_form


def test_summary_without_audit():
    w = World()
    w.establish(simple_form(third_parties=("courier",)))
    w.establish(simple_form("g1", "bob", third_parties=("ads",), cross_border=True, destination="SG"))
    s = export_transparency_summary(w.ledger)
    assert (s.active_consents, s.withdrawn_consents, s.breach_count) == (2, 0, 0)
    assert s.third_parties == ("ads", "courier")
    assert s.cross_border_destinations == ("SG",)
    assert s.last_audit_grade == UNDECLARED and "last_audit_grade" in s.undeclared


def test_summary_reports_certified_grade():
    w = World()
    _, e = w.establish(simple_form())
    w.process(e)
    w.breach(reported_after=3600)
    w.withdraw(w.establish(simple_form("g", "bob"))[1])
    report = run_audit(w.ledger, AuditConfig(), w.clock)
    now = w.clock.now()
    w.append(issue_certificate(report, w.keys["auditor"], (now, now + 365 * DAY)))
    s = export_transparency_summary(w.ledger)
    assert (s.active_consents, s.withdrawn_consents, s.breach_count) == (1, 1, 1)
    assert s.last_audit_grade == report.grade and s.last_audit_score == report.score
    assert "last_audit_grade" not in s.undeclared


def test_broken_chain_refused():
    w = World()
    w.establish(simple_form())
    w.establish(simple_form("g", "bob"))
    lines = list(w.ledger.raw_lines)
    with pytest.raises(IntegrityError) as err:
        export_transparency_summary(Ledger(w.directory, lines=lines[1:]))
    assert err.value.code == "CHAIN_INVALID"
