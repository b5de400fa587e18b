"""The finding record every checker emits."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .canonical import payload_type


class Severity(str, enum.Enum):
    INFO = "INFO"
    WARN = "WARN"
    VIOLATION = "VIOLATION"
    FATAL = "FATAL"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @property
    def failing(self) -> bool:
        return self.rank >= _RANK[Severity.VIOLATION]


_RANK = {Severity.INFO: 0, Severity.WARN: 1, Severity.VIOLATION: 2, Severity.FATAL: 3}


@payload_type
@dataclass(frozen=True)
class Finding:
    """One check outcome.

    ``subject`` names the item the check evaluated (``entry:12``,
    ``entry:12/party:acme``, ``plan:ads/category:name``); ``indices`` are the
    ledger entries cited as evidence, subject first.
    """

    check_id: str
    code: str
    severity: Severity
    subject: str
    indices: tuple[int, ...]
    explanation: str

    def sort_key(self) -> tuple:
        return (self.check_id, self.indices, self.code, self.subject)

    def line(self) -> str:
        idx = ",".join(str(i) for i in self.indices) or "-"
        return f"{self.check_id}\t{self.severity.value}\t{self.code}\t{idx}\t{self.explanation}"


def sort_findings(findings) -> list[Finding]:
    return sorted(findings, key=Finding.sort_key)
