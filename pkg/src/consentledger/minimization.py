"""Collection-class taxonomy, the collection flow chart, and the plan linter.

Classes are ordered ZERO < PA_PD < PI_PD < SPI_PD:

* ZERO: the service needs no personal data at all.
* PA_PD: pseudonym-associated data (cookies, session, browser, IP-like).
* PI_PD: personally identifiable data (name, date of birth, phone).
* SPI_PD: sensitive identifiable data (financial, health, biometric).
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .canonical import payload_type
from .errors import ConfigError, UnknownCategoryError
from .findings import Finding, Severity, sort_findings

CHECK_ID = "minimization"


class CollectionClass(str, enum.Enum):
    ZERO = "ZERO"
    PA_PD = "PA_PD"
    PI_PD = "PI_PD"
    SPI_PD = "SPI_PD"

    @property
    def level(self) -> int:
        return _LEVELS.index(self)

    def exceeds(self, bound: CollectionClass) -> bool:
        return self.level > bound.level


_LEVELS = [CollectionClass.ZERO, CollectionClass.PA_PD, CollectionClass.PI_PD, CollectionClass.SPI_PD]


def flow_chart_class(*, needs_personal_data: bool, needs_identity: bool = False,
                     sensitive: bool = False) -> CollectionClass:
    """Walk the collection flow chart for one piece of requested data."""
    if not needs_personal_data:
        return CollectionClass.ZERO
    if not needs_identity:
        return CollectionClass.PA_PD
    return CollectionClass.SPI_PD if sensitive else CollectionClass.PI_PD


@payload_type
@dataclass(frozen=True)
class TaxonomyEntry:
    category_id: str
    label: str
    data_class: CollectionClass
    notes: str = ""


_DEFAULT_ENTRIES = [
    ("anonymous_page_view", "Aggregate page view", "ZERO", "no identifier retained"),
    ("transaction_log_receipt", "Authority logging confirmation", "ZERO",
     "confirmation that a purchase was logged with the tax authority; carries no PAN"),
    ("cookie_session_id", "Cookie / session identifier", "PA_PD", ""),
    ("session_info", "Session information", "PA_PD", ""),
    ("browser_info", "Browser information", "PA_PD", ""),
    ("nickname", "Pseudonymous nickname", "PA_PD", ""),
    ("order_details", "Order contents", "PA_PD", "linked to a pseudonymous account"),
    ("encrypted_card_blob", "Card data encrypted under the principal's key", "PA_PD",
     "opaque to the fiduciary"),
    ("ip_address", "IP address", "PI_PD",
     "ambiguous identifier/pseudonym; classified conservatively at the higher class"),
    ("name", "Name", "PI_PD", ""),
    ("date_of_birth", "Date of birth", "PI_PD", ""),
    ("mobile_number", "Mobile number", "PI_PD", ""),
    ("email", "E-mail address", "PI_PD", ""),
    ("postal_address", "Postal address", "PI_PD", ""),
    ("financial_info", "Financial information", "SPI_PD", ""),
    ("card_number", "Payment card number", "SPI_PD", ""),
    ("card_expiry", "Payment card expiry", "SPI_PD", ""),
    ("pan_number", "PAN (tax identifier)", "SPI_PD", ""),
    ("health_data", "Health data", "SPI_PD", ""),
    ("biometric_template", "Biometric data", "SPI_PD", ""),
    ("genetic_data", "Genetic data", "SPI_PD", ""),
]

DEFAULT_POLICY: dict[str, CollectionClass] = {
    "informational": CollectionClass.ZERO,
    "session_personalization": CollectionClass.PA_PD,
    "account_service": CollectionClass.PI_PD,
    "payment": CollectionClass.SPI_PD,
    "health": CollectionClass.SPI_PD,
}


@dataclass(frozen=True)
class CategoryTaxonomy:
    entries: Mapping[str, TaxonomyEntry]
    policy: Mapping[str, CollectionClass] = field(default_factory=dict)

    @classmethod
    def default(cls) -> CategoryTaxonomy:
        entries = {
            cid: TaxonomyEntry(cid, label, CollectionClass(klass), notes)
            for cid, label, klass, notes in _DEFAULT_ENTRIES
        }
        return cls(entries, dict(DEFAULT_POLICY))

    @classmethod
    def from_toml(cls, text: str) -> CategoryTaxonomy:
        """Parse the taxonomy text configuration.

        ::

            [categories.name]
            label = "Name"
            class = "PI_PD"
            notes = ""

            [policy]
            account_service = "PI_PD"

        A top-level ``include_defaults = true`` merges the built-in table first.
        """
        try:
            doc = tomli.loads(text)
            base = cls.default() if doc.get("include_defaults") else cls({}, {})
            entries = dict(base.entries)
            for cid, spec in doc.get("categories", {}).items():
                entries[cid] = TaxonomyEntry(
                    cid, spec.get("label", cid), CollectionClass(spec["class"]), spec.get("notes", "")
                )
            policy = dict(base.policy)
            policy.update({k: CollectionClass(v) for k, v in doc.get("policy", {}).items()})
        except (tomli.TOMLDecodeError, KeyError, ValueError, AttributeError) as exc:
            raise ConfigError(f"bad taxonomy: {exc}") from None
        return cls(entries, policy)

    @classmethod
    def load(cls, path: str | Path) -> CategoryTaxonomy:
        return cls.from_toml(Path(path).read_text(encoding="utf-8"))

    def __contains__(self, category_id: object) -> bool:
        return category_id in self.entries

    def max_class_for(self, purpose_id: str) -> CollectionClass:
        try:
            return self.policy[purpose_id]
        except KeyError:
            raise ConfigError(f"no collection bound configured for purpose {purpose_id!r}") from None


def classify(category_id: str, taxonomy: CategoryTaxonomy) -> CollectionClass:
    entry = taxonomy.entries.get(category_id)
    if entry is None:
        raise UnknownCategoryError(f"category {category_id!r} is not in the taxonomy")
    return entry.data_class


@payload_type
@dataclass(frozen=True)
class CollectionPlan:
    purpose_id: str
    requested_categories: frozenset[str]
    max_class_allowed: CollectionClass

    def __post_init__(self) -> None:
        object.__setattr__(self, "requested_categories", frozenset(self.requested_categories))


def lint_plan(plan: CollectionPlan, taxonomy: CategoryTaxonomy) -> list[Finding]:
    findings = []
    for cid in sorted(plan.requested_categories):
        klass = classify(cid, taxonomy)
        if klass.exceeds(plan.max_class_allowed):
            findings.append(Finding(
                CHECK_ID, "OVER_COLLECTION", Severity.VIOLATION,
                f"plan:{plan.purpose_id}/category:{cid}", (),
                f"{cid} is {klass.value}, purpose {plan.purpose_id} allows at most "
                f"{plan.max_class_allowed.value}",
            ))
    return findings


@payload_type
@dataclass(frozen=True)
class MinimizationReport:
    histograms: dict[str, dict[str, int]]
    over_collection_count: int
    passed: bool
    findings: tuple[Finding, ...]


def minimization_report(plans: Iterable[CollectionPlan], taxonomy: CategoryTaxonomy) -> MinimizationReport:
    histograms: dict[str, dict[str, int]] = {}
    findings: list[Finding] = []
    for plan in plans:
        hist = histograms.setdefault(plan.purpose_id, {c.value: 0 for c in CollectionClass})
        for cid in plan.requested_categories:
            hist[classify(cid, taxonomy).value] += 1
        findings.extend(lint_plan(plan, taxonomy))
    findings = sort_findings(findings)
    return MinimizationReport(histograms, len(findings), not findings, tuple(findings))


def plans_from_toml(text: str, taxonomy: CategoryTaxonomy) -> list[CollectionPlan]:
    """Parse ``[[plan]]`` tables; a missing ``max_class_allowed`` uses the policy table."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"bad plan file: {exc}") from None
    return plans_from_dicts(doc.get("plan", []), taxonomy)


def plans_from_dicts(items: Iterable[Mapping], taxonomy: CategoryTaxonomy) -> list[CollectionPlan]:
    plans = []
    for item in items:
        try:
            purpose = item["purpose_id"]
            bound = item.get("max_class_allowed")
            bound = CollectionClass(bound) if bound else taxonomy.max_class_for(purpose)
            requested = frozenset(item.get("requested_categories", ()))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad plan entry {item!r}: {exc}") from None
        for cid in requested:
            classify(cid, taxonomy)
        plans.append(CollectionPlan(purpose, requested, bound))
    return plans
