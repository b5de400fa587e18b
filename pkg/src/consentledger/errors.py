"""Exception hierarchy shared by every module.

Each error carries a stable machine-readable ``code``. The CLI maps the
class to an exit status: domain errors exit 1, usage errors 2, integrity
errors 3.
"""

from __future__ import annotations


class ConsentLedgerError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", *, code: str | None = None) -> None:
        if code is not None:
            self.code = code
        super().__init__(message or self.code)

    def __str__(self) -> str:
        msg = super().__str__()
        return msg if msg.startswith(self.code) else f"{self.code}: {msg}"


class DomainError(ConsentLedgerError):
    """A request that is well-formed but not allowed by the consent rules."""

    code = "DOMAIN_ERROR"


class UsageError(ConsentLedgerError):
    code = "USAGE"


class IntegrityError(ConsentLedgerError):
    """Tampered, corrupt or unverifiable evidence."""

    code = "INTEGRITY"


class SerializationError(ConsentLedgerError):
    code = "UNSERIALIZABLE"


class MalformedKeyError(ConsentLedgerError):
    code = "MALFORMED_KEY"


class MalformedSignatureError(ConsentLedgerError):
    code = "MALFORMED_SIGNATURE"


class ClockRegressionError(ConsentLedgerError):
    code = "CLOCK_REGRESSION"


class UnknownCategoryError(DomainError):
    code = "UNKNOWN_CATEGORY"


class ValidationFailed(DomainError):
    code = "VALIDATION_FAILED"

    def __init__(self, violations) -> None:
        self.violations = tuple(violations)
        super().__init__(", ".join(v.code for v in self.violations))


class ChainStructureError(IntegrityError):
    """A consent chain whose supersedes links break the lifecycle grammar."""

    code = "INVALID_CONSENT_CHAIN"

    def __init__(self, message: str, indices: tuple[int, ...], *, code: str | None = None) -> None:
        self.indices = tuple(indices)
        super().__init__(message, code=code)


class ForkedConsentError(ChainStructureError):
    code = "FORKED_CONSENT"


class CertificationRefused(DomainError):
    code = "CERTIFICATION_REFUSED"


class ConfigError(UsageError):
    code = "INVALID_CONFIG"
