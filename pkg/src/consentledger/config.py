"""Tool configuration for the command-line front end."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

import tomli

from .clock import Clock, FixedClock, SystemClock, parse_instant
from .errors import ConfigError

CONFIG_ENV = "CONSENTLEDGER_CONFIG"


@dataclass(frozen=True)
class ToolConfig:
    """Paths and clock mode shared by every subcommand.

    Relative paths in a config file resolve against the file's directory.
    ``clock`` is ``"real"`` or an ISO instant; a fixed instant makes runs replayable.
    """

    key_dir: Path = Path("keys")
    ledger: Path = Path("ledger.jsonl")
    taxonomy: Path | None = None
    audit_config: Path | None = None
    clock: str = "real"

    @classmethod
    def from_toml(cls, text: str, base: Path = Path(".")) -> ToolConfig:
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"bad tool config: {exc}") from None
        unknown = set(doc) - {"key_dir", "ledger", "taxonomy", "audit_config", "clock"}
        if unknown:
            raise ConfigError(f"unknown tool config keys {sorted(unknown)}")

        def path(name: str) -> Path | None:
            value = doc.get(name)
            return None if value is None else base / str(value)

        cfg = cls()
        return replace(
            cfg,
            key_dir=path("key_dir") or cfg.key_dir,
            ledger=path("ledger") or cfg.ledger,
            taxonomy=path("taxonomy"),
            audit_config=path("audit_config"),
            clock=str(doc.get("clock", "real")),
        )

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict[str, str] | None = None) -> ToolConfig:
        """Load ``path``, else the file named by $CONSENTLEDGER_CONFIG, else defaults."""
        env = os.environ if env is None else env
        path = path or env.get(CONFIG_ENV)
        if not path:
            return cls()
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read tool config {path}: {exc.strerror}") from None
        return cls.from_toml(text, path.parent)

    def validate(self) -> None:
        for name in ("taxonomy", "audit_config"):
            p = getattr(self, name)
            if p is not None and not p.is_file():
                raise ConfigError(f"{name} file {p} does not exist")
        if not self.ledger.parent.is_dir() and str(self.ledger.parent) not in ("", "."):
            raise ConfigError(f"ledger directory {self.ledger.parent} does not exist")
        self.make_clock()

    def make_clock(self) -> Clock:
        if self.clock == "real":
            return SystemClock()
        try:
            return FixedClock(parse_instant(self.clock))
        except ValueError:
            raise ConfigError(f"clock must be 'real' or an ISO instant, not {self.clock!r}") from None
