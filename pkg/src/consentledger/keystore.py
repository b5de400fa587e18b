"""Key directory layout used by the command-line tool.

    <dir>/<party>.id     canonical PartyIdentity (public)
    <dir>/<party>.key    canonical KeyFile (secret)
    <dir>/tsa.state      last sequence and wall time issued by the local TSA
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .canonical import canonical_bytes, decode_canonical, payload_type
from .clock import Clock
from .crypto import (
    ALGORITHM_ID,
    Directory,
    KeyPair,
    PartyIdentity,
    Role,
    TimestampAuthority,
    digest,
    generate_identity,
    keypair_from_secret,
)
from .errors import ConsentLedgerError, MalformedKeyError, UsageError
from .ledger import write_atomic

KEY_DIR_ENV = "CONSENTLEDGER_KEY_DIR"
TSA_PARTY = "tsa"
_STATE = "tsa.state"


@payload_type
@dataclass(frozen=True)
class KeyFile:
    algorithm_id: str
    party_id: str
    role: Role
    secret: bytes


@payload_type
@dataclass(frozen=True)
class TsaState:
    party_id: str
    last_sequence: int
    last_wall_time: int | None


def seeded_secret(seed: str, party_id: str) -> bytes:
    """Derive a reproducible secret; only meant for fixtures and replayable demos."""
    return digest(b"consentledger-seed\x00" + seed.encode() + b"\x00" + party_id.encode())


class KeyStore:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def _path(self, party_id: str, suffix: str) -> Path:
        if not party_id or "/" in party_id or party_id.startswith("."):
            raise UsageError(f"invalid party id {party_id!r}", code="BAD_PARTY_ID")
        return self.root / f"{party_id}{suffix}"

    def generate(self, role: Role, party_id: str | None = None, *, seed: str | None = None,
                 overwrite: bool = False) -> KeyPair:
        if seed is not None:
            if party_id is None:
                raise UsageError("a seeded key needs an explicit party id", code="BAD_PARTY_ID")
            key = keypair_from_secret(seeded_secret(seed, party_id), role, party_id)
        else:
            key = generate_identity(role, party_id)
        secret_path = self._path(key.party_id, ".key")
        if secret_path.exists() and not overwrite:
            raise UsageError(f"key for {key.party_id!r} already exists", code="KEY_EXISTS")
        self.root.mkdir(parents=True, exist_ok=True)
        write_atomic(secret_path, canonical_bytes(KeyFile(ALGORITHM_ID, key.party_id, role, key.secret)) + b"\n")
        os.chmod(secret_path, 0o600)
        write_atomic(self._path(key.party_id, ".id"), canonical_bytes(key.identity) + b"\n")
        return key

    def load_key(self, party_id: str) -> KeyPair:
        path = self._path(party_id, ".key")
        try:
            data = path.read_bytes().rstrip(b"\n")
        except FileNotFoundError:
            raise UsageError(f"no key file for {party_id!r} in {self.root}", code="NO_KEY") from None
        try:
            kf = decode_canonical(data, KeyFile)
        except ConsentLedgerError as exc:
            raise MalformedKeyError(f"{path.name}: {exc}") from None
        if kf.algorithm_id != ALGORITHM_ID or kf.party_id != party_id:
            raise MalformedKeyError(f"{path.name}: unexpected algorithm or party")
        return keypair_from_secret(kf.secret, kf.role, kf.party_id)

    def load_identity(self, party_id: str) -> PartyIdentity:
        path = self._path(party_id, ".id")
        try:
            return decode_canonical(path.read_bytes().rstrip(b"\n"), PartyIdentity)
        except FileNotFoundError:
            raise UsageError(f"no identity file for {party_id!r} in {self.root}", code="NO_KEY") from None
        except ConsentLedgerError as exc:
            raise MalformedKeyError(f"{path.name}: {exc}") from None

    def directory(self) -> Directory:
        if not self.root.is_dir():
            return Directory()
        return Directory(self.load_identity(p.stem) for p in sorted(self.root.glob("*.id")))

    def tsa(self, clock: Clock, party_id: str = TSA_PARTY) -> TimestampAuthority:
        key = self.load_key(party_id)
        state = TsaState(party_id, 0, None)
        path = self.root / _STATE
        if path.exists():
            state = decode_canonical(path.read_bytes().rstrip(b"\n"), TsaState)
        return TimestampAuthority(key, clock, state.last_sequence, state.last_wall_time)

    def save_tsa(self, tsa: TimestampAuthority) -> None:
        state = TsaState(tsa.identity.party_id, tsa.last_sequence, tsa.last_wall_time)
        write_atomic(self.root / _STATE, canonical_bytes(state) + b"\n")
