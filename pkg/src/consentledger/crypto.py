"""Identities, Ed25519 signatures, SHA-256 digests and the timestamp authority."""

from __future__ import annotations

import enum
import hashlib
import threading
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .canonical import canonical_bytes, payload_type
from .clock import Clock
from .errors import (
    ClockRegressionError,
    IntegrityError,
    MalformedKeyError,
    MalformedSignatureError,
)

ALGORITHM_ID = "ed25519"
DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


class Role(str, enum.Enum):
    PRINCIPAL = "PRINCIPAL"
    FIDUCIARY = "FIDUCIARY"
    PROCESSOR = "PROCESSOR"
    THIRD_PARTY = "THIRD_PARTY"
    AUDITOR = "AUDITOR"
    AUTHORITY = "AUTHORITY"
    GUARDIAN = "GUARDIAN"
    TSA = "TSA"


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def document_digest(document) -> bytes:
    return digest(canonical_bytes(document))


@payload_type
@dataclass(frozen=True)
class PartyIdentity:
    party_id: str
    role: Role
    public_key: bytes
    key_fingerprint: bytes = field(init=False)

    def __post_init__(self) -> None:
        if not isinstance(self.role, Role):
            raise ValueError(f"invalid role {self.role!r}")
        if not self.party_id:
            raise ValueError("party_id must be non-empty")
        if len(self.public_key) != 32:
            raise MalformedKeyError("public key must be 32 bytes")
        object.__setattr__(self, "key_fingerprint", digest(self.public_key))


@payload_type
@dataclass(frozen=True)
class Signature:
    signer_fingerprint: bytes
    algorithm_id: str
    value: bytes


@dataclass(frozen=True)
class KeyPair:
    """A party's identity together with its private key material."""

    identity: PartyIdentity
    secret: bytes = field(repr=False)

    @property
    def party_id(self) -> str:
        return self.identity.party_id

    def sign(self, payload: bytes) -> Signature:
        return sign(self.secret, payload)


def _private_key(secret: bytes) -> Ed25519PrivateKey:
    if not isinstance(secret, (bytes, bytearray)) or len(secret) != 32:
        raise MalformedKeyError("Ed25519 private key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(bytes(secret))


def _public_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def keypair_from_secret(secret: bytes, role: Role, party_id: str) -> KeyPair:
    pub = _public_bytes(_private_key(secret))
    return KeyPair(PartyIdentity(party_id, Role(role), pub), bytes(secret))


def generate_identity(role: Role, party_id: str | None = None) -> KeyPair:
    role = Role(role)
    key = Ed25519PrivateKey.generate()
    secret = key.private_bytes(
        serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
    )
    pub = _public_bytes(key)
    if party_id is None:
        party_id = f"{role.value.lower()}-{digest(pub)[:6].hex()}"
    return KeyPair(PartyIdentity(party_id, role, pub), secret)


def key_matches(keypair: KeyPair, identity: PartyIdentity) -> bool:
    return (
        keypair.identity == identity
        and _public_bytes(_private_key(keypair.secret)) == identity.public_key
    )


def sign(private_key: bytes | KeyPair, payload: bytes) -> Signature:
    secret = private_key.secret if isinstance(private_key, KeyPair) else private_key
    key = _private_key(secret)
    return Signature(digest(_public_bytes(key)), ALGORITHM_ID, key.sign(bytes(payload)))


@lru_cache(maxsize=65536)
def _ed25519_ok(public_key: bytes, signature: bytes, payload: bytes) -> bool:
    try:
        pub = Ed25519PublicKey.from_public_bytes(public_key)
    except ValueError:
        raise MalformedKeyError("invalid Ed25519 public key") from None
    try:
        pub.verify(signature, payload)
    except InvalidSignature:
        return False
    return True


def verify(identity: PartyIdentity, payload: bytes, sig: Signature) -> bool:
    """True iff ``sig`` is ``identity``'s signature over ``payload``.

    A wrong signer, payload or signature value yields False; a signature
    that cannot be interpreted at all raises MalformedSignatureError.
    """
    if not isinstance(sig, Signature):
        raise MalformedSignatureError("not a signature")
    if sig.algorithm_id != ALGORITHM_ID:
        raise MalformedSignatureError(f"unsupported algorithm {sig.algorithm_id!r}")
    if len(sig.value) != 64 or len(sig.signer_fingerprint) != DIGEST_SIZE:
        raise MalformedSignatureError("signature has the wrong length")
    if sig.signer_fingerprint != identity.key_fingerprint:
        return False
    return _ed25519_ok(identity.public_key, sig.value, bytes(payload))


class Directory:
    """Known identities of one ledger instance, keyed by party id."""

    def __init__(self, identities=()) -> None:
        self._by_id: dict[str, PartyIdentity] = {}
        for ident in identities:
            self.add(ident)

    def add(self, identity: PartyIdentity) -> PartyIdentity:
        if isinstance(identity, KeyPair):
            identity = identity.identity
        existing = self._by_id.get(identity.party_id)
        if existing is not None and existing != identity:
            raise ValueError(f"party id {identity.party_id!r} already bound to another key")
        self._by_id[identity.party_id] = identity
        return identity

    def get(self, party_id: str) -> PartyIdentity | None:
        return self._by_id.get(party_id)

    def require(self, party_id: str, *roles: Role) -> PartyIdentity:
        ident = self._by_id.get(party_id)
        if ident is None:
            raise IntegrityError(f"unknown party {party_id!r}", code="UNKNOWN_PARTY")
        if roles and ident.role not in roles:
            raise IntegrityError(
                f"party {party_id!r} has role {ident.role.value}", code="ROLE_MISMATCH"
            )
        return ident

    def by_fingerprint(self, fingerprint: bytes) -> PartyIdentity | None:
        for ident in self._by_id.values():
            if ident.key_fingerprint == fingerprint:
                return ident
        return None

    def __contains__(self, party_id: object) -> bool:
        return party_id in self._by_id

    def __iter__(self):
        return iter(sorted(self._by_id.values(), key=lambda i: i.party_id))

    def __len__(self) -> int:
        return len(self._by_id)


@payload_type
@dataclass(frozen=True)
class TimestampClaim:
    sequence: int
    wall_time: int
    payload_digest: bytes


@payload_type
@dataclass(frozen=True)
class TimestampToken:
    sequence: int
    wall_time: int
    payload_digest: bytes
    tsa_signature: Signature

    def claim_bytes(self) -> bytes:
        return canonical_bytes(TimestampClaim(self.sequence, self.wall_time, self.payload_digest))

    def orders_before(self, other: TimestampToken) -> bool:
        return self.sequence < other.sequence


class TimestampAuthority:
    """Single-writer simulated TSA: a monotonic counter plus signed wall time."""

    def __init__(self, key: KeyPair, clock: Clock, last_sequence: int = 0,
                 last_wall_time: int | None = None) -> None:
        if key.identity.role is not Role.TSA:
            raise ValueError("timestamp authority key must have role TSA")
        self.key = key
        self.clock = clock
        self.last_sequence = last_sequence
        self.last_wall_time = last_wall_time
        self._lock = threading.Lock()

    @property
    def identity(self) -> PartyIdentity:
        return self.key.identity

    def issue(self, payload_digest: bytes) -> TimestampToken:
        if len(payload_digest) != DIGEST_SIZE:
            raise ValueError("payload digest must be 32 bytes")
        with self._lock:
            now = int(self.clock.now())
            if self.last_wall_time is not None and now < self.last_wall_time:
                raise ClockRegressionError(
                    f"clock reads {now}, last token issued at {self.last_wall_time}"
                )
            seq = self.last_sequence + 1
            claim = canonical_bytes(TimestampClaim(seq, now, payload_digest))
            token = TimestampToken(seq, now, payload_digest, self.key.sign(claim))
            self.last_sequence, self.last_wall_time = seq, now
            return token


def issue_timestamp(tsa: TimestampAuthority, payload_digest: bytes) -> TimestampToken:
    return tsa.issue(payload_digest)


def verify_timestamp(token: TimestampToken, tsa_identity: PartyIdentity,
                     payload_digest: bytes | None = None) -> bool:
    if payload_digest is not None and token.payload_digest != payload_digest:
        return False
    return verify(tsa_identity, token.claim_bytes(), token.tsa_signature)
