"""Append-only, hash-chained proof-of-consent ledger.

On disk a ledger is one canonical entry per line plus a ``.head`` sidecar
holding ``<head_index> <head_hash_hex>`` for truncation and crash
detection. Lines are parsed strictly: a line that is not byte-identical
to the canonical encoding of what it parses to counts as tampered.
"""

from __future__ import annotations

import enum
import os
import threading
from collections.abc import Callable, Iterator
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any

from .canonical import canonical_bytes, decode_canonical, payload_type
from .consent import ConsentEvent, EventKind, WithdrawalPropagation
from .crypto import (
    ZERO_DIGEST,
    Directory,
    KeyPair,
    Role,
    Signature,
    TimestampToken,
    digest,
    verify,
)
from .errors import (
    ChainStructureError,
    ConsentLedgerError,
    DomainError,
    ForkedConsentError,
    IntegrityError,
    UsageError,
)
from .records import (
    BreachRecord,
    Certificate,
    CorrectionEvent,
    DisclosureRestriction,
    ErasureReceipt,
    ProcessingEvent,
)


class PayloadKind(str, enum.Enum):
    CONSENT = "CONSENT"
    PROPAGATION = "PROPAGATION"
    PROCESSING = "PROCESSING"
    ERASURE = "ERASURE"
    BREACH = "BREACH"
    CORRECTION = "CORRECTION"
    ANCHOR = "ANCHOR"
    RESTRICTION = "RESTRICTION"
    CERTIFICATE = "CERTIFICATE"


@payload_type
@dataclass(frozen=True)
class AnchorClaim:
    head_index: int
    head_hash: bytes
    fiduciary: str


@payload_type
@dataclass(frozen=True)
class AnchorRecord:
    """Fiduciary-signed checkpoint of the chain head, optionally countersigned."""

    head_index: int
    head_hash: bytes
    fiduciary: str
    anchor_signature: Signature
    countersigner: str | None = None
    countersignature: Signature | None = None

    def claim_bytes(self) -> bytes:
        return canonical_bytes(AnchorClaim(self.head_index, self.head_hash, self.fiduciary))

    def verification_problem(self, directory: Directory) -> str | None:
        ident = directory.get(self.fiduciary)
        if ident is None or ident.role is not Role.FIDUCIARY:
            return f"unknown fiduciary {self.fiduciary!r}"
        claim = self.claim_bytes()
        if not verify(ident, claim, self.anchor_signature):
            return "anchor signature does not verify"
        if (self.countersigner is None) != (self.countersignature is None):
            return "countersigner and countersignature must appear together"
        if self.countersigner is not None:
            counter = directory.get(self.countersigner)
            if counter is None or counter.role not in (Role.AUDITOR, Role.AUTHORITY):
                return f"unknown countersigner {self.countersigner!r}"
            if not verify(counter, claim, self.countersignature):
                return "countersignature does not verify"
        return None


KIND_TYPES: dict[PayloadKind, type] = {
    PayloadKind.CONSENT: ConsentEvent,
    PayloadKind.PROPAGATION: WithdrawalPropagation,
    PayloadKind.PROCESSING: ProcessingEvent,
    PayloadKind.ERASURE: ErasureReceipt,
    PayloadKind.BREACH: BreachRecord,
    PayloadKind.CORRECTION: CorrectionEvent,
    PayloadKind.ANCHOR: AnchorRecord,
    PayloadKind.RESTRICTION: DisclosureRestriction,
    PayloadKind.CERTIFICATE: Certificate,
}
TYPE_KINDS = {cls: kind for kind, cls in KIND_TYPES.items()}


def kind_of(payload: Any) -> PayloadKind:
    try:
        return TYPE_KINDS[type(payload)]
    except KeyError:
        raise DomainError(f"{type(payload).__name__} cannot be stored in the ledger",
                          code="UNKNOWN_PAYLOAD") from None


def compute_entry_hash(index: int, prev_hash: bytes, kind: PayloadKind | str, payload_digest: bytes) -> bytes:
    tag = PayloadKind(kind).value.encode("ascii")
    return digest(index.to_bytes(8, "big") + prev_hash + len(tag).to_bytes(2, "big") + tag + payload_digest)


@payload_type
@dataclass(frozen=True)
class LedgerEntry:
    index: int
    prev_hash: bytes
    payload_kind: PayloadKind
    payload_digest: bytes
    payload: bytes
    entry_hash: bytes

    @classmethod
    def build(cls, index: int, prev_hash: bytes, kind: PayloadKind, payload: bytes) -> LedgerEntry:
        pd = digest(payload)
        return cls(index, prev_hash, kind, pd, payload, compute_entry_hash(index, prev_hash, kind, pd))


@dataclass(frozen=True)
class ChainVerdict:
    ok: bool
    first_bad_index: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


@lru_cache(maxsize=8192)
def _parse_line(line: bytes) -> LedgerEntry:
    return decode_canonical(line, LedgerEntry)


@lru_cache(maxsize=8192)
def _parse_payload(kind: PayloadKind, payload: bytes) -> Any:
    return decode_canonical(payload, KIND_TYPES[kind])


class Ledger:
    """One fiduciary's ledger. Single writer, many readers.

    ``directory`` supplies the identities needed to verify embedded
    signatures. With ``path`` set, appends are persisted immediately.
    """

    def __init__(self, directory: Directory, path: str | Path | None = None,
                 lines: list[bytes] | None = None) -> None:
        self.directory = directory
        self.path = Path(path) if path is not None else None
        self._lines: list[bytes] = list(lines or [])
        self._lock = threading.Lock()

    @classmethod
    def open(cls, path: str | Path, directory: Directory) -> Ledger:
        path = Path(path)
        lines: list[bytes] = []
        if path.exists():
            lines = split_lines(path.read_bytes())
        return cls(directory, path, lines)

    @classmethod
    def from_bytes(cls, data: bytes, directory: Directory) -> Ledger:
        return cls(directory, None, split_lines(data))

    def to_bytes(self) -> bytes:
        return b"".join(line + b"\n" for line in self._lines)

    @property
    def head_file(self) -> Path | None:
        return self.path.with_name(self.path.name + ".head") if self.path is not None else None

    def __len__(self) -> int:
        return len(self._lines)

    @property
    def raw_lines(self) -> tuple[bytes, ...]:
        return tuple(self._lines)

    def entry(self, index: int) -> LedgerEntry:
        if not 0 <= index < len(self._lines):
            raise UsageError(f"index {index} outside [0, {len(self._lines)})", code="OUT_OF_RANGE")
        try:
            return _parse_line(self._lines[index])
        except ConsentLedgerError as exc:
            raise IntegrityError(f"entry {index} is corrupt: {exc}", code="CORRUPT_ENTRY") from None

    def payload(self, index: int) -> Any:
        entry = self.entry(index)
        try:
            return _parse_payload(entry.payload_kind, entry.payload)
        except ConsentLedgerError as exc:
            raise IntegrityError(f"payload {index} is corrupt: {exc}", code="CORRUPT_ENTRY") from None

    def items(self, kind: PayloadKind | None = None) -> Iterator[tuple[int, Any]]:
        for i in range(len(self._lines)):
            entry = self.entry(i)
            if kind is None or entry.payload_kind is kind:
                yield i, self.payload(i)

    @property
    def head_index(self) -> int:
        return len(self._lines) - 1

    @property
    def head_hash(self) -> bytes:
        return self.entry(self.head_index).entry_hash if self._lines else ZERO_DIGEST

    def append(self, payload: Any) -> LedgerEntry:
        """Validate ``payload`` and append it as the new head.

        Anchor records are validated against the current chain. On any
        failure the ledger is left unchanged.
        """
        kind = kind_of(payload)
        problem = payload.verification_problem(self.directory)
        if problem is None and kind is PayloadKind.ANCHOR:
            problem = self._anchor_problem(payload, len(self._lines))
        if problem is not None:
            raise DomainError(f"rejected {kind.value}: {problem}", code="INVALID_PAYLOAD")
        with self._lock:
            prev = self.head_hash
            entry = LedgerEntry.build(len(self._lines), prev, kind, canonical_bytes(payload))
            line = canonical_bytes(entry)
            if self.path is not None:
                self._persist(line, entry)
            self._lines.append(line)
        return entry

    def _persist(self, line: bytes, entry: LedgerEntry) -> None:
        with open(self.path, "ab") as fh:
            fh.write(line + b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        write_atomic(self.head_file, f"{entry.index} {entry.entry_hash.hex()}\n".encode())

    def _anchor_problem(self, anchor: AnchorRecord, position: int) -> str | None:
        if not 0 <= anchor.head_index < position:
            return "anchor points outside the preceding chain"
        try:
            pinned = self.entry(anchor.head_index).entry_hash
        except ConsentLedgerError:
            return "anchored entry is corrupt"
        if pinned != anchor.head_hash:
            return f"anchored hash does not match entry {anchor.head_index}"
        return None

    def verify_chain(self, from_index: int = 0, to_index: int | None = None) -> ChainVerdict:
        """Check hash links, payload digests and embedded signatures over a range."""
        n = len(self._lines)
        if to_index is None:
            to_index = n - 1
        if n == 0 and from_index == 0 and to_index == -1:
            return ChainVerdict(True)
        if not 0 <= from_index <= to_index < n:
            raise UsageError(f"range [{from_index}, {to_index}] outside ledger of {n}", code="OUT_OF_RANGE")
        if from_index == 0:
            prev = ZERO_DIGEST
        else:
            try:
                prev = _parse_line(self._lines[from_index - 1]).entry_hash
            except ConsentLedgerError:
                return ChainVerdict(False, from_index, "predecessor entry is corrupt")
        for i in range(from_index, to_index + 1):
            problem = self._entry_problem(i, prev)
            if problem is not None:
                return ChainVerdict(False, i, problem)
            prev = _parse_line(self._lines[i]).entry_hash
        return ChainVerdict(True)

    def _entry_problem(self, i: int, prev: bytes) -> str | None:
        try:
            entry = _parse_line(self._lines[i])
        except ConsentLedgerError as exc:
            return f"unparseable entry: {exc}"
        if entry.index != i:
            return f"entry claims index {entry.index}"
        if entry.prev_hash != prev:
            return "broken hash link"
        if digest(entry.payload) != entry.payload_digest:
            return "payload digest mismatch"
        if compute_entry_hash(i, entry.prev_hash, entry.payload_kind, entry.payload_digest) != entry.entry_hash:
            return "entry hash mismatch"
        try:
            payload = _parse_payload(entry.payload_kind, entry.payload)
        except ConsentLedgerError as exc:
            return f"unparseable payload: {exc}"
        try:
            problem = payload.verification_problem(self.directory)
        except ConsentLedgerError as exc:
            problem = str(exc)
        if problem is None and entry.payload_kind is PayloadKind.ANCHOR:
            problem = self._anchor_problem(payload, i)
        return problem

    def check_head_file(self) -> ChainVerdict:
        """Compare the sidecar head record with the entries actually present."""
        if self.head_file is None or not self.head_file.exists():
            return ChainVerdict(not self._lines, 0 if self._lines else None,
                                "" if not self._lines else "head file missing")
        try:
            idx_text, hash_text = self.head_file.read_text().split()
            recorded = (int(idx_text), bytes.fromhex(hash_text))
        except ValueError:
            return ChainVerdict(False, 0, "head file unreadable")
        if recorded[0] != self.head_index:
            bad = min(recorded[0], self.head_index) + 1
            return ChainVerdict(False, max(bad, 0),
                                f"head file records index {recorded[0]}, ledger ends at {self.head_index}")
        try:
            actual = self.head_hash
        except ConsentLedgerError:
            return ChainVerdict(False, self.head_index, "head entry is corrupt")
        if recorded[1] != actual:
            return ChainVerdict(False, self.head_index, "head hash differs from head file")
        return ChainVerdict(True)


def split_lines(data: bytes) -> list[bytes]:
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return lines


def write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def append(ledger: Ledger, payload: Any) -> LedgerEntry:
    return ledger.append(payload)


def verify_chain(ledger: Ledger, from_index: int = 0, to_index: int | None = None) -> ChainVerdict:
    return ledger.verify_chain(from_index, to_index)


# ---------------------------------------------------------------- consent resolution


class ConsentStatus(str, enum.Enum):
    ACTIVE = "ACTIVE"
    WITHDRAWN = "WITHDRAWN"
    NONE = "NONE"


@dataclass(frozen=True)
class ConsentResolution:
    status: ConsentStatus
    event: ConsentEvent | None = None
    index: int | None = None

    @property
    def timestamp(self) -> TimestampToken | None:
        return self.event.timestamp if self.event is not None else None


@dataclass(frozen=True)
class ConsentChain:
    """One ESTABLISH and its successors, in supersedes order (ledger indices)."""

    indices: tuple[int, ...]
    events: tuple[ConsentEvent, ...]

    @property
    def root(self) -> ConsentEvent:
        return self.events[0]

    @property
    def leaf(self) -> ConsentEvent:
        return self.events[-1]

    @property
    def leaf_index(self) -> int:
        return self.indices[-1]

    @property
    def withdrawn(self) -> bool:
        return self.leaf.kind is EventKind.WITHDRAW

    @property
    def governing(self) -> tuple[int, ConsentEvent]:
        """The latest form-bearing event of the chain (the leaf unless withdrawn)."""
        for idx, ev in zip(reversed(self.indices), reversed(self.events)):
            if ev.form is not None:
                return idx, ev
        raise IntegrityError("consent chain has no form", code="INVALID_TRANSITION")


class ConsentIndex:
    """Consent events of a ledger grouped into supersedes chains."""

    def __init__(self, ledger: Ledger) -> None:
        self.by_digest: dict[bytes, tuple[int, ConsentEvent]] = {}
        self.by_pair: dict[tuple[str, str], list[tuple[int, ConsentEvent]]] = {}
        self.children: dict[bytes, list[int]] = {}
        self._events: dict[int, ConsentEvent] = {}
        for idx, ev in ledger.items(PayloadKind.CONSENT):
            self._events[idx] = ev
            self.by_digest.setdefault(ev.digest, (idx, ev))
            self.by_pair.setdefault(ev.pair, []).append((idx, ev))
            if ev.supersedes is not None:
                self.children.setdefault(ev.supersedes, []).append(idx)

    def event_at(self, index: int) -> ConsentEvent:
        return self._events[index]

    def events(self) -> list[tuple[int, ConsentEvent]]:
        return sorted(self._events.items())

    def chains(self, pair: tuple[str, str]) -> list[ConsentChain]:
        """Linear chains for ``pair``; raises on forks and malformed links."""
        events = self.by_pair.get(pair, [])
        digests = {ev.digest for _, ev in events}
        for idx, ev in events:
            if ev.supersedes is None:
                continue
            if ev.supersedes not in digests:
                raise ChainStructureError(f"entry {idx} supersedes an unknown consent event",
                                          (idx,), code="DANGLING_SUPERSEDES")
            parent_idx, parent = self.by_digest[ev.supersedes]
            if parent.kind is EventKind.WITHDRAW:
                raise ChainStructureError(f"entry {idx} continues a withdrawn consent",
                                          (idx, parent_idx), code="CONSENT_TERMINATED")
        for idx, ev in events:
            kids = self.children.get(ev.digest, [])
            if len(kids) > 1:
                a, b = sorted(kids)[:2]
                raise ForkedConsentError(
                    f"entries {a} and {b} both supersede entry {idx}", (idx, a, b))
        out = []
        for idx, ev in events:
            if ev.kind is not EventKind.ESTABLISH:
                continue
            indices, chain = [idx], [ev]
            while True:
                kids = self.children.get(chain[-1].digest, [])
                if not kids:
                    break
                indices.append(kids[0])
                chain.append(self._events[kids[0]])
            out.append(ConsentChain(tuple(indices), tuple(chain)))
        active = [c for c in out if not c.withdrawn]
        if len(active) > 1:
            a, b = active[0].indices[0], active[1].indices[0]
            raise ForkedConsentError(
                f"entries {a} and {b} are concurrently active consents for one pair", (a, b))
        return out

    def chain_of(self, event_digest: bytes) -> ConsentChain | None:
        """The chain containing ``event_digest`` (walked without fork checks)."""
        hit = self.by_digest.get(event_digest)
        if hit is None:
            return None
        idx, ev = hit
        up_i, up = [idx], [ev]
        while up[-1].supersedes is not None and up[-1].supersedes in self.by_digest:
            pi, pe = self.by_digest[up[-1].supersedes]
            up_i.append(pi)
            up.append(pe)
        indices, events = list(reversed(up_i)), list(reversed(up))
        while True:
            kids = sorted(self.children.get(events[-1].digest, []))
            if not kids:
                break
            indices.append(kids[0])
            events.append(self._events[kids[0]])
        return ConsentChain(tuple(indices), tuple(events))

    def resolve(self, pair: tuple[str, str]) -> ConsentResolution:
        chains = self.chains(pair)
        if not chains:
            return ConsentResolution(ConsentStatus.NONE)
        for c in chains:
            if not c.withdrawn:
                return ConsentResolution(ConsentStatus.ACTIVE, c.leaf, c.leaf_index)
        last = max(chains, key=lambda c: c.leaf_index)
        return ConsentResolution(ConsentStatus.WITHDRAWN, last.leaf, last.leaf_index)

    def check_all(self) -> list[tuple[str, str, tuple[int, ...]]]:
        """Structural problems across every pair as ``(code, message, indices)``."""
        problems = []
        for pair in sorted(self.by_pair):
            try:
                self.chains(pair)
            except ChainStructureError as exc:
                problems.append((exc.code, str(exc), exc.indices))
        return problems


def latest_consent(ledger: Ledger, principal: str, fiduciary: str) -> ConsentResolution:
    """The latest consent both parties agree on for the pair.

    Raises ForkedConsentError when two events supersede the same event or
    two chains are active at once.
    """
    return ConsentIndex(ledger).resolve((principal, fiduciary))


# ---------------------------------------------------------------- proofs and anchors


@payload_type
@dataclass(frozen=True)
class ProofLink:
    payload_kind: PayloadKind
    payload_digest: bytes


@payload_type
@dataclass(frozen=True)
class InclusionProof:
    index: int
    prev_hash: bytes
    payload_kind: PayloadKind
    payload: bytes
    links: tuple[ProofLink, ...]

    @property
    def head_index(self) -> int:
        return self.index + len(self.links)


def inclusion_proof(ledger: Ledger, index: int) -> InclusionProof:
    """Hash-link path from entry ``index`` to the current head."""
    entry = ledger.entry(index)
    links = []
    for i in range(index + 1, len(ledger)):
        e = ledger.entry(i)
        links.append(ProofLink(e.payload_kind, e.payload_digest))
    return InclusionProof(index, entry.prev_hash, entry.payload_kind, entry.payload, tuple(links))


def verify_inclusion(head_hash: bytes, proof: InclusionProof) -> bool:
    h = compute_entry_hash(proof.index, proof.prev_hash, proof.payload_kind, digest(proof.payload))
    for offset, link in enumerate(proof.links, start=1):
        h = compute_entry_hash(proof.index + offset, h, link.payload_kind, link.payload_digest)
    return h == head_hash


def anchor(ledger: Ledger, fiduciary_key: KeyPair, *, countersign_key: KeyPair | None = None,
           publish: Callable[[AnchorRecord], None] | None = None) -> AnchorRecord:
    """Sign the current head, append the checkpoint, then hand it to ``publish``."""
    if not len(ledger):
        raise DomainError("nothing to anchor", code="EMPTY_LEDGER")
    verdict = ledger.verify_chain()
    if not verdict.ok:
        raise IntegrityError(f"refusing to anchor: entry {verdict.first_bad_index}: {verdict.reason}",
                             code="CHAIN_INVALID")
    claim = canonical_bytes(AnchorClaim(ledger.head_index, ledger.head_hash, fiduciary_key.party_id))
    record = AnchorRecord(
        ledger.head_index, ledger.head_hash, fiduciary_key.party_id, fiduciary_key.sign(claim),
        countersign_key.party_id if countersign_key else None,
        countersign_key.sign(claim) if countersign_key else None,
    )
    ledger.append(record)
    if publish is not None:
        publish(record)
    return record
