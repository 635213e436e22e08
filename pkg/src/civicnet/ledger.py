"""Append-only hash-chained ledger with proof-of-authority quorum signing.

Entries are hashed over their canonical encoding minus signatures; each
committed entry carries at least ``quorum`` validator signatures over that
hash, where quorum = floor(2V/3) + 1. Consensus messaging lives in the
network layer; this module owns entry structure, verification, folds over
the committed chain (consent state, document registry, identity registry),
and the JSONL export format.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Optional

from .canonical import canonical_json
from . import crypto

GENESIS_PREV = b"\x00" * 32

ENTRY_TYPES = frozenset(
    {
        "IdentityRegistered",
        "DocumentIssued",
        "AccessRequested",
        "ConsentGranted",
        "ConsentRevoked",
        "DocumentAccessed",
        "AuthEvent",
        "PolicyRegistered",
        "SchemaRegistered",
    }
)

# Body keys that must be present before a validator will co-sign.
REQUIRED_BODY_KEYS = {
    "IdentityRegistered": {"record"},
    "DocumentIssued": {"document_id", "schema_ref", "issuer", "payload_hash", "envelope_cid"},
    "AccessRequested": {"request_id", "requester", "grantor"},
    "ConsentGranted": {"consent_id", "grantor", "grantee", "document_id", "scope"},
    "ConsentRevoked": {"grantor", "grantee", "document_id"},
    "DocumentAccessed": {"document_id", "grantee"},
    "AuthEvent": {"kind", "subject"},
    "PolicyRegistered": {"policy_id", "owner", "source_hash", "trigger"},
    "SchemaRegistered": {"country", "doc_type", "schema_hash"},
}


class QuorumNotReached(Exception):
    pass


class ChainMismatch(Exception):
    pass


class ValidationRejected(Exception):
    def __init__(self, reasons):
        super().__init__(f"rejected: {reasons}")
        self.reasons = reasons


@dataclass(frozen=True)
class LedgerEntry:
    index: int
    timestamp: int
    prev_hash: bytes
    entry_type: str
    body: dict
    proposer: bytes
    signatures: dict[bytes, bytes]
    entry_hash: bytes

    @staticmethod
    def compute_hash(
        index: int, timestamp: int, prev_hash: bytes, entry_type: str, body: dict, proposer: bytes
    ) -> bytes:
        return hashlib.sha256(
            canonical_json(
                {
                    "body": body,
                    "entry_type": entry_type,
                    "index": index,
                    "prev_hash": prev_hash.hex(),
                    "proposer": proposer.hex(),
                    "timestamp": timestamp,
                }
            )
        ).digest()

    def to_wire(self) -> dict:
        return {
            "body": self.body,
            "entry_hash": self.entry_hash.hex(),
            "entry_type": self.entry_type,
            "index": self.index,
            "prev_hash": self.prev_hash.hex(),
            "proposer": self.proposer.hex(),
            "signatures": {v.hex(): s.hex() for v, s in sorted(self.signatures.items())},
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "LedgerEntry":
        return cls(
            index=int(wire["index"]),
            timestamp=int(wire["timestamp"]),
            prev_hash=bytes.fromhex(wire["prev_hash"]),
            entry_type=wire["entry_type"],
            body=wire["body"],
            proposer=bytes.fromhex(wire["proposer"]),
            signatures={
                bytes.fromhex(v): bytes.fromhex(s) for v, s in wire["signatures"].items()
            },
            entry_hash=bytes.fromhex(wire["entry_hash"]),
        )


@dataclass
class ValidatorSet:
    validators: list[bytes]  # ordered authority identity ids
    keys: dict[bytes, bytes]  # identity id -> signing public key

    def __post_init__(self):
        if not self.validators:
            raise ValueError("validator set must not be empty")

    @property
    def quorum(self) -> int:
        return (2 * len(self.validators)) // 3 + 1

    def leader_for(self, index: int) -> bytes:
        return self.validators[index % len(self.validators)]


def make_entry(
    index: int,
    timestamp: int,
    prev_hash: bytes,
    entry_type: str,
    body: dict,
    proposer: bytes,
) -> LedgerEntry:
    entry_hash = LedgerEntry.compute_hash(index, timestamp, prev_hash, entry_type, body, proposer)
    return LedgerEntry(
        index=index,
        timestamp=timestamp,
        prev_hash=prev_hash,
        entry_type=entry_type,
        body=body,
        proposer=proposer,
        signatures={},
        entry_hash=entry_hash,
    )


def check_body(entry_type: str, body: dict) -> Optional[str]:
    if entry_type not in ENTRY_TYPES:
        return f"unknown entry type {entry_type!r}"
    missing = REQUIRED_BODY_KEYS[entry_type] - set(body)
    if missing:
        return f"body missing keys {sorted(missing)}"
    return None


def validate_draft(
    entry: LedgerEntry,
    expected_index: int,
    expected_prev: bytes,
    min_timestamp: int,
    vset: ValidatorSet,
) -> Optional[str]:
    """A validator's pre-signing checks; returns a rejection reason or None."""
    if entry.index != expected_index:
        return f"index {entry.index}, expected {expected_index}"
    if entry.prev_hash != expected_prev:
        return "stale prev_hash"
    if entry.timestamp < min_timestamp:
        return "timestamp regressed"
    reason = check_body(entry.entry_type, entry.body)
    if reason:
        return reason
    if entry.proposer != vset.leader_for(entry.index):
        return "proposer is not the leader for this index"
    recomputed = LedgerEntry.compute_hash(
        entry.index, entry.timestamp, entry.prev_hash, entry.entry_type, entry.body, entry.proposer
    )
    if recomputed != entry.entry_hash:
        return "entry hash mismatch"
    return None


def count_valid_signatures(entry: LedgerEntry, vset: ValidatorSet) -> int:
    count = 0
    for validator_id, signature in entry.signatures.items():
        key = vset.keys.get(validator_id)
        if key is None:
            continue
        try:
            if crypto.verify(key, entry.entry_hash, signature):
                count += 1
        except crypto.MalformedSignature:
            continue
    return count


def find_invalid_signature(entry: LedgerEntry, vset: ValidatorSet) -> Optional[str]:
    """Any non-verifying or unknown-validator signature is tamper evidence."""
    for validator_id, signature in sorted(entry.signatures.items()):
        key = vset.keys.get(validator_id)
        if key is None:
            return f"signature from unknown validator {validator_id.hex()[:8]}"
        try:
            if not crypto.verify(key, entry.entry_hash, signature):
                return f"invalid signature from {validator_id.hex()[:8]}"
        except crypto.MalformedSignature:
            return f"malformed signature from {validator_id.hex()[:8]}"
    return None


def verify_entry(
    entry: LedgerEntry, prev: Optional[LedgerEntry], vset: ValidatorSet
) -> Optional[str]:
    if prev is None:
        if entry.index != 0:
            return f"first entry has index {entry.index}"
        if entry.prev_hash != GENESIS_PREV:
            return "genesis prev_hash must be 32 zero bytes"
    else:
        if entry.index != prev.index + 1:
            return "index not contiguous"
        if entry.prev_hash != prev.entry_hash:
            return "hash chain broken"
        if entry.timestamp < prev.timestamp:
            return "timestamp regressed"
    reason = check_body(entry.entry_type, entry.body)
    if reason:
        return reason
    recomputed = LedgerEntry.compute_hash(
        entry.index, entry.timestamp, entry.prev_hash, entry.entry_type, entry.body, entry.proposer
    )
    if recomputed != entry.entry_hash:
        return "entry hash mismatch"
    if count_valid_signatures(entry, vset) < vset.quorum:
        return "insufficient quorum signatures"
    reason = find_invalid_signature(entry, vset)
    if reason:
        return reason
    return None


def verify_chain(
    entries: list[LedgerEntry], vset: ValidatorSet
) -> Optional[tuple[int, str]]:
    """Returns None when the chain verifies, else (first bad index, reason)."""
    prev: Optional[LedgerEntry] = None
    for i, entry in enumerate(entries):
        reason = verify_entry(entry, prev, vset)
        if reason:
            return (i, reason)
        prev = entry
    return None


class Replica:
    """One node's copy of the chain; out-of-order commits are buffered."""

    def __init__(self, vset: ValidatorSet):
        self.vset = vset
        self.entries: list[LedgerEntry] = []
        self._buffer: dict[int, LedgerEntry] = {}
        self._observers: list = []

    @property
    def next_index(self) -> int:
        return len(self.entries)

    @property
    def tip_hash(self) -> bytes:
        return self.entries[-1].entry_hash if self.entries else GENESIS_PREV

    @property
    def tip_timestamp(self) -> int:
        return self.entries[-1].timestamp if self.entries else 0

    def add_observer(self, fn) -> None:
        self._observers.append(fn)

    def apply(self, entry: LedgerEntry) -> str:
        """Returns 'applied', 'buffered', 'duplicate', or 'rejected:<reason>'."""
        if entry.index < self.next_index:
            return "duplicate"
        if entry.index > self.next_index:
            self._buffer[entry.index] = entry
            return "buffered"
        prev = self.entries[-1] if self.entries else None
        reason = verify_entry(entry, prev, self.vset)
        if reason:
            return f"rejected:{reason}"
        self.entries.append(entry)
        for fn in self._observers:
            fn(entry)
        while self.next_index in self._buffer:
            pending = self._buffer.pop(self.next_index)
            if self.apply(pending).startswith("rejected"):
                break
        return "applied"

    def missing_before(self, index: int) -> Optional[tuple[int, int]]:
        if index > self.next_index:
            return (self.next_index, index)
        return None


# --- folds over committed entries -------------------------------------------


@dataclass
class ConsentRecord:
    grantor: bytes
    grantee: bytes
    document_id: str
    scope: str  # "read" | "forward"
    granted_at: int
    expires_at: Optional[int]
    status: str  # "active" | "revoked" | "expired"
    consent_id: str
    entry_index: int

    def to_wire(self) -> dict:
        return {
            "consent_id": self.consent_id,
            "document_id": self.document_id,
            "expires_at": self.expires_at,
            "granted_at": self.granted_at,
            "grantee": self.grantee.hex(),
            "grantor": self.grantor.hex(),
            "scope": self.scope,
            "status": self.status,
        }


def consent_records(entries: Iterable[LedgerEntry], now: int) -> list[ConsentRecord]:
    """Fold grant/revoke entries into per-(grantor, grantee, document) state."""
    state: dict[tuple[bytes, bytes, str], ConsentRecord] = {}
    for entry in entries:
        if entry.entry_type == "ConsentGranted":
            b = entry.body
            key = (bytes.fromhex(b["grantor"]), bytes.fromhex(b["grantee"]), b["document_id"])
            state[key] = ConsentRecord(
                grantor=key[0],
                grantee=key[1],
                document_id=b["document_id"],
                scope=b["scope"],
                granted_at=entry.timestamp,
                expires_at=b.get("expires_at"),
                status="active",
                consent_id=b["consent_id"],
                entry_index=entry.index,
            )
        elif entry.entry_type == "ConsentRevoked":
            b = entry.body
            key = (bytes.fromhex(b["grantor"]), bytes.fromhex(b["grantee"]), b["document_id"])
            if key in state:
                state[key].status = "revoked"
    records = []
    for record in state.values():
        if record.status == "active" and record.expires_at is not None and now >= record.expires_at:
            record.status = "expired"
        records.append(record)
    records.sort(key=lambda r: r.entry_index)
    return records


def active_consent(
    entries: Iterable[LedgerEntry],
    grantor: bytes,
    grantee: bytes,
    document_id: str,
    now: int,
) -> Optional[ConsentRecord]:
    for record in consent_records(entries, now):
        if (
            record.grantor == grantor
            and record.grantee == grantee
            and record.document_id == document_id
            and record.status == "active"
        ):
            return record
    return None


_ACTOR_BODY_KEYS = ("grantor", "grantee", "requester", "issuer", "subject", "identity")


def entry_actors(entry: LedgerEntry) -> set[str]:
    actors = {entry.proposer.hex()}
    for key in _ACTOR_BODY_KEYS:
        value = entry.body.get(key)
        if isinstance(value, str):
            actors.add(value)
    record = entry.body.get("record")
    if isinstance(record, dict) and "identity_id" in record:
        actors.add(record["identity_id"])
    return actors


def query(
    entries: list[LedgerEntry],
    entry_type: Optional[str] = None,
    actor: Optional[str] = None,
    document_id: Optional[str] = None,
    index_range: Optional[tuple[int, int]] = None,
) -> list[LedgerEntry]:
    """Order-preserving filter over committed entries; index_range is inclusive."""
    out = []
    for entry in entries:
        if entry_type is not None and entry.entry_type != entry_type:
            continue
        if actor is not None and actor not in entry_actors(entry):
            continue
        if document_id is not None and entry.body.get("document_id") != document_id:
            continue
        if index_range is not None and not (index_range[0] <= entry.index <= index_range[1]):
            continue
        out.append(entry)
    return out


def export_jsonl(entries: list[LedgerEntry]) -> bytes:
    return b"".join(canonical_json(e.to_wire()) + b"\n" for e in entries)


def import_jsonl(data: bytes) -> list[LedgerEntry]:
    import json

    return [LedgerEntry.from_wire(json.loads(line)) for line in data.splitlines() if line.strip()]


def validator_set_from_entries(entries: list[LedgerEntry]) -> Optional[ValidatorSet]:
    """Rebuild the validator set from bootstrap registrations flagged validator=true."""
    validators: list[bytes] = []
    keys: dict[bytes, bytes] = {}
    for entry in entries:
        if entry.entry_type != "IdentityRegistered":
            continue
        record = entry.body.get("record", {})
        if entry.body.get("validator") and "identity_id" in record:
            identity_id = bytes.fromhex(record["identity_id"])
            if identity_id not in keys:
                validators.append(identity_id)
                keys[identity_id] = bytes.fromhex(record["sign_public"])
    if not validators:
        return None
    return ValidatorSet(validators=validators, keys=keys)


class LocalLedgerWriter:
    """Commits entries directly with every validator key in-process.

    Used by unit tests and by single-node (serve) deployments where the
    validator set is local; the network writer in the simulation layer speaks
    the same ``submit`` interface.
    """

    def __init__(self, replica: Replica, validator_keypairs: dict[bytes, crypto.KeyPair], clock):
        self.replica = replica
        self._keypairs = validator_keypairs
        self._clock = clock  # callable returning virtual ms

    def submit(self, entry_type: str, body: dict) -> LedgerEntry:
        reason = check_body(entry_type, body)
        if reason:
            raise ValidationRejected({"local": reason})
        index = self.replica.next_index
        proposer = self.replica.vset.leader_for(index)
        timestamp = max(self._clock(), self.replica.tip_timestamp)
        entry = make_entry(index, timestamp, self.replica.tip_hash, entry_type, body, proposer)
        signatures = {}
        for validator_id in self.replica.vset.validators:
            keypair = self._keypairs.get(validator_id)
            if keypair is not None:
                signatures[validator_id] = keypair.sign(entry.entry_hash)
        if len(signatures) < self.replica.vset.quorum:
            raise QuorumNotReached(
                f"{len(signatures)} of {self.replica.vset.quorum} required signatures"
            )
        committed = LedgerEntry(
            index=entry.index,
            timestamp=entry.timestamp,
            prev_hash=entry.prev_hash,
            entry_type=entry.entry_type,
            body=entry.body,
            proposer=entry.proposer,
            signatures=signatures,
            entry_hash=entry.entry_hash,
        )
        result = self.replica.apply(committed)
        if result != "applied":
            raise ChainMismatch(result)
        return committed
