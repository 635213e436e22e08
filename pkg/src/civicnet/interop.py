"""Cross-country schema interop: semantic type detection, field mapping,
record transformation, the authenticated gateway channel, and the legacy
system adapter.

Detection is an ordered list of deterministic rules (regex plus checksum
checks) applied per value with a majority vote over the sample column; no
model inference is involved, so results are reproducible byte-for-byte.
Matching scores pairs with

    score = w_name * name_similarity + w_type * type_match + w_value * value_overlap

where name_similarity is the larger of normalized Levenshtein similarity and
a synonym-table hit, type_match compares detected column types, and
value_overlap is the Jaccard similarity of character-class profiles. Pairs
are assigned greedily by descending score with a lexicographic tie-break and
a cutoff threshold tau.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .canonical import canonical_json
from . import crypto

DEFAULT_WEIGHTS = (0.5, 0.3, 0.2)
DEFAULT_TAU = 0.6


class SemanticType(str, Enum):
    PERSON_NAME = "PersonName"
    DATE_ISO = "DateISO"
    NATIONAL_ID = "NationalId"
    SOCIAL_SECURITY_NUMBER = "SocialSecurityNumber"
    ADDRESS = "Address"
    EMAIL = "Email"
    COUNTRY_CODE = "CountryCode"
    PHONE_NUMBER = "PhoneNumber"
    FREE_TEXT = "FreeText"


class MissingCorpus(Exception):
    def __init__(self, country: str, doc_type: str):
        super().__init__(f"no corpus for ({country}, {doc_type})")
        self.country = country
        self.doc_type = doc_type


class RequiredFieldMissing(Exception):
    def __init__(self, fields: list[str]):
        super().__init__(f"required target fields missing: {fields}")
        self.fields = fields


class SchemaValidationError(Exception):
    def __init__(self, reasons: dict[str, str]):
        super().__init__(f"record does not conform: {reasons}")
        self.reasons = reasons


# --- semantic type detection ---------------------------------------------------

_DATE_PATTERNS = (
    re.compile(r"^(\d{4})-(\d{2})-(\d{2})$"),
    re.compile(r"^(\d{2})/(\d{2})/(\d{4})$"),
    re.compile(r"^(\d{2})\.(\d{2})\.(\d{4})$"),
)

_EMAIL_RE = re.compile(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}$")
_COUNTRY_RE = re.compile(r"^[A-Z]{2}$")
_PHONE_RE = re.compile(r"^\+\d{7,15}$")
_SSN_RE = re.compile(r"^[12]\d{10}$")
_NATIONAL_ID_RE = re.compile(r"^(?:\d{11}|[A-Z]{1,3}\d{6,9})$")
_ADDRESS_RE = re.compile(r"^\D+\s\d+[a-zA-Z]?,\s?.+$")


def _is_person_name(value: str) -> bool:
    # capitalized, letters plus name punctuation, 2..64 chars, any script
    if not (2 <= len(value) <= 64) or not value[0].isalpha() or not value[0].isupper():
        return False
    return all(ch.isalpha() or ch in "'- " for ch in value)


def _is_plausible_date(value: str) -> bool:
    for pat in _DATE_PATTERNS:
        m = pat.match(value)
        if not m:
            continue
        parts = [int(g) for g in m.groups()]
        year, month, day = (parts[0], parts[1], parts[2]) if pat is _DATE_PATTERNS[0] else (
            parts[2],
            parts[1],
            parts[0],
        )
        if 1 <= month <= 12 and 1 <= day <= 31 and 1850 <= year <= 2200:
            return True
    return False


def _ssn_checksum_ok(value: str) -> bool:
    return int(value[-1]) == sum(int(c) for c in value[:-1]) % 10


# Ordered: most specific first; FreeText is the implicit fallback.
DETECTION_RULES: tuple[tuple[SemanticType, Callable[[str], bool]], ...] = (
    (SemanticType.DATE_ISO, _is_plausible_date),
    (SemanticType.EMAIL, lambda v: bool(_EMAIL_RE.match(v))),
    (SemanticType.PHONE_NUMBER, lambda v: bool(_PHONE_RE.match(v))),
    (SemanticType.COUNTRY_CODE, lambda v: bool(_COUNTRY_RE.match(v))),
    (SemanticType.SOCIAL_SECURITY_NUMBER, lambda v: bool(_SSN_RE.match(v)) and _ssn_checksum_ok(v)),
    (SemanticType.NATIONAL_ID, lambda v: bool(_NATIONAL_ID_RE.match(v))),
    (SemanticType.ADDRESS, lambda v: bool(_ADDRESS_RE.match(v))),
    (SemanticType.PERSON_NAME, _is_person_name),
)


def classify_value(value: str) -> SemanticType:
    for semantic, rule in DETECTION_RULES:
        if rule(value):
            return semantic
    return SemanticType.FREE_TEXT


def detect_semantic_type(values: Sequence[str]) -> tuple[SemanticType, float]:
    """Majority vote over per-value classifications; confidence is the
    fraction of values agreeing with the winner."""
    if not values:
        return (SemanticType.FREE_TEXT, 0.0)
    votes: dict[SemanticType, int] = {}
    for value in values:
        semantic = classify_value(value)
        votes[semantic] = votes.get(semantic, 0) + 1
    winner = max(sorted(votes, key=lambda s: s.value), key=lambda s: votes[s])
    if winner is SemanticType.FREE_TEXT:
        return (SemanticType.FREE_TEXT, 0.0)
    return (winner, votes[winner] / len(values))


# --- schemas and corpora --------------------------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    name: str
    semantic_type: SemanticType
    required: bool


@dataclass(frozen=True)
class SchemaDescriptor:
    country: str
    doc_type: str
    fields: tuple[FieldSpec, ...]
    date_format: str = "YYYY-MM-DD"

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise ValueError("field names must be unique within a schema")

    @property
    def ref(self) -> tuple[str, str]:
        return (self.country, self.doc_type)

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def required_names(self) -> list[str]:
        return [f.name for f in self.fields if f.required]

    def to_wire(self) -> dict:
        return {
            "country": self.country,
            "date_format": self.date_format,
            "doc_type": self.doc_type,
            "fields": [
                {"name": f.name, "required": f.required, "semantic_type": f.semantic_type.value}
                for f in self.fields
            ],
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "SchemaDescriptor":
        return cls(
            country=wire["country"],
            doc_type=wire["doc_type"],
            date_format=wire.get("date_format", "YYYY-MM-DD"),
            fields=tuple(
                FieldSpec(
                    name=f["name"],
                    semantic_type=SemanticType(f["semantic_type"]),
                    required=bool(f["required"]),
                )
                for f in wire["fields"]
            ),
        )

    @classmethod
    def load(cls, path: Path) -> "SchemaDescriptor":
        return cls.from_wire(json.loads(Path(path).read_text(encoding="utf-8")))


class SyntheticCorpus:
    """Example records per (country, doc_type), loaded from corpus JSONL files."""

    def __init__(self):
        self.samples: dict[tuple[str, str], list[dict]] = {}

    def add(self, country: str, doc_type: str, records: list[dict]) -> None:
        self.samples.setdefault((country, doc_type), []).extend(records)

    def column(self, ref: tuple[str, str], field_name: str) -> list[str]:
        records = self.samples.get(tuple(ref))
        if records is None:
            raise MissingCorpus(*ref)
        return [str(r[field_name]) for r in records if field_name in r]

    def has(self, ref: tuple[str, str]) -> bool:
        return tuple(ref) in self.samples

    @classmethod
    def load_dir(cls, corpus_dir: Path) -> "SyntheticCorpus":
        corpus = cls()
        for path in sorted(Path(corpus_dir).glob("*.jsonl")):
            stem = path.stem
            if "_" not in stem:
                continue
            country, doc_type = stem.split("_", 1)
            records = [
                json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line
            ]
            corpus.add(country.upper(), doc_type, records)
        return corpus


def load_synonyms(path: Path) -> list[set[str]]:
    groups = json.loads(Path(path).read_text(encoding="utf-8"))
    return [set(group) for group in groups]


# --- matching -------------------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def name_similarity(source: str, target: str, synonyms: list[set[str]]) -> float:
    lev = 1.0 - levenshtein(source, target) / max(len(source), len(target), 1)
    hit = any(source in group and target in group for group in synonyms)
    return max(lev, 1.0 if hit else 0.0)


def char_class_profile(values: Sequence[str]) -> set[str]:
    profiles = set()
    for value in values:
        profile = []
        for ch in value:
            if ch.isdigit():
                profile.append("9")
            elif ch.isalpha():
                profile.append("A" if ch.isupper() else "a")
            else:
                profile.append(ch)
        profiles.add("".join(profile))
    return profiles


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


@dataclass
class FieldMapping:
    source_ref: tuple[str, str]
    target_ref: tuple[str, str]
    pairs: list[tuple[str, str, float]]
    unmapped_required: list[str] = field(default_factory=list)

    def target_for(self, source_field: str) -> Optional[str]:
        for src, tgt, _ in self.pairs:
            if src == source_field:
                return tgt
        return None

    def to_wire(self) -> dict:
        return {
            "pairs": [
                {"score": round(score, 4), "source": src, "target": tgt}
                for src, tgt, score in self.pairs
            ],
            "source_ref": list(self.source_ref),
            "target_ref": list(self.target_ref),
            "unmapped_required": self.unmapped_required,
        }


def match_schemas(
    source: SchemaDescriptor,
    target: SchemaDescriptor,
    corpus: SyntheticCorpus,
    synonyms: list[set[str]],
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    tau: float = DEFAULT_TAU,
) -> FieldMapping:
    for ref in (source.ref, target.ref):
        if not corpus.has(ref):
            raise MissingCorpus(*ref)
    w_name, w_type, w_value = weights

    scored: list[tuple[float, str, str]] = []
    for sf in source.fields:
        s_column = corpus.column(source.ref, sf.name)
        s_type, _ = detect_semantic_type(s_column)
        s_profile = char_class_profile(s_column)
        for tf in target.fields:
            t_column = corpus.column(target.ref, tf.name)
            t_type, _ = detect_semantic_type(t_column)
            sim = name_similarity(sf.name, tf.name, synonyms)
            type_match = 1.0 if s_type == t_type else 0.0
            overlap = jaccard(s_profile, char_class_profile(t_column))
            score = w_name * sim + w_type * type_match + w_value * overlap
            if score >= tau:
                scored.append((score, sf.name, tf.name))

    # greedy assignment: descending score, lexicographic (source, target) tie-break
    scored.sort(key=lambda item: (-item[0], item[1], item[2]))
    used_sources: set[str] = set()
    used_targets: set[str] = set()
    pairs: list[tuple[str, str, float]] = []
    for score, src, tgt in scored:
        if src in used_sources or tgt in used_targets:
            continue
        used_sources.add(src)
        used_targets.add(tgt)
        pairs.append((src, tgt, score))
    pairs.sort(key=lambda p: (p[0], p[1]))

    unmapped = [name for name in target.required_names() if name not in used_targets]
    return FieldMapping(
        source_ref=source.ref, target_ref=target.ref, pairs=pairs, unmapped_required=unmapped
    )


# --- transformation -------------------------------------------------------------

_FORMAT_PATTERNS = {
    "YYYY-MM-DD": (re.compile(r"^(\d{4})-(\d{2})-(\d{2})$"), ("y", "m", "d")),
    "DD/MM/YYYY": (re.compile(r"^(\d{2})/(\d{2})/(\d{4})$"), ("d", "m", "y")),
    "DD.MM.YYYY": (re.compile(r"^(\d{2})\.(\d{2})\.(\d{4})$"), ("d", "m", "y")),
}


def normalize_date(value: str, source_format: str) -> str:
    spec = _FORMAT_PATTERNS.get(source_format)
    if spec is None:
        raise ValueError(f"unknown date format {source_format!r}")
    pattern, order = spec
    m = pattern.match(value)
    if not m:
        raise ValueError(f"value {value!r} does not match format {source_format}")
    parts = dict(zip(order, m.groups()))
    return f"{parts['y']}-{parts['m']}-{parts['d']}"


@dataclass
class TransformReport:
    dropped_source: list[str]
    missing_required: list[str]
    normalized: list[str]

    def to_wire(self) -> dict:
        return {
            "dropped_source": self.dropped_source,
            "missing_required": self.missing_required,
            "normalized": self.normalized,
        }


def transform_document(
    record: dict,
    mapping: FieldMapping,
    target: SchemaDescriptor,
    source: SchemaDescriptor,
) -> tuple[dict, TransformReport]:
    """Copy values along mapping pairs into the target layout; dates are
    normalized to YYYY-MM-DD. Fails without partial output when a required
    target field cannot be filled."""
    target_types = {f.name: f.semantic_type for f in target.fields}
    out: dict[str, str] = {}
    normalized: list[str] = []
    for src_name, tgt_name, _score in mapping.pairs:
        if src_name not in record:
            continue
        value = str(record[src_name])
        if target_types.get(tgt_name) is SemanticType.DATE_ISO:
            value = normalize_date(value, source.date_format)
            if value != record[src_name]:
                normalized.append(tgt_name)
        out[tgt_name] = value

    missing = [name for name in target.required_names() if name not in out]
    if missing:
        raise RequiredFieldMissing(missing)
    dropped = sorted(name for name in record if mapping.target_for(name) is None)
    return out, TransformReport(
        dropped_source=dropped, missing_required=[], normalized=sorted(normalized)
    )


def validate_record(record: dict, schema: SchemaDescriptor) -> Optional[dict[str, str]]:
    """Field-level conformance check; returns reasons keyed by field, or None."""
    reasons: dict[str, str] = {}
    known = set(schema.field_names())
    for name in schema.required_names():
        if name not in record or str(record[name]) == "":
            reasons[name] = "required field missing"
    for name in record:
        if name not in known:
            reasons[name] = "field not in schema"
    return reasons or None


# --- secure gateway channel ------------------------------------------------------


class HandshakeAuthFailure(Exception):
    pass


class ReplayDetected(Exception):
    pass


class TamperDetected(Exception):
    pass


class ChannelClosed(Exception):
    pass


@dataclass
class GatewayChannel:
    local: bytes
    peer: bytes
    send_key: bytes
    recv_key: bytes
    send_counter: int = 0
    recv_counter: int = 0
    closed: bool = False


def _channel_keys(shared: bytes, transcript_hash: bytes) -> tuple[bytes, bytes]:
    okm = HKDF(
        algorithm=SHA256(), length=64, salt=transcript_hash, info=b"civicnet/gateway"
    ).derive(shared)
    return okm[:32], okm[32:]


def _handshake_transcript(
    initiator_id: bytes, responder_id: bytes, init_eph_pub: bytes, resp_eph_pub: bytes
) -> bytes:
    return canonical_json(
        {
            "init_eph": init_eph_pub.hex(),
            "initiator": initiator_id.hex(),
            "resp_eph": resp_eph_pub.hex(),
            "responder": responder_id.hex(),
        }
    )


def open_gateway_channel(
    initiator: crypto.IdentityRecord,
    initiator_keypair: crypto.KeyPair,
    responder: crypto.IdentityRecord,
    responder_keypair: crypto.KeyPair,
    randbytes=None,
    tamper_initiator_sig: bool = False,
) -> tuple[GatewayChannel, GatewayChannel]:
    """Run the mutual-authentication handshake and derive both endpoints.

    Both parties contribute an ephemeral X25519 key and sign the handshake
    transcript with their long-term signing key; either side aborts with
    HandshakeAuthFailure when a signature does not verify.
    """
    import secrets as _secrets

    rb = randbytes or _secrets.token_bytes
    init_eph = X25519PrivateKey.from_private_bytes(rb(32))
    resp_eph = X25519PrivateKey.from_private_bytes(rb(32))
    init_eph_pub = init_eph.public_key().public_bytes_raw()
    resp_eph_pub = resp_eph.public_key().public_bytes_raw()

    transcript = _handshake_transcript(
        initiator.identity_id, responder.identity_id, init_eph_pub, resp_eph_pub
    )
    init_sig = initiator_keypair.sign(transcript)
    if tamper_initiator_sig:
        init_sig = bytes([init_sig[0] ^ 0x01]) + init_sig[1:]
    resp_sig = responder_keypair.sign(transcript)

    if not crypto.verify(initiator.sign_public, transcript, init_sig):
        raise HandshakeAuthFailure("initiator signature rejected")
    if not crypto.verify(responder.sign_public, transcript, resp_sig):
        raise HandshakeAuthFailure("responder signature rejected")

    shared = init_eph.exchange(X25519PublicKey.from_public_bytes(resp_eph_pub))
    import hashlib

    t_hash = hashlib.sha256(transcript).digest()
    i2r, r2i = _channel_keys(shared, t_hash)
    initiator_end = GatewayChannel(
        local=initiator.identity_id, peer=responder.identity_id, send_key=i2r, recv_key=r2i
    )
    responder_end = GatewayChannel(
        local=responder.identity_id, peer=initiator.identity_id, send_key=r2i, recv_key=i2r
    )
    return initiator_end, responder_end


def channel_send(channel: GatewayChannel, payload: bytes) -> dict:
    if channel.closed:
        raise ChannelClosed("channel is closed")
    from cryptography.hazmat.primitives.ciphers.aead import AESGCM

    channel.send_counter += 1
    nonce = channel.send_counter.to_bytes(12, "big")
    ciphertext = AESGCM(channel.send_key).encrypt(nonce, payload, str(channel.send_counter).encode())
    return {"counter": channel.send_counter, "ciphertext": ciphertext.hex()}


def channel_receive(channel: GatewayChannel, message: dict) -> bytes:
    if channel.closed:
        raise ChannelClosed("channel is closed")
    from cryptography.exceptions import InvalidTag
    from cryptography.hazmat.primitives.ciphers.aead import AESGCM

    counter = int(message["counter"])
    if counter <= channel.recv_counter:
        channel.closed = True
        raise ReplayDetected(f"counter {counter} not above {channel.recv_counter}")
    nonce = counter.to_bytes(12, "big")
    try:
        payload = AESGCM(channel.recv_key).decrypt(
            nonce, bytes.fromhex(message["ciphertext"]), str(counter).encode()
        )
    except InvalidTag as exc:
        channel.closed = True
        raise TamperDetected("message failed authentication") from exc
    channel.recv_counter = counter
    return payload


# --- legacy adapter -------------------------------------------------------------


@dataclass
class AdapterConfig:
    source_schema: SchemaDescriptor
    subject_field: Optional[str] = None  # optional field naming the data subject
