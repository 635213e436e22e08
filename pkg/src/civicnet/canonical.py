"""Canonical JSON encoding shared by the ledger, envelopes, traces, and wire messages.

Rules: object keys sorted lexicographically by code point, no insignificant
whitespace, UTF-8, integers in plain decimal, byte values pre-encoded by the
caller as lowercase hex strings.
"""

import hashlib
import json
from typing import Any


def canonical_json(value: Any) -> bytes:
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def canonical_hash(value: Any) -> bytes:
    """SHA-256 digest of the canonical encoding."""
    return hashlib.sha256(canonical_json(value)).digest()


def load_jsonl(data: bytes) -> list:
    return [json.loads(line) for line in data.splitlines() if line.strip()]


def dump_jsonl(values: list) -> bytes:
    return b"".join(canonical_json(v) + b"\n" for v in values)
