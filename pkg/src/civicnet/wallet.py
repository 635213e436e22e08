"""Single sign-on wallet: credential store, access tokens, authorization
codes, and the request/approve/revoke consent flows.

Tokens are canonical JSON claims joined to a base64 Ed25519 signature by the
issuing node; validation is stateless. Authorization codes are 128-bit,
single-use, and expire after 60 virtual seconds. Wallet mutations each commit
exactly one ledger entry; envelope key re-wrapping happens only after the
corresponding entry commits.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .canonical import canonical_json
from . import crypto, ledger as ledger_mod

TOKEN_TTL_MS = 1_800_000
CODE_TTL_MS = 60_000

_SCRYPT_N = 2**13
_SCRYPT_R = 8
_SCRYPT_P = 1


class InvalidCredentials(Exception):
    pass


class UnknownAudience(Exception):
    pass


class BadSignature(Exception):
    pass


class Expired(Exception):
    pass


class ScopeMissing(Exception):
    pass


class AudienceMismatch(Exception):
    pass


class CodeExpired(Exception):
    pass


class CodeAlreadyUsed(Exception):
    pass


class UnknownCode(Exception):
    pass


class NotGrantor(Exception):
    pass


class UnknownRequest(Exception):
    pass


class NoActiveConsent(Exception):
    pass


class KeyUnavailable(Exception):
    pass


def hash_password(password: str, salt: bytes) -> bytes:
    return hashlib.scrypt(
        password.encode("utf-8"), salt=salt, n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P, dklen=32
    )


class CredentialStore:
    """Salted scrypt hashes; one canonical JSON line per account."""

    def __init__(self):
        self._accounts: dict[str, dict] = {}
        self._dummy = hash_password("dummy", b"\x00" * 16)

    def add(
        self,
        username: str,
        password: str,
        display_name: str = "",
        identity_id: Optional[bytes] = None,
        salt: Optional[bytes] = None,
    ) -> None:
        salt = salt if salt is not None else secrets.token_bytes(16)
        self._accounts[username] = {
            "display_name": display_name,
            "identity_id": identity_id.hex() if identity_id else None,
            "pw_hash": hash_password(password, salt).hex(),
            "salt": salt.hex(),
            "username": username,
        }

    def add_hashed(self, account: dict) -> None:
        self._accounts[account["username"]] = dict(account)

    def bind_identity(self, username: str, identity_id: bytes) -> None:
        if username in self._accounts:
            self._accounts[username]["identity_id"] = identity_id.hex()

    def identity_for(self, username: str) -> Optional[bytes]:
        account = self._accounts.get(username)
        if account and account.get("identity_id"):
            return bytes.fromhex(account["identity_id"])
        return None

    def verify(self, username: str, password: str) -> bool:
        account = self._accounts.get(username)
        if account is None:
            # equalize timing against unknown usernames
            hmac.compare_digest(self._dummy, hash_password(password, b"\x00" * 16))
            return False
        computed = hash_password(password, bytes.fromhex(account["salt"]))
        return hmac.compare_digest(computed, bytes.fromhex(account["pw_hash"]))

    def save(self, path: Path) -> None:
        lines = [
            canonical_json(self._accounts[u]).decode("utf-8") for u in sorted(self._accounts)
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def load(self, path: Path) -> None:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                self.add_hashed(json.loads(line))

    def __contains__(self, username: str) -> bool:
        return username in self._accounts


# --- tokens ------------------------------------------------------------------


@dataclass(frozen=True)
class AccessToken:
    subject: str  # identity id hex
    audience: str
    scopes: tuple[str, ...]
    issued_at: int
    expires_at: int
    issuer_node: str  # node id hex

    def claims(self) -> dict:
        return {
            "audience": self.audience,
            "expires_at": self.expires_at,
            "issued_at": self.issued_at,
            "issuer_node": self.issuer_node,
            "scopes": list(self.scopes),
            "subject": self.subject,
        }


def mint_token(
    keypair: crypto.KeyPair,
    node_id: bytes,
    subject: bytes,
    audience: str,
    scopes: list[str],
    now_ms: int,
    ttl_ms: int = TOKEN_TTL_MS,
) -> str:
    token = AccessToken(
        subject=subject.hex(),
        audience=audience,
        scopes=tuple(scopes),
        issued_at=now_ms,
        expires_at=now_ms + ttl_ms,
        issuer_node=node_id.hex(),
    )
    claims = canonical_json(token.claims())
    signature = keypair.sign(claims)
    return claims.decode("utf-8") + "." + base64.b64encode(signature).decode("ascii")


def decode_token(text: str) -> tuple[AccessToken, bytes, bytes]:
    """Returns (token, signed claims bytes, signature). BadSignature on malformed input."""
    if "." not in text:
        raise BadSignature("malformed token")
    claims_text, sig_text = text.rsplit(".", 1)
    try:
        claims = json.loads(claims_text)
        signature = base64.b64decode(sig_text.encode("ascii"), validate=True)
    except (ValueError, json.JSONDecodeError) as exc:
        raise BadSignature("malformed token") from exc
    token = AccessToken(
        subject=claims["subject"],
        audience=claims["audience"],
        scopes=tuple(claims["scopes"]),
        issued_at=int(claims["issued_at"]),
        expires_at=int(claims["expires_at"]),
        issuer_node=claims["issuer_node"],
    )
    return token, claims_text.encode("utf-8"), signature


def validate_token(
    text: str,
    audience: str,
    required_scope: str,
    now_ms: int,
    key_lookup: Callable[[str], Optional[bytes]],
) -> str:
    """Returns the subject identity hex when every token invariant holds."""
    token, claims_bytes, signature = decode_token(text)
    key = key_lookup(token.issuer_node)
    if key is None:
        raise BadSignature("unknown issuer node")
    try:
        if not crypto.verify(key, claims_bytes, signature):
            raise BadSignature("signature does not verify")
    except crypto.MalformedSignature as exc:
        raise BadSignature(str(exc)) from exc
    if now_ms >= token.expires_at:
        raise Expired(f"token expired at {token.expires_at}")
    if token.audience != audience:
        raise AudienceMismatch(f"token audience {token.audience!r} != {audience!r}")
    if required_scope not in token.scopes:
        raise ScopeMissing(f"scope {required_scope!r} not granted")
    return token.subject


# --- authorization codes -------------------------------------------------------


@dataclass
class AuthorizationCode:
    code: str
    subject: str
    audience: str
    issued_at: int
    expires_at: int
    used: bool = False


class CodeTable:
    """Single-use codes; exchange is an atomic test-and-set."""

    def __init__(self):
        self._codes: dict[str, AuthorizationCode] = {}
        self._lock = threading.Lock()

    def issue(self, subject: bytes, audience: str, now_ms: int, randbytes) -> str:
        code = randbytes(16).hex()
        self._codes[code] = AuthorizationCode(
            code=code,
            subject=subject.hex(),
            audience=audience,
            issued_at=now_ms,
            expires_at=now_ms + CODE_TTL_MS,
        )
        return code

    def exchange(self, code: str, audience: str, now_ms: int) -> str:
        with self._lock:
            record = self._codes.get(code)
            if record is None:
                raise UnknownCode("no such authorization code")
            if record.used:
                raise CodeAlreadyUsed("code already exchanged")
            if now_ms >= record.expires_at:
                raise CodeExpired("authorization code expired")
            if record.audience != audience:
                raise AudienceMismatch(
                    f"code audience {record.audience!r} != {audience!r}"
                )
            record.used = True
            return record.subject


# --- access requests and consent flows -------------------------------------------


@dataclass
class AccessRequest:
    request_id: str
    requester: bytes
    grantor: bytes
    document_id: Optional[str]
    doc_class: Optional[tuple[str, str]]
    purpose: str
    state: str  # "pending" | "approved" | "denied"
    requested_at: int = 0

    def to_wire(self) -> dict:
        return {
            "doc_class": list(self.doc_class) if self.doc_class else None,
            "document_id": self.document_id,
            "grantor": self.grantor.hex(),
            "purpose": self.purpose,
            "request_id": self.request_id,
            "requested_at": self.requested_at,
            "requester": self.requester.hex(),
            "state": self.state,
        }


def fold_requests(entries) -> dict[str, AccessRequest]:
    """Request state machine derived from the ledger: pending until a
    ConsentGranted or request_denied AuthEvent references the request id."""
    requests: dict[str, AccessRequest] = {}
    for entry in entries:
        if entry.entry_type == "AccessRequested":
            b = entry.body
            requests[b["request_id"]] = AccessRequest(
                request_id=b["request_id"],
                requester=bytes.fromhex(b["requester"]),
                grantor=bytes.fromhex(b["grantor"]),
                document_id=b.get("document_id"),
                doc_class=tuple(b["doc_class"]) if b.get("doc_class") else None,
                purpose=b.get("purpose", ""),
                state="pending",
                requested_at=entry.timestamp,
            )
        elif entry.entry_type == "ConsentGranted":
            rid = entry.body.get("request_id")
            if rid in requests:
                requests[rid].state = "approved"
        elif entry.entry_type == "AuthEvent" and entry.body.get("kind") == "request_denied":
            rid = entry.body.get("request_id")
            if rid in requests:
                requests[rid].state = "denied"
    return requests


class Wallet:
    """Per-identity wallet bound to its hosting node's environment.

    The environment supplies time, randomness, the ledger, the identity
    registry, and envelope storage/fetch; every method that can touch the
    network is a coroutine.
    """

    def __init__(self, record: crypto.IdentityRecord, keypair: crypto.KeyPair, env):
        self.record = record
        self.keypair = keypair
        self.env = env

    @property
    def identity_id(self) -> bytes:
        return self.record.identity_id

    # -- views -------------------------------------------------------------

    def pending_requests(self) -> list[AccessRequest]:
        requests = fold_requests(self.env.ledger_entries())
        mine = [r for r in requests.values() if r.grantor == self.identity_id and r.state == "pending"]
        mine.sort(key=lambda r: r.request_id)
        return mine

    def my_requests(self) -> list[AccessRequest]:
        requests = fold_requests(self.env.ledger_entries())
        mine = [r for r in requests.values() if r.requester == self.identity_id]
        mine.sort(key=lambda r: r.request_id)
        return mine

    def consents(self, role: str = "grantor") -> list[ledger_mod.ConsentRecord]:
        records = ledger_mod.consent_records(self.env.ledger_entries(), self.env.now_ms())
        if role == "grantor":
            return [r for r in records if r.grantor == self.identity_id]
        return [r for r in records if r.grantee == self.identity_id]

    def document_ids(self) -> list[str]:
        """Documents this identity issued, is subject of, or holds a consent for."""
        ids: set[str] = set()
        me = self.identity_id.hex()
        for entry in self.env.ledger_entries():
            b = entry.body
            if entry.entry_type == "DocumentIssued" and me in (b.get("issuer"), b.get("subject")):
                ids.add(b["document_id"])
            elif entry.entry_type == "ConsentGranted" and b.get("grantee") == me:
                ids.add(b["document_id"])
        return sorted(ids)

    # -- flows -------------------------------------------------------------

    def request_document(
        self,
        grantor: bytes,
        document_id: Optional[str] = None,
        doc_class: Optional[tuple[str, str]] = None,
        purpose: str = "",
    ):
        """Coroutine -> AccessRequest. Commits one AccessRequested entry."""
        if document_id is None and doc_class is None:
            raise ValueError("request needs a document id or a document class")
        if self.env.get_identity(grantor) is None:
            raise ValueError(f"unknown grantor identity {grantor.hex()[:8]}")
        request_id = "req-" + self.env.randbytes(8).hex()
        body = {
            "request_id": request_id,
            "requester": self.identity_id.hex(),
            "grantor": grantor.hex(),
            "purpose": purpose,
        }
        if document_id is not None:
            body["document_id"] = document_id
        if doc_class is not None:
            body["doc_class"] = list(doc_class)
        entry = yield from self.env.ledger_submit("AccessRequested", body)
        return AccessRequest(
            request_id=request_id,
            requester=self.identity_id,
            grantor=grantor,
            document_id=document_id,
            doc_class=tuple(doc_class) if doc_class else None,
            purpose=purpose,
            state="pending",
            requested_at=entry.timestamp,
        )

    def _find_request(self, request_id: str) -> AccessRequest:
        requests = fold_requests(self.env.ledger_entries())
        request = requests.get(request_id)
        if request is None or request.state != "pending":
            raise UnknownRequest(f"no pending request {request_id!r}")
        return request

    def _can_share(self, document_id: str, issuer_hex: str) -> bool:
        if issuer_hex == self.identity_id.hex():
            return True
        for record in self.consents(role="grantee"):
            if (
                record.document_id == document_id
                and record.status == "active"
                and record.scope == "forward"
            ):
                return True
        return False

    def approve_request(
        self,
        request_id: str,
        expires_at: Optional[int] = None,
        scope: str = "read",
        document_id: Optional[str] = None,
    ):
        """Coroutine -> ConsentRecord. Commits ConsentGranted, then re-wraps the
        envelope key to the requester (never before the commit succeeds)."""
        request = self._find_request(request_id)
        if request.grantor != self.identity_id:
            raise NotGrantor("only the request's grantor may approve it")
        doc_id = request.document_id or document_id
        if doc_id is None:
            raise ValueError("request was made by class; approval must name a document_id")
        doc = self.env.get_document(doc_id)
        if doc is None:
            raise UnknownRequest(f"document {doc_id!r} not on ledger")
        if not self._can_share(doc_id, doc["issuer"]):
            raise NotGrantor("grantor has no authority to share this document")

        envelope = yield from self.env.fetch_envelope(doc_id)
        if self.identity_id not in envelope.wrapped_keys:
            raise KeyUnavailable("grantor cannot recover the document key")
        requester_record = self.env.get_identity(request.requester)
        if requester_record is None:
            raise UnknownRequest("requester identity is not registered")
        new_envelope = crypto.add_recipient(
            envelope, self.keypair, requester_record, self.env.randbytes
        )
        body = {
            "consent_id": request_id,
            "grantor": self.identity_id.hex(),
            "grantee": request.requester.hex(),
            "document_id": doc_id,
            "scope": scope,
            "expires_at": expires_at,
            "request_id": request_id,
            "envelope_cid": new_envelope_cid_text(new_envelope),
        }
        entry = yield from self.env.ledger_submit("ConsentGranted", body)
        yield from self.env.store_envelope(new_envelope)
        return ledger_mod.ConsentRecord(
            grantor=self.identity_id,
            grantee=request.requester,
            document_id=doc_id,
            scope=scope,
            granted_at=entry.timestamp,
            expires_at=expires_at,
            status="active",
            consent_id=request_id,
            entry_index=entry.index,
        )

    def deny_request(self, request_id: str):
        """Coroutine -> LedgerEntry recording the denial."""
        request = self._find_request(request_id)
        if request.grantor != self.identity_id:
            raise NotGrantor("only the request's grantor may deny it")
        body = {
            "kind": "request_denied",
            "subject": self.identity_id.hex(),
            "request_id": request_id,
            "requester": request.requester.hex(),
        }
        entry = yield from self.env.ledger_submit("AuthEvent", body)
        return entry

    def revoke_consent(self, grantee: bytes, document_id: str):
        """Coroutine -> LedgerEntry. Removes the grantee's wrapped key from the
        current envelope version; future policy checks will deny."""
        active = ledger_mod.active_consent(
            self.env.ledger_entries(), self.identity_id, grantee, document_id, self.env.now_ms()
        )
        if active is None:
            raise NoActiveConsent(
                f"no active consent for {grantee.hex()[:8]} on {document_id!r}"
            )
        envelope = yield from self.env.fetch_envelope(document_id)
        new_envelope = crypto.remove_recipient(envelope, grantee)
        body = {
            "grantor": self.identity_id.hex(),
            "grantee": grantee.hex(),
            "document_id": document_id,
            "consent_id": active.consent_id,
            "envelope_cid": new_envelope_cid_text(new_envelope),
        }
        entry = yield from self.env.ledger_submit("ConsentRevoked", body)
        yield from self.env.store_envelope(new_envelope)
        return entry

    def open_document(self, document_id: str):
        """Coroutine -> payload bytes."""
        envelope = yield from self.env.fetch_envelope(document_id)
        sym_key = crypto.recover_key(envelope, self.keypair)
        ciphertext = yield from self.env.fetch_ciphertext(envelope.ciphertext_cid)
        return crypto.decrypt_payload(sym_key, envelope.payload_nonce, ciphertext)


def new_envelope_cid_text(envelope: crypto.DocumentEnvelope) -> str:
    from .content_store import ContentId

    return ContentId.for_bytes(envelope.encode()).text
