"""HTTP API surface of a node, framework-free.

``Api.handle`` is a coroutine mapping (method, path, query, headers, body)
to (status, response dict); the simulator drives it directly and the serve
wrapper exposes it over real HTTP. Bodies are canonical JSON; bearer tokens
ride the Authorization header. Errors come back as
``{"error": code, "detail": text}`` with 400/401/403/404/409 statuses.
"""

from __future__ import annotations

from typing import Optional

from .errors import NotFound, PermissionDenied
from . import crypto, interop, ledger as ledger_mod, policy as policy_mod, wallet as wallet_mod
from .node import Node, analytics_report
from .sim import RpcTimeout

_ERROR_STATUS = [
    (wallet_mod.InvalidCredentials, 401, "invalid_credentials"),
    (wallet_mod.BadSignature, 401, "bad_signature"),
    (wallet_mod.Expired, 401, "token_expired"),
    (wallet_mod.UnknownCode, 401, "unknown_code"),
    (wallet_mod.CodeAlreadyUsed, 401, "code_already_used"),
    (wallet_mod.CodeExpired, 401, "code_expired"),
    (wallet_mod.ScopeMissing, 403, "scope_missing"),
    (wallet_mod.AudienceMismatch, 401, "audience_mismatch"),
    (wallet_mod.UnknownAudience, 400, "unknown_audience"),
    (wallet_mod.NotGrantor, 403, "not_grantor"),
    (wallet_mod.NoActiveConsent, 409, "no_active_consent"),
    (wallet_mod.KeyUnavailable, 403, "key_unavailable"),
    (crypto.NotARecipient, 403, "not_a_recipient"),
    (crypto.RoleError, 403, "role_error"),
    (PermissionDenied, 403, "forbidden"),
    (policy_mod.UnknownPolicy, 404, "unknown_policy"),
    (NotFound, 404, "not_found"),
    (interop.SchemaValidationError, 400, "schema_validation"),
    (policy_mod.PolicySyntaxError, 400, "policy_syntax"),
    (policy_mod.UnknownFunction, 400, "policy_syntax"),
    (ledger_mod.QuorumNotReached, 409, "quorum_not_reached"),
    (ledger_mod.ChainMismatch, 409, "chain_mismatch"),
    (ledger_mod.ValidationRejected, 400, "validation_rejected"),
    (RpcTimeout, 409, "network_timeout"),
    (ValueError, 400, "bad_request"),
]


def error_response(exc: Exception) -> tuple[int, dict]:
    for exc_type, status, code in _ERROR_STATUS:
        if isinstance(exc, exc_type):
            return status, {"error": code, "detail": str(exc)}
    return 400, {"error": "bad_request", "detail": str(exc)}


class Api:
    def __init__(self, node: Node):
        self.node = node

    # -- helpers ---------------------------------------------------------------

    def _subject(self, headers: dict, scope: str, audience: str = "wallet") -> str:
        auth = headers.get("authorization", headers.get("Authorization", ""))
        if not auth.startswith("Bearer "):
            raise wallet_mod.BadSignature("missing bearer token")
        return wallet_mod.validate_token(
            auth[len("Bearer ") :],
            audience,
            scope,
            self.node.now_ms(),
            self.node.node_key_lookup,
        )

    def _wallet(self, subject_hex: str) -> wallet_mod.Wallet:
        wallet = self.node.wallet_for(subject_hex)
        if wallet is None:
            raise PermissionDenied("subject has no wallet on this node")
        return wallet

    # -- dispatch ----------------------------------------------------------------

    def handle(self, method: str, path: str, query: Optional[dict] = None,
               headers: Optional[dict] = None, body: Optional[dict] = None):
        """Coroutine -> (status, response dict)."""
        query = query or {}
        headers = headers or {}
        body = body or {}
        try:
            result = yield from self._route(method.upper(), path.rstrip("/") or "/", query, headers, body)
            return result
        except Exception as exc:  # mapped, structured errors only
            status, payload = error_response(exc)
            return status, payload

    def _route(self, method: str, path: str, query: dict, headers: dict, body: dict):
        parts = [p for p in path.split("/") if p]

        if method == "POST" and parts == ["auth", "token"]:
            result = yield from self._auth_token(body)
            return result
        if method == "POST" and parts == ["auth", "code"]:
            subject = self._subject(headers, "documents:read")
            audience = body.get("audience", "wallet")
            code = self.node.issue_code(subject, audience)
            return 200, {"code": code, "expires_in_s": wallet_mod.CODE_TTL_MS // 1000}

        if method == "POST" and parts == ["identities"]:
            record = crypto.IdentityRecord.from_wire(body["record"])
            entry = yield from self.node.register_identity(record, validator=bool(body.get("validator")))
            return 201, {"identity_id": record.identity_id.hex(), "entry_index": entry.index}
        if method == "GET" and len(parts) == 2 and parts[0] == "identities":
            record = self.node.get_identity_by_hex(parts[1])
            if record is None:
                raise NotFound(f"identity {parts[1][:8]} not registered")
            return 200, record.to_wire()

        if method == "GET" and parts == ["documents"]:
            subject = self._subject(headers, "documents:read")
            wallet = self._wallet(subject)
            docs = self.node.documents()
            out = [docs[d].to_wire() for d in wallet.document_ids() if d in docs]
            return 200, {"documents": out}
        if method == "POST" and parts == ["documents"]:
            subject = self._subject(headers, "documents:write")
            wallet = self._wallet(subject)
            subject_id = bytes.fromhex(body["subject"]) if body.get("subject") else None
            envelope, entry = yield from self.node.ingest_document(
                body["record"],
                tuple(body["schema_ref"]),
                wallet,
                subject=subject_id,
                document_id=body.get("document_id"),
            )
            return 201, {
                "document_id": envelope.document_id,
                "envelope_cid": self.node.get_document(envelope.document_id)["envelope_cid"],
                "entry_index": entry.index,
            }
        if method == "GET" and len(parts) == 2 and parts[0] == "documents":
            subject = self._subject(headers, "documents:read")
            info = self.node.get_document(parts[1])
            if info is None:
                raise NotFound(f"unknown document {parts[1]!r}")
            return 200, info
        if method == "GET" and len(parts) == 3 and parts[0] == "documents" and parts[2] == "payload":
            subject = self._subject(headers, "documents:read")
            payload = yield from self.node.open_payload(subject, parts[1])
            return 200, {"payload": payload.hex()}

        if method == "GET" and parts == ["requests"]:
            subject = self._subject(headers, "documents:read")
            wallet = self._wallet(subject)
            return 200, {
                "pending": [r.to_wire() for r in wallet.pending_requests()],
                "mine": [r.to_wire() for r in wallet.my_requests()],
            }
        if method == "POST" and parts == ["requests"]:
            subject = self._subject(headers, "documents:write")
            wallet = self._wallet(subject)
            doc_class = tuple(body["doc_class"]) if body.get("doc_class") else None
            request = yield from wallet.request_document(
                grantor=bytes.fromhex(body["grantor"]),
                document_id=body.get("document_id"),
                doc_class=doc_class,
                purpose=body.get("purpose", ""),
            )
            return 201, request.to_wire()
        if method == "POST" and len(parts) == 3 and parts[0] == "requests" and parts[2] in ("approve", "deny"):
            subject = self._subject(headers, "documents:write")
            wallet = self._wallet(subject)
            request_id = parts[1]
            state = wallet_mod.fold_requests(self.node.ledger_entries()).get(request_id)
            if state is not None and state.state != "pending":
                return 409, {"error": "already_decided", "detail": f"request is {state.state}"}
            if parts[2] == "approve":
                record = yield from wallet.approve_request(
                    request_id,
                    expires_at=body.get("expires_at"),
                    scope=body.get("scope", "read"),
                    document_id=body.get("document_id"),
                )
                return 200, record.to_wire()
            entry = yield from wallet.deny_request(request_id)
            return 200, {"request_id": request_id, "state": "denied", "entry_index": entry.index}

        if method == "GET" and parts == ["consents"]:
            subject = self._subject(headers, "documents:read")
            wallet = self._wallet(subject)
            return 200, {
                "granted": [r.to_wire() for r in wallet.consents("grantor")],
                "received": [r.to_wire() for r in wallet.consents("grantee")],
            }
        if method == "POST" and len(parts) == 3 and parts[0] == "consents" and parts[2] == "revoke":
            subject = self._subject(headers, "documents:write")
            wallet = self._wallet(subject)
            target = None
            for record in wallet.consents("grantor"):
                if record.consent_id == parts[1]:
                    target = record
            if target is None:
                raise wallet_mod.NoActiveConsent(f"no consent {parts[1]!r} granted by subject")
            entry = yield from wallet.revoke_consent(target.grantee, target.document_id)
            return 200, {"consent_id": parts[1], "status": "revoked", "entry_index": entry.index}

        if method == "GET" and parts == ["ledger"]:
            entries = self.node.ledger_entries()
            index_range = None
            if "from" in query or "to" in query:
                index_range = (
                    int(query.get("from", 0)),
                    int(query.get("to", len(entries))),
                )
            selected = ledger_mod.query(
                entries,
                entry_type=query.get("type"),
                actor=query.get("actor"),
                document_id=query.get("document_id"),
                index_range=index_range,
            )
            return 200, {"entries": [e.to_wire() for e in selected]}
        if method == "GET" and parts == ["ledger", "verify"]:
            bad = ledger_mod.verify_chain(self.node.ledger_entries(), self.node.vset)
            if bad is None:
                return 200, {"ok": True, "length": len(self.node.ledger_entries())}
            return 200, {"ok": False, "index": bad[0], "reason": bad[1]}

        if method == "GET" and parts == ["search"]:
            subject = self._subject(headers, "documents:read")
            results = self.node.search(query.get("q", ""), query.get("kind"), subject)
            return 200, {"results": results}
        if method == "GET" and parts == ["analytics"]:
            self._subject(headers, "ledger:read")
            report = analytics_report(self.node.ledger_entries())
            return 200, report.to_wire()

        if method == "GET" and parts == ["events"]:
            subject = self._subject(headers, "documents:read")
            events, cursor = self.node.events_since(subject, int(query.get("since", 0)))
            return 200, {"events": events, "next": cursor}

        raise NotFound(f"no route for {method} {path}")

    def _auth_token(self, body: dict):
        grant_type = body.get("grant_type", "password")
        audience = body.get("audience", "wallet")
        scopes = body.get("scope", " ".join(("documents:read", "documents:write", "ledger:read")))
        scope_list = scopes.split() if isinstance(scopes, str) else list(scopes)
        if grant_type == "password":
            token = yield from self.node.sign_in(
                body.get("username", ""), body.get("password", ""), audience, scope_list
            )
        elif grant_type == "authorization_code":
            token = yield from self.node.exchange_code(body.get("code", ""), audience, scope_list)
        else:
            raise ValueError(f"unsupported grant_type {grant_type!r}")
        decoded, _, _ = wallet_mod.decode_token(token)
        return 200, {
            "access_token": token,
            "token_type": "bearer",
            "subject": decoded.subject,
            "expires_at": decoded.expires_at,
            "scopes": list(decoded.scopes),
        }
