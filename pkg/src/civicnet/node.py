"""Per-node orchestration: ledger consensus client/leader, DHT provider flow,
block exchange, policy-gated document access, search over a learned index,
analytics, wallets, and notification inboxes.

Operations that can touch the network are coroutines (generators yielding
simulation futures); everything else is a plain method over committed state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .canonical import canonical_hash, canonical_json
from .content_store import BlockStore, ContentId
from .errors import NotFound, PermissionDenied
from . import crypto, dht, interop, ledger as ledger_mod, policy as policy_mod
from .learned_index import SearchIndex
from .sim import SimNet, RpcTimeout
from .wallet import CodeTable, CredentialStore, InvalidCredentials, UnknownAudience, Wallet, mint_token

VALIDATE_ATTEMPTS = 2
SUBMIT_ATTEMPTS = 5
SUBMIT_ROUNDS = 12
DEFAULT_AUDIENCES = ("wallet", "gateway")
DEFAULT_SCOPES = ("documents:read", "documents:write", "ledger:read")


@dataclass
class NodeConfig:
    display_name: str
    role: str = "citizen"
    validator: bool = False
    listen: Optional[str] = None  # host:port when fronted by real HTTP
    bootstrap: tuple = ()  # peer node ids to seed the routing table
    data_dir: Optional[Path] = None
    match_weights: tuple[float, float, float] = interop.DEFAULT_WEIGHTS
    match_tau: float = interop.DEFAULT_TAU
    audiences: tuple[str, ...] = DEFAULT_AUDIENCES

    def __post_init__(self):
        if self.validator and self.role != "authority":
            raise ValueError("validator flag requires an authority-role identity")


@dataclass
class DocumentInfo:
    document_id: str
    schema_ref: tuple[str, str]
    issuer: str  # hex
    subject: Optional[str]  # hex
    payload_hash: str
    envelope_cid: str
    issued_at: int

    def to_wire(self) -> dict:
        return {
            "document_id": self.document_id,
            "envelope_cid": self.envelope_cid,
            "issued_at": self.issued_at,
            "issuer": self.issuer,
            "payload_hash": self.payload_hash,
            "schema_ref": list(self.schema_ref),
            "subject": self.subject,
        }


@dataclass
class AnalyticsReport:
    total_entries: int
    counts_by_type: dict[str, int]
    counts_by_actor: dict[str, int]
    mean_grant_latency_s: float
    max_grant_latency_s: float
    denied_count: int

    def to_wire(self) -> dict:
        return {
            "counts_by_actor": dict(sorted(self.counts_by_actor.items())),
            "counts_by_type": dict(sorted(self.counts_by_type.items())),
            "denied_count": self.denied_count,
            "max_grant_latency_s": self.max_grant_latency_s,
            "mean_grant_latency_s": self.mean_grant_latency_s,
            "total_entries": self.total_entries,
        }


def analytics_report(entries: list[ledger_mod.LedgerEntry], index_range=None) -> AnalyticsReport:
    """Single fold: per-type and per-actor counts, request->grant latency
    matched by request_id, denied-access count."""
    if index_range is not None:
        entries = [e for e in entries if index_range[0] <= e.index <= index_range[1]]
    by_type: dict[str, int] = {}
    by_actor: dict[str, int] = {}
    requested_at: dict[str, int] = {}
    latencies: list[int] = []
    denied = 0
    for entry in entries:
        by_type[entry.entry_type] = by_type.get(entry.entry_type, 0) + 1
        for actor in sorted(ledger_mod.entry_actors(entry)):
            by_actor[actor] = by_actor.get(actor, 0) + 1
        if entry.entry_type == "AccessRequested":
            requested_at[entry.body["request_id"]] = entry.timestamp
        elif entry.entry_type == "ConsentGranted":
            rid = entry.body.get("request_id")
            if rid in requested_at:
                latencies.append(entry.timestamp - requested_at[rid])
        elif entry.entry_type == "AuthEvent" and entry.body.get("kind") in (
            "access_denied",
            "request_denied",
        ):
            denied += 1
    mean_s = (sum(latencies) / len(latencies) / 1000.0) if latencies else 0.0
    max_s = (max(latencies) / 1000.0) if latencies else 0.0
    return AnalyticsReport(
        total_entries=len(entries),
        counts_by_type=by_type,
        counts_by_actor=by_actor,
        mean_grant_latency_s=mean_s,
        max_grant_latency_s=max_s,
        denied_count=denied,
    )


def _ledger_error(message: str) -> Exception:
    if message.startswith("QuorumNotReached"):
        return ledger_mod.QuorumNotReached(message)
    if message.startswith("ValidationRejected"):
        return ledger_mod.ValidationRejected(message)
    if message.startswith("ChainMismatch"):
        return ledger_mod.ChainMismatch(message)
    return ledger_mod.ValidationRejected(message)


class LedgerView:
    """Adapter giving policy built-ins read access to committed state."""

    def __init__(self, node: "Node"):
        self._node = node

    def consent_active(self, grantor: str, grantee: str, document_id: str, now: int) -> bool:
        try:
            g, e = bytes.fromhex(grantor), bytes.fromhex(grantee)
        except ValueError:
            return False
        return (
            ledger_mod.active_consent(self._node.replica.entries, g, e, document_id, now)
            is not None
        )

    def attested_by(self, identity: str, authority: str) -> bool:
        record = self._node.get_identity_by_hex(identity)
        authority_record = self._node.get_identity_by_hex(authority)
        if record is None or authority_record is None:
            return False
        return crypto.verify_attestation(record, authority_record)


class Node:
    def __init__(
        self,
        record: crypto.IdentityRecord,
        keypair: crypto.KeyPair,
        net: SimNet,
        vset: ledger_mod.ValidatorSet,
        config: NodeConfig,
    ):
        self.record = record
        self.keypair = keypair
        self.net = net
        self.vset = vset
        self.config = config
        self.node_id = record.identity_id
        self.store = BlockStore(root=config.data_dir)
        self.routing = dht.RoutingTable(self.node_id)
        self.providers = dht.ProviderStore()
        self.replica = ledger_mod.Replica(vset)
        self.replica.add_observer(self._on_entry)
        self.accounts = CredentialStore()
        self.codes = CodeTable()
        self.wallets: dict[bytes, Wallet] = {}
        self.inboxes: dict[str, list[dict]] = {}
        self.sessions: dict[str, list[str]] = {}
        self._policy_cache: dict[str, policy_mod.PolicyAst] = {}
        self._schema_cache: dict[tuple[str, str], interop.SchemaDescriptor] = {}
        self._search_cache: Optional[tuple[int, SearchIndex]] = None
        self._submissions: dict[str, dict] = {}
        self._submit_lock = None  # created lazily; sim.Lock
        self.byzantine_sign_anything = False
        net.add_handler(self.node_id, self.handle_message)
        self.add_wallet(record, keypair)
        for peer in config.bootstrap:
            self.routing.observe(peer)

    # ------------------------------------------------------------------ env --

    def now_ms(self) -> int:
        return self.net.now_ms

    def randbytes(self, n: int) -> bytes:
        return self.net.randbytes(n)

    def ledger_entries(self) -> list[ledger_mod.LedgerEntry]:
        return self.replica.entries

    def add_wallet(self, record: crypto.IdentityRecord, keypair: crypto.KeyPair) -> Wallet:
        wallet = Wallet(record, keypair, self)
        self.wallets[record.identity_id] = wallet
        return wallet

    def wallet_for(self, identity_hex: str) -> Optional[Wallet]:
        try:
            return self.wallets.get(bytes.fromhex(identity_hex))
        except ValueError:
            return None

    # ------------------------------------------------------------- registries --

    def get_identity(self, identity_id: bytes) -> Optional[crypto.IdentityRecord]:
        return self.get_identity_by_hex(identity_id.hex())

    def get_identity_by_hex(self, identity_hex: str) -> Optional[crypto.IdentityRecord]:
        found = None
        for entry in self.replica.entries:
            if entry.entry_type != "IdentityRegistered":
                continue
            record = entry.body.get("record", {})
            if record.get("identity_id") == identity_hex:
                found = crypto.IdentityRecord.from_wire(record)
        return found

    def identities(self) -> list[crypto.IdentityRecord]:
        seen: dict[str, crypto.IdentityRecord] = {}
        for entry in self.replica.entries:
            if entry.entry_type == "IdentityRegistered":
                record = entry.body["record"]
                seen[record["identity_id"]] = crypto.IdentityRecord.from_wire(record)
        return [seen[k] for k in sorted(seen)]

    def get_document(self, document_id: str) -> Optional[dict]:
        info = self.documents().get(document_id)
        return info.to_wire() if info else None

    def documents(self) -> dict[str, DocumentInfo]:
        docs: dict[str, DocumentInfo] = {}
        for entry in self.replica.entries:
            b = entry.body
            if entry.entry_type == "DocumentIssued":
                docs[b["document_id"]] = DocumentInfo(
                    document_id=b["document_id"],
                    schema_ref=tuple(b["schema_ref"]),
                    issuer=b["issuer"],
                    subject=b.get("subject"),
                    payload_hash=b["payload_hash"],
                    envelope_cid=b["envelope_cid"],
                    issued_at=entry.timestamp,
                )
            elif entry.entry_type in ("ConsentGranted", "ConsentRevoked"):
                doc = docs.get(b.get("document_id", ""))
                if doc and b.get("envelope_cid"):
                    doc.envelope_cid = b["envelope_cid"]
        return docs

    def policies(self) -> list[dict]:
        out = []
        for entry in self.replica.entries:
            if entry.entry_type == "PolicyRegistered":
                out.append(dict(entry.body, registered_entry_index=entry.index))
        return out

    def policy_contract(self, policy_id: str):
        """Coroutine -> PolicyContract for a registered policy (UnknownPolicy
        when the id is not on the chain)."""
        for registration in self.policies():
            if registration["policy_id"] == policy_id:
                source = yield from self.fetch_bytes(
                    ContentId(bytes.fromhex(registration["source_hash"]))
                )
                ast = yield from self._policy_ast(registration)
                return policy_mod.PolicyContract(
                    policy_id=policy_id,
                    owner=registration["owner"],
                    source=source.decode("utf-8"),
                    ast=ast,
                    registered_entry_index=registration["registered_entry_index"],
                )
        raise policy_mod.UnknownPolicy(f"policy {policy_id!r} is not registered")

    def registered_schema(self, ref: tuple[str, str]):
        """Coroutine -> SchemaDescriptor for a SchemaRegistered reference."""
        ref = tuple(ref)
        if ref in self._schema_cache:
            return self._schema_cache[ref]
        schema_hash = None
        for entry in self.replica.entries:
            if entry.entry_type == "SchemaRegistered":
                if (entry.body["country"], entry.body["doc_type"]) == ref:
                    schema_hash = entry.body["schema_hash"]
        if schema_hash is None:
            raise NotFound(f"schema {ref} not registered")
        data = yield from self.fetch_bytes(ContentId(bytes.fromhex(schema_hash)))
        schema = interop.SchemaDescriptor.from_wire(json.loads(data.decode("utf-8")))
        self._schema_cache[ref] = schema
        return schema

    # ------------------------------------------------------------ notifications --

    def _on_entry(self, entry: ledger_mod.LedgerEntry) -> None:
        self._search_cache = None
        b = entry.body
        t = entry.entry_type

        def push(identity_hex: Optional[str], kind: str, **fields):
            if identity_hex and self.wallet_for(identity_hex) is not None:
                event = {"kind": kind, "at": entry.timestamp, "entry_index": entry.index}
                event.update(fields)
                self.inboxes.setdefault(identity_hex, []).append(event)

        if t == "AccessRequested":
            push(
                b.get("grantor"),
                "request_pending",
                request_id=b["request_id"],
                requester=b["requester"],
                document_id=b.get("document_id"),
                doc_class=b.get("doc_class"),
                purpose=b.get("purpose", ""),
            )
        elif t == "ConsentGranted":
            push(
                b.get("grantee"),
                "consent_granted",
                consent_id=b["consent_id"],
                document_id=b["document_id"],
                grantor=b["grantor"],
            )
        elif t == "ConsentRevoked":
            push(b.get("grantee"), "consent_revoked", document_id=b["document_id"])
        elif t == "AuthEvent" and b.get("kind") == "request_denied":
            push(b.get("requester"), "request_denied", request_id=b.get("request_id"))
        elif t == "AuthEvent" and b.get("kind") == "access_denied":
            push(b.get("grantor"), "access_denied", document_id=b.get("document_id"),
                 requester=b.get("subject"), reason=b.get("reason"))
        elif t == "DocumentIssued":
            push(b.get("subject"), "document_issued", document_id=b["document_id"],
                 schema_ref=b["schema_ref"])

    def events_since(self, identity_hex: str, cursor: int) -> tuple[list[dict], int]:
        inbox = self.inboxes.get(identity_hex, [])
        return inbox[cursor:], len(inbox)

    def notify(self, identity_hex: str, message: str) -> None:
        if self.wallet_for(identity_hex) is not None:
            self.inboxes.setdefault(identity_hex, []).append(
                {"kind": "notify", "at": self.now_ms(), "message": message}
            )

    # ---------------------------------------------------------------- messaging --

    def handle_message(self, src: bytes, payload: dict):
        if src != self.node_id:
            try:
                self.routing.observe(src)
            except ValueError:
                pass
        kind = payload.get("kind")
        if kind == "PING":
            return {"ok": True}
        if kind == "FIND_NODE":
            target = bytes.fromhex(payload["target"])
            return {"contacts": [c.hex() for c in self.routing.closest(target, dht.K)]}
        if kind == "FIND_PROVIDERS":
            key = bytes.fromhex(payload["key"])
            return {"providers": [p.hex() for p in self.providers.get(key, self.now_ms())]}
        if kind == "ADD_PROVIDER":
            self.providers.add(
                bytes.fromhex(payload["key"]), bytes.fromhex(payload["provider"]), self.now_ms()
            )
            return {"ok": True}
        if kind == "BLOCK_FETCH":
            try:
                block = self.store.get_block(ContentId.parse(payload["cid"]))
            except NotFound:
                return {"_err": "NotFound"}
            return {"data": block.data.hex(), "block_kind": block.kind}
        if kind == "NOTIFY":
            self.notify(payload["identity"], payload.get("message", ""))
            return {"ok": True}
        if kind == "LEDGER_SUBMIT":
            return self._handle_submit(src, payload)
        if kind == "LEDGER_VALIDATE":
            return self._handle_validate(src, payload)
        if kind == "LEDGER_COMMIT":
            return self._handle_commit(src, payload)
        if kind == "LEDGER_SYNC":
            start = int(payload["from_index"])
            entries = [e.to_wire() for e in self.replica.entries[start : start + 64]]
            return {"entries": entries}
        return {"_err": f"unknown message kind {kind!r}"}

    # ----------------------------------------------------------------- consensus --

    def _submit_lock_get(self):
        from .sim import Lock

        if self._submit_lock is None:
            self._submit_lock = Lock()
        return self._submit_lock

    def _handle_submit(self, src: bytes, payload: dict):
        """Coroutine: the current leader commits; anyone else answers with a
        redirect to its view of the leader (clients chase redirects, so no
        nested forwarding). Submissions carry a client id ("sid") so retries
        never commit the same request twice, plus the client's chain position
        so a lagging validator catches up before answering."""
        sid = payload.get("sid")
        if sid and sid in self._submissions:
            return self._submissions[sid]
        if src != self.node_id and int(payload.get("next", 0)) > self.replica.next_index:
            yield from self._sync_from(src)
        leader = self.vset.leader_for(self.replica.next_index)
        if leader != self.node_id:
            return {"_redirect": leader.hex(), "_next": self.replica.next_index}
        lock = self._submit_lock_get()
        yield lock.acquire()
        try:
            if sid and sid in self._submissions:
                return self._submissions[sid]
            reply = yield from self._lead_commit(payload["entry_type"], payload["body"])
            if sid and "entry" in reply:
                self._submissions[sid] = reply
        finally:
            lock.release()
        return reply

    def _lead_commit(self, entry_type: str, body: dict):
        """Coroutine run by the round-robin leader: draft, collect quorum
        co-signatures, commit locally, replicate to every known node."""
        reason = ledger_mod.check_body(entry_type, body)
        if reason:
            return {"_err": f"ValidationRejected: {reason}"}
        index = self.replica.next_index
        timestamp = max(self.now_ms(), self.replica.tip_timestamp)
        entry = ledger_mod.make_entry(
            index, timestamp, self.replica.tip_hash, entry_type, body, self.node_id
        )
        signatures: dict[bytes, bytes] = {self.node_id: self.keypair.sign(entry.entry_hash)}
        others = [v for v in self.vset.validators if v != self.node_id]
        wire = entry.to_wire()
        coros = [
            self.net.rpc_retry(
                self.node_id,
                validator,
                {"kind": "LEDGER_VALIDATE", "entry": wire},
                attempts=VALIDATE_ATTEMPTS,
            )
            for validator in others
        ]
        replies = yield self.net.gather([self.net.spawn(c) for c in coros])
        reasons = {}
        stale_peer = None
        for validator, reply in zip(others, replies):
            if isinstance(reply, BaseException):
                reasons[validator.hex()[:8]] = "timeout"
                continue
            if "_err" in reply:
                reasons[validator.hex()[:8]] = reply["_err"]
                if "index" in reply["_err"] or "prev_hash" in reply["_err"]:
                    stale_peer = validator
                continue
            signature = bytes.fromhex(reply["signature"])
            key = self.vset.keys.get(validator)
            if key and crypto.verify(key, entry.entry_hash, signature):
                signatures[validator] = signature
            else:
                reasons[validator.hex()[:8]] = "bad signature"
        if len(signatures) < self.vset.quorum:
            if stale_peer is not None:
                # my own view may be behind; catch up before the client retries
                yield from self._sync_from(stale_peer)
            return {"_err": f"QuorumNotReached: {len(signatures)}/{self.vset.quorum} ({reasons})"}
        committed = ledger_mod.LedgerEntry(
            index=entry.index,
            timestamp=entry.timestamp,
            prev_hash=entry.prev_hash,
            entry_type=entry.entry_type,
            body=entry.body,
            proposer=entry.proposer,
            signatures=signatures,
            entry_hash=entry.entry_hash,
        )
        status = self.replica.apply(committed)
        if status != "applied":
            return {"_err": f"ChainMismatch: {status}"}
        self.net.record("commit", node=self.node_id.hex(), index=committed.index,
                        etype=entry_type, hash=committed.entry_hash.hex())
        wire = committed.to_wire()
        for node_id in sorted(self.net.handlers):
            if node_id != self.node_id:
                self.net.spawn(
                    self.net.rpc_retry(
                        self.node_id, node_id, {"kind": "LEDGER_COMMIT", "entry": wire}, attempts=5
                    )
                )
        return {"entry": wire}

    def _handle_validate(self, src: bytes, payload: dict):
        """Coroutine: co-sign a draft after checking it against local state."""
        entry = ledger_mod.LedgerEntry.from_wire(payload["entry"])
        if self.byzantine_sign_anything:
            return {"signature": self.keypair.sign(entry.entry_hash).hex()}
        if not self.config.validator:
            return {"_err": "not a validator"}
        if entry.index > self.replica.next_index:
            yield from self._sync_from(src)
        reason = ledger_mod.validate_draft(
            entry, self.replica.next_index, self.replica.tip_hash,
            self.replica.tip_timestamp, self.vset,
        )
        if reason:
            return {"_err": f"ValidationRejected: {reason}"}
        return {"signature": self.keypair.sign(entry.entry_hash).hex()}

    def _handle_commit(self, src: bytes, payload: dict):
        entry = ledger_mod.LedgerEntry.from_wire(payload["entry"])
        status = self.replica.apply(entry)
        if status == "buffered":
            self.net.spawn(self._sync_from(src))
        return {"status": status}

    def _sync_from(self, peer: bytes):
        """Coroutine: pull missing committed entries from a peer."""
        while True:
            want = self.replica.next_index
            try:
                reply = yield from self.net.rpc_retry(
                    self.node_id, peer, {"kind": "LEDGER_SYNC", "from_index": want}, attempts=2
                )
            except RpcTimeout:
                return
            entries = reply.get("entries", [])
            if not entries:
                return
            for wire in entries:
                self.replica.apply(ledger_mod.LedgerEntry.from_wire(wire))
            if self.replica.next_index <= want:
                return

    def ledger_submit(self, entry_type: str, body: dict):
        """Coroutine -> committed LedgerEntry (env interface for wallets/API).

        Lossy validator round-trips surface as QuorumNotReached at the leader;
        the submission id makes re-submitting safe, so transient quorum
        failures are retried alongside plain timeouts."""
        payload = {
            "kind": "LEDGER_SUBMIT",
            "entry_type": entry_type,
            "body": body,
            "sid": self.randbytes(8).hex(),
        }
        guess = self.vset.leader_for(self.replica.next_index)
        reply = None
        last_failure: object = None
        for _ in range(SUBMIT_ROUNDS):
            payload["next"] = self.replica.next_index
            try:
                if guess == self.node_id:
                    candidate = yield from self._handle_submit(self.node_id, payload)
                else:
                    candidate = yield from self.net.rpc_retry(
                        self.node_id, guess, payload, attempts=2,
                        timeout_ms=self.net.config.submit_timeout_ms,
                    )
            except RpcTimeout as exc:
                last_failure = exc
                # rotate to the next validator as a gateway; it will redirect
                order = self.vset.validators
                guess = order[(order.index(guess) + 1) % len(order)] if guess in order else order[0]
                continue
            if "_redirect" in candidate:
                target = bytes.fromhex(candidate["_redirect"])
                if int(candidate.get("_next", 0)) > self.replica.next_index and guess != self.node_id:
                    yield from self._sync_from(guess)  # the redirecting node is ahead of me
                guess = target if target != self.node_id else self.vset.leader_for(self.replica.next_index)
                continue
            if "_err" in candidate and candidate["_err"].startswith("QuorumNotReached"):
                last_failure = candidate
                continue
            reply = candidate
            break
        if reply is None:
            if isinstance(last_failure, dict):
                raise _ledger_error(last_failure["_err"])
            raise last_failure if last_failure is not None else RpcTimeout("submit failed")
        if "_err" in reply:
            raise _ledger_error(reply["_err"])
        entry = ledger_mod.LedgerEntry.from_wire(reply["entry"])
        if entry.index >= self.replica.next_index:
            status = self.replica.apply(entry)
            if status == "buffered":
                yield from self._sync_from(guess)
        return entry

    # ----------------------------------------------------------------- dht flow --

    def _find_node_rpc(self, peer: bytes, target: bytes):
        if peer == self.node_id:
            return self.routing.closest(target, dht.K)
        reply = yield from self.net.rpc_retry(
            self.node_id, peer, {"kind": "FIND_NODE", "target": target.hex()}, attempts=3
        )
        return [bytes.fromhex(c) for c in reply["contacts"]]

    def _run_parallel(self, coros: list):
        results = yield self.net.gather([self.net.spawn(c) for c in coros])
        return [None if isinstance(r, BaseException) else r for r in results]

    def find_node(self, target: bytes):
        """Coroutine -> contacts sorted by xor distance (lookup rounds traced)."""
        contacts, rounds = yield from dht.iterative_find_node(
            self.node_id, target, self.routing, self._find_node_rpc,
            run_parallel=self._run_parallel,
        )
        if rounds:
            self.net.lookup_rounds.append(rounds)
        return contacts

    def routing_update(self, peer: bytes):
        """Coroutine: bucket update with liveness ping on overflow."""

        def ping(candidate: bytes):
            try:
                reply = yield from self.net.rpc(
                    self.node_id, candidate, {"kind": "PING"}, timeout_ms=dht.PING_TIMEOUT_MS
                )
                return "ok" in reply
            except RpcTimeout:
                return False

        result = yield from self.routing.update(peer, ping)
        return result

    def provide(self, cid: ContentId):
        """Coroutine: store a provider record on the K closest nodes to the key."""
        key = dht.key_for_cid(cid)
        contacts = yield from self.find_node(key)
        candidates = sorted(
            set(contacts) | {self.node_id}, key=lambda p: dht.xor_distance(p, key)
        )[: dht.K]
        coros = []
        for target in candidates:
            if target == self.node_id:
                self.providers.add(key, self.node_id, self.now_ms())
            else:
                coros.append(
                    self.net.rpc_retry(
                        self.node_id,
                        target,
                        {"kind": "ADD_PROVIDER", "key": key.hex(), "provider": self.node_id.hex()},
                    )
                )
        if coros:
            yield self.net.gather([self.net.spawn(c) for c in coros])
        return len(candidates)

    def find_providers(self, cid: ContentId):
        """Coroutine -> sorted list of provider node ids (expired ones excluded)."""
        key = dht.key_for_cid(cid)
        contacts = yield from self.find_node(key)
        providers: set[bytes] = set(self.providers.get(key, self.now_ms()))
        queries = []
        for target in contacts[: dht.K]:
            if target == self.node_id:
                continue
            queries.append(
                self.net.rpc_retry(
                    self.node_id, target, {"kind": "FIND_PROVIDERS", "key": key.hex()}
                )
            )
        replies = yield from self._run_parallel(queries)
        for reply in replies:
            if reply and "providers" in reply:
                providers.update(bytes.fromhex(p) for p in reply["providers"])
        return sorted(providers)

    def fetch_block(self, cid: ContentId, rounds: int = 3):
        """Coroutine: ensure the block is in the local store. Provider
        discovery and the fetch itself are retried as a unit, since either
        half can fail transiently on a lossy network."""
        if self.store.has(cid):
            return
        for _ in range(rounds):
            providers = yield from self.find_providers(cid)
            for provider in providers:
                if provider == self.node_id:
                    continue
                try:
                    reply = yield from self.net.rpc_retry(
                        self.node_id, provider, {"kind": "BLOCK_FETCH", "cid": cid.text}
                    )
                except RpcTimeout:
                    continue
                if "_err" in reply:
                    continue
                data = bytes.fromhex(reply["data"])
                if hashlib.sha256(data).digest() != cid.digest:
                    continue  # corrupted or dishonest provider
                self.store.put_block(data, kind=reply.get("block_kind", "leaf"), pin=True)
                return
        raise NotFound(f"no provider could serve {cid.text}")

    def fetch_bytes(self, cid: ContentId):
        """Coroutine -> payload bytes, resolving manifests across the network."""
        yield from self.fetch_block(cid)
        block = self.store.get_block(cid)
        if block.kind == "manifest":
            from .content_store import Manifest

            manifest = Manifest.decode(block.data)
            for child in manifest.children:
                yield from self.fetch_block(child)
        return self.store.get_bytes(cid)

    def fetch_ciphertext(self, cid: ContentId):
        data = yield from self.fetch_bytes(cid)
        return data

    def fetch_envelope(self, document_id: str):
        """Coroutine -> the document's latest envelope version."""
        info = self.get_document(document_id)
        if info is None:
            raise NotFound(f"unknown document {document_id!r}")
        data = yield from self.fetch_bytes(ContentId.parse(info["envelope_cid"]))
        return crypto.DocumentEnvelope.from_wire(json.loads(data.decode("utf-8")))

    def store_envelope(self, envelope: crypto.DocumentEnvelope):
        """Coroutine: pin the envelope bytes locally and advertise them."""
        cid = self.store.put_bytes(envelope.encode(), pin=True)
        yield from self.provide(cid)
        return cid

    # ------------------------------------------------------------------ identity --

    def register_identity(self, record: crypto.IdentityRecord, validator: bool = False):
        """Coroutine -> ledger entry for the registration."""
        body = {"record": record.to_wire()}
        if validator:
            body["validator"] = True
        entry = yield from self.ledger_submit("IdentityRegistered", body)
        return entry

    # ------------------------------------------------------------------- ingest --

    def ingest_document(
        self,
        record: dict,
        schema_ref: tuple[str, str],
        issuer_wallet: Wallet,
        subject: Optional[bytes] = None,
        document_id: Optional[str] = None,
    ):
        """Coroutine: validate against the registered schema, seal with the
        issuer as sole initial recipient, publish, and commit DocumentIssued."""
        schema = yield from self.registered_schema(schema_ref)
        reasons = interop.validate_record(record, schema)
        if reasons:
            raise interop.SchemaValidationError(reasons)
        payload = canonical_json(record)
        envelope = crypto.seal_document(
            payload,
            issuer_wallet.keypair,
            [issuer_wallet.record],
            tuple(schema_ref),
            self.store,
            document_id=document_id,
            randbytes=self.randbytes,
        )
        envelope_cid = self.store.put_bytes(envelope.encode(), pin=True)
        body = {
            "document_id": envelope.document_id,
            "schema_ref": list(schema_ref),
            "issuer": issuer_wallet.identity_id.hex(),
            "payload_hash": canonical_hash(record).hex(),
            "envelope_cid": envelope_cid.text,
        }
        if subject is not None:
            body["subject"] = subject.hex()
        entry = yield from self.ledger_submit("DocumentIssued", body)
        yield from self.provide(envelope.ciphertext_cid)
        yield from self.provide(envelope_cid)
        return envelope, entry

    def ingest_legacy_record(
        self,
        adapter: interop.AdapterConfig,
        raw_record: dict,
        issuer_wallet: Wallet,
    ):
        """Coroutine: external-system row in, sealed envelope plus
        DocumentIssued entry out. The adapter declares the source schema the
        row must parse against and optionally which field names the subject."""
        subject = None
        if adapter.subject_field and adapter.subject_field in raw_record:
            try:
                subject = bytes.fromhex(str(raw_record[adapter.subject_field]))
            except ValueError:
                raise interop.SchemaValidationError(
                    {adapter.subject_field: "subject field must be an identity id"}
                )
            raw_record = {k: v for k, v in raw_record.items() if k != adapter.subject_field}
        reasons = interop.validate_record(raw_record, adapter.source_schema)
        if reasons:
            raise interop.SchemaValidationError(reasons)
        result = yield from self.ingest_document(
            raw_record, adapter.source_schema.ref, issuer_wallet, subject=subject
        )
        return result

    # -------------------------------------------------------------------- policy --

    def register_policy(self, source: str, owner: bytes):
        """Coroutine -> PolicyRegistered entry; the source becomes a pinned block."""
        ast = policy_mod.parse_policy(source)  # parse failures propagate
        source_bytes = source.encode("utf-8")
        cid = self.store.put_bytes(source_bytes, pin=True)
        policy_id = "pol-" + self.randbytes(8).hex()
        body = {
            "policy_id": policy_id,
            "owner": owner.hex(),
            "source_hash": cid.digest.hex(),
            "trigger": ast.trigger,
        }
        entry = yield from self.ledger_submit("PolicyRegistered", body)
        yield from self.provide(cid)
        self._policy_cache[policy_id] = ast
        return {"policy_id": policy_id, "entry_index": entry.index, "source_hash": cid.digest.hex()}

    def _policy_ast(self, registration: dict):
        """Coroutine -> parsed AST for a registered policy (source via the store)."""
        policy_id = registration["policy_id"]
        if policy_id not in self._policy_cache:
            source = yield from self.fetch_bytes(
                ContentId(bytes.fromhex(registration["source_hash"]))
            )
            self._policy_cache[policy_id] = policy_mod.parse_policy(source.decode("utf-8"))
        return self._policy_cache[policy_id]

    def handle_event(self, event: policy_mod.Event, policy_id: Optional[str] = None):
        """Coroutine: evaluate registered policies matching the trigger and
        execute the resulting actions in order. Returns the executed actions."""
        registrations = [
            r for r in self.policies() if policy_id is None or r["policy_id"] == policy_id
        ]
        if policy_id is not None and not registrations:
            raise policy_mod.UnknownPolicy(f"policy {policy_id!r} is not registered")
        view = LedgerView(self)
        executed: list[policy_mod.Action] = []
        matched = False
        for registration in registrations:
            if registration["trigger"] != event.event_type:
                continue
            matched = True
            ast = yield from self._policy_ast(registration)
            actions = policy_mod.evaluate(ast, event, view, self.now_ms())
            for action in actions:
                yield from self._execute_action(action, event)
                executed.append(action)
        if not matched:
            executed.append(policy_mod.Action("deny", ("no policy matches this event",)))
        return executed

    def _execute_action(self, action: policy_mod.Action, event: policy_mod.Event):
        """Coroutine: ledger commit precedes any key re-wrap."""
        if action.kind == "release_document":
            document_id, grantee_hex = str(action.args[0]), str(action.args[1])
            body = {
                "document_id": document_id,
                "grantee": grantee_hex,
            }
            if "request_id" in event.fields:
                body["request_id"] = event.fields["request_id"]
            yield from self.ledger_submit("DocumentAccessed", body)
            yield from self._ensure_recipient(document_id, grantee_hex)
        elif action.kind == "deny":
            reason = str(action.args[0]) if action.args else "denied"
            body = {
                "kind": "access_denied",
                "subject": str(event.fields.get("requester", "")),
                "document_id": str(event.fields.get("document", "")),
                "reason": reason,
            }
            if "grantor" in event.fields:
                body["grantor"] = str(event.fields["grantor"])
            yield from self.ledger_submit("AuthEvent", body)
        elif action.kind == "record":
            entry_type = str(action.args[0])
            body = {k: v for k, v in sorted(event.fields.items())}
            body.setdefault("document_id", str(event.fields.get("document", "")))
            body.setdefault("grantee", str(event.fields.get("requester", "")))
            body.setdefault("kind", "policy_record")
            body.setdefault("subject", str(event.fields.get("requester", "")))
            yield from self.ledger_submit(entry_type, body)
        elif action.kind == "notify":
            identity_hex, message = str(action.args[0]), str(action.args[1])
            wallet = self.wallet_for(identity_hex)
            if wallet is not None:
                self.notify(identity_hex, message)
            else:
                yield from self._notify_remote(identity_hex, message)
        else:
            raise ValueError(f"unknown action kind {action.kind!r}")

    def _notify_remote(self, identity_hex: str, message: str):
        try:
            target = bytes.fromhex(identity_hex)
        except ValueError:
            return
        if target in self.net.handlers:
            try:
                yield from self.net.rpc_retry(
                    self.node_id, target, {"kind": "NOTIFY", "identity": identity_hex, "message": message}
                )
            except RpcTimeout:
                pass

    def _ensure_recipient(self, document_id: str, grantee_hex: str):
        """Coroutine: idempotent re-wrap executed after the access entry commits.
        Requires a local wallet holding a recipient key; if none exists the
        grantee must already hold a wrapped key from approval time."""
        envelope = yield from self.fetch_envelope(document_id)
        grantee = bytes.fromhex(grantee_hex)
        if grantee in envelope.wrapped_keys:
            return
        grantee_record = self.get_identity(grantee)
        if grantee_record is None:
            return
        for wallet in self.wallets.values():
            if wallet.identity_id in envelope.wrapped_keys:
                new_envelope = crypto.add_recipient(
                    envelope, wallet.keypair, grantee_record, self.randbytes
                )
                yield from self.store_envelope(new_envelope)
                return

    # ------------------------------------------------------------------ documents --

    def open_payload(self, subject_hex: str, document_id: str):
        """Coroutine: policy-gated payload access for the token subject.

        Issuer and data subject read their own documents directly; everyone
        else passes through the registered access policy. Every grant lands a
        DocumentAccessed entry; every refusal an access_denied AuthEvent."""
        info = self.get_document(document_id)
        if info is None:
            raise NotFound(f"unknown document {document_id!r}")
        wallet = self.wallet_for(subject_hex)
        if wallet is None:
            raise PermissionDenied("subject has no wallet on this node")
        controller = info["subject"] or info["issuer"]

        if subject_hex in (info["issuer"], info["subject"]):
            envelope = yield from self.fetch_envelope(document_id)
            if wallet.identity_id not in envelope.wrapped_keys:
                yield from self._record_denial(subject_hex, document_id, controller, "not a recipient")
                raise crypto.NotARecipient("subject holds no key for this document")
            yield from self.ledger_submit(
                "DocumentAccessed", {"document_id": document_id, "grantee": subject_hex}
            )
            payload = yield from wallet.open_document(document_id)
            return payload

        event = policy_mod.make_event(
            "access_request",
            {
                "document": document_id,
                "requester": subject_hex,
                "grantor": controller,
            },
        )
        actions = yield from self.handle_event(event)
        released = any(a.kind == "release_document" for a in actions)
        if not released:
            reasons = [a.args[0] for a in actions if a.kind == "deny" and a.args]
            raise PermissionDenied(str(reasons[0]) if reasons else "access denied")
        envelope = yield from self.fetch_envelope(document_id)
        if wallet.identity_id not in envelope.wrapped_keys:
            yield from self._record_denial(subject_hex, document_id, controller, "key unavailable")
            raise crypto.NotARecipient("no wrapped key for subject")
        payload = yield from wallet.open_document(document_id)
        return payload

    def _record_denial(self, subject_hex: str, document_id: str, controller: str, reason: str):
        body = {
            "kind": "access_denied",
            "subject": subject_hex,
            "document_id": document_id,
            "reason": reason,
            "grantor": controller,
        }
        yield from self.ledger_submit("AuthEvent", body)

    # --------------------------------------------------------------------- auth --

    def sign_in(self, username: str, password: str, audience: str, scopes=DEFAULT_SCOPES):
        """Coroutine -> token text. AuthEvent is committed on success and failure."""
        if audience not in self.config.audiences:
            raise UnknownAudience(f"audience {audience!r} not served here")
        if not self.accounts.verify(username, password):
            yield from self.ledger_submit(
                "AuthEvent",
                {"kind": "sign_in_failed", "subject": username, "audience": audience},
            )
            raise InvalidCredentials("unknown account or wrong password")
        identity = self.accounts.identity_for(username)
        if identity is None:
            raise InvalidCredentials("account is not bound to an identity")
        token = mint_token(
            self.keypair, self.node_id, identity, audience, list(scopes), self.now_ms()
        )
        yield from self.ledger_submit(
            "AuthEvent",
            {"kind": "token_issued", "subject": identity.hex(), "audience": audience},
        )
        self.sessions.setdefault(identity.hex(), []).append(token)
        return token

    def issue_code(self, subject_hex: str, audience: str) -> str:
        if audience not in self.config.audiences:
            raise UnknownAudience(f"audience {audience!r} not served here")
        return self.codes.issue(bytes.fromhex(subject_hex), audience, self.now_ms(), self.randbytes)

    def exchange_code(self, code: str, audience: str, scopes=DEFAULT_SCOPES):
        """Coroutine -> token text; single-use enforced by the code table."""
        subject_hex = self.codes.exchange(code, audience, self.now_ms())
        token = mint_token(
            self.keypair, self.node_id, bytes.fromhex(subject_hex), audience,
            list(scopes), self.now_ms(),
        )
        yield from self.ledger_submit(
            "AuthEvent",
            {"kind": "token_issued", "subject": subject_hex, "audience": audience},
        )
        self.sessions.setdefault(subject_hex, []).append(token)
        return token

    def node_key_lookup(self, node_hex: str) -> Optional[bytes]:
        """Signing key for a token-issuing node, from the identity registry."""
        if node_hex == self.node_id.hex():
            return self.record.sign_public
        record = self.get_identity_by_hex(node_hex)
        return record.sign_public if record else None

    # -------------------------------------------------------------------- search --

    def _search_index(self) -> tuple[SearchIndex, dict]:
        version = self.replica.next_index
        catalog: dict[str, tuple[str, str]] = {}
        for doc_id, info in self.documents().items():
            catalog[doc_id] = ("document", info.schema_ref[1])
        for identity in self.identities():
            catalog[identity.identity_id.hex()] = ("entity", identity.display_name)
        for registration in self.policies():
            catalog[registration["policy_id"]] = ("service", registration["trigger"])
        if self._search_cache is not None and self._search_cache[0] == version:
            return self._search_cache[1], catalog
        pairs = []
        for key_id in catalog:
            prefix = int.from_bytes(hashlib.sha256(key_id.encode()).digest()[:8], "big")
            pairs.append((prefix, key_id))
        index = SearchIndex.build(pairs)
        self._search_cache = (version, index)
        return index, catalog

    def _document_visible(self, doc: DocumentInfo, subject_hex: str) -> bool:
        if subject_hex in (doc.issuer, doc.subject):
            return True
        for record in ledger_mod.consent_records(self.replica.entries, self.now_ms()):
            if record.document_id == doc.document_id and record.grantee.hex() == subject_hex:
                return True
        return False

    @staticmethod
    def _kind_matches(kind_filter: Optional[str], entry_kind: str) -> bool:
        aliases = {"document": "documents", "service": "services", "entity": "entities"}
        return kind_filter in (None, entry_kind, aliases[entry_kind])

    def search(self, query: str, kind: Optional[str], subject_hex: str) -> list[dict]:
        """Exact ids resolve through the learned index; free text ranks by
        case-insensitive token matches over names and document type labels."""
        index, catalog = self._search_index()
        results: list[dict] = []
        prefix = int.from_bytes(hashlib.sha256(query.encode()).digest()[:8], "big")
        located = index.lookup(prefix)
        if located is not None and located == query:
            entry_kind, label = catalog[located]
            if self._kind_matches(kind, entry_kind):
                results.append({"id": located, "kind": entry_kind, "label": label, "score": 1000})

        tokens = [t for t in query.lower().split() if t]
        docs = self.documents()
        if tokens:
            for key_id, (entry_kind, label) in sorted(catalog.items()):
                if not self._kind_matches(kind, entry_kind):
                    continue
                if entry_kind == "document":
                    doc = docs[key_id]
                    if not self._document_visible(doc, subject_hex):
                        continue
                haystack = label.lower()
                score = sum(1 for t in tokens if t in haystack)
                if score > 0 and key_id != (results[0]["id"] if results else None):
                    results.append({"id": key_id, "kind": entry_kind, "label": label, "score": score})
        results.sort(key=lambda r: (-r["score"], r["id"]))
        return results
