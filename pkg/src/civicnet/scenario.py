"""Scenario scripts: load, statically validate, and execute against a world.

Steps mirror the node API one-to-one, so a scripted run exercises exactly the
code paths a wallet UI would. References between steps use aliases: documents
get an alias at ingest, requests at request time; later steps resolve them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .corpusgen import fixture_password
from .world import ActorSpec, World, WorldConfig

STEP_KINDS = frozenset(
    {
        "register_identity",
        "ingest_document",
        "sign_in",
        "request_document",
        "approve_request",
        "deny_request",
        "revoke_consent",
        "open_document_as",
        "advance_clock",
        "assert_ledger",
        "assert_denied",
        "partition",
        "heal",
    }
)

VALID_ROLES = ("citizen", "authority", "business")


class ScenarioError(Exception):
    def __init__(self, step_index: Optional[int], message: str):
        self.step_index = step_index
        prefix = f"step {step_index}: " if step_index is not None else ""
        super().__init__(prefix + message)


class ScenarioAssertionFailed(Exception):
    def __init__(self, step_index: int, expected, actual):
        self.step_index = step_index
        self.expected = expected
        self.actual = actual
        super().__init__(f"step {step_index}: expected {expected}, got {actual}")


@dataclass
class ScenarioScript:
    name: str
    actors: list[ActorSpec]
    steps: list[dict]

    @property
    def actor_names(self) -> list[str]:
        return [a.name for a in self.actors]


def load_scenario(path: Path) -> ScenarioScript:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    actors = [
        ActorSpec(name=a["name"], role=a["role"], country=a.get("country", ""))
        for a in raw.get("actors", [])
    ]
    script = ScenarioScript(
        name=raw.get("name", Path(path).stem), actors=actors, steps=list(raw.get("steps", []))
    )
    validate_scenario(script)
    return script


def validate_scenario(script: ScenarioScript) -> None:
    if not script.actors:
        raise ScenarioError(None, "scenario defines no actors")
    names = set()
    for actor in script.actors:
        if actor.role not in VALID_ROLES:
            raise ScenarioError(None, f"actor {actor.name!r} has unknown role {actor.role!r}")
        if actor.name in names:
            raise ScenarioError(None, f"duplicate actor {actor.name!r}")
        names.add(actor.name)
    _validate_steps(script.steps, names, set(), set(), set())


def _validate_steps(steps, actor_names, doc_aliases, request_refs, consent_refs, base_index=0):
    def require_actor(i, step, *keys):
        for key in keys:
            value = step.get(key)
            if value is None:
                raise ScenarioError(i, f"missing {key!r}")
            if value not in actor_names:
                raise ScenarioError(i, f"unknown actor {value!r}")

    for offset, step in enumerate(steps):
        i = base_index + offset
        kind = step.get("op")
        if kind not in STEP_KINDS:
            raise ScenarioError(i, f"unknown step kind {kind!r}")
        if kind == "register_identity":
            require_actor(i, step, "actor")
            for authority in step.get("attested_by", []):
                if authority not in actor_names:
                    raise ScenarioError(i, f"unknown attesting actor {authority!r}")
        elif kind == "sign_in":
            require_actor(i, step, "actor")
        elif kind == "ingest_document":
            require_actor(i, step, "issuer")
            if step.get("subject") is not None and step["subject"] not in actor_names:
                raise ScenarioError(i, f"unknown subject {step['subject']!r}")
            alias = step.get("alias")
            if not alias:
                raise ScenarioError(i, "ingest_document needs an alias")
            if not step.get("schema_ref") or not step.get("record"):
                raise ScenarioError(i, "ingest_document needs schema_ref and record")
            doc_aliases.add(alias)
        elif kind == "request_document":
            require_actor(i, step, "requester", "grantor")
            if step.get("doc") is None and step.get("doc_class") is None:
                raise ScenarioError(i, "request needs doc or doc_class")
            if step.get("doc") is not None and step["doc"] not in doc_aliases:
                raise ScenarioError(i, f"dangling document reference {step['doc']!r}")
            ref = step.get("ref")
            if not ref:
                raise ScenarioError(i, "request_document needs a ref")
            request_refs.add(ref)
        elif kind in ("approve_request", "deny_request"):
            require_actor(i, step, "actor")
            if step.get("ref") not in request_refs:
                raise ScenarioError(i, f"dangling request reference {step.get('ref')!r}")
            if kind == "approve_request":
                if step.get("doc") is not None and step["doc"] not in doc_aliases:
                    raise ScenarioError(i, f"dangling document reference {step['doc']!r}")
                consent_refs.add(step["ref"])
        elif kind == "revoke_consent":
            require_actor(i, step, "actor")
            if step.get("ref") not in consent_refs:
                raise ScenarioError(i, f"dangling consent reference {step.get('ref')!r}")
        elif kind == "open_document_as":
            require_actor(i, step, "actor")
            if step.get("doc") not in doc_aliases:
                raise ScenarioError(i, f"dangling document reference {step.get('doc')!r}")
        elif kind == "advance_clock":
            if "seconds" not in step:
                raise ScenarioError(i, "advance_clock needs seconds")
        elif kind == "assert_ledger":
            pass
        elif kind == "assert_denied":
            inner = step.get("step")
            if not isinstance(inner, dict):
                raise ScenarioError(i, "assert_denied wraps a step object")
            _validate_steps([inner], actor_names, doc_aliases, request_refs, consent_refs, i)
        elif kind == "partition":
            sides = step.get("sides")
            if not sides or len(sides) != 2:
                raise ScenarioError(i, "partition needs two sides")
            for side in sides:
                for name in side:
                    if name not in actor_names:
                        raise ScenarioError(i, f"unknown actor {name!r} in partition")


@dataclass
class RunState:
    tokens: dict[str, str] = field(default_factory=dict)
    docs: dict[str, str] = field(default_factory=dict)
    requests: dict[str, str] = field(default_factory=dict)
    consents: dict[str, str] = field(default_factory=dict)


class ScenarioRunner:
    def __init__(self, world: World, script: ScenarioScript):
        self.world = world
        self.script = script
        self.state = RunState()

    def run(self) -> RunState:
        for i, step in enumerate(self.script.steps):
            self.run_step(i, step)
        return self.state

    def _token(self, i: int, actor: str) -> str:
        token = self.state.tokens.get(actor)
        if token is None:
            raise ScenarioError(i, f"actor {actor!r} has not signed in")
        return token

    def _expect(self, i: int, condition: bool, expected, actual) -> None:
        if not condition:
            raise ScenarioAssertionFailed(i, expected, actual)

    def run_step(self, i: int, step: dict, expect_failure: bool = False) -> tuple[int, dict]:
        kind = step["op"]
        handler = getattr(self, f"_step_{kind}")
        status, response = handler(i, step)
        # quiesce: let replication broadcasts and retries land, then repair any
        # replicas that lost their commit fan-out, so steps stay causal
        self.world.net.run_all()
        self.world.converge_replicas()
        if not expect_failure and status >= 400:
            raise ScenarioAssertionFailed(i, "success", f"{status} {response}")
        return status, response

    # -- step handlers --------------------------------------------------------

    def _step_register_identity(self, i, step):
        actor = step["actor"]
        for authority in step.get("attested_by", []):
            self.world.attest(actor, authority)
        record = self.world.identities[actor]
        return self.world.api(actor, "POST", "/identities", body={"record": record.to_wire()})

    def _step_sign_in(self, i, step):
        actor = step["actor"]
        username = actor.lower()
        status, response = self.world.api(
            actor,
            "POST",
            "/auth/token",
            body={
                "grant_type": "password",
                "username": username,
                "password": step.get("password", fixture_password(username)),
                "audience": step.get("audience", "wallet"),
            },
        )
        if status == 200:
            self.state.tokens[actor] = response["access_token"]
        return status, response

    def _step_ingest_document(self, i, step):
        issuer = step["issuer"]
        body = {
            "record": step["record"],
            "schema_ref": step["schema_ref"],
        }
        if step.get("subject"):
            body["subject"] = self.world.identity_hex(step["subject"])
        status, response = self.world.api(
            issuer, "POST", "/documents", token=self._token(i, issuer), body=body
        )
        if status == 201:
            self.state.docs[step["alias"]] = response["document_id"]
        return status, response

    def _step_request_document(self, i, step):
        requester = step["requester"]
        body = {
            "grantor": self.world.identity_hex(step["grantor"]),
            "purpose": step.get("purpose", ""),
        }
        if step.get("doc") is not None:
            body["document_id"] = self.state.docs[step["doc"]]
        if step.get("doc_class") is not None:
            body["doc_class"] = step["doc_class"]
        status, response = self.world.api(
            requester, "POST", "/requests", token=self._token(i, requester), body=body
        )
        if status == 201:
            self.state.requests[step["ref"]] = response["request_id"]
        return status, response

    def _step_approve_request(self, i, step):
        actor = step["actor"]
        request_id = self.state.requests[step["ref"]]
        body = {"scope": step.get("scope", "read")}
        if step.get("expires_in_s") is not None:
            body["expires_at"] = self.world.net.now_ms + int(step["expires_in_s"] * 1000)
        if step.get("doc") is not None:
            body["document_id"] = self.state.docs[step["doc"]]
        status, response = self.world.api(
            actor, "POST", f"/requests/{request_id}/approve", token=self._token(i, actor), body=body
        )
        if status == 200:
            self.state.consents[step["ref"]] = response["consent_id"]
        return status, response

    def _step_deny_request(self, i, step):
        actor = step["actor"]
        request_id = self.state.requests[step["ref"]]
        return self.world.api(
            actor, "POST", f"/requests/{request_id}/deny", token=self._token(i, actor), body={}
        )

    def _step_revoke_consent(self, i, step):
        actor = step["actor"]
        consent_id = self.state.consents[step["ref"]]
        return self.world.api(
            actor, "POST", f"/consents/{consent_id}/revoke", token=self._token(i, actor), body={}
        )

    def _step_open_document_as(self, i, step):
        actor = step["actor"]
        document_id = self.state.docs[step["doc"]]
        status, response = self.world.api(
            actor, "GET", f"/documents/{document_id}/payload", token=self._token(i, actor)
        )
        if status == 200 and step.get("expect_fields"):
            record = json.loads(bytes.fromhex(response["payload"]).decode("utf-8"))
            for key, value in step["expect_fields"].items():
                self._expect(i, record.get(key) == value, {key: value}, {key: record.get(key)})
        return status, response

    def _step_advance_clock(self, i, step):
        self.world.advance_clock(float(step["seconds"]))
        return 200, {}

    def _step_assert_ledger(self, i, step):
        node_actor = step.get("node", self.script.actors[0].name)
        for check in step.get("checks", []):
            query = {}
            if check.get("type"):
                query["type"] = check["type"]
            if check.get("actor"):
                query["actor"] = self.world.identity_hex(check["actor"])
            status, response = self.world.api(node_actor, "GET", "/ledger", query=query)
            self._expect(i, status == 200, 200, status)
            count = len(response["entries"])
            if "count" in check:
                self._expect(i, count == check["count"], check, {"count": count})
            if "min_count" in check:
                self._expect(i, count >= check["min_count"], check, {"count": count})
        if step.get("verify", False):
            status, response = self.world.api(node_actor, "GET", "/ledger/verify")
            self._expect(i, status == 200 and response.get("ok") is True, {"ok": True}, response)
        return 200, {}

    def _step_assert_denied(self, i, step):
        status, response = self.run_step(i, step["step"], expect_failure=True)
        self._expect(i, status >= 400, "denial (status >= 400)", f"{status} {response}")
        expected_error = step.get("error")
        if expected_error:
            self._expect(
                i,
                expected_error in str(response.get("error", "")) + str(response.get("detail", "")),
                expected_error,
                response,
            )
        return 200, {}

    def _step_partition(self, i, step):
        side_a, side_b = step["sides"]
        self.world.partition(side_a, side_b)
        return 200, {}

    def _step_heal(self, i, step):
        self.world.heal()
        return 200, {}


def run_sim(config: WorldConfig, script: ScenarioScript) -> tuple[World, str]:
    """Build a world for the scenario's actors, execute every step, and return
    (world, trace fingerprint)."""
    world = World.build(config, script.actors)
    runner = ScenarioRunner(world, script)
    runner.run()
    return world, world.net.fingerprint()


def write_trace(world: World, path: Path) -> str:
    data = world.net.trace_bytes()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()
