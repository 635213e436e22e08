"""Network assembly: nodes, validator set, ledger genesis, fixtures.

A world is either one node per actor over the simulated network, or a single
node hosting every wallet (the ``local`` topology behind ``node serve``).
Bootstrap runs before any configured loss or partitions apply: validator
registrations, shipped schemas, the default access policy, fixture accounts,
and a fully-connected DHT.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import crypto, ledger as ledger_mod
from .api import Api
from .corpusgen import build_schemas, fixture_password
from .node import Node, NodeConfig
from .sim import NetConfig, Partition, SimNet


@dataclass
class ActorSpec:
    name: str
    role: str
    country: str = ""


@dataclass
class WorldConfig:
    seed: int = 0
    latency_ms: tuple[int, int] = (5, 50)
    loss_rate: float = 0.0
    partitions: list[Partition] = field(default_factory=list)
    local: bool = False
    data_dir: Optional[Path] = None
    with_accounts: bool = True  # plain routing worlds skip the KDF cost


OPERATOR_NAME = "Operator"

DEFAULT_POLICY_SOURCE = (
    "when access_request "
    "if consent_active(event.grantor, event.requester, event.document) "
    "then release_document(event.document, event.requester)\n"
)


class World:
    def __init__(self, config: WorldConfig):
        self.config = config
        self.net = SimNet(
            NetConfig(
                seed=config.seed,
                latency_ms=config.latency_ms,
                loss_rate=0.0,  # applied after bootstrap
                partitions=config.partitions,
            )
        )
        self.nodes: dict[str, Node] = {}
        self.identities: dict[str, crypto.IdentityRecord] = {}
        self.keypairs: dict[str, crypto.KeyPair] = {}
        self.actors: list[ActorSpec] = []
        self.vset: Optional[ledger_mod.ValidatorSet] = None
        self.operator: Optional[Node] = None
        self.default_policy_id: Optional[str] = None

    # ---------------------------------------------------------------- build --

    @classmethod
    def build(cls, config: WorldConfig, actors: list[ActorSpec]) -> "World":
        world = cls(config)
        world.actors = list(actors)
        world._make_identities()
        world._make_nodes()
        world._bootstrap_ledger()
        world._bootstrap_dht()
        world._bootstrap_accounts()
        world.net.config.loss_rate = config.loss_rate
        return world

    def _identity_seed(self, name: str) -> bytes:
        return hashlib.sha256(f"world/{self.config.seed}/{name}".encode()).digest()

    def _make_identities(self) -> None:
        specs = [ActorSpec(OPERATOR_NAME, "authority")] + self.actors
        for spec in specs:
            record, keypair = crypto.generate_identity(
                spec.role, spec.name, seed=self._identity_seed(spec.name)
            )
            self.identities[spec.name] = record
            self.keypairs[spec.name] = keypair

    def _validator_names(self) -> list[str]:
        if self.config.local:
            return [OPERATOR_NAME]  # single-node deployment validates locally
        names = [OPERATOR_NAME]
        names.extend(spec.name for spec in self.actors if spec.role == "authority")
        return names

    def _make_nodes(self) -> None:
        validator_names = self._validator_names()
        self.vset = ledger_mod.ValidatorSet(
            validators=[self.identities[n].identity_id for n in validator_names],
            keys={self.identities[n].identity_id: self.identities[n].sign_public for n in validator_names},
        )
        operator_cfg = NodeConfig(
            display_name=OPERATOR_NAME, role="authority", validator=True,
            data_dir=self.config.data_dir,
        )
        self.operator = Node(
            self.identities[OPERATOR_NAME], self.keypairs[OPERATOR_NAME],
            self.net, self.vset, operator_cfg,
        )
        self.nodes[OPERATOR_NAME] = self.operator
        if self.config.local:
            for spec in self.actors:
                self.operator.add_wallet(self.identities[spec.name], self.keypairs[spec.name])
            return
        for spec in self.actors:
            cfg = NodeConfig(
                display_name=spec.name, role=spec.role,
                validator=spec.name in validator_names and spec.role == "authority",
            )
            self.nodes[spec.name] = Node(
                self.identities[spec.name], self.keypairs[spec.name], self.net, self.vset, cfg
            )

    def node_for(self, actor: str) -> Node:
        if self.config.local:
            return self.operator
        return self.nodes[actor]

    def _fixture_commit(self, entry_type: str, body: dict) -> ledger_mod.LedgerEntry:
        """Bootstrap-time commit signed directly by every validator keypair."""
        replica = self.operator.replica
        entry = ledger_mod.make_entry(
            replica.next_index, self.net.now_ms, replica.tip_hash,
            entry_type, body, self.vset.leader_for(replica.next_index),
        )
        validator_names = self._validator_names()
        signatures = {
            self.identities[n].identity_id: self.keypairs[n].sign(entry.entry_hash)
            for n in validator_names
        }
        committed = ledger_mod.LedgerEntry(
            index=entry.index, timestamp=entry.timestamp, prev_hash=entry.prev_hash,
            entry_type=entry.entry_type, body=entry.body, proposer=entry.proposer,
            signatures=signatures, entry_hash=entry.entry_hash,
        )
        for node in self.nodes.values():
            status = node.replica.apply(committed)
            assert status == "applied", f"bootstrap entry rejected: {status}"
        return committed

    def _bootstrap_ledger(self) -> None:
        for name in self._validator_names():
            self._fixture_commit(
                "IdentityRegistered",
                {"record": self.identities[name].to_wire(), "validator": True},
            )
        if self.config.local:
            # authorities still act as issuers on a single-node deployment
            for spec in self.actors:
                if spec.role == "authority":
                    self._fixture_commit(
                        "IdentityRegistered", {"record": self.identities[spec.name].to_wire()}
                    )
        for schema in build_schemas():
            data = json.dumps(schema.to_wire(), sort_keys=True).encode("utf-8")
            for node in self.nodes.values():
                node.store.put_bytes(data, pin=True)
            self._fixture_commit(
                "SchemaRegistered",
                {
                    "country": schema.country,
                    "doc_type": schema.doc_type,
                    "schema_hash": hashlib.sha256(data).hexdigest(),
                },
            )
        source = DEFAULT_POLICY_SOURCE
        source_bytes = source.encode("utf-8")
        for node in self.nodes.values():
            node.store.put_bytes(source_bytes, pin=True)
        policy_id = "pol-default-access"
        self._fixture_commit(
            "PolicyRegistered",
            {
                "policy_id": policy_id,
                "owner": self.identities[OPERATOR_NAME].identity_id.hex(),
                "source_hash": hashlib.sha256(source_bytes).hexdigest(),
                "trigger": "access_request",
            },
        )
        self.default_policy_id = policy_id

    def _bootstrap_dht(self) -> None:
        node_list = list(self.nodes.values())
        for node in node_list:
            for other in node_list:
                if other.node_id != node.node_id:
                    node.routing.observe(other.node_id)

    def _bootstrap_accounts(self) -> None:
        if not self.config.with_accounts:
            return
        specs = [ActorSpec(OPERATOR_NAME, "authority")] + self.actors
        for spec in specs:
            username = spec.name.lower()
            node = self.node_for(spec.name) if spec.name != OPERATOR_NAME else self.operator
            salt = hashlib.sha256(f"{self.config.seed}/{username}".encode()).digest()[:16]
            node.accounts.add(
                username, fixture_password(username), display_name=spec.name,
                identity_id=self.identities[spec.name].identity_id, salt=salt,
            )

    # ----------------------------------------------------------------- drive --

    def run(self, coro):
        """Drive a coroutine to completion over the event queue."""
        return self.net.run_until(self.net.spawn(coro))

    def api(self, actor: str, method: str, path: str, query: Optional[dict] = None,
            token: Optional[str] = None, body: Optional[dict] = None) -> tuple[int, dict]:
        node = self.node_for(actor)
        headers = {"authorization": f"Bearer {token}"} if token else {}
        status, response = self.run(Api(node).handle(method, path, query, headers, body))
        self.net.record(
            "api", node=node.node_id.hex(), actor=actor, method=method, path=path, status=status
        )
        return status, response

    def advance_clock(self, seconds: float) -> None:
        self.net.advance_to(self.net.now_ms + int(seconds * 1000))

    def converge_replicas(self, rounds: int = 3) -> None:
        """Anti-entropy at quiescence: nodes that lost commit broadcasts pull
        missing entries from the longest replica. Bounded, so partitions and
        total loss leave replicas divergent rather than looping."""
        for _ in range(rounds):
            longest = max(self.nodes.values(), key=lambda n: n.replica.next_index)
            behind = [
                n for n in self.nodes.values()
                if n.replica.next_index < longest.replica.next_index
            ]
            if not behind:
                return
            for node in behind:
                self.net.spawn(node._sync_from(longest.node_id))
            self.net.run_all()

    def partition(self, side_a: list[str], side_b: list[str]) -> None:
        self.net.config.partitions.append(
            Partition(
                start_ms=self.net.now_ms,
                end_ms=2**62,
                side_a=frozenset(self.identities[n].identity_id for n in side_a),
                side_b=frozenset(self.identities[n].identity_id for n in side_b),
            )
        )

    def heal(self) -> None:
        for partition in self.net.config.partitions:
            if partition.end_ms > self.net.now_ms:
                partition.end_ms = self.net.now_ms

    # --------------------------------------------------------------- fixtures --

    def attest(self, subject: str, authority: str) -> None:
        crypto.attest_identity(
            self.identities[authority], self.keypairs[authority], self.identities[subject]
        )

    def identity_hex(self, actor: str) -> str:
        return self.identities[actor].identity_id.hex()


def build_plain_world(n_nodes: int, seed: int = 0, latency_ms=(5, 50), loss_rate=0.0) -> World:
    """A world of exactly ``n_nodes`` minimal nodes (operator included) for
    routing and storage experiments."""
    actors = [ActorSpec(f"n{i:03d}", "citizen") for i in range(n_nodes - 1)]
    return World.build(
        WorldConfig(seed=seed, latency_ms=latency_ms, loss_rate=loss_rate, with_accounts=False),
        actors,
    )
