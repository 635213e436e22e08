"""Shared fixtures: repo paths, corpora, and a network-free node environment
for exercising wallet flows against a real ledger."""

from pathlib import Path

import pytest

from civicnet import crypto, ledger
from civicnet.content_store import BlockStore, ContentId
from civicnet.interop import SchemaDescriptor, SyntheticCorpus, load_synonyms

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO_ROOT


@pytest.fixture(scope="session")
def corpus() -> SyntheticCorpus:
    return SyntheticCorpus.load_dir(REPO_ROOT / "corpus")


@pytest.fixture(scope="session")
def synonyms():
    return load_synonyms(REPO_ROOT / "corpus" / "synonyms.json")


def schema(name: str) -> SchemaDescriptor:
    return SchemaDescriptor.load(REPO_ROOT / "schemas" / f"{name}.json")


class SeededRand:
    """Deterministic randbytes source for reproducible crypto in tests."""

    def __init__(self, seed: int = 0):
        import random

        self._rng = random.Random(seed)

    def __call__(self, n: int) -> bytes:
        return self._rng.randbytes(n)


class LocalEnv:
    """Node-environment stand-in: local ledger quorum, local store, no network.

    Satisfies the same duck-typed surface the wallet uses on a real node.
    """

    def __init__(self, n_validators: int = 1, seed: int = 0):
        self.randbytes = SeededRand(seed)
        self.store = BlockStore()
        self.clock = [0]
        self.validators = []
        keypairs = {}
        for i in range(n_validators):
            record, keypair = crypto.generate_identity(
                "authority", f"validator-{i}", seed=bytes([i]) * 32
            )
            self.validators.append(record)
            keypairs[record.identity_id] = keypair
        vset = ledger.ValidatorSet(
            validators=[r.identity_id for r in self.validators],
            keys={r.identity_id: r.sign_public for r in self.validators},
        )
        self.replica = ledger.Replica(vset)
        self.writer = ledger.LocalLedgerWriter(self.replica, keypairs, lambda: self.clock[0])
        self._identities: dict[bytes, crypto.IdentityRecord] = {
            r.identity_id: r for r in self.validators
        }
        self._envelopes: dict[str, crypto.DocumentEnvelope] = {}

    # -- env protocol -------------------------------------------------------

    def now_ms(self) -> int:
        return self.clock[0]

    def advance(self, ms: int) -> None:
        self.clock[0] += ms

    def ledger_entries(self):
        return self.replica.entries

    def ledger_submit(self, entry_type, body):
        return self.writer.submit(entry_type, body)
        yield  # generator protocol; never reached

    def get_identity(self, identity_id: bytes):
        return self._identities.get(identity_id)

    def get_document(self, document_id: str):
        for entry in reversed(self.replica.entries):
            if (
                entry.entry_type == "DocumentIssued"
                and entry.body["document_id"] == document_id
            ):
                return dict(entry.body)
        return None

    def fetch_envelope(self, document_id: str):
        envelope = self._envelopes.get(document_id)
        if envelope is None:
            from civicnet.errors import NotFound

            raise NotFound(document_id)
        return envelope
        yield

    def store_envelope(self, envelope):
        self._envelopes[envelope.document_id] = envelope
        return self.store.put_bytes(envelope.encode(), pin=True)
        yield

    def fetch_ciphertext(self, cid: ContentId):
        return self.store.get_bytes(cid)
        yield

    # -- fixture helpers ------------------------------------------------------

    def add_identity(self, role: str, name: str, seed_byte: int):
        record, keypair = crypto.generate_identity(role, name, seed=bytes([seed_byte]) * 32)
        self._identities[record.identity_id] = record
        return record, keypair

    def issue_document(self, issuer_record, issuer_keypair, payload: bytes, doc_id: str):
        envelope = crypto.seal_document(
            payload,
            issuer_keypair,
            [issuer_record],
            ("GR", "national_id"),
            self.store,
            document_id=doc_id,
            randbytes=self.randbytes,
        )
        self._envelopes[doc_id] = envelope
        self.writer.submit(
            "DocumentIssued",
            {
                "document_id": doc_id,
                "schema_ref": ["GR", "national_id"],
                "issuer": issuer_record.identity_id.hex(),
                "subject": None,
                "payload_hash": "00" * 32,
                "envelope_cid": ContentId.for_bytes(envelope.encode()).text,
            },
        )
        return envelope
