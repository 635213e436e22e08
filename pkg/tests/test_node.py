import bisect
import random

import pytest

from civicnet.learned_index import EPSILON, SearchIndex
from civicnet.node import analytics_report
from civicnet.world import ActorSpec, World, WorldConfig


# --- learned index vs binary-search oracle ----------------------------------------


def oracle_lookup(keys, locators, key):
    i = bisect.bisect_left(keys, key)
    if i < len(keys) and keys[i] == key:
        return locators[i]
    return None


def test_collinear_keys_single_segment():
    pairs = [(10 * i, f"loc{i}") for i in range(1000)]
    index = SearchIndex.build(pairs)
    assert len(index.segments) == 1
    assert index.max_prediction_error() == 0
    assert index.lookup(500) == "loc50"
    assert index.lookup(505) is None


def test_empty_index():
    index = SearchIndex.build([])
    assert index.lookup(42) is None
    assert len(index) == 0


def test_single_key():
    index = SearchIndex.build([(7, "x")])
    assert index.lookup(7) == "x"
    assert index.lookup(8) is None


def test_smallest_and_largest_keys_found():
    rng = random.Random(5)
    keys = sorted(rng.sample(range(1, 2**40), 5000))
    index = SearchIndex.build([(k, k) for k in keys])
    assert index.lookup(keys[0]) == keys[0]
    assert index.lookup(keys[-1]) == keys[-1]
    assert index.lookup(keys[0] - 1) is None


def test_error_bound_enforced_on_random_keys():
    rng = random.Random(99)
    pairs = [(rng.getrandbits(64), i) for i in range(20_000)]
    index = SearchIndex.build(pairs)
    assert index.max_prediction_error() <= EPSILON


def test_lookup_agrees_with_oracle_on_clustered_keys():
    rng = random.Random(7)
    keys = []
    base = 0
    for _ in range(50):  # clustered key runs stress segmentation
        base += rng.getrandbits(40)
        keys.extend(base + j for j in range(rng.randint(1, 400)))
    keys = sorted(set(keys))
    pairs = [(k, f"v{k}") for k in keys]
    index = SearchIndex.build(pairs)
    assert index.max_prediction_error() <= EPSILON
    probes = keys[:500] + [k + 1 for k in keys[:250]] + [rng.getrandbits(41) for _ in range(500)]
    locators = [f"v{k}" for k in keys]
    for probe in probes:
        assert index.lookup(probe) == oracle_lookup(keys, locators, probe)


def test_duplicate_keys_last_locator_wins():
    index = SearchIndex.build([(5, "first"), (5, "second"), (9, "x")])
    assert index.lookup(5) == "second"


# --- analytics ----------------------------------------------------------------------


def test_analytics_empty_ledger():
    report = analytics_report([])
    assert report.total_entries == 0
    assert report.counts_by_type == {}
    assert report.mean_grant_latency_s == 0.0
    assert report.denied_count == 0


def test_analytics_single_grant_latency():
    from test_ledger import make_writer

    writer, clock, _ = make_writer(1)
    clock[0] = 1000
    writer.submit(
        "AccessRequested",
        {"request_id": "r1", "requester": "aa" * 32, "grantor": "bb" * 32},
    )
    clock[0] = 121_000  # 120 s later
    writer.submit(
        "ConsentGranted",
        {
            "consent_id": "r1", "grantor": "bb" * 32, "grantee": "aa" * 32,
            "document_id": "d", "scope": "read", "request_id": "r1",
        },
    )
    report = analytics_report(writer.replica.entries)
    assert report.mean_grant_latency_s == pytest.approx(120.0)
    assert report.max_grant_latency_s == pytest.approx(120.0)
    assert report.counts_by_type == {"AccessRequested": 1, "ConsentGranted": 1}
    assert report.total_entries == 2


def test_analytics_counts_denials():
    from test_ledger import make_writer

    writer, _, _ = make_writer(1)
    writer.submit("AuthEvent", {"kind": "access_denied", "subject": "aa" * 32})
    writer.submit("AuthEvent", {"kind": "request_denied", "subject": "aa" * 32})
    writer.submit("AuthEvent", {"kind": "token_issued", "subject": "aa" * 32})
    assert analytics_report(writer.replica.entries).denied_count == 2


def test_analytics_index_range():
    from test_ledger import make_writer

    writer, _, _ = make_writer(1)
    for i in range(6):
        writer.submit("AuthEvent", {"kind": "t", "subject": f"{i:02x}"})
    report = analytics_report(writer.replica.entries, index_range=(2, 4))
    assert report.total_entries == 3


# --- node-level behaviour over a tiny world --------------------------------------------


ACTORS = [
    ActorSpec("Alice", "citizen", "GR"),
    ActorSpec("Ministry", "authority", "GR"),
    ActorSpec("Employer", "business", "PT"),
]

RECORD = {
    "onoma": "Alice", "epitheto": "Tester",
    "arithmos_taftotitas": "34567890123",
    "imerominia_gennisis": "12/03/1995", "ithageneia": "GR",
}


@pytest.fixture(scope="module")
def little_world():
    world = World.build(WorldConfig(seed=77, latency_ms=(1, 5)), ACTORS)
    tokens = {}
    for actor in ("Alice", "Ministry", "Employer"):
        status, resp = world.api(actor, "POST", "/auth/token", body={
            "grant_type": "password", "username": actor.lower(),
            "password": f"{actor.lower()}-pass",
        })
        assert status == 200, resp
        tokens[actor] = resp["access_token"]
        world.net.run_all()
    for actor in ("Alice", "Employer"):
        status, _ = world.api(actor, "POST", "/identities",
                              body={"record": world.identities[actor].to_wire()})
        assert status == 201
        world.net.run_all()
    status, resp = world.api("Ministry", "POST", "/documents", token=tokens["Ministry"], body={
        "record": RECORD, "schema_ref": ["GR", "national_id"],
        "subject": world.identity_hex("Alice"),
    })
    assert status == 201, resp
    world.net.run_all()
    return world, tokens, resp["document_id"]


def test_payload_denied_without_consent(little_world):
    world, tokens, doc_id = little_world
    status, resp = world.api("Employer", "GET", f"/documents/{doc_id}/payload",
                             token=tokens["Employer"])
    world.net.run_all()
    assert status == 403
    denials = [e for e in world.operator.replica.entries
               if e.entry_type == "AuthEvent" and e.body.get("kind") == "access_denied"]
    assert denials


def test_subject_denied_until_approved_then_allowed(little_world):
    world, tokens, doc_id = little_world
    status, _ = world.api("Alice", "GET", f"/documents/{doc_id}/payload", token=tokens["Alice"])
    world.net.run_all()
    assert status == 403  # subject holds no key before approval

    status, resp = world.api("Alice", "POST", "/requests", token=tokens["Alice"], body={
        "grantor": world.identity_hex("Ministry"), "document_id": doc_id,
    })
    world.net.run_all()
    assert status == 201
    request_id = resp["request_id"]

    status, resp = world.api("Ministry", "POST", f"/requests/{request_id}/approve",
                             token=tokens["Ministry"], body={"scope": "forward"})
    world.net.run_all()
    assert status == 200, resp

    status, resp = world.api("Alice", "GET", f"/documents/{doc_id}/payload", token=tokens["Alice"])
    world.net.run_all()
    assert status == 200
    import json
    assert json.loads(bytes.fromhex(resp["payload"])) == RECORD

    accessed = [e for e in world.operator.replica.entries if e.entry_type == "DocumentAccessed"]
    assert accessed, "payload read must land a DocumentAccessed entry"


def test_policy_gate_releases_after_consent(little_world):
    world, tokens, doc_id = little_world
    status, resp = world.api("Employer", "POST", "/requests", token=tokens["Employer"], body={
        "grantor": world.identity_hex("Alice"), "document_id": doc_id, "purpose": "hr",
    })
    world.net.run_all()
    request_id = resp["request_id"]
    status, resp = world.api("Alice", "POST", f"/requests/{request_id}/approve",
                             token=tokens["Alice"], body={})
    world.net.run_all()
    assert status == 200, resp

    status, resp = world.api("Employer", "GET", f"/documents/{doc_id}/payload",
                             token=tokens["Employer"])
    world.net.run_all()
    assert status == 200
    entries = world.operator.replica.entries
    released = [e for e in entries if e.entry_type == "DocumentAccessed"
                and e.body.get("grantee") == world.identity_hex("Employer")]
    assert released


def test_search_exact_and_tokens(little_world):
    world, tokens, doc_id = little_world
    status, resp = world.api("Alice", "GET", "/search",
                             query={"q": doc_id}, token=tokens["Alice"])
    assert status == 200
    assert resp["results"][0]["id"] == doc_id

    status, resp = world.api("Alice", "GET", "/search",
                             query={"q": "national", "kind": "documents"}, token=tokens["Alice"])
    assert status == 200
    assert any(r["id"] == doc_id for r in resp["results"])

    status, resp = world.api("Alice", "GET", "/search",
                             query={"q": "alice", "kind": "entities"}, token=tokens["Alice"])
    assert any(r["kind"] == "entity" for r in resp["results"])


def test_search_does_not_leak_invisible_documents(little_world):
    world, tokens, doc_id = little_world
    world.node_for("Employer")
    status, resp = world.api("Employer", "GET", "/search",
                             query={"q": "national", "kind": "documents"},
                             token=tokens["Employer"])
    assert status == 200
    # Employer gained consent in the flow above, so visibility is allowed here;
    # a stranger with no consent must not see it
    status, resp = world.api("Alice", "GET", "/search",
                             query={"q": "zzz-no-match"}, token=tokens["Alice"])
    assert resp["results"] == []


def test_analytics_endpoint(little_world):
    world, tokens, _ = little_world
    status, resp = world.api("Alice", "GET", "/analytics", token=tokens["Alice"])
    assert status == 200
    total = sum(resp["counts_by_type"].values())
    assert total == resp["total_entries"] == len(world.operator.replica.entries)


def test_event_with_missing_policy_field_is_structured_denial(little_world):
    world, tokens, doc_id = little_world
    from civicnet import policy as policy_mod

    node = world.node_for("Employer")
    event = policy_mod.make_event("access_request", {"requester": "zz", "document": doc_id})
    actions = world.run(node.handle_event(event))
    world.net.run_all()
    assert actions[0].kind == "deny"
    assert "grantor" in actions[0].args[0]


def test_notifications_flow_to_inboxes(little_world):
    world, tokens, _ = little_world
    status, resp = world.api("Alice", "GET", "/events", query={"since": "0"},
                             token=tokens["Alice"])
    assert status == 200
    kinds = {e["kind"] for e in resp["events"]}
    assert "request_pending" in kinds


def test_register_policy_then_execute(little_world):
    world, tokens, doc_id = little_world
    from civicnet import policy as policy_mod

    node = world.node_for("Ministry")
    source = 'when audit_ping if now() >= 0 then notify(event.requester, "audited")'
    first = world.run(node.register_policy(source, node.record.identity_id))
    world.net.run_all()
    second = world.run(node.register_policy(source, node.record.identity_id))
    world.net.run_all()
    # identical source registers twice under distinct ids, same source hash
    assert first["policy_id"] != second["policy_id"]
    assert first["source_hash"] == second["source_hash"]

    event = policy_mod.make_event(
        "audit_ping", {"requester": world.identity_hex("Ministry")}
    )
    actions = world.run(node.handle_event(event, policy_id=first["policy_id"]))
    world.net.run_all()
    assert actions[0].kind == "notify"


def test_execute_unregistered_policy_is_unknown(little_world):
    world, _, _ = little_world
    from civicnet import policy as policy_mod

    node = world.node_for("Ministry")
    event = policy_mod.make_event("audit_ping", {})
    with pytest.raises(policy_mod.UnknownPolicy):
        world.run(node.handle_event(event, policy_id="pol-nonexistent"))


def test_two_ingests_same_row_distinct_ids_same_hash(little_world):
    world, tokens, _ = little_world
    results = []
    for _ in range(2):
        status, resp = world.api("Ministry", "POST", "/documents",
                                 token=tokens["Ministry"], body={
            "record": RECORD, "schema_ref": ["GR", "national_id"],
        })
        world.net.run_all()
        assert status == 201
        results.append(resp["document_id"])
    assert results[0] != results[1]
    entries = [e for e in world.operator.replica.entries
               if e.entry_type == "DocumentIssued"
               and e.body["document_id"] in results]
    assert len(entries) == 2
    assert entries[0].body["payload_hash"] == entries[1].body["payload_hash"]


def test_ingest_missing_required_field_names_it(little_world):
    world, tokens, _ = little_world

    bad = dict(RECORD)
    del bad["arithmos_taftotitas"]
    status, resp = world.api("Ministry", "POST", "/documents",
                             token=tokens["Ministry"], body={
        "record": bad, "schema_ref": ["GR", "national_id"],
    })
    world.net.run_all()
    assert status == 400
    assert "arithmos_taftotitas" in resp["detail"]


def test_legacy_adapter_ingest(little_world):
    world, tokens, _ = little_world
    from civicnet.interop import AdapterConfig, SchemaValidationError
    from conftest import schema

    node = world.node_for("Ministry")
    adapter = AdapterConfig(source_schema=schema("gr_national_id"), subject_field="holder")
    row = dict(RECORD, holder=world.identity_hex("Alice"))
    envelope, entry = world.run(
        node.ingest_legacy_record(adapter, row, node.wallets[node.node_id])
    )
    world.net.run_all()
    assert entry.body["subject"] == world.identity_hex("Alice")
    assert entry.body["schema_ref"] == ["GR", "national_id"]
    assert "holder" not in entry.body

    with pytest.raises(SchemaValidationError) as err:
        world.run(node.ingest_legacy_record(adapter, {"onoma": "A"}, node.wallets[node.node_id]))
    assert "epitheto" in err.value.reasons


def test_policy_contract_accessor(little_world):
    world, _, _ = little_world
    from civicnet import policy as policy_mod

    node = world.node_for("Ministry")
    contract = world.run(node.policy_contract(world.default_policy_id))
    assert contract.policy_id == world.default_policy_id
    assert contract.ast.trigger == "access_request"
    assert policy_mod.parse_policy(contract.source) == contract.ast
    with pytest.raises(policy_mod.UnknownPolicy):
        world.run(node.policy_contract("pol-ghost"))
