import hashlib

import pytest
from hypothesis import given, settings, strategies as st

from civicnet import dht
from civicnet.content_store import ContentId
from civicnet.dht import K, ProviderStore, RoutingTable, xor_distance
from civicnet.sim import drive
from civicnet.world import build_plain_world

node_ids = st.binary(min_size=32, max_size=32)


def nid(i: int) -> bytes:
    return hashlib.sha256(f"peer-{i}".encode()).digest()


# --- xor metric ------------------------------------------------------------------


def test_self_distance_zero():
    assert xor_distance(nid(1), nid(1)) == 0


def test_symmetry_example():
    assert xor_distance(nid(1), nid(2)) == xor_distance(nid(2), nid(1))


def test_eight_bit_illustration():
    a = b"\x00" * 31 + b"\x01"
    b = b"\x00" * 31 + b"\x03"
    assert xor_distance(a, b) == 0b0010


@settings(max_examples=80, deadline=None)
@given(x=node_ids, y=node_ids, z=node_ids)
def test_xor_metric_laws(x, y, z):
    assert xor_distance(x, x) == 0
    assert xor_distance(x, y) == xor_distance(y, x)
    assert xor_distance(x, z) <= xor_distance(x, y) + xor_distance(y, z)
    assert xor_distance(x, z) == xor_distance(x, y) ^ xor_distance(y, z)


# --- routing table ----------------------------------------------------------------


def full_bucket_fixture():
    """A table whose self id pins many distinct peers into one bucket."""
    self_id = b"\x00" * 32
    table = RoutingTable(self_id)
    # peers sharing the top bit set land in bucket 255
    peers = [hashlib.sha256(f"b-{i}".encode()).digest() for i in range(200)]
    peers = [bytes([p[0] | 0x80]) + p[1:] for p in peers]
    return table, peers


def test_insert_same_peer_twice_is_idempotent():
    table = RoutingTable(nid(0))
    table.observe(nid(1))
    table.observe(nid(1))
    assert len(table) == 1


def test_bucket_never_exceeds_k_when_residents_live():
    table, peers = full_bucket_fixture()
    for peer in peers[:K]:
        table.observe(peer)

    def ping_alive(candidate):
        return True
        yield

    added = drive(table.update(peers[K], ping_alive))
    assert added is False
    assert len(table) == K
    assert peers[K] not in table.contacts()


def test_dead_resident_evicted_for_newcomer():
    table, peers = full_bucket_fixture()
    for peer in peers[:K]:
        table.observe(peer)
    oldest = table.buckets[255][0]

    def ping_dead(candidate):
        assert candidate == oldest
        return False
        yield

    added = drive(table.update(peers[K], ping_dead))
    assert added is True
    assert oldest not in table.contacts()
    assert peers[K] in table.contacts()
    assert len(table) == K


def test_live_resident_moves_to_most_recently_seen():
    table, peers = full_bucket_fixture()
    for peer in peers[:K]:
        table.observe(peer)
    oldest = table.buckets[255][0]

    def ping_alive(candidate):
        return True
        yield

    drive(table.update(peers[K], ping_alive))
    assert table.buckets[255][-1] == oldest


def test_self_insert_rejected():
    table = RoutingTable(nid(0))
    with pytest.raises(ValueError):
        table.observe(nid(0))
    with pytest.raises(ValueError):
        drive(table.update(nid(0)))


def test_known_peer_refresh_moves_to_tail():
    table = RoutingTable(nid(0))
    table.observe(nid(1))
    table.observe(nid(2))
    bucket_1 = table.buckets[table.bucket_index(nid(1))]
    if table.bucket_index(nid(1)) == table.bucket_index(nid(2)):
        table.observe(nid(1))
        assert bucket_1[-1] == nid(1)


def test_closest_sorts_by_distance():
    table = RoutingTable(nid(0))
    for i in range(1, 40):
        table.observe(nid(i))
    target = nid(99)
    closest = table.closest(target, 10)
    distances = [xor_distance(p, target) for p in closest]
    assert distances == sorted(distances)
    assert len(closest) == 10


# --- provider store -----------------------------------------------------------------


def test_provider_ttl_expiry():
    store = ProviderStore()
    key = b"\x07" * 32
    store.add(key, nid(1), now_ms=0)
    assert store.get(key, now_ms=3_599_999) == [nid(1)]
    assert store.get(key, now_ms=3_601_000) == []


def test_absent_key_is_empty():
    assert ProviderStore().get(b"\x01" * 32, 0) == []


# --- lookups over the simulated network ------------------------------------------------


def test_single_node_network_lookup_empty():
    world = build_plain_world(1, seed=3)
    node = world.operator
    contacts = world.run(node.find_node(nid(7)))
    assert contacts == []


def test_lookup_finds_globally_closest_node():
    world = build_plain_world(64, seed=42)
    nodes = sorted(world.nodes.values(), key=lambda n: n.node_id)
    target = hashlib.sha256(b"lookup-target").digest()
    expected = min((n.node_id for n in nodes), key=lambda p: xor_distance(p, target))

    searcher = nodes[5]
    contacts = world.run(searcher.find_node(target))
    found = contacts[0] if contacts[0] != searcher.node_id else contacts[1]
    if expected == searcher.node_id:
        assert xor_distance(found, target) >= 0  # self excluded from results
    else:
        assert found == expected
    assert world.net.lookup_rounds[-1] <= 8  # log2(64) = 6 plus slack


def test_lookup_target_equal_to_known_peer_sorts_first():
    world = build_plain_world(16, seed=1)
    nodes = sorted(world.nodes.values(), key=lambda n: n.node_id)
    searcher, peer = nodes[0], nodes[3]
    contacts = world.run(searcher.find_node(peer.node_id))
    assert contacts[0] == peer.node_id


def test_provide_and_find_providers():
    world = build_plain_world(16, seed=5)
    nodes = sorted(world.nodes.values(), key=lambda n: n.node_id)
    cid = ContentId.for_bytes(b"some content")
    world.run(nodes[2].provide(cid))
    providers = world.run(nodes[9].find_providers(cid))
    assert nodes[2].node_id in providers


def test_find_providers_never_provided_is_empty():
    world = build_plain_world(8, seed=6)
    nodes = sorted(world.nodes.values(), key=lambda n: n.node_id)
    assert world.run(nodes[1].find_providers(ContentId.for_bytes(b"nothing"))) == []


def test_provider_records_expire_after_ttl():
    world = build_plain_world(8, seed=7)
    nodes = sorted(world.nodes.values(), key=lambda n: n.node_id)
    cid = ContentId.for_bytes(b"volatile")
    world.run(nodes[0].provide(cid))
    assert world.run(nodes[3].find_providers(cid)) != []
    world.advance_clock(3601)
    assert world.run(nodes[3].find_providers(cid)) == []


def test_routing_table_never_contains_self_and_respects_cap():
    world = build_plain_world(32, seed=8)
    for node in world.nodes.values():
        assert node.node_id not in node.routing.contacts()
        for bucket in node.routing.buckets:
            assert len(bucket) <= K
