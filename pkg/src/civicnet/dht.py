"""Kademlia-style routing: XOR metric, k-buckets, iterative lookup, provider records.

Node ids are SHA-256 of the node's signing public key. A peer lives in the
bucket indexed by the highest set bit of xor(self, peer); buckets are ordered
least-recently-seen first and hold at most K entries. Lookup fans out to
ALPHA peers per round and stops when a round brings no closer contact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

K = 20
ALPHA = 3
ID_BITS = 256
PROVIDER_TTL_MS = 3_600_000
PING_TIMEOUT_MS = 2_000


class EmptyNetwork(Exception):
    pass


def xor_distance(a: bytes, b: bytes) -> int:
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


def key_for_cid(cid) -> bytes:
    """DHT key for a content id: SHA-256 over its canonical text."""
    return hashlib.sha256(cid.text.encode("ascii")).digest()


class RoutingTable:
    def __init__(self, self_id: bytes, k: int = K):
        self.self_id = self_id
        self.k = k
        self.buckets: list[list[bytes]] = [[] for _ in range(ID_BITS)]

    def bucket_index(self, peer: bytes) -> int:
        distance = xor_distance(self.self_id, peer)
        if distance == 0:
            raise ValueError("peer equals self")
        return distance.bit_length() - 1

    def observe(self, peer: bytes) -> None:
        """Passive update: refresh or append; full buckets keep their residents."""
        if peer == self.self_id:
            raise ValueError("routing table never contains self")
        bucket = self.buckets[self.bucket_index(peer)]
        if peer in bucket:
            bucket.remove(peer)
            bucket.append(peer)
        elif len(bucket) < self.k:
            bucket.append(peer)

    def update(self, peer: bytes, ping: Optional[Callable] = None):
        """Coroutine update: on a full bucket the least-recently-seen peer is
        pinged and evicted only when it fails to answer."""
        if peer == self.self_id:
            raise ValueError("routing table never contains self")
        bucket = self.buckets[self.bucket_index(peer)]
        if peer in bucket or len(bucket) < self.k:
            self.observe(peer)
            return True
        oldest = bucket[0]
        alive = True
        if ping is not None:
            alive = yield from ping(oldest)
        if alive:
            bucket.remove(oldest)
            bucket.append(oldest)
            return False
        bucket.remove(oldest)
        bucket.append(peer)
        return True

    def remove(self, peer: bytes) -> None:
        try:
            bucket = self.buckets[self.bucket_index(peer)]
        except ValueError:
            return
        if peer in bucket:
            bucket.remove(peer)

    def contacts(self) -> list[bytes]:
        return [peer for bucket in self.buckets for peer in bucket]

    def closest(self, target: bytes, count: int = K) -> list[bytes]:
        return sorted(self.contacts(), key=lambda p: xor_distance(p, target))[:count]

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)


@dataclass
class ProviderStore:
    records: dict[bytes, dict[bytes, int]] = field(default_factory=dict)

    def add(self, key: bytes, provider: bytes, now_ms: int, ttl_ms: int = PROVIDER_TTL_MS) -> None:
        self.records.setdefault(key, {})[provider] = now_ms + ttl_ms

    def get(self, key: bytes, now_ms: int) -> list[bytes]:
        table = self.records.get(key, {})
        live = sorted(p for p, expires in table.items() if now_ms < expires)
        return live

    def purge(self, now_ms: int) -> None:
        for key in list(self.records):
            self.records[key] = {
                p: e for p, e in self.records[key].items() if now_ms < e
            }
            if not self.records[key]:
                del self.records[key]


def iterative_find_node(
    self_id: bytes,
    target: bytes,
    table: RoutingTable,
    find_node_rpc: Callable,
    alpha: int = ALPHA,
    k: int = K,
    run_parallel: Optional[Callable] = None,
):
    """Coroutine. ``find_node_rpc(peer, target)`` is a coroutine returning a
    list of contact ids (or None on failure). ``run_parallel`` runs a batch of
    such coroutines concurrently (sequential fallback otherwise). Returns
    (contacts sorted by distance, query rounds)."""
    shortlist = set(table.closest(target, k))
    if not shortlist:
        return [], 0
    queried: set[bytes] = set()
    best = min(xor_distance(p, target) for p in shortlist)
    rounds = 0
    while True:
        candidates = [
            p
            for p in sorted(shortlist, key=lambda p: xor_distance(p, target))
            if p not in queried
        ][:alpha]
        if not candidates:
            break
        rounds += 1
        queried.update(candidates)
        coros = [find_node_rpc(peer, target) for peer in candidates]
        if run_parallel is not None:
            replies = yield from run_parallel(coros)
        else:
            replies = yield from _run_sequential(coros)
        for contacts in replies:
            if not contacts or isinstance(contacts, BaseException):
                continue
            for peer in contacts:
                if peer != self_id:
                    shortlist.add(peer)
        new_best = min(xor_distance(p, target) for p in shortlist)
        if new_best >= best:
            break
        best = new_best
    result = sorted(shortlist, key=lambda p: xor_distance(p, target))[:k]
    return result, rounds


def _run_sequential(coros: list):
    results = []
    for coro in coros:
        try:
            results.append((yield from coro))
        except Exception:
            results.append(None)
    return results
