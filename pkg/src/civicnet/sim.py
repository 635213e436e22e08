"""Deterministic discrete-event kernel and in-process message network.

Virtual time advances only by event processing; all randomness comes from one
seeded generator, and heap ties break on a monotonic sequence number, so a
given (seed, workload) always produces the same trace. Node logic that waits
on the network is written as generators that yield ``Future`` objects.
"""

from __future__ import annotations

import hashlib
import heapq
import inspect
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .canonical import canonical_json


class RpcTimeout(Exception):
    pass


class DeadlockDetected(Exception):
    pass


class Future:
    __slots__ = ("done", "value", "error", "_callbacks")

    def __init__(self):
        self.done = False
        self.value = None
        self.error: Optional[BaseException] = None
        self._callbacks: list[Callable[["Future"], None]] = []

    def set_result(self, value) -> None:
        if self.done:
            return
        self.done = True
        self.value = value
        callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            cb(self)

    def set_exception(self, error: BaseException) -> None:
        if self.done:
            return
        self.done = True
        self.error = error
        callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            cb(self)

    def add_done_callback(self, cb: Callable[["Future"], None]) -> None:
        if self.done:
            cb(self)
        else:
            self._callbacks.append(cb)

    def result(self):
        if not self.done:
            raise RuntimeError("future not resolved")
        if self.error is not None:
            raise self.error
        return self.value


def drive(gen):
    """Run a coroutine that never actually waits (local single-node paths)."""
    if not inspect.isgenerator(gen):
        return gen
    try:
        while True:
            gen.send(None)
    except StopIteration as stop:
        return stop.value


class Kernel:
    """Event queue over a virtual millisecond clock."""

    def __init__(self, seed: int = 0):
        self.now_ms = 0
        self.rng = random.Random(seed)
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0

    def randbytes(self, n: int) -> bytes:
        return self.rng.randbytes(n)

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (self.now_ms + int(delay_ms), self._seq, fn))

    def sleep(self, delay_ms: int) -> Future:
        fut = Future()
        self.schedule(delay_ms, lambda: fut.set_result(None))
        return fut

    def spawn(self, gen) -> Future:
        fut = Future()
        if not inspect.isgenerator(gen):
            fut.set_result(gen)
            return fut
        self._step(gen, fut, None, None)
        return fut

    def _step(self, gen, fut: Future, value, error: Optional[BaseException]) -> None:
        try:
            if error is not None:
                waited = gen.throw(error)
            else:
                waited = gen.send(value)
        except StopIteration as stop:
            fut.set_result(stop.value)
            return
        except Exception as exc:  # propagate coroutine failure to the awaiter
            fut.set_exception(exc)
            return
        if not isinstance(waited, Future):
            raise TypeError(f"coroutine yielded {type(waited).__name__}, expected Future")
        waited.add_done_callback(lambda w: self._step(gen, fut, w.value, w.error))

    def gather(self, futures: list[Future]) -> Future:
        out = Future()
        remaining = [len(futures)]
        results: list[Any] = [None] * len(futures)
        if not futures:
            out.set_result([])
            return out

        def _on_done(i, w: Future):
            results[i] = w.error if w.error is not None else w.value
            remaining[0] -= 1
            if remaining[0] == 0:
                out.set_result(results)

        for i, f in enumerate(futures):
            f.add_done_callback(lambda w, i=i: _on_done(i, w))
        return out

    def run_until(self, fut: Future, max_events: int = 10_000_000):
        events = 0
        while not fut.done:
            if not self._heap:
                raise DeadlockDetected("no runnable events while work remains")
            t, _, fn = heapq.heappop(self._heap)
            self.now_ms = max(self.now_ms, t)
            fn()
            events += 1
            if events > max_events:
                raise DeadlockDetected("event budget exhausted")
        return fut.result()

    def run_all(self, max_events: int = 10_000_000) -> None:
        events = 0
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now_ms = max(self.now_ms, t)
            fn()
            events += 1
            if events > max_events:
                raise DeadlockDetected("event budget exhausted")

    def advance_to(self, target_ms: int) -> None:
        """Drain events due up to target_ms, then move the clock there."""
        while self._heap and self._heap[0][0] <= target_ms:
            t, _, fn = heapq.heappop(self._heap)
            self.now_ms = max(self.now_ms, t)
            fn()
        self.now_ms = max(self.now_ms, target_ms)


class Lock:
    """FIFO coroutine lock (kernel is single-threaded; no atomics needed)."""

    def __init__(self):
        self._held = False
        self._waiters: list[Future] = []

    def acquire(self) -> Future:
        fut = Future()
        if not self._held:
            self._held = True
            fut.set_result(None)
        else:
            self._waiters.append(fut)
        return fut

    def release(self) -> None:
        if self._waiters:
            self._waiters.pop(0).set_result(None)
        else:
            self._held = False


@dataclass
class Partition:
    """Messages may not cross between the two sides while active."""

    start_ms: int
    end_ms: int
    side_a: frozenset
    side_b: frozenset

    def blocks(self, t: int, src, dst) -> bool:
        if not (self.start_ms <= t < self.end_ms):
            return False
        return (src in self.side_a and dst in self.side_b) or (
            src in self.side_b and dst in self.side_a
        )


@dataclass
class NetConfig:
    seed: int = 0
    latency_ms: tuple[int, int] = (5, 50)
    loss_rate: float = 0.0
    partitions: list[Partition] = field(default_factory=list)

    @property
    def retry_timeout_ms(self) -> int:
        return max(2 * self.latency_ms[1], 1)

    @property
    def submit_timeout_ms(self) -> int:
        # a ledger submit nests validator round-trips and possible forwards
        return max(12 * self.latency_ms[1], 5)


class SimNet(Kernel):
    """Request/response messaging with uniform latency, Bernoulli loss, partitions."""

    RETRY_ATTEMPTS = 5

    def __init__(self, config: NetConfig):
        super().__init__(config.seed)
        self.config = config
        self.handlers: dict[bytes, Callable] = {}
        self.trace: list[dict] = []
        self._req_seq = 0
        self._pending: dict[int, Future] = {}
        self.lookup_rounds: list[int] = []  # DHT instrumentation

    # -- trace ---------------------------------------------------------------

    def record(self, event: str, **fields) -> None:
        rec = {"ev": event, "t": self.now_ms}
        rec.update(fields)
        self.trace.append(rec)

    def trace_bytes(self) -> bytes:
        return b"".join(canonical_json(rec) + b"\n" for rec in self.trace)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.trace_bytes()).hexdigest()

    # -- membership ----------------------------------------------------------

    def add_handler(self, node_id: bytes, handler: Callable) -> None:
        self.handlers[node_id] = handler

    # -- messaging -----------------------------------------------------------

    def _blocked(self, src: bytes, dst: bytes) -> bool:
        return any(p.blocks(self.now_ms, src, dst) for p in self.config.partitions)

    def _latency(self) -> int:
        lo, hi = self.config.latency_ms
        return self.rng.randint(lo, hi)

    def _lost(self) -> bool:
        return self.config.loss_rate > 0 and self.rng.random() < self.config.loss_rate

    @staticmethod
    def _digest(payload: dict) -> str:
        return hashlib.sha256(canonical_json(payload)).hexdigest()[:16]

    def rpc(self, src: bytes, dst: bytes, payload: dict, timeout_ms: Optional[int] = None) -> Future:
        """Send a request; future resolves with the reply dict or RpcTimeout."""
        if timeout_ms is None:
            timeout_ms = self.config.retry_timeout_ms
        self._req_seq += 1
        req = self._req_seq
        fut = Future()
        self._pending[req] = fut
        kind = payload.get("kind", "?")
        self.record("send", src=src.hex(), dst=dst.hex(), kind=kind, req=req, d=self._digest(payload))
        if dst not in self.handlers or self._blocked(src, dst) or self._lost():
            self.record("drop", src=src.hex(), dst=dst.hex(), kind=kind, req=req)
        else:
            self.schedule(self._latency(), lambda: self._deliver(src, dst, payload, req))

        def _expire():
            pending = self._pending.pop(req, None)
            if pending is not None and not pending.done:
                pending.set_exception(RpcTimeout(f"{kind} to {dst.hex()[:8]} timed out"))

        self.schedule(timeout_ms, _expire)
        return fut

    def _deliver(self, src: bytes, dst: bytes, payload: dict, req: int) -> None:
        kind = payload.get("kind", "?")
        self.record("recv", src=src.hex(), dst=dst.hex(), kind=kind, req=req)
        handler = self.handlers.get(dst)
        if handler is None:
            return
        try:
            result = handler(src, payload)
        except Exception as exc:
            result = {"_err": f"{type(exc).__name__}: {exc}"}
        reply_fut = self.spawn(result) if inspect.isgenerator(result) else None

        def _send_reply(value):
            reply = value if isinstance(value, dict) else {"_err": "empty reply"} if value is None else {"value": value}
            self.record("send", src=dst.hex(), dst=src.hex(), kind=kind + ".reply", req=req, d=self._digest(reply))
            if self._blocked(dst, src) or self._lost():
                self.record("drop", src=dst.hex(), dst=src.hex(), kind=kind + ".reply", req=req)
                return
            self.schedule(self._latency(), lambda: self._resolve(src, dst, kind, req, reply))

        if reply_fut is not None:
            def _on_handler_done(w: Future):
                if w.error is not None:
                    _send_reply({"_err": f"{type(w.error).__name__}: {w.error}"})
                else:
                    _send_reply(w.value)

            reply_fut.add_done_callback(_on_handler_done)
        else:
            _send_reply(result)

    def _resolve(self, src: bytes, dst: bytes, kind: str, req: int, reply: dict) -> None:
        self.record("recv", src=dst.hex(), dst=src.hex(), kind=kind + ".reply", req=req)
        pending = self._pending.pop(req, None)
        if pending is not None:
            pending.set_result(reply)

    def rpc_retry(self, src: bytes, dst: bytes, payload: dict, attempts: int = RETRY_ATTEMPTS, timeout_ms: Optional[int] = None):
        """Coroutine: resend after the retry timeout, up to ``attempts`` tries."""
        last: Optional[BaseException] = None
        for _ in range(attempts):
            try:
                reply = yield self.rpc(src, dst, payload, timeout_ms)
                return reply
            except RpcTimeout as exc:
                last = exc
        raise last if last is not None else RpcTimeout("rpc failed")
