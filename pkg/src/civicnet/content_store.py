"""Content-addressed block storage with chunking, pinning, and garbage collection.

Payloads above the chunk size are split into fixed-size leaves plus a single
manifest block listing the leaf ids in order (no manifest-of-manifests).
Block ids are SHA-256 of the stored bytes; the canonical text form is
"sha256:<64 lowercase hex>".
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .canonical import canonical_json
from .errors import IntegrityError, NotFound, StorageFull

CHUNK_SIZE = 262144
MAX_CHUNKS = 65536

_CID_RE = re.compile(r"^sha256:[0-9a-f]{64}$")


@dataclass(frozen=True, order=True)
class ContentId:
    digest: bytes
    algorithm_tag: str = "sha256"

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("digest must be exactly 32 bytes")

    @property
    def text(self) -> str:
        return f"{self.algorithm_tag}:{self.digest.hex()}"

    @classmethod
    def parse(cls, text: str) -> "ContentId":
        if not _CID_RE.match(text):
            raise ValueError(f"malformed content id: {text!r}")
        return cls(bytes.fromhex(text.split(":", 1)[1]))

    @classmethod
    def for_bytes(cls, data: bytes) -> "ContentId":
        return cls(hashlib.sha256(data).digest())

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class Block:
    cid: ContentId
    data: bytes
    kind: str = "leaf"  # "leaf" | "manifest"


@dataclass
class Manifest:
    children: list[ContentId]
    total_length: int

    def encode(self) -> bytes:
        return canonical_json(
            {
                "children": [c.text for c in self.children],
                "kind": "manifest",
                "total_length": self.total_length,
            }
        )

    @classmethod
    def decode(cls, data: bytes) -> "Manifest":
        obj = json.loads(data.decode("utf-8"))
        if obj.get("kind") != "manifest":
            raise ValueError("not a manifest block")
        return cls(
            children=[ContentId.parse(t) for t in obj["children"]],
            total_length=int(obj["total_length"]),
        )


def verify_block(block: Block) -> bool:
    return hashlib.sha256(block.data).digest() == block.cid.digest


class PayloadTooLarge(ValueError):
    pass


@dataclass
class PinSet:
    pinned: set[ContentId] = field(default_factory=set)


class BlockStore:
    """In-memory block store with optional one-file-per-block persistence.

    Concurrency contract: readers may run concurrently; block writes and gc
    take the store lock.
    """

    def __init__(self, root: Optional[Path] = None, capacity_bytes: Optional[int] = None):
        self._blocks: dict[bytes, bytes] = {}
        self._kinds: dict[bytes, str] = {}
        self._pins = PinSet()
        self._root = Path(root) if root else None
        self._capacity = capacity_bytes
        self._size = 0
        self._lock = threading.RLock()
        if self._root:
            self._root.mkdir(parents=True, exist_ok=True)
            self._load_disk()

    def _load_disk(self) -> None:
        for path in sorted(self._root.glob("*.blk")):
            data = path.read_bytes()
            digest = bytes.fromhex(path.stem)
            self._blocks[digest] = data
            self._kinds[digest] = self._sniff_kind(data)
            self._size += len(data)

    @staticmethod
    def _sniff_kind(data: bytes) -> str:
        # Disk files carry no kind tag; a manifest is recognized by its encoding.
        if data.startswith(b'{"children":'):
            try:
                Manifest.decode(data)
                return "manifest"
            except (ValueError, KeyError, json.JSONDecodeError):
                pass
        return "leaf"

    def _write_block(self, data: bytes, kind: str) -> ContentId:
        digest = hashlib.sha256(data).digest()
        if digest not in self._blocks:
            if self._capacity is not None and self._size + len(data) > self._capacity:
                raise StorageFull(f"store capacity {self._capacity} bytes exceeded")
            self._blocks[digest] = data
            self._kinds[digest] = kind
            self._size += len(data)
            if self._root:
                (self._root / f"{digest.hex()}.blk").write_bytes(data)
        return ContentId(digest)

    def put_bytes(self, payload: bytes, pin: bool = False) -> ContentId:
        if len(payload) > CHUNK_SIZE * MAX_CHUNKS:
            raise PayloadTooLarge(f"payload exceeds {CHUNK_SIZE * MAX_CHUNKS} bytes")
        with self._lock:
            if len(payload) <= CHUNK_SIZE:
                cid = self._write_block(payload, "leaf")
            else:
                children = []
                for off in range(0, len(payload), CHUNK_SIZE):
                    children.append(self._write_block(payload[off : off + CHUNK_SIZE], "leaf"))
                manifest = Manifest(children=children, total_length=len(payload))
                cid = self._write_block(manifest.encode(), "manifest")
            if pin:
                self._pins.pinned.add(cid)
            return cid

    def get_block(self, cid: ContentId) -> Block:
        data = self._blocks.get(cid.digest)
        if data is None:
            raise NotFound(f"unknown block {cid.text}")
        if hashlib.sha256(data).digest() != cid.digest:
            raise IntegrityError(f"stored bytes no longer hash to {cid.text}")
        return Block(cid=cid, data=data, kind=self._kinds.get(cid.digest, "leaf"))

    def get_bytes(self, cid: ContentId) -> bytes:
        block = self.get_block(cid)
        if block.kind != "manifest":
            return block.data
        manifest = Manifest.decode(block.data)
        parts = []
        for child in manifest.children:
            parts.append(self.get_block(child).data)
        payload = b"".join(parts)
        if len(payload) != manifest.total_length:
            raise IntegrityError(f"manifest {cid.text} length mismatch")
        return payload

    def has(self, cid: ContentId) -> bool:
        return cid.digest in self._blocks

    def put_block(self, data: bytes, kind: str = "leaf", pin: bool = False) -> ContentId:
        """Store one pre-chunked block verbatim (used when fetching from peers)."""
        if len(data) > CHUNK_SIZE and kind == "leaf":
            raise PayloadTooLarge("leaf blocks never exceed the chunk size")
        with self._lock:
            cid = self._write_block(data, kind)
            if pin:
                self._pins.pinned.add(cid)
            return cid

    def pin(self, cid: ContentId) -> None:
        with self._lock:
            if cid.digest not in self._blocks:
                raise NotFound(f"unknown block {cid.text}")
            self._pins.pinned.add(cid)

    def unpin(self, cid: ContentId) -> None:
        with self._lock:
            self._pins.pinned.discard(cid)

    @property
    def pinned(self) -> set[ContentId]:
        return set(self._pins.pinned)

    def _reachable(self) -> set[bytes]:
        seen: set[bytes] = set()
        stack = [cid.digest for cid in self._pins.pinned]
        while stack:
            digest = stack.pop()
            if digest in seen or digest not in self._blocks:
                continue
            seen.add(digest)
            if self._kinds.get(digest) == "manifest":
                manifest = Manifest.decode(self._blocks[digest])
                stack.extend(c.digest for c in manifest.children)
        return seen

    def gc(self) -> int:
        """Remove unpinned, unreachable blocks; returns the number removed."""
        with self._lock:
            keep = self._reachable()
            doomed = [d for d in self._blocks if d not in keep]
            for digest in doomed:
                self._size -= len(self._blocks[digest])
                del self._blocks[digest]
                self._kinds.pop(digest, None)
                if self._root:
                    (self._root / f"{digest.hex()}.blk").unlink(missing_ok=True)
            return len(doomed)

    def __len__(self) -> int:
        return len(self._blocks)
