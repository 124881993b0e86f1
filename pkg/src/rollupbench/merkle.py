"""Sparse binary Merkle tree over storage slots.

Leaves are addressed by the top ``depth`` bits of sha256(slot). Slots whose
prefixes collide share one leaf; the leaf digest covers every (slot, value)
pair in that bucket, sorted by slot, so the root depends only on the final
slot -> value map.
"""
from __future__ import annotations

import hashlib
import time
from typing import Dict, Iterable, List, Mapping, NamedTuple, Sequence, Tuple

from .amm import MAX_UINT128, StorageWrite

DEFAULT_DEPTH = 20

_LEAF_TAG = b"\x00"
_NODE_TAG = b"\x01"
EMPTY_LEAF = bytes(32)


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def empty_digests(depth: int) -> List[bytes]:
    """Digest of an all-empty subtree at each height, 0 (leaf) .. depth (root)."""
    out = [EMPTY_LEAF]
    for _ in range(depth):
        out.append(_h(_NODE_TAG + out[-1] + out[-1]))
    return out


def slot_index(slot: str, depth: int) -> int:
    digest = int.from_bytes(_h(slot.encode("utf-8")), "big")
    return digest >> (256 - depth)


def leaf_bytes(slot: str, value: int) -> bytes:
    """slot bytes || big-endian 16-byte value, with a 2-byte slot length prefix."""
    if not 0 <= value <= MAX_UINT128:
        raise ValueError(f"value {value} outside uint128")
    raw = slot.encode("utf-8")
    return len(raw).to_bytes(2, "big") + raw + value.to_bytes(16, "big")


def leaf_digest(entries: Mapping[str, int]) -> bytes:
    if not entries:
        return EMPTY_LEAF
    return _h(_LEAF_TAG + b"".join(leaf_bytes(s, entries[s]) for s in sorted(entries)))


def dedup_writes(writes: Iterable[StorageWrite]) -> List[StorageWrite]:
    """Keep the last write per slot, ordered canonically by slot key."""
    last: Dict[str, int] = {}
    for w in writes:
        last[w.slot] = w.value
    return [StorageWrite(slot, last[slot]) for slot in sorted(last)]


def compute_root_full(leaves: Mapping[str, int], depth: int = DEFAULT_DEPTH) -> bytes:
    """Recompute the root from scratch. Oracle for :meth:`StateTree.apply_writes`."""
    empty = empty_digests(depth)
    buckets: Dict[int, Dict[str, int]] = {}
    for slot, value in leaves.items():
        buckets.setdefault(slot_index(slot, depth), {})[slot] = value
    level = {idx: leaf_digest(entries) for idx, entries in buckets.items()}
    for height in range(depth):
        parents: Dict[int, bytes] = {}
        for idx in level:
            parent = idx >> 1
            if parent in parents:
                continue
            left = level.get(parent << 1, empty[height])
            right = level.get((parent << 1) | 1, empty[height])
            parents[parent] = _h(_NODE_TAG + left + right)
        level = parents
    return level.get(0, empty[depth])


class TreeUpdate(NamedTuple):
    new_root: bytes
    elapsed: float


class StateTree:
    def __init__(self, depth: int = DEFAULT_DEPTH):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self._empty = empty_digests(depth)
        self._buckets: Dict[int, Dict[str, int]] = {}
        # (height, index) -> digest; only non-empty subtrees are stored
        self._nodes: Dict[Tuple[int, int], bytes] = {}

    @property
    def root(self) -> bytes:
        return self._nodes.get((self.depth, 0), self._empty[self.depth])

    @property
    def leaves(self) -> Dict[str, int]:
        return {s: v for entries in self._buckets.values() for s, v in entries.items()}

    def _node(self, height: int, index: int) -> bytes:
        return self._nodes.get((height, index), self._empty[height])

    def apply_writes(self, writes: Sequence[StorageWrite]) -> TreeUpdate:
        """Apply deduplicated writes, rehashing only the touched paths."""
        started = time.perf_counter()
        touched = set()
        for w in writes:
            idx = slot_index(w.slot, self.depth)
            self._buckets.setdefault(idx, {})[w.slot] = w.value
            touched.add(idx)
        for idx in touched:
            self._nodes[(0, idx)] = leaf_digest(self._buckets[idx])
        for height in range(self.depth):
            parents = {idx >> 1 for idx in touched}
            for p in parents:
                left = self._node(height, p << 1)
                right = self._node(height, (p << 1) | 1)
                self._nodes[(height + 1, p)] = _h(_NODE_TAG + left + right)
            touched = parents
        return TreeUpdate(self.root, time.perf_counter() - started)
