"""Fixed-stride translation trie: 32-bit keys, four levels of 8-bit nodes.

Storage is modelled rather than measured: every non-root node costs
``node_bytes`` and every stored payload costs ``payload_bytes``. The default
footprint (8 B per node: key byte, sibling and child links) is an assumption;
the hardware layout is not specified any further than node width and depth.
"""

from __future__ import annotations

from typing import Iterator, NamedTuple, Optional, Tuple

from .errors import CapacityExceeded

LEVELS = 4
STRIDE = 8
KEY_BITS = LEVELS * STRIDE
KEY_MASK = (1 << KEY_BITS) - 1

TRAVERSE_CYCLES = 3  # full traversal, dual-edge clocked
RETRIEVE_CYCLES = 3  # extra cycles to pull a full override out of a leaf


class TargetPair(NamedTuple):
    rank: int
    bank: int


class Override(NamedTuple):
    rank: int
    bank: int
    row: int
    column: int


class RowRedirect(NamedTuple):
    """Row-granular override (weak-row remap): every column of a row moves."""

    rank: int
    bank: int
    row: int


class _Node:
    __slots__ = ("children", "payload")

    def __init__(self):
        self.children: dict = {}
        self.payload = None


def _slices(key: int) -> Tuple[int, int, int, int]:
    return ((key >> 24) & 0xFF, (key >> 16) & 0xFF, (key >> 8) & 0xFF, key & 0xFF)


class RemapTrie:
    def __init__(self, capacity_bytes: int, node_bytes: int = 8, payload_bytes: int = 8):
        self.capacity_bytes = capacity_bytes
        self.node_bytes = node_bytes
        self.payload_bytes = payload_bytes
        self.root = _Node()
        self.node_count = 0
        self.size = 0
        self.peak_bytes = 0

    @property
    def storage_bytes(self) -> int:
        return self.node_count * self.node_bytes + self.size * self.payload_bytes

    def utilization(self) -> float:
        return self.storage_bytes / self.capacity_bytes if self.capacity_bytes else 1.0

    def __len__(self) -> int:
        return self.size

    def __contains__(self, key: int) -> bool:
        node = self._find(key)
        return node is not None and node.payload is not None

    def _find(self, key: int) -> Optional[_Node]:
        node = self.root
        for s in _slices(key):
            node = node.children.get(s)
            if node is None:
                return None
        return node

    def _new_nodes_for(self, key: int) -> int:
        node = self.root
        for depth, s in enumerate(_slices(key)):
            node = node.children.get(s)
            if node is None:
                return LEVELS - depth
        return 0

    def insert(self, key: int, payload=True) -> None:
        if not 0 <= key <= KEY_MASK:
            raise ValueError(f"key {key:#x} is not a 32-bit value")
        new_nodes = self._new_nodes_for(key)
        leaf = self._find(key) if new_nodes == 0 else None
        new_entries = 0 if leaf is not None and leaf.payload is not None else 1
        needed = self.storage_bytes + new_nodes * self.node_bytes + new_entries * self.payload_bytes
        if needed > self.capacity_bytes:
            raise CapacityExceeded(
                f"trie insert needs {needed} B, ceiling is {self.capacity_bytes} B"
            )
        node = self.root
        for s in _slices(key):
            child = node.children.get(s)
            if child is None:
                child = node.children[s] = _Node()
                self.node_count += 1
            node = child
        node.payload = payload
        self.size += new_entries
        self.peak_bytes = max(self.peak_bytes, self.storage_bytes)

    def bytes_to_add(self, keys) -> int:
        """Storage a batch of keys would add (without inserting)."""
        new_prefixes = set()
        new_keys = set()
        for key in keys:
            sl = _slices(key)
            node = self.root
            for depth in range(LEVELS):
                if node is not None:
                    node = node.children.get(sl[depth])
                if node is None:
                    new_prefixes.add(sl[: depth + 1])
            if node is None or node.payload is None:
                new_keys.add(key)
        return len(new_prefixes) * self.node_bytes + len(new_keys) * self.payload_bytes

    def lookup(self, key: int):
        """Return ``(payload or None, cycle_cost)``."""
        node = self._find(key)
        if node is None:
            return None, TRAVERSE_CYCLES
        if isinstance(node.payload, (Override, RowRedirect)):
            return node.payload, TRAVERSE_CYCLES + RETRIEVE_CYCLES
        return node.payload, TRAVERSE_CYCLES

    def get(self, key: int, default=None):
        node = self._find(key)
        return default if node is None else node.payload

    def delete(self, key: int) -> bool:
        path = [self.root]
        for s in _slices(key):
            nxt = path[-1].children.get(s)
            if nxt is None:
                return False
            path.append(nxt)
        if path[-1].payload is None:
            return False
        path[-1].payload = None
        self.size -= 1
        for depth in range(LEVELS, 0, -1):
            node = path[depth]
            if node.children or node.payload is not None:
                break
            del path[depth - 1].children[_slices(key)[depth - 1]]
            self.node_count -= 1
        return True

    def items(self, lo: int = 0, hi: int = KEY_MASK + 1) -> Iterator[Tuple[int, object]]:
        """Yield ``(key, payload)`` in key order for lo <= key < hi."""
        if hi <= lo:
            return
        yield from self._walk(self.root, 0, 0, lo, hi - 1)

    def _walk(self, node, depth, prefix, lo, hi):
        if depth == LEVELS:
            if node.payload is not None:
                yield prefix, node.payload
            return
        shift = (LEVELS - 1 - depth) * STRIDE
        span = (1 << shift) - 1
        for s in sorted(node.children):
            base = prefix | (s << shift)
            if base + span < lo or base > hi:
                continue
            yield from self._walk(node.children[s], depth + 1, base, lo, hi)

    def recursive_get(self, lo: int, hi: int):
        """Keys in [lo, hi): enumerates the live addresses of one bank range."""
        return [k for k, _ in self.items(lo, hi)]

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for key, payload in self.items():
                fh.write(f"{key:#010x} {_format_payload(payload)}\n")


def _format_payload(payload) -> str:
    if isinstance(payload, Override):
        return f"override {payload.rank} {payload.bank} {payload.row} {payload.column}"
    if isinstance(payload, RowRedirect):
        return f"row {payload.rank} {payload.bank} {payload.row}"
    if isinstance(payload, TargetPair):
        return f"pair {payload.rank} {payload.bank}"
    if isinstance(payload, tuple):
        return " ".join(str(x) for x in payload)
    return "live"
