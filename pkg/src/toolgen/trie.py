"""Disjunctive trie over tool token sequences, used to mask decoding."""
from __future__ import annotations

import gc
from typing import Iterable, Sequence

import numpy as np


class TrieError(ValueError):
    pass


class TrieNode:
    __slots__ = ("children", "terminal", "_ids")

    def __init__(self):
        self.children: dict[int, TrieNode] = {}
        self.terminal = False
        self._ids: np.ndarray | None = None

    def child_ids(self) -> np.ndarray:
        """Sorted child token ids (cached; the trie is frozen after build)."""
        if self._ids is None or len(self._ids) != len(self.children):
            self._ids = np.fromiter(sorted(self.children), dtype=np.int64, count=len(self.children))
        return self._ids

    def child(self, tid: int) -> "TrieNode | None":
        return self.children.get(tid)


class DisjunctiveTrie:
    """Prefix tree; every inserted sequence ends with the terminator token."""

    def __init__(self, terminator: int):
        self.root = TrieNode()
        self.terminator = terminator
        self.n_nodes = 1
        self.n_leaves = 0
        self.max_len = 0

    def insert(self, seq: Sequence[int]) -> None:
        if not seq:
            raise TrieError("empty sequence cannot be inserted")
        if self.terminator in seq:
            raise TrieError(f"sequence {list(seq)} contains the terminator {self.terminator}")
        node = self.root
        for tid in (*seq, self.terminator):
            nxt = node.children.get(tid)
            if nxt is None:
                nxt = node.children[tid] = TrieNode()
                self.n_nodes += 1
            node = nxt
        if not node.terminal:
            node.terminal = True
            self.n_leaves += 1
        self.max_len = max(self.max_len, len(seq))

    def walk(self, prefix: Iterable[int]) -> TrieNode | None:
        node = self.root
        for tid in prefix:
            node = node.children.get(tid)
            if node is None:
                return None
        return node

    def feasible_next(self, prefix: Sequence[int]) -> set[int]:
        node = self.walk(prefix)
        return set(node.children) if node is not None else set()

    def is_complete(self, seq: Sequence[int]) -> bool:
        node = self.walk(seq)
        if node is None:
            return False
        end = node.children.get(self.terminator)
        return end is not None and end.terminal

    def sequences(self) -> list[tuple[int, ...]]:
        """All inserted sequences (terminator stripped), lexicographic order."""
        out: list[tuple[int, ...]] = []
        stack: list[tuple[TrieNode, tuple[int, ...]]] = [(self.root, ())]
        while stack:
            node, path = stack.pop()
            if node.terminal:
                out.append(path[:-1])
            for tid in sorted(node.children, reverse=True):
                stack.append((node.children[tid], path + (tid,)))
        return sorted(out)

    def __len__(self) -> int:
        return self.n_leaves


def build_trie(sequences: Iterable[Sequence[int]], terminator: int) -> DisjunctiveTrie:
    trie = DisjunctiveTrie(terminator)
    # node objects never form cycles; skipping collector passes matters at 47k tools
    paused = gc.isenabled()
    gc.disable()
    try:
        for seq in sequences:
            trie.insert(seq)
    finally:
        if paused:
            gc.enable()
    if not len(trie):
        raise TrieError("no sequences to build a trie from")
    return trie


def feasible_next(trie: DisjunctiveTrie, prefix: Sequence[int]) -> set[int]:
    return trie.feasible_next(prefix)


def is_complete(trie: DisjunctiveTrie, seq: Sequence[int]) -> bool:
    return trie.is_complete(seq)
