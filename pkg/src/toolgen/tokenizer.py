"""Deterministic base tokenizer with atomic tool tokens.

Greedy longest-match over vocabulary pieces (matched on UTF-8 bytes) with
one fallback token per byte value, so every string is encodable and
``decode(encode(s)) == s``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_BYTES = 256
EOS_SURFACE = "<|eos|>"
PAD_SURFACE = "<|pad|>"

# Small fixed piece inventory; enough to make encode non-trivial and stable.
DEFAULT_PIECES: tuple[str, ...] = tuple(
    """the of and to in for is on with by from at as an be this that get set
    list search data api tool user video info id name type url query text
    image file search_ find by_ _for_ _id _by_ ing tion ed er es ly ment
    Tool API description parameters required optional none
    weather news stock price movie music book game sport team player city
    country currency email phone address location time date search get_ list_
    """.split()
)
DEFAULT_PIECES = tuple(dict.fromkeys(DEFAULT_PIECES + tuple(" " + w for w in DEFAULT_PIECES)))


class VocabularyError(ValueError):
    pass


class _ByteTrie:
    __slots__ = ("children", "token")

    def __init__(self):
        self.children: dict[int, _ByteTrie] = {}
        self.token: int | None = None

    def insert(self, data: bytes, token: int) -> None:
        node = self
        for b in data:
            nxt = node.children.get(b)
            if nxt is None:
                nxt = node.children[b] = _ByteTrie()
            node = nxt
        node.token = token


@dataclass
class Vocabulary:
    """Token inventory. Ids: bytes 0..255, eos, pad, base pieces, then atomic tokens."""

    pieces: list[bytes]
    eos_id: int
    pad_id: int
    base_size: int
    entries: dict[str, int] = field(default_factory=dict)
    _trie: _ByteTrie = field(default_factory=_ByteTrie, repr=False)

    @classmethod
    def base(cls, pieces: Iterable[str] = DEFAULT_PIECES) -> "Vocabulary":
        vocab = cls(pieces=[], eos_id=N_BYTES, pad_id=N_BYTES + 1, base_size=0)
        for b in range(N_BYTES):
            vocab._append(bytes([b]), None)
        vocab.pieces.append(EOS_SURFACE.encode())
        vocab.pieces.append(PAD_SURFACE.encode())
        for p in pieces:
            if p in vocab.entries or len(p.encode()) < 2:
                continue
            vocab._append(p.encode("utf-8"), p)
        vocab.base_size = len(vocab.pieces)
        return vocab

    def _append(self, data: bytes, surface: str | None) -> int:
        tid = len(self.pieces)
        self.pieces.append(data)
        self._trie.insert(data, tid)
        if surface is not None:
            self.entries[surface] = tid
        return tid

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def atomic_range(self) -> range:
        return range(self.base_size, len(self.pieces))

    def is_base(self, tid: int) -> bool:
        return tid < self.base_size and tid not in (self.eos_id, self.pad_id)

    def byte_id(self, b: int) -> int:
        return b

    def surface(self, tid: int) -> str:
        if tid < N_BYTES:
            return f"<0x{tid:02X}>"
        return self.pieces[tid].decode("utf-8")

    def encode(self, text: str) -> list[int]:
        data = text.encode("utf-8")
        out: list[int] = []
        i, n = 0, len(data)
        root = self._trie
        while i < n:
            node = root
            best, best_end = data[i], i + 1  # byte fallback
            j = i
            while j < n:
                node = node.children.get(data[j])
                if node is None:
                    break
                j += 1
                if node.token is not None:
                    best, best_end = node.token, j
            out.append(best)
            i = best_end
        return out

    def decode(self, ids: Sequence[int]) -> str:
        return b"".join(self.pieces[t] for t in ids).decode("utf-8", errors="replace")

    def add_atomic_tokens(self, surfaces: Sequence[str]) -> list[int]:
        """Register each surface as exactly one new token; ids are contiguous."""
        seen = set()
        for s in surfaces:
            if not s:
                raise VocabularyError("atomic surface must be non-empty")
            if s in seen or s in self.entries:
                raise VocabularyError(f"duplicate token surface: {s!r}")
            seen.add(s)
        return [self._append(s.encode("utf-8"), s) for s in surfaces]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.base_size}:{self.eos_id}:{self.pad_id}:".encode())
        for p in self.pieces:
            h.update(len(p).to_bytes(4, "little") + p)
        return h.hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        a = self.atomic_range
        lines = [
            f"#base_size\t{self.base_size}",
            f"#eos\t{self.eos_id}",
            f"#pad\t{self.pad_id}",
            f"#atomic_range\t{a.start}\t{a.stop}",
        ]
        for tid in range(len(self.pieces)):
            lines.append(f"{_escape(self.surface(tid))}\t{tid}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        header: dict[str, list[str]] = {}
        rows: list[tuple[str, int]] = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            if line.startswith("#"):
                key, *vals = line[1:].split("\t")
                header[key] = vals
                continue
            surface, tid = line.rsplit("\t", 1)
            rows.append((_unescape(surface), int(tid)))
        vocab = cls(pieces=[], eos_id=int(header["eos"][0]), pad_id=int(header["pad"][0]), base_size=0)
        for surface, tid in rows:
            if tid != len(vocab.pieces):
                raise VocabularyError(f"{path}: ids must be dense and ordered (at {tid})")
            if tid < N_BYTES:
                vocab._append(bytes([tid]), None)
            elif tid in (vocab.eos_id, vocab.pad_id):
                vocab.pieces.append(surface.encode())
            else:
                vocab._append(surface.encode("utf-8"), surface)
        vocab.base_size = int(header["base_size"][0])
        return vocab


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(s[i + 1], s[i + 1]))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass
class EmbeddingTable:
    rows: np.ndarray  # (vocab_size, dim)

    @classmethod
    def random(cls, size: int, dim: int = 32, seed: int = 0) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(size, dim)))

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def resize(self, size: int) -> None:
        """Grow to `size` rows; new rows are zero until initialized."""
        if size > len(self.rows):
            pad = np.zeros((size - len(self.rows), self.dim))
            self.rows = np.vstack([self.rows, pad])


def init_embedding(vocab: Vocabulary, table: EmbeddingTable, token: int, name: str) -> np.ndarray:
    """Set an atomic token's row to the mean of the base-token rows of `name`."""
    if token not in vocab.atomic_range:
        raise VocabularyError(f"token {token} is not an atomic tool token")
    base = [t for t in vocab.encode(name) if vocab.is_base(t)]
    if not base:
        raise VocabularyError(f"name {name!r} encodes to zero base tokens")
    table.resize(len(vocab))
    vec = table.rows[base].mean(axis=0)
    table.rows[token] = vec
    return vec
