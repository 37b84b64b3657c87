"""Tool indexing schemes: atomic, semantic, numeric and hierarchical."""
from __future__ import annotations

import json
import re
import statistics
import zlib
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .registry import ApiDocument, ToolId, ToolRegistry, doc_text
from .tokenizer import EmbeddingTable, Vocabulary, init_embedding

FINISH_SURFACE = "<<Finish>>"


class Scheme(str, Enum):
    ATOMIC = "atomic"
    SEMANTIC = "semantic"
    NUMERIC = "numeric"
    HIERARCHICAL = "hierarchical"


class IndexError_(ValueError):
    pass


@dataclass(frozen=True)
class IndexScheme:
    kind: Scheme = Scheme.ATOMIC
    numeric_width: int = 6
    branching: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Scheme(self.kind))
        if self.numeric_width < 1:
            raise IndexError_("numeric_width must be positive")
        if not 2 <= self.branching <= 10:
            raise IndexError_("branching must be in [2, 10] (one digit token per level)")


def atomic_surface(api: ApiDocument) -> str:
    return f"<<{api.tool_name}&&{api.api_name}>>"


_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def normalize_name(name: str) -> str:
    return _NON_ALNUM.sub("_", name.lower()).strip("_")


def semantic_name(api: ApiDocument) -> str:
    return f"{normalize_name(api.api_name)}_for_{normalize_name(api.tool_name)}"


def semantic_names(registry: ToolRegistry) -> list[str]:
    """Semantic surfaces in canonical order; collisions get a numeric suffix."""
    counts: Counter[str] = Counter()
    taken = set()
    out = []
    for api in registry.apis:
        base = semantic_name(api)
        name = base
        while name in taken:
            counts[base] += 1
            name = f"{base}_{counts[base] + 1}"
        taken.add(name)
        out.append(name)
    return out


def add_tool_tokens(
    vocab: Vocabulary, registry: ToolRegistry, tools: bool = True, finish: bool = True
) -> list[int]:
    """Add one atomic token per tool (plus the reserved Finish token)."""
    surfaces = [atomic_surface(a) for a in registry.apis] if tools else []
    if finish:
        surfaces.append(FINISH_SURFACE)
    return vocab.add_atomic_tokens(surfaces)


@dataclass
class ToolIndex:
    scheme: IndexScheme
    forward: list[tuple[int, ...]]
    surfaces: list[str]
    reverse: dict[tuple[int, ...], int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.reverse:
            self.reverse = {seq: i for i, seq in enumerate(self.forward)}
        if len(self.reverse) != len(self.forward):
            raise IndexError_("index is not injective")

    def __len__(self) -> int:
        return len(self.forward)

    def sequence(self, tool: ToolId | int) -> tuple[int, ...]:
        return self.forward[tool.ordinal if isinstance(tool, ToolId) else tool]

    def restrict(self, ordinals) -> list[tuple[int, ...]]:
        return [self.forward[i] for i in sorted(set(ordinals))]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (seq, surface) in enumerate(zip(self.forward, self.surfaces)):
                rec = {"ordinal": i, "scheme": self.scheme.kind.value, "token_ids": list(seq), "surface": surface}
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, scheme: IndexScheme | None = None) -> "ToolIndex":
        forward, surfaces, kind = [], [], None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["ordinal"] != len(forward):
                raise IndexError_(f"{path}: ordinals must be dense and ordered")
            forward.append(tuple(rec["token_ids"]))
            surfaces.append(rec["surface"])
            kind = rec["scheme"]
        return cls(scheme or IndexScheme(kind=kind or "atomic"), forward, surfaces)


def decode_tool(index: ToolIndex, seq: Sequence[int]) -> ToolId | None:
    """The tool whose index sequence equals `seq`, or None (not a tool)."""
    i = index.reverse.get(tuple(seq))
    return None if i is None else ToolId(i)


def token_length_stats(index: ToolIndex) -> dict:
    lengths = [len(s) for s in index.forward]
    hist = dict(sorted(Counter(lengths).items()))
    return {
        "histogram": hist,
        "min": min(lengths) if lengths else 0,
        "median": statistics.median(lengths) if lengths else 0,
        "max": max(lengths) if lengths else 0,
        "count": len(lengths),
    }


# --- hierarchical -----------------------------------------------------------

def trigram_features(texts: Sequence[str], dim: int = 64) -> np.ndarray:
    """Hashed character-trigram counts, L2-normalized rows."""
    feats = np.zeros((len(texts), dim))
    for r, text in enumerate(texts):
        t = f"  {text.lower()} "
        for i in range(len(t) - 2):
            feats[r, zlib.crc32(t[i : i + 3].encode("utf-8")) % dim] += 1.0
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return feats / norms


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 25) -> np.ndarray:
    """Plain Lloyd iterations with k-means++ seeding. Returns labels."""
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        c = x[rng.choice(n, p=d2 / total)]
        centers.append(c)
        d2 = np.minimum(d2, ((x - c) ** 2).sum(1))
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for it in range(iters):
        dist = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
        new = dist.argmin(1)
        if it and np.array_equal(new, labels):
            break
        labels = new
        for j in range(len(centers)):
            m = labels == j
            if m.any():
                centers[j] = x[m].mean(0)
    return labels


def hierarchical_codes(features: np.ndarray, branching: int = 10, seed: int = 0) -> list[tuple[int, ...]]:
    """Digit path root->leaf for each row under recursive k-way clustering."""
    n = len(features)
    codes: list[tuple[int, ...]] = [()] * n
    rng = np.random.default_rng(seed)
    if n == 1:
        return [(0,)]
    stack = [(list(range(n)), ())]
    while stack:
        members, prefix = stack.pop()
        if len(members) == 1:
            codes[members[0]] = prefix
            continue
        k = min(branching, len(members))
        labels = kmeans(features[members], k, rng)
        groups: dict[int, list[int]] = {}
        for m, lab in zip(members, labels):
            groups.setdefault(int(lab), []).append(m)
        parts = [g for g in groups.values() if g]
        if len(parts) < 2:
            # identical features never split; fall back to round-robin
            parts = [members[i::k] for i in range(k)]
            parts = [p for p in parts if p]
        parts.sort(key=lambda g: (-len(g), min(g)))
        for digit, g in enumerate(parts):
            stack.append((g, prefix + (digit,)))
    return codes


# --- building ---------------------------------------------------------------

def digit_tokens(vocab: Vocabulary, digits: str) -> tuple[int, ...]:
    return tuple(vocab.byte_id(ord(c)) for c in digits)


def build_index(
    registry: ToolRegistry,
    scheme: IndexScheme,
    vocab: Vocabulary,
    features: np.ndarray | None = None,
) -> ToolIndex:
    kind = scheme.kind
    if kind is Scheme.ATOMIC:
        surfaces = [atomic_surface(a) for a in registry.apis]
        forward = []
        for s in surfaces:
            tid = vocab.entries.get(s)
            if tid is None or tid not in vocab.atomic_range:
                raise IndexError_(f"missing atomic token for {s!r}; call add_tool_tokens first")
            forward.append((tid,))
    elif kind is Scheme.SEMANTIC:
        surfaces = semantic_names(registry)
        forward = [tuple(vocab.encode(s)) for s in surfaces]
    elif kind is Scheme.NUMERIC:
        n = len(registry)
        if len(str(max(n - 1, 0))) > scheme.numeric_width:
            raise IndexError_(f"numeric_width {scheme.numeric_width} too small for {n} tools")
        surfaces = [str(i).zfill(scheme.numeric_width) for i in range(n)]
        forward = [digit_tokens(vocab, s) for s in surfaces]
    elif kind is Scheme.HIERARCHICAL:
        if features is None:
            features = trigram_features([doc_text(a) for a in registry.apis])
        if len(features) != len(registry):
            raise IndexError_("hierarchical indexing needs one feature vector per tool")
        codes = hierarchical_codes(np.asarray(features, dtype=float), scheme.branching, scheme.seed)
        surfaces = [" ".join(map(str, c)) for c in codes]
        forward = [digit_tokens(vocab, "".join(map(str, c))) for c in codes]
    else:  # pragma: no cover
        raise IndexError_(f"unknown scheme {kind}")
    return ToolIndex(scheme, forward, surfaces)


def make_index(registry: ToolRegistry, scheme: IndexScheme, vocab: Vocabulary | None = None):
    """Convenience: fresh base vocabulary + tool/Finish tokens + index."""
    vocab = vocab or Vocabulary.base()
    add_tool_tokens(vocab, registry, tools=scheme.kind is Scheme.ATOMIC)
    return vocab, build_index(registry, scheme, vocab)


def finish_id(vocab: Vocabulary) -> int:
    return vocab.entries[FINISH_SURFACE]


def init_tool_embeddings(vocab: Vocabulary, table: EmbeddingTable, registry: ToolRegistry) -> int:
    """Initialize every atomic tool row from its bare "tool_name api_name" text.

    Finish is averaged from the word "finish". Returns the number of rows set.
    """
    n = 0
    for api in registry.apis:
        tid = vocab.entries.get(atomic_surface(api))
        if tid is not None:
            init_embedding(vocab, table, tid, f"{api.tool_name} {api.api_name}")
            n += 1
    if FINISH_SURFACE in vocab.entries:
        init_embedding(vocab, table, vocab.entries[FINISH_SURFACE], "finish")
        n += 1
    return n
