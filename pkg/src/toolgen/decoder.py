"""Scorers and decoding: trie-constrained beam search and free sampling.

A scorer maps a context (token ids) to log-probabilities over the whole
vocabulary. Prompts end with the eos token, which doubles as the boundary
between an input and the tokens generated after it (see ``prompt_for``).
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .tokenizer import Vocabulary
from .trie import DisjunctiveTrie, TrieNode

NEG_INF = float("-inf")
CONTEXT_KEY_VERSION = "bag-suffix-v1"


class Scorer(Protocol):
    vocab_size: int

    def score(self, context: Sequence[int]) -> np.ndarray: ...


def prompt_for(vocab: Vocabulary, text: str) -> list[int]:
    return vocab.encode(text) + [vocab.eos_id]


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x)
    if not np.isfinite(m):
        return np.full_like(x, NEG_INF, dtype=float)
    z = x - m
    return z - np.log(np.exp(z).sum())


class UniformScorer:
    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self._row = np.full(vocab_size, -math.log(vocab_size))

    def score(self, context: Sequence[int]) -> np.ndarray:
        return self._row


class RandomScorer:
    """Deterministic pseudo-random distribution per context (for tests and studies)."""

    def __init__(self, vocab_size: int, seed: int = 0, scale: float = 3.0):
        self.vocab_size = vocab_size
        self.seed = seed
        self.scale = scale

    def score(self, context: Sequence[int]) -> np.ndarray:
        # seeding from a digest keeps long agent contexts cheap
        digest = hashlib.blake2b(np.asarray(context, dtype=np.int64).tobytes(), digest_size=8).digest()
        rng = np.random.default_rng([self.seed, len(context), int.from_bytes(digest, "little")])
        return log_softmax(rng.normal(0.0, self.scale, self.vocab_size))


def masked_logprobs(logp: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Log-probabilities of `feasible` ids, renormalized over that set."""
    sub = np.asarray(logp, dtype=float)[feasible]
    m = sub.max() if len(sub) else NEG_INF
    if not np.isfinite(m):
        return np.full(len(sub), NEG_INF)
    return sub - (m + np.log(np.exp(sub - m).sum()))


# --- count scorer ------------------------------------------------------------

def _split_context(context: Sequence[int], eos: int) -> tuple[Sequence[int], tuple[int, ...]]:
    """(last input segment, generated suffix) split on the last eos."""
    last = -1
    for i in range(len(context) - 1, -1, -1):
        if context[i] == eos:
            last = i
            break
    if last < 0:
        return context, ()
    prev = -1
    for i in range(last - 1, -1, -1):
        if context[i] == eos:
            prev = i
            break
    return context[prev + 1 : last], tuple(context[last + 1 :])


class CountScorer:
    """Alpha-smoothed next-token counts keyed on (bag of input base tokens, suffix)."""

    def __init__(self, vocab_size: int, base_size: int, eos_id: int, pad_id: int, alpha: float = 0.1):
        if alpha <= 0:
            raise ValueError("smoothing alpha must be positive")
        self.vocab_size = vocab_size
        self.base_size = base_size
        self.eos_id = eos_id
        self.pad_id = pad_id
        self.alpha = alpha
        self.tables: dict[tuple, dict[int, int]] = defaultdict(dict)
        self.totals: dict[tuple, int] = defaultdict(int)
        self._uniform = np.full(vocab_size, -math.log(vocab_size))

    @classmethod
    def for_vocab(cls, vocab: Vocabulary, alpha: float = 0.1) -> "CountScorer":
        return cls(len(vocab), vocab.base_size, vocab.eos_id, vocab.pad_id, alpha)

    def context_key(self, context: Sequence[int]) -> tuple:
        segment, suffix = _split_context(context, self.eos_id)
        bag = tuple(sorted(t for t in segment if t < self.base_size and t not in (self.eos_id, self.pad_id)))
        return (bag, suffix)

    def observe(self, context: Sequence[int], token: int, n: int = 1) -> None:
        key = self.context_key(context)
        row = self.tables[key]
        row[token] = row.get(token, 0) + n
        self.totals[key] += n

    def prob(self, context: Sequence[int], token: int) -> float:
        key = self.context_key(context)
        total = self.totals.get(key, 0)
        count = self.tables[key].get(token, 0) if key in self.tables else 0
        return (count + self.alpha) / (total + self.alpha * self.vocab_size)

    def score(self, context: Sequence[int]) -> np.ndarray:
        key = self.context_key(context)
        row = self.tables.get(key)
        if not row:
            return self._uniform
        denom = self.totals[key] + self.alpha * self.vocab_size
        out = np.full(self.vocab_size, math.log(self.alpha / denom))
        ids = np.fromiter(row.keys(), dtype=np.int64, count=len(row))
        counts = np.fromiter(row.values(), dtype=float, count=len(row))
        out[ids] = np.log((counts + self.alpha) / denom)
        return out

    def to_json(self) -> dict:
        rows = []
        for key in sorted(self.tables):
            bag, suffix = key
            rows.append([list(bag), list(suffix), sorted(self.tables[key].items())])
        return {
            "context_key": CONTEXT_KEY_VERSION,
            "alpha": self.alpha,
            "vocab_size": self.vocab_size,
            "base_size": self.base_size,
            "eos_id": self.eos_id,
            "pad_id": self.pad_id,
            "tables": rows,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CountScorer":
        if data.get("context_key") != CONTEXT_KEY_VERSION:
            raise ValueError(f"unsupported context_key version {data.get('context_key')!r}")
        sc = cls(data["vocab_size"], data["base_size"], data["eos_id"], data["pad_id"], data["alpha"])
        for bag, suffix, items in data["tables"]:
            key = (tuple(bag), tuple(suffix))
            sc.tables[key] = {int(t): int(c) for t, c in items}
            sc.totals[key] = sum(c for _, c in items)
        return sc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CountScorer":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_count_scorer(
    pairs: Iterable[tuple[Sequence[int], Sequence[int]]],
    vocab: Vocabulary,
    alpha: float = 0.1,
    count_eos: bool = True,
) -> CountScorer:
    """Count each target token given (input, target prefix); inputs are prompts.

    With ``count_eos`` the eos after a complete target is counted too, so that
    unconstrained sampling learns to stop.
    """
    scorer = CountScorer.for_vocab(vocab, alpha)
    n = 0
    for inp, target in pairs:
        n += 1
        ctx = list(inp)
        seq = list(target) + ([vocab.eos_id] if count_eos else [])
        for tok in seq:
            scorer.observe(ctx, tok)
            ctx.append(tok)
    if n == 0:
        raise ValueError("no training pairs")
    return scorer


def nll(scorer: Scorer, prompt: Sequence[int], target: Sequence[int]) -> float:
    """Sum of -log p(target[i] | prompt + target[:i]); +inf if any token has p = 0."""
    if not target:
        raise ValueError("target must be non-empty")
    ctx = list(prompt)
    total = 0.0
    for tok in target:
        lp = float(scorer.score(ctx)[tok])
        if lp == NEG_INF:
            return math.inf
        total -= lp
        ctx.append(tok)
    return max(total, 0.0)


# --- decoding ----------------------------------------------------------------

@dataclass
class DecodeConfig:
    beam_width: int = 5
    max_new_tokens: int = 64
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.beam_width < 1 or self.max_new_tokens < 1:
            raise ValueError("beam_width and max_new_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass
class Beam:
    tokens: tuple[int, ...]
    cum_logprob: float
    cursor: TrieNode


def constrained_beam_search(
    scorer: Scorer,
    prompt: Sequence[int],
    trie: DisjunctiveTrie,
    k: int,
) -> list[tuple[tuple[int, ...], float]]:
    """Beam search restricted to trie paths. Returns up to k (suffix, logprob), best first.

    Feasible next tokens are the children of each beam's trie node; the
    scorer's distribution is renormalized over them. A beam whose last token
    is the terminator is emitted and leaves the search. Ties are broken by
    lexicographic token-id order.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    eos = trie.terminator
    prompt = list(prompt)
    beams = [Beam((), 0.0, trie.root)]
    finished: list[Beam] = []
    while beams:
        cands: list[tuple[float, tuple[int, ...], TrieNode]] = []
        for b in beams:
            if b.tokens and b.tokens[-1] == eos:
                finished.append(b)
                continue
            node = b.cursor
            ids = node.child_ids()
            if not len(ids):
                continue
            lp = masked_logprobs(scorer.score(prompt + list(b.tokens)), ids)
            if len(ids) > k:
                keep = np.lexsort((ids, -lp))[:k]
            else:
                keep = range(len(ids))
            for j in keep:
                step = float(lp[j])
                if step == NEG_INF:
                    continue
                tid = int(ids[j])
                cands.append((b.cum_logprob + step, b.tokens + (tid,), node.children[tid]))
        cands.sort(key=lambda c: (-c[0], c[1]))
        beams = [Beam(t, s, n) for s, t, n in cands[:k]]
    finished.sort(key=lambda b: (-b.cum_logprob, b.tokens))
    return [(b.tokens[:-1], b.cum_logprob) for b in finished[:k]]


def sample_free(scorer: Scorer, prompt: Sequence[int], config: DecodeConfig, eos_id: int) -> list[int]:
    """Unconstrained autoregressive sampling. The eos token is kept if produced."""
    rng = np.random.default_rng(config.seed)
    ctx = list(prompt)
    out: list[int] = []
    for _ in range(config.max_new_tokens):
        logp = np.asarray(scorer.score(ctx), dtype=float)
        if config.temperature == 0:
            tok = int(np.argmax(logp))
        else:
            z = logp / config.temperature
            z = z - z[np.isfinite(z)].max()
            p = np.exp(z)
            c = np.cumsum(p)
            tok = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
            tok = min(tok, len(p) - 1)
        out.append(tok)
        ctx.append(tok)
        if tok == eos_id:
            break
    return out
