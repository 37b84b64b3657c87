"""Generative retrieval over the trie, a BM25 baseline, and NDCG@k evaluation."""
from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

from .datasets import DOMAINS, QueryAnnotation
from .decoder import Scorer, constrained_beam_search, prompt_for
from .indexer import ToolIndex, decode_tool
from .registry import ToolRegistry, doc_text
from .tokenizer import Vocabulary
from .trie import DisjunctiveTrie, build_trie

Ranking = list[tuple[int, float]]


class Setting(str, Enum):
    IN_DOMAIN = "in-domain"
    MULTI_DOMAIN = "multi-domain"


def retrieve(
    scorer: Scorer,
    trie: DisjunctiveTrie,
    index: ToolIndex,
    vocab: Vocabulary,
    query: str,
    k: int,
) -> Ranking:
    """Constrained generation of up to k tools for `query`."""
    out = []
    for seq, score in constrained_beam_search(scorer, prompt_for(vocab, query), trie, k):
        tool = decode_tool(index, seq)
        if tool is not None:  # always true for a trie built from this index
            out.append((tool.ordinal, score))
    return out


# --- BM25 --------------------------------------------------------------------

_WORD = re.compile(r"[0-9a-z]+")


def bm25_tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class BM25:
    """Okapi BM25 over a fixed document list; idf = ln(1 + (N - n + .5) / (n + .5))."""

    def __init__(self, docs: Sequence[str], k1: float = 1.2, b: float = 0.75, ids: Sequence[int] | None = None):
        self.k1, self.b = k1, b
        self.ids = list(ids) if ids is not None else list(range(len(docs)))
        self.tfs = [Counter(bm25_tokenize(d)) for d in docs]
        self.lens = [sum(tf.values()) for tf in self.tfs]
        self.n_docs = len(docs)
        self.avgdl = (sum(self.lens) / self.n_docs) if self.n_docs else 0.0
        df: Counter[str] = Counter()
        postings: dict[str, list[int]] = {}
        for i, tf in enumerate(self.tfs):
            for term in tf:
                df[term] += 1
                postings.setdefault(term, []).append(i)
        self.df = df
        self.postings = postings

    def idf(self, term: str) -> float:
        n = self.df.get(term, 0)
        return math.log(1.0 + (self.n_docs - n + 0.5) / (n + 0.5))

    def scores(self, query: str) -> dict[int, float]:
        """Score of every document sharing at least one term with the query."""
        out: dict[int, float] = {}
        for term in bm25_tokenize(query):
            docs = self.postings.get(term)
            if not docs:
                continue
            idf = self.idf(term)
            for i in docs:
                f = self.tfs[i][term]
                norm = self.k1 * (1.0 - self.b + self.b * self.lens[i] / self.avgdl)
                out[i] = out.get(i, 0.0) + idf * f * (self.k1 + 1.0) / (f + norm)
        return out

    def search(self, query: str, k: int) -> Ranking:
        s = self.scores(query)
        ranked = sorted(((self.ids[i], v) for i, v in s.items()), key=lambda x: (-x[1], x[0]))
        return ranked[:k]


def bm25_retrieve(registry: ToolRegistry, query: str, k: int, k1: float = 1.2, b: float = 0.75) -> Ranking:
    return BM25([doc_text(a) for a in registry.apis], k1, b).search(query, k)


# --- NDCG --------------------------------------------------------------------

def ndcg_at(ranked: Sequence[int], relevant: Iterable[int], cutoff: int) -> float:
    """Binary-relevance NDCG with gain 2^rel - 1 and log2(i + 1) discount."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    rel = set(relevant)
    if not rel:
        return 0.0
    dcg = 0.0
    for i, t in enumerate(ranked[:cutoff], start=1):
        if t in rel:
            dcg += 1.0 / math.log2(i + 1)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(rel), cutoff) + 1))
    return dcg / ideal


# --- evaluation ----------------------------------------------------------------

@dataclass
class NdcgReport:
    setting: str
    method: str
    cutoffs: list[int]
    cells: dict[str, dict[int, float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    excluded: int = 0
    empty_relevant: int = 0

    def to_json(self) -> dict:
        return {
            "setting": self.setting,
            "method": self.method,
            "cutoffs": self.cutoffs,
            "ndcg": {d: {f"@{c}": v for c, v in row.items()} for d, row in self.cells.items()},
            "queries": self.counts,
            "excluded": self.excluded,
            "empty_relevant": self.empty_relevant,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["domain"] + [f"NDCG@{c}" for c in self.cutoffs] + ["queries"])
        for d, row in self.cells.items():
            w.writerow([d] + [f"{row[c]:.6f}" for c in self.cutoffs] + [self.counts[d]])
        return buf.getvalue()

    def table(self) -> str:
        head = f"{'domain':<8}" + "".join(f"{'NDCG@' + str(c):>10}" for c in self.cutoffs) + f"{'n':>8}"
        lines = [f"{self.method} / {self.setting}", head]
        for d, row in self.cells.items():
            lines.append(f"{d:<8}" + "".join(f"{100 * row[c]:>10.2f}" for c in self.cutoffs) + f"{self.counts[d]:>8}")
        return "\n".join(lines)


def domain_pools(annotations: Sequence[QueryAnnotation]) -> dict[str, set[int]]:
    pools: dict[str, set[int]] = {d: set() for d in DOMAINS}
    for a in annotations:
        pools[a.domain].update(a.relevant)
    return pools


Retriever = Callable[[str, int], Ranking]


def generative_retriever(scorer: Scorer, index: ToolIndex, vocab: Vocabulary, pool: Iterable[int]) -> Retriever:
    trie = build_trie(index.restrict(pool), vocab.eos_id)
    return lambda q, k: retrieve(scorer, trie, index, vocab, q, k)


def bm25_retriever(registry: ToolRegistry, pool: Iterable[int], k1: float = 1.2, b: float = 0.75) -> Retriever:
    ids = sorted(set(pool))
    bm = BM25([doc_text(registry.apis[i]) for i in ids], k1, b, ids=ids)
    return bm.search


def evaluate(
    make_retriever: Callable[[set[int]], Retriever],
    annotations: Sequence[QueryAnnotation],
    setting: Setting | str = Setting.IN_DOMAIN,
    cutoffs: Sequence[int] = (1, 3, 5),
    pools: dict[str, set[int]] | None = None,
    method: str = "generative",
    workers: int = 1,
) -> NdcgReport:
    """Mean NDCG per domain. `make_retriever(pool)` builds a retriever over a candidate pool.

    In-domain evaluation searches only the query's own domain pool; multi-domain
    searches the union. Annotations with tools outside their in-domain pool are
    excluded and counted.
    """
    setting = Setting(setting)
    cutoffs = sorted(set(cutoffs))
    kmax = max(cutoffs)
    pools = pools or domain_pools(annotations)
    union = set().union(*pools.values())
    retrievers: dict[str, Retriever] = {}
    if setting is Setting.MULTI_DOMAIN:
        shared = make_retriever(union)
        retrievers = {d: shared for d in DOMAINS}
    else:
        retrievers = {d: make_retriever(pools[d]) for d in DOMAINS if pools.get(d)}

    report = NdcgReport(setting.value, method, list(cutoffs))
    todo = []
    for a in annotations:
        pool = union if setting is Setting.MULTI_DOMAIN else pools.get(a.domain, set())
        if not set(a.relevant) <= pool or a.domain not in retrievers:
            report.excluded += 1
            continue
        todo.append(a)

    def run(a: QueryAnnotation) -> list[int]:
        return [t for t, _ in retrievers[a.domain](a.query, kmax)]

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rankings = list(ex.map(run, todo))
    else:
        rankings = [run(a) for a in todo]

    sums: dict[str, dict[int, float]] = {d: {c: 0.0 for c in cutoffs} for d in DOMAINS}
    counts = Counter()
    for a, ranked in zip(todo, rankings):
        counts[a.domain] += 1
        if not a.relevant:
            report.empty_relevant += 1
        for c in cutoffs:
            sums[a.domain][c] += ndcg_at(ranked, a.relevant, c)
    for d in DOMAINS:
        if counts[d]:
            report.cells[d] = {c: sums[d][c] / counts[d] for c in cutoffs}
            report.counts[d] = counts[d]
    return report


def write_report(report: NdcgReport, json_path, csv_path) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
