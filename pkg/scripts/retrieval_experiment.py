"""NDCG@{1,3,5} for each indexing scheme and BM25, in-domain and multi-domain.

Queries are the tools' own documentation. The count scorer is trained on
memorization pairs plus retrieval pairs built from that documentation.
With --drop > 0 a share of query words is removed at test time; the count
scorer keys on the exact word bag, so it falls to chance while BM25 does not.
"""
import argparse
import json
import random
import time

from toolgen.datasets import QueryAnnotation, build_memorization, build_retrieval
from toolgen.decoder import prompt_for, train_count_scorer
from toolgen.indexer import IndexScheme, make_index
from toolgen.retrieval import Setting, bm25_retriever, evaluate, generative_retriever
from toolgen.synthetic import doc_queries, make_registry


def perturb(anns, drop, rng):
    out = []
    for a in anns:
        words = a.query.split()
        kept = [w for w in words if rng.random() >= drop] or words[:1]
        out.append(QueryAnnotation(" ".join(kept), a.relevant, a.domain, a.qid))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tools", type=int, default=300)
    ap.add_argument("--drop", type=float, default=0.0, help="share of query words removed at test time")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write results as JSON here")
    a = ap.parse_args()

    reg = make_registry(a.tools, a.seed)
    train = doc_queries(reg)
    test = perturb(train, a.drop, random.Random(a.seed))
    rows = []
    for scheme in ["atomic", "semantic", "numeric", "hierarchical"]:
        t0 = time.perf_counter()
        vocab, index = make_index(reg, IndexScheme(kind=scheme, seed=a.seed))
        pairs = build_memorization(reg, index) + build_retrieval(train, index)
        scorer = train_count_scorer([(prompt_for(vocab, p.input), list(p.target)) for p in pairs], vocab)
        make = lambda pool: generative_retriever(scorer, index, vocab, pool)
        for setting in Setting:
            rep = evaluate(make, test, setting, method=scheme)
            rows.append(rep)
            print(rep.table(), f"\n({time.perf_counter() - t0:.1f}s)\n")
    for setting in Setting:
        rep = evaluate(lambda pool: bm25_retriever(reg, pool), test, setting, method="bm25")
        rows.append(rep)
        print(rep.table(), "\n")
    if a.out:
        with open(a.out, "w") as fh:
            json.dump({"args": vars(a), "reports": [r.to_json() for r in rows]}, fh, indent=2)


if __name__ == "__main__":
    main()
