"""Exit criteria, each checked at its stated tolerance and time limit.

Every test records a one-line verdict that is printed in the pytest summary
under "acceptance criteria".
"""
import math
import random
import re
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oracles import bm25_direct, enumerate_paths, ndcg_brute, smoothed_counts
from toolgen.agent import (
    AgentConfig,
    ModelGenerator,
    ScriptedGenerator,
    ScriptStep,
    Terminal,
    action_trie,
    hallucination_rate,
    retry_guard,
    run_session,
)
from toolgen.datasets import build_retrieval, convert_trajectory, reassemble
from toolgen.decoder import CountScorer, RandomScorer, constrained_beam_search, UniformScorer, nll, prompt_for, train_count_scorer
from toolgen.envs import FixtureEnv
from toolgen.indexer import FINISH_SURFACE, IndexScheme, atomic_surface, make_index, semantic_names, token_length_stats
from toolgen.registry import doc_text, from_apis, load_registry, parse_tool_record
from toolgen.retrieval import BM25, Setting, bm25_tokenize, evaluate, generative_retriever, ndcg_at
from toolgen.synthetic import YOUTUBE_HUB_RECORD, doc_queries, make_apis, make_registry, make_trajectories, write_tool_files
from toolgen.tokenizer import Vocabulary
from toolgen.trie import build_trie

pytestmark = pytest.mark.acceptance


def record(n: int, ok: bool, line: str) -> None:
    ACCEPTANCE[n] = (bool(ok), line)
    assert ok, line


def test_01_constrained_legality():
    start = time.perf_counter()
    trajs, calls, sessions = [], 0, 0
    setups = []
    for i, kind in enumerate(["atomic", "semantic", "numeric", "hierarchical"]):
        reg = make_registry(40, seed=i, include_youtube=True)
        vocab, index = make_index(reg, IndexScheme(kind=kind, seed=i))
        setups.append((reg, vocab, index))
    rng = random.Random(0)
    cfg = AgentConfig(turn_token_budget=4)
    while calls < 1000:
        reg, vocab, index = setups[sessions % len(setups)]
        pool = rng.sample(range(len(reg)), rng.randint(1, len(reg)))
        trie = action_trie(index, vocab, pool)
        gen = ModelGenerator(RandomScorer(len(vocab), seed=sessions), vocab.eos_id)
        t = run_session(gen, trie, index, reg, vocab, FixtureEnv({}), f"query {sessions}", cfg)
        assert all(a.tool in pool for a in t.actions)
        trajs.append(t)
        # every Action turn is one constrained decode call, Finish included
        calls += len(t.actions) + (t.terminal is Terminal.FINISHED)
        sessions += 1
    rate = hallucination_rate(trajs)
    elapsed = time.perf_counter() - start
    record(1, rate == 0.0 and elapsed < 10,
           f"constrained legality: {calls} decode calls in {sessions} sessions, hallucination {rate}, {elapsed:.2f}s (< 10s)")


def test_02_beam_oracle_equivalence():
    start = time.perf_counter()
    rng = random.Random(1)
    mismatches = 0
    worst = 0.0
    for trial in range(200):
        vocab_size = rng.randint(3, 40)
        n = rng.randint(1, 200)
        codes = {tuple(rng.randint(1, vocab_size - 1) for _ in range(rng.randint(1, 5))) for _ in range(n)}
        codes = sorted(codes)
        trie = build_trie(codes, 0)
        scorer = RandomScorer(vocab_size, seed=trial, scale=rng.choice([0.5, 2.0, 5.0]))
        got = constrained_beam_search(scorer, [0], trie, len(trie))
        want = enumerate_paths(codes, scorer, [0], 0)
        if [t for t, _ in got] != [t for t, _ in want]:
            mismatches += 1
            continue
        worst = max(worst, max(abs(a - b) for (_, a), (_, b) in zip(got, want)))
    elapsed = time.perf_counter() - start
    record(2, mismatches == 0 and worst <= 1e-9 and elapsed < 30,
           f"beam vs enumeration: 200 tries, {mismatches} order mismatches, max |diff| {worst:.1e} (<= 1e-9), {elapsed:.2f}s (< 30s)")


def _norm(s):
    return re.sub(r"[^0-9a-z]+", "_", s.lower()).strip("_")


def test_03_atomic_singletons_at_scale():
    reg = from_apis(make_apis(47_000, seed=0))
    assert len(reg) == 47_000
    vocab, atomic = make_index(reg, IndexScheme(kind="atomic"))
    _, numeric = make_index(reg, IndexScheme(kind="numeric", numeric_width=6))
    _, semantic = make_index(reg, IndexScheme(kind="semantic"))
    base = Vocabulary.base()
    oracle: dict[int, int] = {}
    for api in reg.apis:
        n = len(base.encode(f"{_norm(api.api_name)}_for_{_norm(api.tool_name)}"))
        oracle[n] = oracle.get(n, 0) + 1
    seqs = [*atomic.forward, (vocab.entries[FINISH_SURFACE],)]
    start = time.perf_counter()
    trie = build_trie(seqs, vocab.eos_id)
    build = time.perf_counter() - start
    a = token_length_stats(atomic)["histogram"]
    nm = token_length_stats(numeric)["histogram"]
    sm = token_length_stats(semantic)["histogram"]
    ok = a == {1: 47_000} and nm == {6: 47_000} and sm == dict(sorted(oracle.items())) and len(trie) == 47_001
    record(3, ok and build < 1.0,
           f"47k registry: atomic {a}, numeric {nm}, semantic matches re-encoding {sm == dict(sorted(oracle.items()))}, "
           f"trie over {len(trie)} sequences built in {build:.3f}s (< 1s)")


def test_04_worked_examples():
    reg = from_apis(parse_tool_record(YOUTUBE_HUB_RECORD))
    vocab, atomic = make_index(reg, IndexScheme(kind="atomic"))
    svocab, semantic = make_index(reg, IndexScheme(kind="semantic"))
    a_ok = atomic.surfaces == ["<<Youtube Hub&&Get Video Details>>"] and len(atomic.forward[0]) == 1 \
        and vocab.decode(atomic.forward[0]) == "<<Youtube Hub&&Get Video Details>>"
    s_ok = semantic.surfaces == ["get_video_details_for_youtube_hub"] \
        and svocab.decode(semantic.forward[0]) == "get_video_details_for_youtube_hub"
    big = from_apis(make_apis(200, seed=0))
    nvocab, numeric = make_index(big, IndexScheme(kind="numeric", numeric_width=6))
    digits = [nvocab.decode([t]) for t in numeric.forward[128]]
    n_ok = digits == ["0", "0", "0", "1", "2", "8"]
    record(4, a_ok and s_ok and n_ok,
           f"worked examples: atomic {atomic.surfaces[0]!r} {a_ok}, semantic {semantic.surfaces[0]!r} {s_ok}, "
           f"numeric #128 -> {','.join(digits)} {n_ok}")


def test_05_ndcg_oracle():
    rng = random.Random(5)
    worst = 0.0
    for _ in range(10_000):
        universe = rng.randint(1, 30)
        ranked = rng.sample(range(universe), rng.randint(0, universe))
        relevant = set(rng.sample(range(universe), rng.randint(0, min(universe, 8))))
        cutoff = rng.randint(1, 12)
        worst = max(worst, abs(ndcg_at(ranked, relevant, cutoff) - ndcg_brute(ranked, relevant, cutoff)))
    hand = ndcg_at([100, 1, 2], {1, 2}, 3)
    expected = (1 / math.log2(3) + 1 / math.log2(4)) / (1 + 1 / math.log2(3))
    record(5, worst <= 1e-9 and abs(hand - 0.6934) <= 1e-4 and abs(hand - expected) <= 1e-12,
           f"NDCG: 10,000 instances max |diff| {worst:.1e} (<= 1e-9); [0,1,1] |rel|=2 @3 = {hand:.6f} (0.6934 +- 1e-4)")


def test_06_end_to_end_retrieval(tmp_path):
    start = time.perf_counter()
    write_tool_files(make_registry(100, seed=6), tmp_path / "tools")
    reg = load_registry(tmp_path / "tools")
    vocab, index = make_index(reg, IndexScheme(kind="atomic"))
    anns = doc_queries(reg)
    pairs = build_retrieval(anns, index)
    scorer = train_count_scorer([(prompt_for(vocab, p.input), list(p.target)) for p in pairs], vocab)
    make = lambda pool: generative_retriever(scorer, index, vocab, pool)
    ind = evaluate(make, anns, Setting.IN_DOMAIN)
    multi = evaluate(make, anns, Setting.MULTI_DOMAIN)

    def mean1(rep):
        n = sum(rep.counts.values())
        return sum(rep.cells[d][1] * rep.counts[d] for d in rep.cells) / n

    i1, m1 = mean1(ind), mean1(multi)
    elapsed = time.perf_counter() - start
    record(6, len(reg) == 100 and i1 >= 0.90 and m1 >= i1 - 0.05 and elapsed < 60,
           f"100-tool pipeline: NDCG@1 in-domain {i1:.3f} (>= 0.90), multi-domain {m1:.3f} (>= in-domain - 0.05), {elapsed:.2f}s (< 60s)")


def test_07_conversion_roundtrip():
    reg = make_registry(80, seed=7, include_youtube=True)
    vocab, index = make_index(reg, IndexScheme(kind="atomic"))
    raws = make_trajectories(reg, 100, seed=7)
    names = semantic_names(reg)
    surfaces = set(index.surfaces) | set(names) | {atomic_surface(a) for a in reg.apis}
    exact = leaks = bad_turns = 0
    for raw in raws:
        s = convert_trajectory(raw, reg, index, vocab)
        exact += reassemble(s, index, reg) == raw.steps
        leaks += any(x in s.system_prompt for x in surfaces)
        assistant = [t for t in s.turns if t.role == "assistant"]
        bad_turns += len(assistant) != 3 * len(raw.steps)
    steps = sum(len(r.steps) for r in raws)
    record(7, exact == 100 and leaks == 0 and bad_turns == 0,
           f"conversion: {exact}/100 exact round-trips ({steps} steps), {leaks} prompts leaking tool names, "
           f"{bad_turns} with != 3 assistant turns per step")


def test_08_agent_budget_and_retry():
    reg = make_registry(30, seed=8, include_youtube=True)
    vocab, index = make_index(reg, IndexScheme(kind="atomic"))
    yt = reg.lookup("Youtube Hub", "Get Video Details").ordinal
    name = semantic_names(reg)[yt]
    env = FixtureEnv.from_records([{"tool": yt, "params": {"video_id": "v"}, "body": "ok"}], int)
    trie = action_trie(index, vocab)
    cfg = AgentConfig()
    steps = [ScriptStep(f"attempt {i}", name, '{"video_id": "v"}') for i in range(6)]
    t = run_session(ScriptedGenerator(steps, "answer", vocab, index, reg), trie, index, reg, vocab, env, "q", cfg)
    budget_ok = (len(t.actions) == 5 and t.terminal is Terminal.BUDGET_EXHAUSTED
                 and t.assistant_turns <= 16 and t.events[-1].kind == "final")
    sorry = ScriptedGenerator([ScriptStep("I'm sorry, I can't", "Finish")], "I give up", vocab, index, reg)
    r = run_session(sorry, trie, index, reg, vocab, env, "q", cfg)
    retries = sum(e.kind == "retry" for e in r.events)
    phrases = retry_guard("I give up on this task") and retry_guard("I'm sorry, but the API failed") \
        and not retry_guard("The capital is Paris.")
    record(8, budget_ok and retries == cfg.max_retries and phrases,
           f"agent: 6 scripted attempts -> {len(t.actions)} actions, {t.assistant_turns} turns, {t.terminal.value}; "
           f"always-apologizing -> {retries} retries (max {cfg.max_retries}); guard phrases {phrases}")


def test_09_loss_identities():
    rng = np.random.default_rng(9)
    worst_uniform = 0.0
    for _ in range(200):
        V = int(rng.integers(2, 5000))
        L = int(rng.integers(1, 30))
        target = [int(x) for x in rng.integers(0, V, L)]
        got = nll(UniformScorer(V), [0], target)
        worst_uniform = max(worst_uniform, abs(got - L * math.log(V)) / (L * math.log(V)))
    vocab = Vocabulary.base()
    words = "find weather stock price flight hotel music video news map score".split()
    pairs = []
    for _ in range(1000):
        q = " ".join(rng.choice(words, int(rng.integers(1, 4))))
        target = [int(x) for x in rng.integers(300, len(vocab), int(rng.integers(1, 4)))]
        pairs.append((prompt_for(vocab, q), target))
    scorer = train_count_scorer(pairs, vocab, alpha=0.1)
    oracle = smoothed_counts(pairs, CountScorer.for_vocab(vocab).context_key, 0.1, len(vocab), vocab.eos_id)
    worst_count = 0.0
    for inp, target in pairs:
        want = -sum(math.log(oracle(list(inp) + target[:i], t)) for i, t in enumerate(target))
        worst_count = max(worst_count, abs(nll(scorer, inp, target) - want))
    record(9, worst_uniform <= 1e-12 and worst_count <= 1e-9,
           f"nll: uniform vs L*log V max rel diff {worst_uniform:.1e}; count scorer vs oracle on 1,000 pairs max |diff| "
           f"{worst_count:.1e} (<= 1e-9)")


def test_10_bm25_oracle():
    reg = make_registry(20, seed=10)
    docs = [doc_text(a) for a in reg.apis]
    toks = [bm25_tokenize(d) for d in docs]
    bm = BM25(docs)
    queries = ["get weather forecast", "stock prices", "query id city", reg.apis[3].api_name, "nothing-matches-xyz"]
    worst = 0.0
    for q in queries:
        want = bm25_direct(toks, bm25_tokenize(q))
        got = bm.scores(q)
        worst = max(worst, max(abs(got.get(i, 0.0) - w) for i, w in enumerate(want)))
    record(10, worst <= 1e-9, f"BM25: 20 documents x {len(queries)} queries, max |diff| vs direct formula {worst:.1e} (<= 1e-9)")
