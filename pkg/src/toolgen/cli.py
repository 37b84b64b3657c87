"""Command line entry points.

Every subcommand reads its inputs, writes artifacts into a run directory
(``--out``, default ``runs/<config hash>``) and never touches its inputs.
Options come from flags, then the ``--config`` TOML file (top-level keys and a
table named after the subcommand), then built-in defaults.

Exit status: 0 ok, 1 data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .agent import AgentConfig, ModelGenerator, ScriptedGenerator, action_trie, hallucination_rate_from_log, run_session
from .datasets import (
    NameResolver,
    build_memorization,
    build_retrieval,
    convert_batch,
    corpus_stats,
    load_annotations,
    load_trajectories,
    pair_from_json,
    write_jsonl,
)
from .decoder import CountScorer, prompt_for, train_count_scorer
from .envs import Endpoint, FixtureEnv, HttpEnv
from .indexer import IndexScheme, ToolIndex, make_index, token_length_stats
from .registry import load_registry, save_registry
from .retrieval import Setting, bm25_retriever, domain_pools, evaluate, generative_retriever, retrieve, write_report
from .tokenizer import Vocabulary
from .trie import build_trie


class DataError(Exception):
    """Bad or missing input data; reported with exit status 1."""


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "workers": os.cpu_count() or 1,
    "scheme": "atomic",
    "numeric_width": 6,
    "branching": 10,
    "alpha": 0.1,
    "k": 5,
    "setting": "in-domain",
    "cutoffs": "1,3,5",
    "method": "generative",
    "k1": 1.2,
    "b": 0.75,
    "max_turns": 16,
    "max_action_rounds": 5,
    "base_temperature": 0.0,
    "retry_temperature": 0.7,
    "max_retries": 3,
    "constrain": True,
    "turn_token_budget": 256,
    "noise": 0.0,
    "max_concurrency": 4,
}

# options naming files or directories that must exist
INPUT_PATHS = (
    "tools", "registry", "vocab", "index", "scorer", "annotations",
    "trajectories", "fixtures", "endpoints", "queries", "replay",
)
# options that do not change artifacts and stay out of the run hash
UNHASHED = {"out", "workers", "config", "command"}


# --- helpers ------------------------------------------------------------------

def _dump_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _read_jsonl(path: str | Path) -> list[dict]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{n}: invalid JSON ({e.msg})") from None
    return out


def _scheme(o: argparse.Namespace) -> IndexScheme:
    return IndexScheme(kind=o.scheme, numeric_width=o.numeric_width, branching=o.branching, seed=o.seed)


def _load_vi(o) -> tuple[Vocabulary, ToolIndex]:
    return Vocabulary.load(o.vocab), ToolIndex.load(o.index)


def _need(o, *names: str) -> None:
    missing = [n for n in names if getattr(o, n, None) in (None, "", [])]
    if missing:
        raise UsageError(f"{o.command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


class UsageError(Exception):
    pass


def _agent_config(o) -> AgentConfig:
    return AgentConfig(
        max_turns=o.max_turns,
        max_action_rounds=o.max_action_rounds,
        base_temperature=o.base_temperature,
        retry_temperature=o.retry_temperature,
        max_retries=o.max_retries,
        constrain_actions=o.constrain,
        turn_token_budget=o.turn_token_budget,
        seed=o.seed,
    )


# --- subcommands -----------------------------------------------------------------

def cmd_ingest(o, out: Path) -> str:
    _need(o, "tools")
    reg = load_registry(o.tools)
    save_registry(reg, out / "registry.jsonl")
    _dump_json(out / "ingest.json", {"apis": len(reg), "duplicates_dropped": reg.duplicates})
    return f"{len(reg)} APIs ({reg.duplicates} duplicates dropped)"


def cmd_index(o, out: Path) -> str:
    _need(o, "registry")
    reg = load_registry(o.registry)
    vocab, index = make_index(reg, _scheme(o))
    vocab.save(out / "vocab.tsv")
    index.save(out / "index.jsonl")
    return f"{o.scheme} index over {len(index)} tools, vocabulary {len(vocab)}"


def cmd_stats(o, out: Path) -> str:
    if o.index:
        index = ToolIndex.load(o.index)
    else:
        _need(o, "registry")
        _, index = make_index(load_registry(o.registry), _scheme(o))
    stats = token_length_stats(index)
    _dump_json(out / "stats.json", {"scheme": index.scheme.kind.value, **{k: v for k, v in stats.items()}})
    hist = ", ".join(f"{k}: {v}" for k, v in stats["histogram"].items())
    return f"histogram {{{hist}}}  min {stats['min']}  median {stats['median']}  max {stats['max']}"


def cmd_build_data(o, out: Path) -> str:
    _need(o, "registry", "vocab", "index")
    reg = load_registry(o.registry)
    vocab, index = _load_vi(o)
    if len(index) != len(reg):
        raise DataError(f"{o.index}: index covers {len(index)} tools, registry has {len(reg)}")
    mem = build_memorization(reg, index)
    write_jsonl(out / "memorization.jsonl", (p.to_json() for p in mem))
    ret, agent, rejects = [], [], []
    if o.annotations:
        anns, bad = load_annotations(o.annotations, reg)
        rejects += [{"source": str(o.annotations), **r} for r in bad]
        ret = build_retrieval(anns, index)
        write_jsonl(out / "retrieval.jsonl", (p.to_json() for p in ret))
        write_jsonl(out / "annotations.jsonl", ({"query": a.query, "relevant": a.relevant, "domain": a.domain, "id": a.qid} for a in anns))
    if o.trajectories:
        raws = load_trajectories(o.trajectories)
        agent, bad = convert_batch(raws, reg, index, vocab, workers=o.workers)
        rejects += [{"source": str(o.trajectories), **r} for r in bad]
        write_jsonl(out / "agent.jsonl", (s.to_json() for s in agent))
    write_jsonl(out / "rejects.jsonl", rejects)
    stats = corpus_stats(mem, ret, agent)
    _dump_json(out / "data_stats.json", {**stats, "rejects": len(rejects)})
    return (
        f"memorization {stats['memorization']}  retrieval {stats['retrieval']['All']}  "
        f"agent {stats['agent']}  rejects {len(rejects)}"
    )


def cmd_train_scorer(o, out: Path) -> str:
    _need(o, "vocab", "data")
    vocab = Vocabulary.load(o.vocab)
    pairs = []
    for path in o.data:
        if not Path(path).exists():
            raise DataError(f"missing input: {path}")
        for rec in _read_jsonl(path):
            p = pair_from_json(rec)
            pairs.append((prompt_for(vocab, p.input), list(p.target)))
    if not pairs:
        raise DataError("no training pairs in " + ", ".join(map(str, o.data)))
    scorer = train_count_scorer(pairs, vocab, alpha=o.alpha)
    scorer.save(out / "scorer.json")
    return f"count scorer from {len(pairs)} pairs, {len(scorer.tables)} contexts"


def cmd_retrieve(o, out: Path) -> str:
    _need(o, "vocab", "index", "scorer", "query")
    vocab, index = _load_vi(o)
    scorer = CountScorer.load(o.scorer)
    trie = build_trie(index.forward, vocab.eos_id)
    ranked = retrieve(scorer, trie, index, vocab, o.query, o.k)
    rows = [{"rank": r, "tool": t, "surface": index.surfaces[t], "score": s} for r, (t, s) in enumerate(ranked, 1)]
    _dump_json(out / "retrieve.json", {"query": o.query, "k": o.k, "results": rows})
    return "\n".join(f"{r['rank']:>3}  {r['score']:>10.4f}  {r['surface']}" for r in rows)


def cmd_eval_retrieval(o, out: Path) -> str:
    _need(o, "registry", "annotations")
    reg = load_registry(o.registry)
    anns, bad = load_annotations(o.annotations, reg)
    if not anns:
        raise DataError(f"{o.annotations}: no usable annotations")
    cutoffs = [int(c) for c in str(o.cutoffs).split(",") if c.strip()]
    if o.method == "bm25":
        make = lambda pool: bm25_retriever(reg, pool, o.k1, o.b)
    else:
        _need(o, "vocab", "index", "scorer")
        vocab, index = _load_vi(o)
        scorer = CountScorer.load(o.scorer)
        make = lambda pool: generative_retriever(scorer, index, vocab, pool)
    report = evaluate(make, anns, Setting(o.setting), cutoffs, domain_pools(anns), o.method, o.workers)
    write_report(report, out / "ndcg.json", out / "ndcg.csv")
    note = f"\n{len(bad)} annotation(s) rejected, {report.excluded} excluded" if bad or report.excluded else ""
    return report.table() + note


def _environment(o, reg):
    if o.endpoints:
        raw = json.loads(Path(o.endpoints).read_text(encoding="utf-8"))
        resolver = NameResolver(reg)
        eps = {resolver.resolve_any(k if not k.isdigit() else int(k)): Endpoint(**v) for k, v in raw.items()}
        return HttpEnv(reg, eps, o.max_concurrency)
    if o.fixtures:
        resolver = NameResolver(reg)
        return FixtureEnv.from_jsonl(o.fixtures, resolver.resolve_any)
    return FixtureEnv({})


def cmd_agent_run(o, out: Path) -> str:
    _need(o, "registry", "vocab", "index")
    reg = load_registry(o.registry)
    vocab, index = _load_vi(o)
    cfg = _agent_config(o)
    env = _environment(o, reg)
    trie = action_trie(index, vocab)
    sessions: list[tuple[str, str, Callable[[], Any]]] = []
    if o.replay:
        for raw in load_trajectories(o.replay):
            gen = ScriptedGenerator.from_trajectory(raw, vocab, index, reg, noise=o.noise)
            sessions.append((raw.id, raw.query, gen))
    else:
        _need(o, "scorer", "queries")
        gen = ModelGenerator(CountScorer.load(o.scorer), vocab.eos_id)
        for n, rec in enumerate(_read_jsonl(o.queries)):
            sessions.append((str(rec.get("id", n)), rec["query"], gen))
    if not sessions:
        raise DataError("no sessions to run")
    records, terminals = [], {}
    for sid, query, gen in sessions:
        t = run_session(gen, trie, index, reg, vocab, env, query, cfg, session_id=sid)
        records += t.log_records()
        terminals[t.terminal.value] = terminals.get(t.terminal.value, 0) + 1
    write_jsonl(out / "trajectories.jsonl", records)
    _dump_json(out / "agent_summary.json", {"sessions": len(sessions), "terminal": terminals})
    return f"{len(sessions)} sessions: " + ", ".join(f"{k} {v}" for k, v in sorted(terminals.items()))


def cmd_eval_hallucination(o, out: Path) -> str:
    _need(o, "logs")
    per_file, allrecs = {}, []
    for path in o.logs:
        if not Path(path).exists():
            raise DataError(f"missing input: {path}")
        recs = _read_jsonl(path)
        allrecs += recs
        per_file[str(path)] = hallucination_rate_from_log(recs)
    rate = hallucination_rate_from_log(allrecs)
    actions = sum(1 for r in allrecs if r.get("type") == "action")
    _dump_json(out / "hallucination.json", {"rate": rate, "actions": actions, "per_log": per_file})
    shown = "undefined (no actions)" if rate is None else f"{rate:.4f}"
    return f"hallucination rate {shown} over {actions} actions"


COMMANDS: dict[str, tuple[Callable, str]] = {
    "ingest": (cmd_ingest, "read raw tool JSON files into a canonical registry"),
    "index": (cmd_index, "assign token sequences to every tool"),
    "stats": (cmd_stats, "token-length histogram of an index"),
    "build-data": (cmd_build_data, "memorization, retrieval and agent training files"),
    "train-scorer": (cmd_train_scorer, "fit the smoothed count scorer on training pairs"),
    "retrieve": (cmd_retrieve, "constrained generation of tools for one query"),
    "eval-retrieval": (cmd_eval_retrieval, "NDCG@k per domain, generative or BM25"),
    "agent-run": (cmd_agent_run, "run agent sessions and log their events"),
    "eval-hallucination": (cmd_eval_hallucination, "share of actions that name no registered tool"),
}


# --- argument parsing ---------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file; flags override its values")
    p.add_argument("--out", help="run directory (default runs/<config hash>)")
    p.add_argument("--seed", type=int, help="seed for every stochastic step (default 0)")
    p.add_argument("--workers", type=int, help="parallel workers (default: CPU count)")


def _index_opts(p):
    p.add_argument("--scheme", choices=["atomic", "semantic", "numeric", "hierarchical"], help="indexing scheme (default atomic)")
    p.add_argument("--numeric-width", type=int, help="digits per numeric code (default 6)")
    p.add_argument("--branching", type=int, help="hierarchical branching factor, 2..10 (default 10)")


def _vi(p, scorer=False):
    p.add_argument("--vocab", help="vocabulary TSV from `index`")
    p.add_argument("--index", help="index JSONL from `index`")
    if scorer:
        p.add_argument("--scorer", help="scorer JSON from `train-scorer`")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toolgen", description="Tool tokens, constrained decoding and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    ps = {name: sub.add_parser(name, help=h, description=h) for name, (_, h) in COMMANDS.items()}
    for p in ps.values():
        _common(p)

    ps["ingest"].add_argument("--tools", help="tool JSON file, JSONL file or directory")

    ps["index"].add_argument("--registry", help="registry JSONL or raw tool directory")
    _index_opts(ps["index"])

    ps["stats"].add_argument("--registry", help="registry to index on the fly")
    ps["stats"].add_argument("--index", help="existing index JSONL (overrides --registry)")
    _index_opts(ps["stats"])

    p = ps["build-data"]
    p.add_argument("--registry", help="registry JSONL")
    _vi(p)
    p.add_argument("--annotations", help="query annotation JSONL {query, relevant, domain}")
    p.add_argument("--trajectories", help="raw trajectory JSONL")

    p = ps["train-scorer"]
    p.add_argument("--vocab", help="vocabulary TSV")
    p.add_argument("--data", nargs="+", help="training pair JSONL files")
    p.add_argument("--alpha", type=float, help="additive smoothing (default 0.1)")

    p = ps["retrieve"]
    _vi(p, scorer=True)
    p.add_argument("--query", help="query text")
    p.add_argument("--k", type=int, help="beam width / results (default 5)")

    p = ps["eval-retrieval"]
    p.add_argument("--registry", help="registry JSONL")
    _vi(p, scorer=True)
    p.add_argument("--annotations", help="query annotation JSONL")
    p.add_argument("--setting", choices=[s.value for s in Setting], help="candidate pool (default in-domain)")
    p.add_argument("--cutoffs", help="comma separated NDCG cutoffs (default 1,3,5)")
    p.add_argument("--method", choices=["generative", "bm25"], help="retriever (default generative)")
    p.add_argument("--k1", type=float, help="BM25 k1 (default 1.2)")
    p.add_argument("--b", type=float, help="BM25 b (default 0.75)")

    p = ps["agent-run"]
    p.add_argument("--registry", help="registry JSONL")
    _vi(p, scorer=True)
    p.add_argument("--queries", help="query JSONL {id?, query} for the scorer-driven generator")
    p.add_argument("--replay", help="raw trajectory JSONL replayed by a scripted generator")
    p.add_argument("--noise", type=float, help="scripted action noise mass (default 0)")
    p.add_argument("--fixtures", help="fixture JSONL {tool, params, body}")
    p.add_argument("--endpoints", help="JSON {tool: {url_template, method, timeout_ms}} for live HTTP calls")
    p.add_argument("--max-concurrency", type=int, help="concurrent HTTP calls (default 4)")
    p.add_argument("--max-turns", type=int, help="assistant turn cap (default 16)")
    p.add_argument("--max-action-rounds", type=int, help="action cap (default 5)")
    p.add_argument("--base-temperature", type=float, help="sampling temperature (default 0)")
    p.add_argument("--retry-temperature", type=float, help="temperature for regenerated turns (default 0.7)")
    p.add_argument("--max-retries", type=int, help="retry budget per session (default 3)")
    p.add_argument("--constrain", action=argparse.BooleanOptionalAction, help="trie-constrained actions (default on)")
    p.add_argument("--turn-token-budget", type=int, help="max tokens per turn (default 256)")

    ps["eval-hallucination"].add_argument("--logs", nargs="+", help="trajectory logs from agent-run")
    return parser


def _from_config(path: str, command: str) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing input: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise DataError(f"{path}: {e}") from None
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    flat.update(data.get(command, {}))
    return {k.replace("-", "_"): v for k, v in flat.items()}


def resolve_options(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    o = parser.parse_args(argv)
    cfg = _from_config(o.config, o.command) if o.config else {}
    known = set(vars(o))
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"{o.config}: unknown option(s) for {o.command}: {', '.join(unknown)}")
    for key in known:
        if getattr(o, key) is None:
            setattr(o, key, cfg.get(key, DEFAULTS.get(key)))
    if getattr(o, "cutoffs", None) is not None and not isinstance(o.cutoffs, str):
        o.cutoffs = ",".join(str(c) for c in o.cutoffs)
    return o


def config_hash(o: argparse.Namespace) -> str:
    items = {k: v for k, v in sorted(vars(o).items()) if k not in UNHASHED}
    blob = json.dumps([o.command, items], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def main(argv: list[str] | None = None) -> int:
    try:
        o = resolve_options(argv)
        for name in INPUT_PATHS:
            path = getattr(o, name, None)
            if path and not Path(path).exists():
                raise DataError(f"missing input: {path}")
        out = Path(o.out or Path("runs") / f"{o.command}-{config_hash(o)}")
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[o.command][0](o, out)
    except UsageError as e:
        print(f"toolgen: error: {e}", file=sys.stderr)
        return 2
    except (DataError, ValueError, KeyError, OSError) as e:
        # registry, vocabulary, index and dataset errors are all ValueErrors
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"toolgen: data error: {msg}", file=sys.stderr)
        return 1
    print(summary)
    print(f"artifacts in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
