"""Training corpora: tool memorization, retrieval, and three-turn agent samples."""
from __future__ import annotations

import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .indexer import ToolIndex, atomic_surface, decode_tool, normalize_name, semantic_names
from .registry import ToolRegistry, doc_text
from .tokenizer import Vocabulary

DOMAINS = ("I1", "I2", "I3")
HINT_TEMPLATE_VERSION = "hints-v1"
ACTION_HINT = "Now choose the tool to call next."
PARAMETER_HINT = "Tool documentation: {doc}\nNow provide the arguments as a JSON object."
TOOL_LIST_MARKER = "Specifically, you have access to the following APIs:"


class DatasetError(ValueError):
    pass


@dataclass
class QueryAnnotation:
    query: str
    relevant: list[int]
    domain: str = "I1"
    qid: str = ""

    def __post_init__(self):
        if not self.relevant:
            raise DatasetError(f"annotation {self.qid or self.query!r}: no relevant tools")
        if self.domain not in DOMAINS:
            raise DatasetError(f"annotation {self.qid or self.query!r}: unknown domain {self.domain!r}")


@dataclass
class TrainingPair:
    input: str
    target: tuple[int, ...]
    stage: str  # memorization | retrieval
    domain: str = ""

    def to_json(self) -> dict:
        d = {"input": self.input, "target_token_ids": list(self.target), "stage": self.stage}
        if self.domain:
            d["domain"] = self.domain
        return d


@dataclass
class RawStep:
    thought: str
    action: str
    action_input: str
    observation: str


@dataclass
class RawTrajectory:
    system_prompt: str
    query: str
    steps: list[RawStep]
    final_answer: str
    id: str = ""

    @classmethod
    def from_json(cls, rec: dict) -> "RawTrajectory":
        steps = []
        final = rec.get("final_answer", "")
        for s in rec.get("steps", []):
            if s.get("action") == "Finish":
                # ToolBench encodes the answer as a Finish call
                if not final:
                    try:
                        final = json.loads(s.get("action_input") or "{}").get("final_answer", "")
                    except (json.JSONDecodeError, AttributeError):
                        final = s.get("action_input", "")
                continue
            ai = s.get("action_input", "")
            steps.append(
                RawStep(
                    thought=s.get("thought", ""),
                    action=s["action"],
                    action_input=ai if isinstance(ai, str) else json.dumps(ai, ensure_ascii=False),
                    observation=s.get("observation", ""),
                )
            )
        return cls(rec.get("system_prompt", ""), rec["query"], steps, final, str(rec.get("id", "")))


@dataclass
class Turn:
    role: str
    content: str
    tag: str
    token_ids: list[int] | None = None

    def to_json(self) -> dict:
        d = {"role": self.role, "content": self.content, "tag": self.tag}
        if self.token_ids is not None:
            d["token_ids"] = self.token_ids
        return d


@dataclass
class AgentSample:
    system_prompt: str
    query: str
    turns: list[Turn]
    final_answer: str
    id: str = ""
    ground_truth_prefix: str | None = None

    def messages(self) -> list[Turn]:
        out = [Turn("system", self.system_prompt, "system"), Turn("user", self.query, "query")]
        if self.ground_truth_prefix:
            out.append(Turn("assistant", self.ground_truth_prefix, "ground_truth"))
        out.extend(self.turns)
        out.append(Turn("assistant", self.final_answer, "final"))
        return out

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "template": HINT_TEMPLATE_VERSION,
            "messages": [t.to_json() for t in self.messages()],
        }


# --- memorization / retrieval ---------------------------------------------------

def build_memorization(registry: ToolRegistry, index: ToolIndex) -> list[TrainingPair]:
    if len(index) != len(registry):
        raise DatasetError("index does not cover the registry")
    return [
        TrainingPair(doc_text(api), index.forward[i], "memorization")
        for i, api in enumerate(registry.apis)
    ]


def build_retrieval(annotations: Iterable[QueryAnnotation], index: ToolIndex) -> list[TrainingPair]:
    out = []
    for ann in annotations:
        for t in ann.relevant:
            if not 0 <= t < len(index):
                raise DatasetError(f"annotation {ann.qid or ann.query!r}: tool {t} not in index")
            out.append(TrainingPair(ann.query, index.forward[t], "retrieval", ann.domain))
    return out


def load_annotations(path: str | Path, registry: ToolRegistry) -> tuple[list[QueryAnnotation], list[dict]]:
    """Read annotation JSONL; relevant tools may be given as ordinals, [tool, api] pairs,
    atomic surfaces or semantic names. Unresolvable records are returned as rejects."""
    resolver = NameResolver(registry)
    anns, rejects = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            rel = [resolver.resolve_any(r) for r in rec["relevant"]]
            anns.append(
                QueryAnnotation(rec["query"], rel, rec.get("domain", "I1"), str(rec.get("id", lineno)))
            )
        except (DatasetError, KeyError) as e:
            rejects.append({"line": lineno, "error": str(e), "record": rec})
    return anns, rejects


# --- trajectory conversion ----------------------------------------------------------

class NameResolver:
    """Maps action names to tools: semantic name first, then a unique bare API name."""

    def __init__(self, registry: ToolRegistry):
        self.registry = registry
        self.semantic = {n: i for i, n in enumerate(semantic_names(registry))}
        bare: dict[str, list[int]] = {}
        for i, api in enumerate(registry.apis):
            bare.setdefault(normalize_name(api.api_name), []).append(i)
        self.bare = bare
        self.atomic = {atomic_surface(a): i for i, a in enumerate(registry.apis)}
        self.names = {v: k for k, v in self.semantic.items()}

    def resolve(self, name: str) -> int:
        key = normalize_name(name)
        if key in self.semantic:
            return self.semantic[key]
        hits = self.bare.get(key, [])
        if len(hits) == 1:
            return hits[0]
        if len(hits) > 1:
            raise DatasetError(f"ambiguous action name {name!r} ({len(hits)} tools)")
        raise DatasetError(f"unresolvable action name {name!r}")

    def resolve_any(self, ref) -> int:
        if isinstance(ref, int):
            if not 0 <= ref < len(self.registry):
                raise DatasetError(f"tool ordinal {ref} out of range")
            return ref
        if isinstance(ref, (list, tuple)) and len(ref) == 2:
            t = self.registry.lookup(ref[0], ref[1])
            if t is None:
                raise DatasetError(f"unknown tool {ref!r}")
            return t.ordinal
        if isinstance(ref, str) and ref in self.atomic:
            return self.atomic[ref]
        return self.resolve(str(ref))


_SEMANTIC_WORD = re.compile(r"[0-9a-z_]*_for_[0-9a-z_]*")


def _mentions_tool(line: str, resolver: NameResolver) -> bool:
    starts = [m.start() for m in re.finditer("<<", line)]
    if starts:
        ends = [m.end() for m in re.finditer(">>", line)]
        if any(line[a:b] in resolver.atomic for a in starts for b in ends if b > a):
            return True
    for m in _SEMANTIC_WORD.finditer(line):
        w = m.group()
        n = len(w)
        if any(w[i:j] in resolver.semantic for i in range(n) for j in range(i + 5, n + 1)):
            return True
    return False


def strip_tool_list(prompt: str, registry: ToolRegistry, resolver: NameResolver | None = None) -> str:
    """Drop the candidate tool block and any line naming a registered tool."""
    if TOOL_LIST_MARKER in prompt:
        head, _, tail = prompt.partition(TOOL_LIST_MARKER)
        # the block runs to the next blank line
        rest = re.split(r"\n\s*\n", tail, maxsplit=1)
        prompt = head.rstrip() + ("\n\n" + rest[1] if len(rest) > 1 else "")
    resolver = resolver or NameResolver(registry)
    kept = [ln for ln in prompt.split("\n") if not _mentions_tool(ln, resolver)]
    return "\n".join(kept).strip()


def convert_trajectory(
    raw: RawTrajectory,
    registry: ToolRegistry,
    index: ToolIndex,
    vocab: Vocabulary,
    resolver: NameResolver | None = None,
    ground_truth: Sequence[int] | None = None,
) -> AgentSample:
    resolver = resolver or NameResolver(registry)
    turns: list[Turn] = []
    for step in raw.steps:
        tool = resolver.resolve(step.action)
        seq = list(index.forward[tool])
        turns += [
            Turn("assistant", step.thought, "thought"),
            Turn("user", ACTION_HINT, "action_hint"),
            Turn("assistant", vocab.decode(seq), "action", seq),
            Turn("user", PARAMETER_HINT.format(doc=doc_text(registry.apis[tool])), "documentation"),
            Turn("assistant", step.action_input, "parameters"),
            Turn("user", step.observation, "observation"),
        ]
    prefix = None
    if ground_truth:
        prefix = "I am using the following tools: " + " ".join(
            vocab.decode(index.forward[t]) for t in ground_truth
        )
    return AgentSample(
        system_prompt=strip_tool_list(raw.system_prompt, registry, resolver),
        query=raw.query,
        turns=turns,
        final_answer=raw.final_answer,
        id=raw.id,
        ground_truth_prefix=prefix,
    )


def reassemble(sample: AgentSample, index: ToolIndex, registry: ToolRegistry) -> list[RawStep]:
    """Recover (thought, action name, parameters, observation) per step."""
    names = semantic_names(registry)
    steps = []
    t = sample.turns
    if len(t) % 6:
        raise DatasetError("turn list is not a whole number of decomposed steps")
    for i in range(0, len(t), 6):
        tool = decode_tool(index, t[i + 2].token_ids or [])
        if tool is None:
            raise DatasetError(f"action turn {i + 2} does not decode to a tool")
        steps.append(RawStep(t[i].content, names[tool.ordinal], t[i + 4].content, t[i + 5].content))
    return steps


def convert_batch(
    raws: Sequence[RawTrajectory],
    registry: ToolRegistry,
    index: ToolIndex,
    vocab: Vocabulary,
    workers: int = 1,
) -> tuple[list[AgentSample], list[dict]]:
    """Convert many trajectories; failures are quarantined, output keeps input order."""
    resolver = NameResolver(registry)

    def one(raw):
        try:
            return convert_trajectory(raw, registry, index, vocab, resolver), None
        except DatasetError as e:
            return None, {"id": raw.id, "error": str(e)}

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, raws))
    else:
        results = [one(r) for r in raws]
    samples = [s for s, _ in results if s is not None]
    rejects = [e for _, e in results if e is not None]
    return samples, rejects


def load_trajectories(path: str | Path) -> list[RawTrajectory]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(RawTrajectory.from_json(json.loads(line)))
    return out


# --- statistics ---------------------------------------------------------------

def corpus_stats(
    memorization: Sequence[TrainingPair] = (),
    retrieval: Sequence[TrainingPair] = (),
    agent: Sequence[AgentSample] = (),
) -> dict:
    """Sample counts per stage, retrieval split per domain."""
    targets = Counter(p.target for p in memorization)
    per_domain = Counter(p.domain for p in retrieval)
    return {
        "memorization": len(memorization),
        "memorization_repeated": sum(c - 1 for c in targets.values() if c > 1),
        "retrieval": {**{d: per_domain.get(d, 0) for d in DOMAINS}, "All": len(retrieval)},
        "agent": len(agent),
    }


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def pair_from_json(rec: dict) -> TrainingPair:
    return TrainingPair(rec["input"], tuple(rec["target_token_ids"]), rec["stage"], rec.get("domain", ""))

