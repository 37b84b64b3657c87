"""Agent inference loop: Thought -> Action (tool tokens) -> Parameters -> Feedback.

Each assistant turn is generated separately. After an Action the tool's
documentation is injected as a user turn so the model can fill parameters.
The loop ends on the Finish action, after ``max_action_rounds`` actions, or
when the assistant-turn budget would be exceeded; a Final turn always closes
the session.
"""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .datasets import ACTION_HINT, PARAMETER_HINT, NameResolver, RawTrajectory
from .decoder import DecodeConfig, Scorer, constrained_beam_search, sample_free
from .envs import Environment, ExecutionResult, Status, missing_required
from .indexer import FINISH_SURFACE, ToolIndex, decode_tool
from .registry import ToolRegistry, doc_text
from .tokenizer import Vocabulary
from .trie import DisjunctiveTrie, build_trie

SYSTEM_PROMPT = (
    "You are an agent that solves tasks with tools. Think step by step, "
    "then call one tool per round, or Finish when you can answer."
)
UNKNOWN_TOOL_NOTE = "The requested tool does not exist."
REASK_NOTE = "Please answer with a single JSON object."
RETRY_PHRASES = ("give up", "i'm sorry")


class Phase(str, Enum):
    THOUGHT = "thought"
    ACTION = "action"
    PARAMETERS = "parameters"
    FINAL = "final"


class Terminal(str, Enum):
    FINISHED = "finished"
    BUDGET_EXHAUSTED = "budget_exhausted"
    GAVE_UP = "gave_up"


@dataclass
class AgentConfig:
    max_turns: int = 16
    max_action_rounds: int = 5
    base_temperature: float = 0.0
    retry_temperature: float = 0.7
    max_retries: int = 3
    constrain_actions: bool = True
    turn_token_budget: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.max_turns < 2 * self.max_action_rounds + 1:
            raise ValueError("max_turns must be >= 2 * max_action_rounds + 1")
        if self.retry_temperature <= self.base_temperature:
            raise ValueError("retry_temperature must exceed base_temperature")
        if self.max_retries < 0 or self.turn_token_budget < 1:
            raise ValueError("max_retries must be >= 0 and turn_token_budget >= 1")


def retry_guard(message: str) -> bool:
    """True if the message gives up or apologizes (case-insensitive)."""
    folded = message.casefold().replace("’", "'")
    return any(p in folded for p in RETRY_PHRASES)


class Generator(Protocol):
    """Turn generator: free-running sampler plus the scorer used for Action decoding."""

    def sample(
        self, context: Sequence[int], phase: Phase, round: int, attempt: int,
        temperature: float, seed: int, max_tokens: int,
    ) -> list[int]: ...

    def scorer_for(self, context: Sequence[int], phase: Phase, round: int) -> Scorer: ...


class ModelGenerator:
    """Wraps any Scorer: sampling for text turns, the scorer itself for actions."""

    def __init__(self, scorer: Scorer, eos_id: int):
        self.scorer = scorer
        self.eos_id = eos_id

    def sample(self, context, phase, round, attempt, temperature, seed, max_tokens):
        cfg = DecodeConfig(max_new_tokens=max_tokens, temperature=temperature, seed=seed)
        return sample_free(self.scorer, context, cfg, self.eos_id)

    def scorer_for(self, context, phase, round):
        return self.scorer


class _ScriptedActionScorer:
    def __init__(self, tokens: Sequence[int], start: int, vocab_size: int, noise: float):
        self.tokens = list(tokens)
        self.start = start
        self.vocab_size = vocab_size
        self.noise = noise

    def score(self, context):
        pos = len(context) - self.start
        nxt = self.tokens[pos] if 0 <= pos < len(self.tokens) else self.tokens[-1]
        p = np.full(self.vocab_size, self.noise / self.vocab_size)
        p[nxt] += 1.0 - self.noise
        with np.errstate(divide="ignore"):
            return np.log(p)


@dataclass
class ScriptStep:
    thought: str | list[str]
    action: str
    parameters: str = "{}"


class ScriptedGenerator:
    """Replays scripted turns. List-valued texts give one variant per retry attempt.

    Actions are named by atomic surface, semantic name, bare API name, or
    "Finish"; names that resolve to no tool are emitted as plain text. With
    ``noise`` > 0 the action distribution leaks that much mass uniformly over
    the vocabulary, so unconstrained sampling can go off-script.
    """

    def __init__(
        self,
        steps: Sequence[ScriptStep],
        final: str | list[str],
        vocab: Vocabulary,
        index: ToolIndex,
        registry: ToolRegistry,
        noise: float = 0.0,
        finish_thought: str | list[str] = "I have enough information to answer.",
    ):
        self.steps = list(steps)
        self.final = final
        self.finish_thought = finish_thought
        self.vocab = vocab
        self.noise = noise
        resolver = NameResolver(registry)
        finish = [vocab.entries[FINISH_SURFACE]]
        self.actions: list[list[int]] = []
        for s in self.steps:
            if s.action == "Finish" or s.action == FINISH_SURFACE:
                self.actions.append(finish)
                continue
            try:
                tool = resolver.resolve_any(s.action)
                self.actions.append(list(index.forward[tool]))
            except ValueError:
                self.actions.append(vocab.encode(s.action))
        self.finish_tokens = finish

    @classmethod
    def from_trajectory(cls, raw: RawTrajectory, vocab, index, registry, noise: float = 0.0) -> "ScriptedGenerator":
        steps = [ScriptStep(s.thought, s.action, s.action_input) for s in raw.steps]
        return cls(steps, raw.final_answer, vocab, index, registry, noise=noise)

    @staticmethod
    def _variant(text: str | list[str], attempt: int) -> str:
        if isinstance(text, str):
            return text
        return text[min(attempt, len(text) - 1)]

    def _action(self, round: int) -> list[int]:
        return self.actions[round] if round < len(self.actions) else self.finish_tokens

    def sample(self, context, phase, round, attempt, temperature, seed, max_tokens):
        eos = self.vocab.eos_id
        if phase is Phase.ACTION:
            scorer = self.scorer_for(context, phase, round)
            cfg = DecodeConfig(max_new_tokens=max_tokens, temperature=temperature, seed=seed)
            return sample_free(scorer, context, cfg, eos)
        if phase is Phase.THOUGHT:
            text = self.steps[round].thought if round < len(self.steps) else self.finish_thought
        elif phase is Phase.PARAMETERS:
            text = self.steps[round].parameters if round < len(self.steps) else "{}"
        else:
            text = self.final
        toks = self.vocab.encode(self._variant(text, attempt)) + [eos]
        return toks[:max_tokens]

    def scorer_for(self, context, phase, round):
        return _ScriptedActionScorer(
            self._action(round) + [self.vocab.eos_id], len(context), len(self.vocab), self.noise
        )


# --- trajectory record ------------------------------------------------------------

@dataclass
class Event:
    kind: str  # thought | action | parameters | feedback | retry | final
    turn: int
    text: str | None = None
    tokens: list[int] | None = None
    tool: int | None = None
    params: dict | None = None
    result: ExecutionResult | None = None
    reason: str | None = None
    truncated: bool = False
    ts: float = field(default_factory=time.time)

    def to_json(self) -> dict:
        d: dict[str, Any] = {"type": self.kind, "turn": self.turn, "ts": self.ts}
        for k in ("text", "tokens", "params", "reason"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        if self.kind == "action":
            d["tool"] = self.tool
        if self.result is not None:
            d["result"] = self.result.to_json()
        if self.truncated:
            d["truncated"] = True
        return d


@dataclass
class SessionTrajectory:
    query: str
    events: list[Event]
    terminal: Terminal
    session_id: str = ""
    assistant_turns: int = 0
    reasks: int = 0

    @property
    def actions(self) -> list[Event]:
        return [e for e in self.events if e.kind == "action"]

    def log_records(self) -> list[dict]:
        recs = [{"session": self.session_id, "type": "start", "turn": 0, "query": self.query}]
        recs += [{"session": self.session_id, **e.to_json()} for e in self.events]
        recs.append(
            {
                "session": self.session_id,
                "type": "end",
                "turn": self.assistant_turns,
                "terminal": self.terminal.value,
                "reasks": self.reasks,
            }
        )
        return recs


def hallucination_rate(trajectories: Iterable[SessionTrajectory]) -> float | None:
    """Share of Action events that decode to no registered tool; None without actions."""
    total = bad = 0
    for t in trajectories:
        for e in t.actions:
            total += 1
            bad += e.tool is None
    return None if total == 0 else bad / total


def hallucination_rate_from_log(records: Iterable[dict]) -> float | None:
    total = bad = 0
    for r in records:
        if r.get("type") == "action":
            total += 1
            bad += r.get("tool") is None
    return None if total == 0 else bad / total


# --- session -----------------------------------------------------------------------

class _Session:
    def __init__(self, generator, trie, index, registry, vocab, env, query, config, session_id):
        self.gen = generator
        self.trie = trie
        self.index = index
        self.registry = registry
        self.vocab = vocab
        self.env = env
        self.query = query
        self.cfg = config
        self.session_id = session_id
        self.events: list[Event] = []
        self.context: list[int] = []
        self.turns = 0
        self.rounds = 0
        self.retries = 0
        self.reasks = 0
        self.finish_id = vocab.entries[FINISH_SURFACE]

    def push(self, role: str, tokens: Sequence[int]) -> None:
        eos = self.vocab.eos_id
        body = list(tokens)
        if body and body[-1] == eos:
            body.pop()
        self.context += self.vocab.encode(f"{role}: ") + body + [eos]

    def seed(self, attempt: int) -> int:
        return (self.cfg.seed * 1_000_003 + self.turns * 7919 + attempt * 104_729) % (2**32)

    def text_turn(self, phase: Phase) -> tuple[str, list[int], bool, bool]:
        """Generate a text turn with the retry guard. Returns (text, tokens, truncated, flagged)."""
        attempt = 0
        temp = self.cfg.base_temperature
        while True:
            toks = self.gen.sample(
                self.context, phase, self.rounds, attempt, temp, self.seed(attempt), self.cfg.turn_token_budget
            )
            truncated = not toks or toks[-1] != self.vocab.eos_id
            body = toks if truncated else toks[:-1]
            text = self.vocab.decode(body)
            flagged = retry_guard(text)
            if flagged and phase in (Phase.THOUGHT, Phase.FINAL) and self.retries < self.cfg.max_retries:
                self.retries += 1
                attempt += 1
                temp = self.cfg.retry_temperature
                self.events.append(Event("retry", self.turns + 1, reason=f"{phase.value}: {text[:80]}"))
                continue
            return text, body, truncated, flagged

    def action_turn(self) -> tuple[list[int], bool]:
        if self.cfg.constrain_actions:
            scorer = self.gen.scorer_for(self.context, Phase.ACTION, self.rounds)
            res = constrained_beam_search(scorer, self.context, self.trie, 1)
            if not res:
                return [self.finish_id], True
            return list(res[0][0]), False
        toks = self.gen.sample(
            self.context, Phase.ACTION, self.rounds, 0, self.cfg.base_temperature,
            self.seed(0), self.cfg.turn_token_budget,
        )
        truncated = not toks or toks[-1] != self.vocab.eos_id
        return (toks if truncated else toks[:-1]), truncated

    def parameters_turn(self) -> tuple[str, dict | None, bool]:
        text, body, truncated, _ = self.text_turn(Phase.PARAMETERS)
        params = _parse_params(text)
        if params is None:
            # one silent re-ask, not recorded as a turn
            self.reasks += 1
            saved = list(self.context)
            self.push("user", self.vocab.encode(REASK_NOTE))
            text2, body2, truncated, _ = self.text_turn(Phase.PARAMETERS)
            self.context = saved
            p2 = _parse_params(text2)
            if p2 is not None:
                return text2, p2, truncated
        return text, params, truncated

    def execute(self, tool: int | None, params: dict | None) -> ExecutionResult:
        if tool is None:
            return ExecutionResult(Status.TOOL_ERROR, UNKNOWN_TOOL_NOTE)
        if params is None:
            return ExecutionResult(Status.TOOL_ERROR, "malformed parameters: expected a JSON object")
        missing = missing_required(self.registry.apis[tool], params)
        if missing:
            return ExecutionResult(Status.TOOL_ERROR, f"missing required parameters: {', '.join(missing)}")
        start = time.monotonic()
        res = self.env.execute(tool, params)
        if not res.latency:
            res = ExecutionResult(res.status, res.body, time.monotonic() - start)
        return res

    def run(self, ground_truth: Sequence[int] | None = None) -> SessionTrajectory:
        cfg = self.cfg
        self.push("system", self.vocab.encode(SYSTEM_PROMPT))
        self.push("user", self.vocab.encode(self.query))
        if ground_truth:
            prefix = self.vocab.encode("I am using the following tools: ")
            for t in ground_truth:
                prefix += list(self.index.forward[t])
            self.push("assistant", prefix)
        forced = False
        while True:
            # a full round (thought, action, parameters) must leave room for the final turn
            if self.rounds >= cfg.max_action_rounds or self.turns + 4 > cfg.max_turns:
                forced = True
                break
            text, body, trunc, _ = self.text_turn(Phase.THOUGHT)
            self.turns += 1
            self.events.append(Event("thought", self.turns, text=text, truncated=trunc))
            self.push("assistant", body)
            self.push("user", self.vocab.encode(ACTION_HINT))

            seq, trunc = self.action_turn()
            self.turns += 1
            self.push("assistant", seq)
            if seq == [self.finish_id]:
                break
            tool = decode_tool(self.index, seq)
            ordinal = None if tool is None else tool.ordinal
            self.events.append(Event("action", self.turns, tokens=seq, tool=ordinal, truncated=trunc))
            if ordinal is None:
                note = UNKNOWN_TOOL_NOTE
            else:
                note = PARAMETER_HINT.format(doc=doc_text(self.registry.apis[ordinal]))
            self.push("user", self.vocab.encode(note))

            text, params, trunc = self.parameters_turn()
            self.turns += 1
            self.events.append(Event("parameters", self.turns, text=text, params=params, truncated=trunc))
            self.push("assistant", self.vocab.encode(text))

            result = self.execute(ordinal, params)
            self.events.append(Event("feedback", self.turns, result=result))
            self.push("user", self.vocab.encode(result.body))
            self.rounds += 1

        text, body, trunc, flagged = self.text_turn(Phase.FINAL)
        self.turns += 1
        self.events.append(Event("final", self.turns, text=text, truncated=trunc))
        if flagged:
            terminal = Terminal.GAVE_UP
        elif forced:
            terminal = Terminal.BUDGET_EXHAUSTED
        else:
            terminal = Terminal.FINISHED
        return SessionTrajectory(self.query, self.events, terminal, self.session_id, self.turns, self.reasks)


def _parse_params(text: str) -> dict | None:
    try:
        val = json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return None
    return val if isinstance(val, dict) else None


def action_trie(index: ToolIndex, vocab: Vocabulary, tools: Iterable[int] | None = None) -> DisjunctiveTrie:
    """Trie over tool sequences (optionally a subset) plus the Finish token."""
    seqs = index.forward if tools is None else index.restrict(tools)
    return build_trie([*seqs, (vocab.entries[FINISH_SURFACE],)], vocab.eos_id)


def run_session(
    generator: Generator,
    trie: DisjunctiveTrie,
    index: ToolIndex,
    registry: ToolRegistry,
    vocab: Vocabulary,
    env: Environment,
    query: str,
    config: AgentConfig | None = None,
    session_id: str = "",
    ground_truth: Sequence[int] | None = None,
) -> SessionTrajectory:
    config = config or AgentConfig()
    s = _Session(generator, trie, index, registry, vocab, env, query, config, session_id)
    return s.run(ground_truth)


def apply_retry(generator: Generator, context: Sequence[int], phase: Phase, round: int,
                attempt: int, config: AgentConfig, vocab: Vocabulary) -> tuple[str, bool]:
    """Regenerate one turn at the retry temperature with a fresh seed.

    Returns the new text and whether it is still flagged. The session loop
    uses the same rule internally; this entry point is for callers driving
    turns themselves.
    """
    seed = (config.seed * 1_000_003 + len(context) * 7919 + attempt * 104_729) % (2**32)
    toks = generator.sample(context, phase, round, attempt, config.retry_temperature, seed, config.turn_token_budget)
    if toks and toks[-1] == vocab.eos_id:
        toks = toks[:-1]
    text = vocab.decode(toks)
    return text, retry_guard(text)


def is_legal_event_sequence(kinds: Sequence[str]) -> bool:
    """Events (retries removed) match (thought action parameters feedback)* thought? final."""
    letters = {"thought": "T", "action": "A", "parameters": "P", "feedback": "F", "final": "Z"}
    s = "".join(letters[k] for k in kinds if k != "retry")
    return re.fullmatch(r"(TAPF)*T?Z", s) is not None

