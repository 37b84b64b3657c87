"""Seeded synthetic tool corpora, annotations and trajectories for desk-scale runs."""
from __future__ import annotations

import json
import random
from pathlib import Path

from .datasets import TOOL_LIST_MARKER, QueryAnnotation, RawStep, RawTrajectory
from .indexer import semantic_names
from .registry import ApiDocument, ApiParameter, ToolRegistry, doc_text, from_apis, parse_tool_record

# A single-API tool record used as the running example, reduced to the fields we read.
YOUTUBE_HUB_RECORD = {
    "tool_name": "Youtube Hub",
    "tool_description": "Get video and channel details from YouTube.",
    "apis": [
        {
            "name": "Get Video Details",
            "description": "Get all the details of a YouTube video.",
            "method": "GET",
            "required_parameters": [
                {"name": "video_id", "type": "STRING", "description": "The id of the video", "default": ""}
            ],
            "optional_parameters": [],
        }
    ],
}

_ADJ = """Global Rapid Smart Open Quick Easy Daily Live Real Simple Prime Cloud Data Instant
Fast Bright Solid Clear Super Mega Micro Pro Ultra Hyper Nova Alpha Delta Omega""".split()
_NOUN = """Weather Finance Movie Music Sports Travel Recipe News Crypto Stock Flight Hotel Book Game
Health Fitness Job Email Phone Address Currency Translate Image Video Podcast Event Map Traffic""".split()
_VERB = "Get List Search Find Fetch Create Update Delete Convert Check Lookup Validate".split()
_OBJ = """Details Info Summary Results Prices Rates Reviews Schedule Forecast Status History Profile
Ranking Lyrics Quotes Headlines Airports Routes Calories Exercises Listings Contacts Symbols
Trends Channels Episodes Tickets Venues Tiles Incidents""".split()
_FILLER = """returns provides retrieves structured json data for a given query with pagination support
and filters by date region language category including metadata timestamps identifiers""".split()
_PARAMS = "query id city date symbol country limit page lang category user_id keyword".split()


def make_apis(n: int, seed: int = 0) -> list[ApiDocument]:
    """`n` distinct synthetic APIs. Names are unique pairs; descriptions vary per API."""
    rng = random.Random(seed)
    apis: list[ApiDocument] = []
    per_tool = 3
    t = 0
    while len(apis) < n:
        a, b = _ADJ[t % len(_ADJ)], _NOUN[(t // len(_ADJ)) % len(_NOUN)]
        cycle = t // (len(_ADJ) * len(_NOUN))
        tool = f"{a} {b}" + (f" {cycle + 1}" if cycle else "")
        for j in range(per_tool):
            if len(apis) >= n:
                break
            k = (t * per_tool + j) % (len(_VERB) * len(_OBJ))
            api = f"{_VERB[k % len(_VERB)]} {b} {_OBJ[(k // len(_VERB)) % len(_OBJ)]}"
            words = rng.sample(_FILLER, 6)
            desc = f"{api} from {tool}: " + " ".join(words) + f" (ref {rng.randrange(10**6):06d})."
            req = tuple(ApiParameter(p, f"the {p}") for p in rng.sample(_PARAMS, rng.randint(0, 2)))
            opt = tuple(ApiParameter(p, f"the {p}", required=False) for p in rng.sample(_PARAMS, rng.randint(0, 1)))
            opt = tuple(p for p in opt if p.name not in {r.name for r in req})
            apis.append(
                ApiDocument(tool, api, desc, rng.choice(["GET", "GET", "POST"]), req, opt, f"{tool} service")
            )
        t += 1
    return apis


def make_registry(n: int, seed: int = 0, include_youtube: bool = False) -> ToolRegistry:
    apis = make_apis(n - int(include_youtube), seed)
    if include_youtube:
        apis += parse_tool_record(YOUTUBE_HUB_RECORD)
    return from_apis(apis)


def write_tool_files(registry: ToolRegistry, directory: str | Path, per_file: int = 50) -> list[Path]:
    """Group APIs by tool and write JSON tool records, several tools per file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tools: dict[str, dict] = {}
    for api in registry.apis:
        rec = api.to_record()
        if api.tool_name in tools:
            tools[api.tool_name]["apis"].extend(rec["apis"])
        else:
            tools[api.tool_name] = rec
    recs = list(tools.values())
    paths = []
    for i in range(0, len(recs), per_file):
        p = directory / f"tools_{i // per_file:04d}.json"
        p.write_text(json.dumps(recs[i : i + per_file], indent=1, ensure_ascii=False), encoding="utf-8")
        paths.append(p)
    return paths


def doc_queries(registry: ToolRegistry) -> list[QueryAnnotation]:
    """One query per tool (its own doc text); tools split into three contiguous domain blocks."""
    n = len(registry)
    out = []
    for i, api in enumerate(registry.apis):
        domain = ("I1", "I2", "I3")[min(3 * i // n, 2)]
        out.append(QueryAnnotation(doc_text(api), [i], domain, qid=f"q{i}"))
    return out


def example_params(api: ApiDocument, rng: random.Random) -> dict:
    return {p.name: f"{p.name}-{rng.randrange(1000)}" for p in api.required_parameters}


def make_trajectories(registry: ToolRegistry, n: int, seed: int = 0, max_steps: int = 4) -> list[RawTrajectory]:
    """ToolBench-shaped trajectories with a candidate tool block in the system prompt."""
    rng = random.Random(seed)
    names = semantic_names(registry)
    out = []
    for k in range(n):
        n_steps = rng.randint(0, max_steps)
        tools = [rng.randrange(len(registry)) for _ in range(n_steps)]
        listing = "\n".join(
            json.dumps({"name": names[t], "description": registry.apis[t].description[:60]}) for t in tools
        ) or "[]"
        system = (
            "You are AutoGPT, you can use many tools (functions) to do the following task.\n"
            f"{TOOL_LIST_MARKER}\n{listing}\n\n"
            "Remember: call Finish with your final answer when done."
        )
        steps = []
        for s, t in enumerate(tools):
            params = example_params(registry.apis[t], rng)
            steps.append(
                RawStep(
                    thought=f"Step {s + 1}: I should call {registry.apis[t].api_name} to make progress.",
                    action=names[t],
                    action_input=json.dumps(params, sort_keys=True),
                    # a function of (tool, params) so replay fixtures never disagree
                    observation=json.dumps({"tool": names[t], "echo": params, "ok": True}, sort_keys=True),
                )
            )
        out.append(
            RawTrajectory(
                system_prompt=system,
                query=f"Task {k}: please help me with {rng.choice(_NOUN).lower()} information.",
                steps=steps,
                final_answer=f"Here is the answer for task {k}.",
                id=f"traj-{k}",
            )
        )
    return out


def trajectory_to_json(t: RawTrajectory) -> dict:
    return {
        "id": t.id,
        "system_prompt": t.system_prompt,
        "query": t.query,
        "steps": [
            {"thought": s.thought, "action": s.action, "action_input": s.action_input, "observation": s.observation}
            for s in t.steps
        ],
        "final_answer": t.final_answer,
    }


def fixtures_from_trajectories(trajs: list[RawTrajectory]) -> list[dict]:
    """Environment fixtures {tool, params, body} that replay each recorded observation."""
    out = []
    for t in trajs:
        for s in t.steps:
            out.append({"tool": s.action, "params": json.loads(s.action_input), "body": s.observation})
    return out


def write_corpus(directory: str | Path, n_tools: int = 100, n_trajectories: int = 20, seed: int = 0) -> dict[str, Path]:
    """Raw tool files, annotations, trajectories and fixtures for a synthetic corpus."""
    directory = Path(directory)
    registry = make_registry(n_tools, seed, include_youtube=True)
    write_tool_files(registry, directory / "tools")
    names = semantic_names(registry)
    paths = {
        "tools": directory / "tools",
        "annotations": directory / "annotations.jsonl",
        "trajectories": directory / "trajectories.jsonl",
        "fixtures": directory / "fixtures.jsonl",
        "queries": directory / "queries.jsonl",
    }
    anns = doc_queries(registry)
    trajs = make_trajectories(registry, n_trajectories, seed)

    def dump(path, recs):
        path.write_text("".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in recs), encoding="utf-8")

    dump(paths["annotations"], ({"id": a.qid, "query": a.query, "relevant": [names[t] for t in a.relevant], "domain": a.domain} for a in anns))
    dump(paths["trajectories"], (trajectory_to_json(t) for t in trajs))
    dump(paths["fixtures"], fixtures_from_trajectories(trajs))
    dump(paths["queries"], ({"id": t.id, "query": t.query} for t in trajs))
    return paths
