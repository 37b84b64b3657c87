"""Tool registry: ingest ToolBench-style tool records, one entry per API."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

log = logging.getLogger(__name__)

HTTP_METHODS = ("GET", "POST", "PUT", "DELETE", "")
DOC_TEMPLATE_VERSION = "doc-v1"


class RegistryError(ValueError):
    """Raised for malformed tool records or an empty registry."""


@dataclass(frozen=True)
class ApiParameter:
    name: str
    description: str = ""
    required: bool = True
    default: str | None = None

    def __post_init__(self):
        if not self.name:
            raise RegistryError("parameter name must be non-empty")


@dataclass(frozen=True)
class ApiDocument:
    tool_name: str
    api_name: str
    description: str = ""
    method: str = ""
    required_parameters: tuple[ApiParameter, ...] = ()
    optional_parameters: tuple[ApiParameter, ...] = ()
    tool_description: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (self.tool_name, self.api_name)

    def to_record(self) -> dict[str, Any]:
        """Single-API tool record in the interchange format."""

        def params(ps):
            out = []
            for p in ps:
                d = {"name": p.name, "description": p.description}
                if p.default is not None:
                    d["default"] = p.default
                out.append(d)
            return out

        return {
            "tool_name": self.tool_name,
            "tool_description": self.tool_description,
            "apis": [
                {
                    "name": self.api_name,
                    "description": self.description,
                    "method": self.method,
                    "required_parameters": params(self.required_parameters),
                    "optional_parameters": params(self.optional_parameters),
                }
            ],
        }


@dataclass(frozen=True)
class ToolId:
    ordinal: int


@dataclass
class ToolRegistry:
    apis: list[ApiDocument]
    by_name: dict[tuple[str, str], ToolId] = field(default_factory=dict)
    duplicates: int = 0

    def __post_init__(self):
        if not self.by_name:
            self.by_name = {api.key: ToolId(i) for i, api in enumerate(self.apis)}

    def __len__(self) -> int:
        return len(self.apis)

    def __iter__(self) -> Iterator[ApiDocument]:
        return iter(self.apis)

    def __getitem__(self, tool: ToolId | int) -> ApiDocument:
        return self.apis[tool.ordinal if isinstance(tool, ToolId) else tool]

    def lookup(self, tool_name: str, api_name: str) -> ToolId | None:
        return self.by_name.get((tool_name, api_name))

    def subset(self, ordinals: Iterable[int]) -> list[ApiDocument]:
        return [self.apis[i] for i in sorted(set(ordinals))]


def from_apis(apis: Iterable[ApiDocument]) -> ToolRegistry:
    """Build a registry from API documents: first occurrence wins, canonical order."""
    seen: dict[tuple[str, str], ApiDocument] = {}
    dups = 0
    for api in apis:
        if api.key in seen:
            dups += 1
            continue
        seen[api.key] = api
    if not seen:
        raise RegistryError("empty registry")
    ordered = sorted(seen.values(), key=lambda a: a.key)
    if dups:
        log.warning("dropped %d duplicate (tool_name, api_name) entries", dups)
    return ToolRegistry(apis=ordered, duplicates=dups)


def _parse_params(raw: Any, required: bool, where: str) -> tuple[ApiParameter, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise RegistryError(f"{where}: field must be a list")
    out = []
    for i, p in enumerate(raw):
        if isinstance(p, str):
            p = {"name": p}
        if not isinstance(p, dict) or not p.get("name"):
            raise RegistryError(f"{where}[{i}].name: missing or empty")
        default = p.get("default")
        out.append(
            ApiParameter(
                name=str(p["name"]),
                description=str(p.get("description") or ""),
                required=required,
                default=None if default is None or default == "" else str(default),
            )
        )
    return tuple(out)


def parse_tool_record(rec: Any, source: str = "<record>") -> list[ApiDocument]:
    """Parse one tool record (possibly with several APIs) into API documents."""
    if not isinstance(rec, dict):
        raise RegistryError(f"{source}: tool record must be a JSON object")
    tool_name = rec.get("tool_name")
    if not isinstance(tool_name, str) or not tool_name.strip():
        raise RegistryError(f"{source}: field 'tool_name' missing or empty")
    apis = rec.get("apis", rec.get("api_list"))
    if not isinstance(apis, list):
        raise RegistryError(f"{source}: field 'apis' missing or not a list")
    tool_desc = str(rec.get("tool_description") or "")
    docs = []
    for i, api in enumerate(apis):
        where = f"{source}: apis[{i}]"
        if not isinstance(api, dict):
            raise RegistryError(f"{where}: must be an object")
        name = api.get("name")
        if not isinstance(name, str) or not name.strip():
            raise RegistryError(f"{where}.name: missing or empty")
        method = str(api.get("method") or "").upper()
        if method not in HTTP_METHODS:
            raise RegistryError(f"{where}.method: unsupported HTTP verb {api.get('method')!r}")
        docs.append(
            ApiDocument(
                tool_name=tool_name.strip(),
                api_name=name.strip(),
                description=str(api.get("description") or ""),
                method=method,
                required_parameters=_parse_params(
                    api.get("required_parameters"), True, f"{where}.required_parameters"
                ),
                optional_parameters=_parse_params(
                    api.get("optional_parameters"), False, f"{where}.optional_parameters"
                ),
                tool_description=tool_desc,
            )
        )
    return docs


def _read_records(path: Path) -> Iterator[tuple[Any, str]]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line), f"{path}:{lineno}"
            except json.JSONDecodeError as e:
                raise RegistryError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
        return
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise RegistryError(f"{path}: invalid JSON ({e.msg})") from e
    if isinstance(data, list):
        for i, rec in enumerate(data):
            yield rec, f"{path}[{i}]"
    else:
        yield data, str(path)


def load_registry(path: str | Path) -> ToolRegistry:
    """Load a directory (searched recursively) or a single .json/.jsonl file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.suffix in (".json", ".jsonl") and p.is_file())
    else:
        files = [path]
    apis: list[ApiDocument] = []
    for f in files:
        for rec, source in _read_records(f):
            apis.extend(parse_tool_record(rec, source))
    return from_apis(apis)


def save_registry(registry: ToolRegistry, path: str | Path) -> None:
    """Write the registry as JSONL, one single-API tool record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for api in registry.apis:
            fh.write(json.dumps(api.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


_WS = re.compile(r"\s+")


def _clean(text: str) -> str:
    return _WS.sub(" ", text).strip()


def doc_text(api: ApiDocument) -> str:
    # Template is part of the training data contract; bump DOC_TEMPLATE_VERSION on change.
    req = ", ".join(_clean(p.name) for p in api.required_parameters) or "(none)"
    opt = ", ".join(_clean(p.name) for p in api.optional_parameters) or "(none)"
    desc = _clean(api.description).rstrip(".").rstrip() or "(none)"
    return (
        f"Tool: {_clean(api.tool_name)}. API: {_clean(api.api_name)}. "
        f"description: {desc}. "
        f"required parameters: {req}. optional parameters: {opt}."
    )
