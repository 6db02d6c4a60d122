"""Chat boundary: task registry, prompt rendering, JSON enforcement."""
from __future__ import annotations

import hashlib
import json
import re
import string
import threading
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Mapping

import jsonschema

TASK_IDS = ("cu.extract", "cu.reference", "ctx.extract", "ctx.hypernym", "judge", "judge.refs")


class AdapterError(RuntimeError):
    """Base class for every failure at the model boundary."""


class TransportError(AdapterError):
    pass


class SchemaError(AdapterError):
    pass


class TruncationError(SchemaError):
    pass


class MissingPlaceholder(AdapterError, KeyError):
    pass


class UnknownTask(AdapterError, KeyError):
    pass


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def payload_key(task_id: str, payload: Mapping[str, Any]) -> str:
    """Cassette key for a chat call; independent of payload key order."""
    blob = canonical_json({"task": task_id, "payload": payload})
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:24]


@dataclass(frozen=True)
class ChatTask:
    task_id: str
    template: str
    schema: dict
    version: str = "1"
    temperature: float = 0.0
    max_output_fraction: float = 0.8

    @property
    def placeholders(self) -> set[str]:
        names = set()
        for match in string.Template.pattern.finditer(self.template):
            name = match.group("named") or match.group("braced")
            if name:
                names.add(name)
        return names

    def render(self, payload: Mapping[str, Any], overlay: str | None = None) -> str:
        missing = self.placeholders - set(payload)
        if missing:
            raise MissingPlaceholder(f"{self.task_id}: payload lacks {sorted(missing)}")
        values = {
            k: v if isinstance(v, str) else json.dumps(v, ensure_ascii=False, indent=1, sort_keys=True)
            for k, v in payload.items()
        }
        text = string.Template(self.template).substitute(values)
        return f"{overlay}\n\n{text}" if overlay else text

    def validate(self, value: Any) -> None:
        try:
            jsonschema.validate(value, self.schema)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise SchemaError(f"{self.task_id}: {path}: {exc.message}") from None


class TaskRegistry:
    def __init__(self, tasks: Mapping[str, ChatTask], overlays: Mapping[str, str] | None = None):
        self.tasks = dict(tasks)
        self.overlays = dict(overlays or {})

    def __getitem__(self, task_id: str) -> ChatTask:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise UnknownTask(task_id) from None

    def __contains__(self, task_id: str) -> bool:
        return task_id in self.tasks

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "TaskRegistry":
        tasks = {}
        for task_id, spec in data["tasks"].items():
            template = spec["template"]
            if isinstance(template, list):
                template = "\n".join(template)
            tasks[task_id] = ChatTask(
                task_id=task_id,
                template=template,
                schema=spec["schema"],
                version=str(spec.get("version", "1")),
                temperature=float(spec.get("temperature", 0.0)),
                max_output_fraction=float(spec.get("max_output_fraction", 0.8)),
            )
        missing = set(TASK_IDS) - set(tasks)
        if missing:
            raise ValueError(f"prompt catalog lacks tasks {sorted(missing)}")
        return cls(tasks, data.get("overlays"))

    @classmethod
    def load(cls, path: str | None = None) -> "TaskRegistry":
        if path is None:
            text = resources.files("policygate").joinpath("prompts.json").read_text("utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_json(json.loads(text))


_default_registry: TaskRegistry | None = None


def default_registry() -> TaskRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = TaskRegistry.load()
    return _default_registry


_FENCE = re.compile(r"^\s*```(?:json)?\s*|\s*```\s*$")


def parse_json_lenient(text: str) -> tuple[Any, bool]:
    """Parse model output, falling back to the longest complete prefix.

    Returns ``(value, truncated)``. Raises :class:`TruncationError` when no
    prefix parses.
    """
    text = _FENCE.sub("", text)
    try:
        return json.loads(text), False
    except json.JSONDecodeError:
        pass
    closers = {"{": "}", "[": "]"}
    stack: list[str] = []
    cuts: list[tuple[int, str]] = []
    in_str = escaped = False
    for i, ch in enumerate(text):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch in closers:
            stack.append(closers[ch])
        elif ch in "]}":
            if not stack:
                break
            stack.pop()
            if not stack:
                cuts.append((i + 1, ""))
            else:
                cuts.append((i + 1, "".join(reversed(stack))))
        elif ch == "," and stack:
            cuts.append((i, "".join(reversed(stack))))
    for pos, tail in reversed(cuts):
        try:
            return json.loads(text[:pos].rstrip().rstrip(",") + tail), True
        except json.JSONDecodeError:
            continue
    raise TruncationError(f"unparseable model output ({len(text)} chars)")


@dataclass
class ChatReply:
    value: Any
    truncated: bool = False
    attempts: int = 1


@dataclass
class ChatAdapter:
    """Provider-agnostic chat boundary.

    Subclasses implement :meth:`complete`, returning either raw text (parsed
    leniently) or an already-decoded JSON value.
    """

    registry: TaskRegistry = field(default_factory=default_registry)
    retries: int = 1
    max_in_flight: int = 4
    overlay: str | None = None

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(max(1, self.max_in_flight))

    def complete(self, task: ChatTask, prompt: str, payload: Mapping[str, Any], attempt: int) -> Any:
        raise NotImplementedError

    def call(self, task_id: str, payload: Mapping[str, Any],
             check: Callable[[Any], None] | None = None) -> ChatReply:
        """Render, complete, parse and validate; retry on schema failure.

        ``check`` is an extra validator that raises SchemaError, for
        constraints the JSON schema cannot express.
        """
        task = self.registry[task_id]
        overlay = self.registry.overlays.get(self.overlay) if self.overlay else None
        prompt = task.render(payload, overlay)
        error: SchemaError | None = None
        for attempt in range(self.retries + 1):
            with self._slots:
                raw = self.complete(task, prompt, payload, attempt)
            try:
                if isinstance(raw, str):
                    value, truncated = parse_json_lenient(raw)
                else:
                    value, truncated = raw, False
                task.validate(value)
                if check is not None:
                    check(value)
            except SchemaError as exc:
                error = exc
                continue
            return ChatReply(value, truncated, attempt + 1)
        assert error is not None
        raise error


def chat_call(llm: ChatAdapter, task_id: str, payload: Mapping[str, Any],
              check: Callable[[Any], None] | None = None) -> Any:
    """Validated JSON value for one task call."""
    return llm.call(task_id, payload, check).value
