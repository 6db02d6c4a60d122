"""Record/replay wrappers around chat and embedding adapters."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .base import AdapterError, ChatAdapter, ChatReply, ChatTask, payload_key
from .embed import EmbeddingAdapter


class CassetteMiss(AdapterError):
    def __init__(self, key: str, what: str = ""):
        super().__init__(f"replay miss for key {key}" + (f" ({what})" if what else ""))
        self.key = key


class CassetteCorrupt(AdapterError):
    pass


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Cassette:
    """Canonical-JSON map of call key -> recorded response."""

    def __init__(self, path: str):
        self.path = path
        self.entries: dict[str, Any] = {}
        self._lock = threading.Lock()
        if os.path.exists(path):
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise CassetteCorrupt(f"{path}: {exc}") from None
            if not isinstance(data, dict):
                raise CassetteCorrupt(f"{path}: top level must be an object")
            self.entries = data

    def get(self, key: str, what: str = "") -> Any:
        try:
            return self.entries[key]
        except KeyError:
            raise CassetteMiss(key, what) from None

    def put(self, key: str, value: Any) -> None:
        with self._lock:
            self.entries[key] = value
            self.save()

    def save(self) -> None:
        atomic_write(self.path, json.dumps(self.entries, sort_keys=True, ensure_ascii=False, indent=1) + "\n")


def embed_key(text: str) -> str:
    return "embed:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:24]


@dataclass
class RecordingChatAdapter(ChatAdapter):
    inner: ChatAdapter | None = None
    cassette: Cassette | None = None

    def call(self, task_id: str, payload: Mapping[str, Any], check=None) -> ChatReply:
        reply = self.inner.call(task_id, payload, check)
        self.cassette.put(payload_key(task_id, payload), {"task": task_id, "value": reply.value,
                                                          "truncated": reply.truncated})
        return reply


@dataclass
class ReplayChatAdapter(ChatAdapter):
    cassette: Cassette | None = None

    def complete(self, task: ChatTask, prompt: str, payload: Mapping[str, Any], attempt: int) -> Any:
        entry = self.cassette.get(payload_key(task.task_id, payload), task.task_id)
        return entry["value"]


class RecordingEmbedder(EmbeddingAdapter):
    def __init__(self, inner: EmbeddingAdapter, cassette: Cassette):
        self.inner = inner
        self.cassette = cassette
        self.dim = inner.dim

    def _embed(self, texts: list[str]) -> np.ndarray:
        vecs = self.inner.embed(texts)
        for text, vec in zip(texts, vecs):
            self.cassette.put(embed_key(text), vec.tolist())
        return vecs


class ReplayEmbedder(EmbeddingAdapter):
    def __init__(self, cassette: Cassette):
        self.cassette = cassette

    def _embed(self, texts: list[str]) -> np.ndarray:
        rows = [self.cassette.get(embed_key(t), "embed") for t in texts]
        self.dim = len(rows[0])
        return np.asarray(rows, dtype=float)


def record_replay(mode: str, store: str, chat: ChatAdapter | None = None,
                  embedder: EmbeddingAdapter | None = None) -> tuple[ChatAdapter, EmbeddingAdapter]:
    """Wrap live adapters for recording, or build replay adapters from ``store``."""
    cassette = Cassette(store)
    if mode == "record":
        if chat is None or embedder is None:
            raise ValueError("record mode needs live chat and embedding adapters")
        return RecordingChatAdapter(inner=chat, cassette=cassette), RecordingEmbedder(embedder, cassette)
    if mode == "replay":
        if not os.path.exists(store):
            raise CassetteMiss("*", f"cassette {store} does not exist")
        return ReplayChatAdapter(cassette=cassette), ReplayEmbedder(cassette)
    raise ValueError(f"unknown record/replay mode {mode!r}")
