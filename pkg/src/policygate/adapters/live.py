"""HTTP adapters for chat-completion style providers."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import requests

from .base import ChatAdapter, ChatTask, TransportError
from .embed import EmbeddingAdapter

log = logging.getLogger(__name__)

API_KEY_ENV = "POLICYGATE_API_KEY"
SYSTEM_PROMPT = "You are a careful regulatory-compliance assistant. Reply with a single JSON object only."


def api_key(env: str = API_KEY_ENV) -> str:
    key = os.environ.get(env)
    if not key:
        raise TransportError(f"environment variable {env} is not set")
    return key


# Provider mapping: the only place that knows the wire field names.
def chat_request_body(model: str, task: ChatTask, prompt: str, max_tokens: int) -> dict:
    return {
        "model": model,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": prompt},
        ],
        "temperature": task.temperature,
        "max_tokens": max_tokens,
        "response_format": {"type": "json_object"},
    }


def chat_response_text(body: Mapping[str, Any]) -> str:
    try:
        return body["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError):
        raise TransportError("malformed chat-completion response") from None


def embedding_request_body(model: str, texts: list[str]) -> dict:
    return {"model": model, "input": texts}


def embedding_response_rows(body: Mapping[str, Any]) -> list[list[float]]:
    try:
        data = sorted(body["data"], key=lambda d: d["index"])
        return [d["embedding"] for d in data]
    except (KeyError, TypeError):
        raise TransportError("malformed embedding response") from None


def _post(session: requests.Session, url: str, body: dict, key: str, timeout: float, attempts: int) -> dict:
    delay = 1.0
    for i in range(attempts):
        try:
            resp = session.post(url, json=body, timeout=timeout,
                                headers={"Authorization": f"Bearer {key}"})
        except requests.RequestException as exc:
            err = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code == 200:
                return resp.json()
            err = f"HTTP {resp.status_code}: {resp.text[:200]}"
            if resp.status_code not in (408, 429) and resp.status_code < 500:
                raise TransportError(err)
        log.warning("POST %s failed (%s), attempt %d/%d", url, err, i + 1, attempts)
        if i + 1 < attempts:
            time.sleep(delay)
            delay *= 2
    raise TransportError(err)


@dataclass
class HTTPChatAdapter(ChatAdapter):
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4.1"
    max_output_tokens: int = 32768
    timeout: float = 120.0
    http_attempts: int = 3
    api_key_env: str = API_KEY_ENV
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def complete(self, task: ChatTask, prompt: str, payload: Mapping[str, Any], attempt: int) -> Any:
        max_tokens = int(self.max_output_tokens * task.max_output_fraction)
        body = chat_request_body(self.model, task, prompt, max_tokens)
        out = _post(self.session, self.base_url.rstrip("/") + "/chat/completions", body,
                    api_key(self.api_key_env), self.timeout, self.http_attempts)
        return chat_response_text(out)


class HTTPEmbedder(EmbeddingAdapter):
    def __init__(self, base_url: str = "https://api.openai.com/v1", model: str = "text-embedding-3-large",
                 timeout: float = 60.0, api_key_env: str = API_KEY_ENV, batch: int = 64):
        self.base_url = base_url
        self.model = model
        self.timeout = timeout
        self.api_key_env = api_key_env
        self.batch = batch
        self.session = requests.Session()

    def _embed(self, texts: list[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for i in range(0, len(texts), self.batch):
            body = embedding_request_body(self.model, texts[i:i + self.batch])
            out = _post(self.session, self.base_url.rstrip("/") + "/embeddings", body,
                        api_key(self.api_key_env), self.timeout, 3)
            rows.extend(embedding_response_rows(out))
        arr = np.asarray(rows, dtype=float)
        self.dim = arr.shape[1]
        return arr
