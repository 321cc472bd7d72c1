"""Pluggable text-completion backends for QA generation.

The wire contract is a list of (role, text) messages plus deterministic
decoding parameters; the response is plain text. The HTTP client retries,
respects a timeout and keeps an on-disk response cache keyed by the request
hash so pipelines are reproducible and tests run offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx


class BackendError(Exception):
    """The backend could not produce a completion."""


class LlmBackend(Protocol):
    name: str

    def complete(self, messages: list[tuple[str, str]]) -> str: ...


@dataclass
class TemplateBackend:
    """Sentinel backend: QA generation uses the built-in deterministic templates."""

    name: str = "template"

    def complete(self, messages: list[tuple[str, str]]) -> str:
        raise BackendError("template backend does not run completions")


def request_key(model: str, messages: list[tuple[str, str]], params: dict) -> str:
    payload = json.dumps(
        {"model": model, "messages": messages, "params": params}, sort_keys=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class HttpBackend:
    """HTTP completion client with retries and an on-disk cache.

    POSTs ``{"model", "messages": [{"role", "content"}], "temperature": 0,
    "max_tokens"}`` to ``base_url`` with a bearer token taken from
    ``token_env``. Accepts either a bare ``{"text": ...}`` response or the
    common ``{"choices": [{"message": {"content": ...}}]}`` shape.
    """

    base_url: str
    model: str = "gpt-4"
    token_env: str = "CFDRIVE_API_TOKEN"
    timeout: float = 30.0
    retries: int = 2
    max_tokens: int = 512
    cache_dir: str | None = None
    name: str = "http"
    transport: httpx.BaseTransport | None = None
    _cache_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, messages: list[tuple[str, str]]) -> str:
        params = {"temperature": 0, "max_tokens": self.max_tokens}
        key = request_key(self.model, messages, params)
        cached = self._cache_read(key)
        if cached is not None:
            return cached

        payload = {
            "model": self.model,
            "messages": [{"role": r, "content": t} for r, t in messages],
            **params,
        }
        headers = {}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"

        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                    resp = client.post(self.base_url, json=payload, headers=headers)
                resp.raise_for_status()
                text = self._extract_text(resp.json())
                self._cache_write(key, text)
                return text
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
        raise BackendError(f"backend request failed after {self.retries + 1} attempts: {last_error}")

    @staticmethod
    def _extract_text(doc) -> str:
        if isinstance(doc, dict):
            if isinstance(doc.get("text"), str):
                return doc["text"]
            choices = doc.get("choices")
            if isinstance(choices, list) and choices:
                return choices[0]["message"]["content"]
        raise ValueError(f"unrecognized response shape: {type(doc)}")

    def _cache_path(self, key: str) -> Path | None:
        if not self.cache_dir:
            return None
        return Path(self.cache_dir) / f"{key}.json"

    def _cache_read(self, key: str) -> str | None:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)["text"]

    def _cache_write(self, key: str, text: str) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        with self._cache_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump({"text": text}, fh)
            os.replace(tmp, path)
