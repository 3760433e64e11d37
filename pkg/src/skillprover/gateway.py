"""Chat-completion and embedding access with record/replay support.

Three modes:
  * live    — calls the configured backend, nothing persisted
  * record  — calls the backend and appends every exchange to a cassette
  * replay  — answers chat requests from the cassette only; embeddings
              come from the cassette when recorded, otherwise from the
              deterministic hash-seeded embedder

Cassette entries are keyed by a digest of the rendered messages plus the
temperature; repeated identical requests are disambiguated by a sequence
number, so replay is exact even for duplicate prompts.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from pathlib import Path
from random import Random

import numpy as np
import requests

from .errors import (
    ProtocolError,
    RateLimitError,
    ReplayMissError,
    TemplateError,
    TransportError,
)

DEFAULT_TEMPERATURE = 0.7

TEMPLATE_IDS = (
    "decomposer",
    "formalizer",
    "request_solver",
    "dir_extend_dimensions",
    "dir_identify_key_concepts",
    "dir_parameterize",
    "dir_scale_complexity",
)


class RateLimited(Exception):
    """Internal signal from a backend: retry after backoff."""


class HashEmbedder:
    """Deterministic pseudo-embeddings derived from a SHA-256 stream.

    Offline runs need stable geometry: the same text always maps to the
    same unit vector, on any platform, with no RNG library involved.
    """

    def __init__(self, dim: int = 1536):
        if dim <= 0:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        material = text.encode("utf-8")
        values = np.empty(self.dim, dtype=np.float64)
        produced = 0
        counter = 0
        while produced < self.dim:
            digest = hashlib.sha256(material + counter.to_bytes(8, "big")).digest()
            for offset in range(0, 32, 8):
                if produced >= self.dim:
                    break
                chunk = int.from_bytes(digest[offset : offset + 8], "big")
                values[produced] = chunk / 2.0**63 - 1.0
                produced += 1
            counter += 1
        norm = np.linalg.norm(values)
        return values / norm if norm > 0 else values


class HttpChatBackend:
    """OpenAI-compatible chat completions over HTTP JSON."""

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, messages: list[dict], temperature: float, model: str) -> str:
        try:
            response = requests.post(
                f"{self.base_url}/chat/completions",
                json={"model": model, "messages": messages, "temperature": temperature},
                headers=self._headers(),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}") from exc
        if response.status_code == 429:
            raise RateLimited()
        if response.status_code >= 500:
            raise TransportError(f"chat endpoint returned {response.status_code}")
        if response.status_code != 200:
            raise ProtocolError(
                f"chat endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat reply: {response.text[:200]}") from exc
        if not isinstance(content, str):
            raise ProtocolError("chat reply content is not text")
        return content


class HttpEmbedder:
    """OpenAI-compatible embeddings endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"embedding endpoint unreachable: {exc}") from exc
        if response.status_code == 429:
            raise RateLimited()
        if response.status_code != 200:
            raise TransportError(
                f"embedding endpoint returned {response.status_code}"
            )
        try:
            vector = response.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("malformed embedding reply") from exc
        return np.asarray(vector, dtype=np.float64)


def request_digest(messages: list[dict], temperature: float) -> str:
    canonical = json.dumps(
        {"messages": messages, "temperature": round(float(temperature), 6)},
        sort_keys=True,
        ensure_ascii=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Cassette:
    """Append-only ndjson store of recorded exchanges, indexed in memory."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[tuple[str, str, int], dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    key = (entry["kind"], entry["digest"], entry["seq"])
                    self._entries[key] = entry

    def lookup(self, kind: str, digest: str, seq: int) -> dict | None:
        return self._entries.get((kind, digest, seq))

    def append(self, entry: dict) -> None:
        with self._lock:
            key = (entry["kind"], entry["digest"], entry["seq"])
            self._entries[key] = entry
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


class LlmGateway:
    """Mode-aware front end for completions and embeddings."""

    def __init__(
        self,
        mode: str = "replay",
        chat_backend=None,
        embedder=None,
        cassette_path: str | Path | None = None,
        model_pool: tuple[str, ...] = ("gpt-3.5-turbo",),
        temperature: float = DEFAULT_TEMPERATURE,
        rng: Random | None = None,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        dim: int = 1536,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode in ("record", "replay") and cassette_path is None:
            raise ValueError(f"{mode} mode requires a cassette path")
        if mode in ("live", "record") and chat_backend is None:
            raise ValueError(f"{mode} mode requires a chat backend")
        if not model_pool:
            raise ValueError("model pool must be non-empty")
        self.mode = mode
        self.chat_backend = chat_backend
        self.embedder = embedder or HashEmbedder(dim)
        self.cassette = Cassette(cassette_path) if cassette_path is not None else None
        self.model_pool = tuple(model_pool)
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._rng = rng or Random()
        self._cursors: dict[str, int] = {}
        self._cursor_lock = threading.Lock()

    # cursors advance once per request so duplicate prompts replay in the
    # order they were recorded; checkpoints persist them
    def _next_seq(self, kind: str, digest: str) -> int:
        with self._cursor_lock:
            key = f"{kind}:{digest}"
            seq = self._cursors.get(key, 0)
            self._cursors[key] = seq + 1
            return seq

    def cursors(self) -> dict[str, int]:
        with self._cursor_lock:
            return dict(self._cursors)

    def restore_cursors(self, cursors: dict[str, int]) -> None:
        with self._cursor_lock:
            self._cursors = dict(cursors)

    def select_model(self) -> str:
        return self._rng.choice(self.model_pool)

    def complete(self, messages: list[dict], temperature: float | None = None) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        temp = self.temperature if temperature is None else temperature
        digest = request_digest(messages, temp)
        seq = self._next_seq("chat", digest)

        if self.mode == "replay":
            entry = self.cassette.lookup("chat", digest, seq)
            if entry is None:
                raise ReplayMissError(
                    f"no recorded completion for digest {digest[:12]} seq {seq}"
                )
            return entry["response"]

        model = self.select_model()
        response = self._call_with_retries(messages, temp, model)
        if self.mode == "record":
            self.cassette.append(
                {
                    "kind": "chat",
                    "digest": digest,
                    "seq": seq,
                    "model": model,
                    "temperature": temp,
                    "messages": messages,
                    "response": response,
                }
            )
        return response

    def _call_with_retries(self, messages, temperature, model) -> str:
        for attempt in range(self.max_retries + 1):
            try:
                return self.chat_backend.complete(messages, temperature, model)
            except RateLimited:
                if attempt == self.max_retries:
                    break
                time.sleep(min(self.backoff_base * 2**attempt, 60.0))
        raise RateLimitError(f"rate-limited after {self.max_retries} retries")

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        digest = text_digest(text)
        if self.mode == "replay":
            entry = self.cassette.lookup("embed", digest, 0)
            if entry is not None:
                return np.asarray(entry["vector"], dtype=np.float64)
            return HashEmbedder(self._embed_dim()).embed(text)
        vector = self.embedder.embed(text)
        if self.mode == "record" and self.cassette.lookup("embed", digest, 0) is None:
            self.cassette.append(
                {
                    "kind": "embed",
                    "digest": digest,
                    "seq": 0,
                    "vector": [float(v) for v in vector],
                }
            )
        return vector

    def _embed_dim(self) -> int:
        return getattr(self.embedder, "dim", 1536)


_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


class PromptLibrary:
    """Prompt templates as external text files with {{placeholder}} slots.

    A template file is a sequence of `[system]` / `[user]` / `[assistant]`
    sections; rendering substitutes every placeholder and returns the
    message list. Defaults ship with the package; operators point
    `directory` at their own tuned copies.
    """

    def __init__(self, directory: str | Path | None = None):
        if directory is None:
            from importlib import resources

            self._root = resources.files("skillprover") / "templates"
        else:
            self._root = Path(directory)
        self._cache: dict[str, str] = {}

    def template_text(self, template_id: str) -> str:
        if template_id not in self._cache:
            candidate = self._root / f"{template_id}.tmpl"
            try:
                text = candidate.read_text(encoding="utf-8")
            except (FileNotFoundError, OSError) as exc:
                raise TemplateError(f"no template named {template_id!r}") from exc
            self._cache[template_id] = text
        return self._cache[template_id]

    def placeholders(self, template_id: str) -> set[str]:
        return set(_PLACEHOLDER.findall(self.template_text(template_id)))

    def render(self, template_id: str, bindings: dict[str, str]) -> list[dict]:
        text = self.template_text(template_id)
        missing = sorted(self.placeholders(template_id) - set(bindings))
        if missing:
            raise TemplateError(
                f"template {template_id!r} is missing bindings: {', '.join(missing)}",
                missing=missing,
            )
        filled = _PLACEHOLDER.sub(lambda m: bindings[m.group(1)], text)
        messages: list[dict] = []
        role = None
        buffer: list[str] = []

        def flush():
            if role is not None:
                messages.append({"role": role, "content": "\n".join(buffer).strip("\n")})

        for line in filled.splitlines():
            stripped = line.strip()
            if stripped in ("[system]", "[user]", "[assistant]"):
                flush()
                role = stripped[1:-1]
                buffer = []
            else:
                buffer.append(line)
        flush()
        if not messages:
            raise TemplateError(f"template {template_id!r} has no message sections")
        return messages


def format_skill_section(skills: list[str]) -> str:
    """Bind retrieved skill codes into the prompt's skills slot, in order."""
    if not skills:
        return "(no stored skills yet)"
    parts = []
    for i, code in enumerate(skills, start=1):
        parts.append(f"Useful skill {i}:\n{code.strip()}")
    return "\n\n".join(parts)


def format_numbered_section(title: str, items: list[str]) -> str:
    if not items:
        return f"(no {title.lower()} available)"
    parts = []
    for i, item in enumerate(items, start=1):
        parts.append(f"{title} {i}:\n{item.strip()}")
    return "\n\n".join(parts)
