"""Pluggable LLM provider layer.

Three providers ship:

* ``http-openai-compatible`` — chat-completions wire format over HTTP.
* ``replay`` — answers from a recorded transcript, keyed by tag + request
  hash; makes whole runs deterministic.
* ``scripted`` — canned responses for tests (sequential, per-tag, or keyed
  by a substring of the user prompt).

Every request/response pair can be appended to an ndjson transcript, which
is sufficient to re-run the session in replay mode.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    NoCodeFoundError,
    ProviderConfigError,
    ProviderUnavailableError,
    ReplayMissError,
)

log = logging.getLogger(__name__)

TAGS = ("coder_generate", "coder_refine", "conductor", "compendium")

# Sampling defaults per request tag; replay ignores temperature entirely.
DEFAULT_TEMPERATURE = {
    "coder_generate": 0.6,
    "coder_refine": 0.6,
    "conductor": 0.2,
    "compendium": 0.2,
}
DEFAULT_MAX_TOKENS = 4096


class TransportError(Exception):
    """Retryable provider failure (network error, 5xx, scripted fault)."""


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    tag: str
    temperature: float | None = None
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ProviderConfigError(f"unknown request tag {self.tag!r}")
        if not (0.0 <= self.effective_temperature <= 2.0):
            raise ProviderConfigError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ProviderConfigError("max_tokens must be positive")
        if self.tag != "compendium" and not (self.system_prompt and self.user_prompt):
            raise ProviderConfigError(f"empty prompt for tag {self.tag}")

    @property
    def effective_temperature(self) -> float:
        if self.temperature is not None:
            return self.temperature
        return DEFAULT_TEMPERATURE[self.tag]

    def request_hash(self) -> str:
        h = hashlib.sha256()
        for part in (self.tag, self.system_prompt, self.user_prompt):
            h.update(part.encode())
            h.update(b"\x00")
        return h.hexdigest()[:24]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider: str
    latency_ms: float
    retries: int = 0
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class LlmClient:
    """Provider interface: subclasses implement one raw completion attempt."""

    name = "abstract"

    def complete_once(self, request: ChatRequest) -> str:
        raise NotImplementedError


class TranscriptWriter:
    """Append-only ndjson log of every request/response pair, single writer."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, request: ChatRequest, response_text: str) -> None:
        record = {
            "tag": request.tag,
            "request_hash": request.request_hash(),
            "system": request.system_prompt,
            "user": request.user_prompt,
            "response": response_text,
            "ts": time.time(),
        }
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as f:
                f.write(line + "\n")


def load_transcript(path: Path | str) -> dict[tuple[str, str], str]:
    """Read a transcript into a (tag, hash) -> response map; first write wins."""
    entries: dict[tuple[str, str], str] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        key = (rec["tag"], rec["request_hash"])
        entries.setdefault(key, rec["response"])
    return entries


class ReplayClient(LlmClient):
    """Returns recorded responses verbatim; tracks per-key usage counts."""

    name = "replay"

    def __init__(self, transcript: Path | str | dict[tuple[str, str], str]):
        if isinstance(transcript, (str, Path)):
            self._entries = load_transcript(transcript)
        else:
            self._entries = dict(transcript)
        self.usage: dict[tuple[str, str], int] = {}

    def complete_once(self, request: ChatRequest) -> str:
        key = (request.tag, request.request_hash())
        if key not in self._entries:
            raise ReplayMissError(*key)
        self.usage[key] = self.usage.get(key, 0) + 1
        return self._entries[key]


class ScriptedClient(LlmClient):
    """Canned responses for tests.

    Resolution order: ``keyed`` (first substring found in the user prompt),
    then the per-tag FIFO, then the global FIFO, then ``default``. A list
    entry that is an Exception instance is raised instead of returned, which
    lets tests script transport faults.
    """

    name = "scripted"

    def __init__(self, responses=None, by_tag=None, keyed=None, default=None):
        self._responses = list(responses or [])
        self._by_tag = {t: list(rs) for t, rs in (by_tag or {}).items()}
        self._keyed = list(keyed or [])
        self._default = default
        self.calls: list[ChatRequest] = []

    @classmethod
    def from_json(cls, path: Path | str) -> "ScriptedClient":
        spec = json.loads(Path(path).read_text())
        return cls(
            responses=spec.get("responses"),
            by_tag=spec.get("by_tag"),
            keyed=[(e["match"], e["text"]) for e in spec.get("keyed", [])],
            default=spec.get("default"),
        )

    def complete_once(self, request: ChatRequest) -> str:
        self.calls.append(request)
        for needle, text in self._keyed:
            if needle in request.user_prompt:
                return text
        queue = self._by_tag.get(request.tag)
        if queue:
            return self._pop(queue)
        if self._responses:
            return self._pop(self._responses)
        if self._default is not None:
            return self._default
        raise ProviderConfigError(
            f"scripted client has no response left for tag {request.tag}"
        )

    @staticmethod
    def _pop(queue):
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class HttpOpenAiClient(LlmClient):
    """Chat-completions over HTTP. The API key is read from the environment at
    call time and never stored on the client, so serialized configs stay clean.
    """

    name = "http-openai-compatible"

    def __init__(self, endpoint: str, model: str, key_env: str = "LLM_API_KEY",
                 timeout_s: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.key_env = key_env
        self.timeout_s = timeout_s

    def complete_once(self, request: ChatRequest) -> str:
        import os

        import requests

        key = os.environ.get(self.key_env)
        if not key:
            raise ProviderConfigError(f"environment variable {self.key_env} is not set")
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.effective_temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as e:
            raise TransportError(str(e)) from e
        if 400 <= resp.status_code < 500:
            raise ProviderConfigError(f"provider rejected request: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}")
        body = resp.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as e:
            raise TransportError(f"malformed provider response: {e}") from e


def complete(
    client: LlmClient,
    request: ChatRequest,
    *,
    transcript: TranscriptWriter | None = None,
    max_attempts: int = 3,
    backoff_s: float = 0.05,
) -> ChatResponse:
    """One completion with exponential backoff on transport failures.

    Configuration errors (bad key, HTTP 4xx) are not retried. Every successful
    pair is appended to the transcript when one is given.
    """
    start = time.perf_counter()
    last: Exception | None = None
    for attempt in range(max_attempts):
        try:
            text = client.complete_once(request)
        except TransportError as e:
            last = e
            log.warning("provider %s transport failure (attempt %d/%d): %s",
                        client.name, attempt + 1, max_attempts, e)
            if attempt + 1 < max_attempts:
                time.sleep(backoff_s * (2 ** attempt))
            continue
        latency_ms = (time.perf_counter() - start) * 1000.0
        if transcript is not None:
            transcript.append(request, text)
        return ChatResponse(text=text, provider=client.name, latency_ms=latency_ms,
                            retries=attempt)
    raise ProviderUnavailableError(
        f"provider {client.name} failed after {max_attempts} attempts: {last}"
    )


_FENCE_RE = re.compile(r"```[ \t]*([^\n`]*)\n(.*?)```", re.DOTALL)

_HINT_ALIASES = {
    "cpp": {"cpp", "c++", "cxx", "cc"},
    "c": {"c"},
    "python": {"python", "py"},
    "triton": {"triton"},
    "json": {"json"},
}


def extract_code(response_text: str, language_hint: str | None = None) -> str:
    """Pull source code out of a model response.

    Takes the last fenced block whose language matches the hint, else the last
    fenced block of any language, else the whole text when no fences exist.
    Reasoning models tend to emit exploratory snippets first, so last wins.
    """
    fences = _FENCE_RE.findall(response_text)
    body: str | None = None
    if fences:
        if language_hint:
            wanted = _HINT_ALIASES.get(language_hint.lower(), {language_hint.lower()})
            for lang, content in reversed(fences):
                if lang.strip().lower() in wanted:
                    body = content
                    break
        if body is None:
            body = fences[-1][1]
    else:
        body = response_text
    body = body.strip("\n").rstrip() if body else ""
    if not body.strip():
        raise NoCodeFoundError("response contained no extractable code")
    return body
