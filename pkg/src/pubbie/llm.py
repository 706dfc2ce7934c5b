"""Chat-completion and embedding providers for the pipeline stages.

Two interchangeable chat implementations: an OpenAI-compatible HTTP client
and a scripted mock that answers from (stage, matcher) -> response entries
and records every call, enabling deterministic replay tests. Embeddings
come from the same HTTP surface or from a content-hash keyed cache file
for offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Protocol, Sequence

import requests

from .errors import (
    CacheMissError,
    DimensionMismatchError,
    MockNoMatchError,
    ProviderError,
    ProviderUnreachableError,
    ScriptIoError,
    ScriptParseError,
)

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 768


class StageId(str, Enum):
    """Pipeline stage identifiers, one per prompt template."""

    A1 = "A1"  # history relevance gate
    A2 = "A2"  # prompt rewrite
    B = "B"    # question-type classification
    C = "C"    # generic answering
    D = "D"    # text-to-SQL
    E = "E"    # response formulation


# Stage defaults: classification/SQL stages decode greedily, free-text
# stages get some temperature and room.
STAGE_TEMPERATURE = {
    StageId.A1: 0.0, StageId.A2: 0.0, StageId.B: 0.0,
    StageId.C: 0.7, StageId.D: 0.0, StageId.E: 0.7,
}
STAGE_MAX_TOKENS = {
    StageId.A1: 4, StageId.A2: 512, StageId.B: 8,
    StageId.C: 512, StageId.D: 256, StageId.E: 512,
}

_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"invalid role {self.role!r}")


@dataclass(frozen=True)
class StageRequest:
    """One chat call on behalf of a pipeline stage."""

    stage: StageId
    messages: tuple[ChatMessage, ...]
    temperature: float
    max_tokens: int

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.messages[0].role != "system":
            raise ValueError("first message must be the system message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def last_user_content(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return self.messages[-1].content


@dataclass(frozen=True)
class StageCompletion:
    text: str
    finish_reason: str = "stop"  # stop | length | error
    provider_latency_ms: int = 0


class ChatProvider(Protocol):
    def complete(self, request: StageRequest) -> StageCompletion: ...


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


def make_request(
    stage: StageId,
    messages: Iterable[ChatMessage],
    temperature: Optional[float] = None,
    max_tokens: Optional[int] = None,
) -> StageRequest:
    """Build a StageRequest with per-stage decoding defaults."""
    return StageRequest(
        stage=stage,
        messages=tuple(messages),
        temperature=STAGE_TEMPERATURE[stage] if temperature is None else temperature,
        max_tokens=STAGE_MAX_TOKENS[stage] if max_tokens is None else max_tokens,
    )


# --- HTTP provider -----------------------------------------------------------

class HttpChatProvider:
    """OpenAI-compatible /chat/completions client.

    Retries transport failures up to ``retries`` times; HTTP error statuses
    are surfaced immediately as PROVIDER_ERROR (a 4xx will not change on
    retry, and the pipeline treats 5xx the same to avoid duplicate calls).
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        model: str = "gpt-3.5-turbo",
        timeout_ms: int = 30_000,
        retries: int = 2,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout_s = timeout_ms / 1000.0
        self.retries = retries

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.endpoint}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout_s
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                logger.warning("provider transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code >= 400:
                raise ProviderError(resp.status_code, resp.text[:2000])
            return resp.json()
        raise ProviderUnreachableError(f"cannot reach {url}: {last_exc}")

    def complete(self, request: StageRequest) -> StageCompletion:
        payload = {
            "model": self.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        started = time.monotonic()
        body = self._post("/chat/completions", payload)
        latency = int((time.monotonic() - started) * 1000)
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
            finish = choice.get("finish_reason") or "stop"
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(200, f"malformed completion body: {body!r}") from exc
        if finish not in ("stop", "length"):
            finish = "stop"
        return StageCompletion(text=text, finish_reason=finish, provider_latency_ms=latency)


class HttpEmbedder:
    """OpenAI-compatible /embeddings client returning 768-wide vectors."""

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        model: str = "text-embedding",
        timeout_ms: int = 30_000,
        retries: int = 2,
    ):
        self._http = HttpChatProvider(endpoint, api_key, model, timeout_ms, retries)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed requires a non-empty list")
        body = self._http._post(
            "/embeddings", {"model": self._http.model, "input": list(texts)}
        )
        try:
            data = sorted(body["data"], key=lambda item: item.get("index", 0))
            vectors = [list(map(float, item["embedding"])) for item in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(200, f"malformed embeddings body: {body!r}") from exc
        if len(vectors) != len(texts):
            raise ProviderError(200, f"expected {len(texts)} vectors, got {len(vectors)}")
        for vec in vectors:
            if len(vec) != EMBEDDING_DIM:
                raise DimensionMismatchError(
                    f"provider returned {len(vec)}-dim vector, expected {EMBEDDING_DIM}"
                )
        return vectors


# --- scripted mock ----------------------------------------------------------

@dataclass(frozen=True)
class ScriptEntry:
    stage: StageId
    matcher: str  # substring of the last user message
    response: str


@dataclass
class MockScript:
    entries: list[ScriptEntry] = field(default_factory=list)

    def add(self, stage: StageId, matcher: str, response: str) -> "MockScript":
        self.entries.append(ScriptEntry(stage, matcher, response))
        return self


class MockChatProvider:
    """Deterministic scripted provider.

    Answers with the first entry whose stage matches and whose matcher is a
    substring of the request's last user message; raises MOCK_NO_MATCH
    otherwise (an unscripted path in a replay test). Every call is appended
    to call_log.
    """

    def __init__(self, script: MockScript | None = None):
        self.script = script or MockScript()
        self.call_log: list[tuple[StageRequest, StageCompletion]] = []
        self._lock = threading.Lock()

    def complete(self, request: StageRequest) -> StageCompletion:
        target = request.last_user_content()
        for entry in self.script.entries:
            if entry.stage == request.stage and entry.matcher in target:
                completion = StageCompletion(text=entry.response)
                with self._lock:
                    self.call_log.append((request, completion))
                return completion
        raise MockNoMatchError(
            f"no script entry for stage {request.stage.value} matching {target!r}"
        )


# --- script file format -------------------------------------------------------
# One entry per line: stage | matcher | response. Pipes, backslashes and
# newlines inside fields are escaped as \|, \\ and \n. '#' lines are comments.

def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("|", "\\|").replace("\n", "\\n")


def _unescape(value: str, line_num: int) -> str:
    out: list[str] = []
    i = 0
    while i < len(value):
        c = value[i]
        if c == "\\":
            if i + 1 >= len(value):
                raise ScriptParseError("dangling escape", line_num)
            nxt = value[i + 1]
            if nxt == "n":
                out.append("\n")
            elif nxt in ("\\", "|"):
                out.append(nxt)
            else:
                raise ScriptParseError(f"unknown escape \\{nxt}", line_num)
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _split_fields(line: str, line_num: int) -> list[str]:
    fields: list[str] = []
    current: list[str] = []
    i = 0
    while i < len(line):
        c = line[i]
        if c == "\\" and i + 1 < len(line):
            current.append(line[i : i + 2])
            i += 2
            continue
        if c == "|":
            fields.append("".join(current))
            current = []
            i += 1
            continue
        current.append(c)
        i += 1
    fields.append("".join(current))
    if len(fields) != 3:
        raise ScriptParseError(f"expected 3 fields, got {len(fields)}", line_num)
    return fields


def load_script(path: str) -> MockScript:
    """Read a line-delimited script file; PARSE_ERROR carries the line number."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.read().splitlines()
    except OSError as exc:
        raise ScriptIoError(f"cannot read script {path}: {exc}") from exc

    script = MockScript()
    for line_num, line in enumerate(raw_lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        stage_raw, matcher_raw, response_raw = _split_fields(line, line_num)
        stage_text = stage_raw.strip()
        try:
            stage = StageId(stage_text)
        except ValueError:
            raise ScriptParseError(f"unknown stage id {stage_text!r}", line_num) from None
        script.add(
            stage,
            _unescape(matcher_raw.strip(), line_num),
            _unescape(response_raw.strip(), line_num),
        )
    return script


def save_script(script: MockScript, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in script.entries:
                fh.write(
                    f"{entry.stage.value} | {_escape(entry.matcher)} | "
                    f"{_escape(entry.response)}\n"
                )
    except OSError as exc:
        raise ScriptIoError(f"cannot write script {path}: {exc}") from exc


def record_session(provider: MockChatProvider, path: str) -> None:
    """Serialize a mock's call log so the session replays from load_script."""
    recorded = MockScript()
    for request, completion in provider.call_log:
        recorded.add(request.stage, request.last_user_content(), completion.text)
    save_script(recorded, path)


# --- embedding cache ----------------------------------------------------------

def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class CacheEmbedder:
    """Offline embedder backed by a content-hash keyed JSONL file.

    Each line: {"hash": sha256-of-text, "vector": [768 floats]}. Misses are
    errors: this embedder never talks to the network.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._vectors: dict[str, list[float]] = {}
        if path is not None:
            self._load(path)

    def _load(self, path: str) -> None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except FileNotFoundError:
            return
        except OSError as exc:
            raise ScriptIoError(f"cannot read embedding cache {path}: {exc}") from exc
        for line_num, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                key, vector = record["hash"], list(map(float, record["vector"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ScriptParseError(f"bad cache record: {exc}", line_num) from None
            if len(vector) != EMBEDDING_DIM:
                raise DimensionMismatchError(
                    f"cached vector for {key} has {len(vector)} dims"
                )
            self._vectors[key] = vector

    def prime(self, text: str, vector: Sequence[float]) -> None:
        if len(vector) != EMBEDDING_DIM:
            raise DimensionMismatchError(
                f"vector has {len(vector)} dims, expected {EMBEDDING_DIM}"
            )
        self._vectors[text_hash(text)] = list(map(float, vector))

    def save(self, path: Optional[str] = None) -> None:
        target = path or self.path
        if target is None:
            raise ScriptIoError("no cache path configured")
        try:
            with open(target, "w", encoding="utf-8") as fh:
                for key in sorted(self._vectors):
                    fh.write(json.dumps({"hash": key, "vector": self._vectors[key]}) + "\n")
        except OSError as exc:
            raise ScriptIoError(f"cannot write embedding cache {target}: {exc}") from exc

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed requires a non-empty list")
        vectors = []
        for text in texts:
            key = text_hash(text)
            if key not in self._vectors:
                raise CacheMissError(key)
            vectors.append(list(self._vectors[key]))
        return vectors
