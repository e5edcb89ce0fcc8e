"""Chat-completion / embedding client with schema validation and record/replay.

Every request is hashed from its canonical JSON payload.  In ``record`` mode
the responses returned for a request (including re-prompts after a failed
validation) are written to ``<fixture_dir>/<hash>.json``; ``replay`` mode
reads them back and never touches the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema

from ..errors import FixtureMissing, LlmUnavailable, MalformedLlmOutput, ValidationError
from . import prompts
from .schemas import get_schema

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")
TASK_KINDS = ("analyze", "reflect", "refine", "paraphrase", "judge_similarity")

# transport(url, payload, headers, timeout_s) -> decoded JSON body
Transport = Callable[[str, dict, dict, float], dict]

_FENCE_RE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)


def httpx_transport(url: str, payload: dict, headers: dict, timeout_s: float) -> dict:
    import httpx

    try:
        resp = httpx.post(url, json=payload, headers=headers, timeout=timeout_s)
        resp.raise_for_status()
        return resp.json()
    except (httpx.HTTPError, ValueError) as exc:
        raise LlmUnavailable(f"{url}: {exc}") from exc


@dataclass
class LlmHandle:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "llama-3-8b-instruct"
    api_key: str = field(default="", repr=False)
    mode: str = "live"
    fixture_dir: Path | None = None
    max_retries: int = 2
    timeout_ms: int = 30000
    embed_model: str = "text-embedding"
    seed: int = 0
    max_in_flight: int = 4
    transport: Transport | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"unknown LLM mode {self.mode!r}")
        if self.mode in ("record", "replay") and self.fixture_dir is None:
            raise ValidationError(f"{self.mode} mode needs a fixture_dir")
        if self.fixture_dir is not None:
            self.fixture_dir = Path(self.fixture_dir)
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise ValidationError("max_retries must be >= 0 and max_in_flight >= 1")
        self._slots = threading.BoundedSemaphore(self.max_in_flight)
        self._fixture_lock = threading.Lock()

    @property
    def temperature(self) -> float:
        return 0.0

    @classmethod
    def from_env(cls, **overrides: Any) -> LlmHandle:
        env = {
            "base_url": os.environ.get("SERA_LLM_BASE_URL"),
            "api_key": os.environ.get("SERA_LLM_API_KEY"),
            "model_name": os.environ.get("SERA_LLM_MODEL"),
            "embed_model": os.environ.get("SERA_EMBED_MODEL"),
            "mode": os.environ.get("SERA_LLM_MODE"),
            "fixture_dir": os.environ.get("SERA_FIXTURE_DIR"),
        }
        kwargs = {k: v for k, v in env.items() if v}
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass(frozen=True)
class LlmTask:
    task_kind: str
    prompt: str
    response_schema_id: str

    def __post_init__(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise ValidationError(f"unknown task kind {self.task_kind!r}")
        get_schema(self.response_schema_id)
        if f"({self.response_schema_id})" not in self.prompt:
            raise ValidationError(f"prompt lacks the schema block for {self.response_schema_id}")


def request_hash(payload: dict) -> str:
    canonical = json.dumps(
        {"prompt_version": prompts.PROMPT_VERSION, "payload": payload},
        sort_keys=True, separators=(",", ":"), ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def extract_json(content: str) -> Any:
    """Parse the first fenced block of ``content`` (or all of it if unfenced)."""
    match = _FENCE_RE.search(content)
    body = match.group(1) if match else content
    try:
        return json.loads(body.strip())
    except json.JSONDecodeError as exc:
        raise MalformedLlmOutput(f"response is not valid JSON: {exc}") from exc


def validate(doc: Any, schema_id: str) -> None:
    validator = jsonschema.Draft202012Validator(get_schema(schema_id))
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise MalformedLlmOutput(f"{schema_id} at {where}: {error.message}")


class _FixtureStore:
    def __init__(self, handle: LlmHandle, payload: dict):
        self.handle = handle
        self.key = request_hash(payload)
        self.payload = payload
        self.path = handle.fixture_dir / f"{self.key}.json" if handle.fixture_dir else None
        self._recorded: list[Any] = []

    def load(self) -> list[Any]:
        if self.path is None or not self.path.exists():
            raise FixtureMissing(f"no fixture for request {self.key} in {self.handle.fixture_dir}")
        with open(self.path, encoding="utf-8") as f:
            return json.load(f)["responses"]

    def append(self, response: Any) -> None:
        self._recorded.append(response)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.handle._fixture_lock, open(self.path, "w", encoding="utf-8") as f:
            json.dump({"request": self.payload, "responses": self._recorded}, f,
                      indent=1, sort_keys=True, ensure_ascii=False)
            f.write("\n")


def _post(handle: LlmHandle, endpoint: str, payload: dict) -> dict:
    transport = handle.transport or httpx_transport
    headers = {"Content-Type": "application/json"}
    if handle.api_key:
        headers["Authorization"] = f"Bearer {handle.api_key}"
    url = handle.base_url.rstrip("/") + endpoint
    with handle._slots:
        return transport(url, payload, headers, handle.timeout_ms / 1000.0)


def _chat_content(body: dict) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise LlmUnavailable(f"unexpected chat response shape: {exc!r}") from exc
    if not isinstance(content, str):
        raise LlmUnavailable("chat response content is not a string")
    return content


def complete(handle: LlmHandle, task: LlmTask) -> Any:
    """Run ``task`` and return its schema-validated JSON document.

    Invalid responses are re-prompted with the validation error appended, up
    to ``handle.max_retries`` times, before :class:`MalformedLlmOutput`.
    """
    messages = [
        {"role": "system", "content": prompts.SYSTEM_PROMPT},
        {"role": "user", "content": task.prompt},
    ]
    payload = {
        "model": handle.model_name,
        "messages": messages,
        "temperature": handle.temperature,
        "seed": handle.seed,
    }
    store = _FixtureStore(handle, payload)
    replayed = store.load() if handle.mode == "replay" else None

    last_error: MalformedLlmOutput | None = None
    attempts = handle.max_retries + 1
    for attempt in range(attempts):
        if replayed is not None:
            if attempt >= len(replayed):
                break
            content = replayed[attempt]
        else:
            request = dict(payload, messages=list(messages))
            content = _chat_content(_post(handle, "/chat/completions", request))
            if handle.mode == "record":
                store.append(content)
        try:
            doc = extract_json(content)
            validate(doc, task.response_schema_id)
            return doc
        except MalformedLlmOutput as exc:
            last_error = exc
            log.warning("%s attempt %d/%d rejected: %s", task.task_kind, attempt + 1, attempts, exc)
            messages.append({"role": "assistant", "content": content})
            messages.append({
                "role": "user",
                "content": f"The previous answer was rejected: {exc}. "
                           "Reply again with one fenced JSON object matching the schema.",
            })
    raise MalformedLlmOutput(f"{task.task_kind}: no valid response after {attempts} attempt(s): {last_error}")


def embed_texts(handle: LlmHandle, texts: list[str]) -> list[list[float]]:
    """Fetch raw embedding vectors for ``texts`` from the embeddings endpoint."""
    payload = {"model": handle.embed_model, "input": list(texts)}
    store = _FixtureStore(handle, payload)
    if handle.mode == "replay":
        vectors = store.load()[0]
    else:
        body = _post(handle, "/embeddings", payload)
        try:
            vectors = [item["embedding"] for item in body["data"]]
        except (KeyError, TypeError) as exc:
            raise LlmUnavailable(f"unexpected embeddings response shape: {exc!r}") from exc
        if handle.mode == "record":
            store.append(vectors)
    if len(vectors) != len(texts):
        raise MalformedLlmOutput(f"expected {len(texts)} embeddings, got {len(vectors)}")
    return vectors
