"""Completion acquisition: prompt templating, code extraction, and a
minimal file/HTTP provider with retries and a response cache.

The wire contract is a JSON POST {"model": str, "prompt": str} answered by
{"text": str}. Vendor-specific adapters live outside the core.
"""

from __future__ import annotations

import json
import logging
import os
import re
import string
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .corpus import Completion, ResourceLimits, Task
from .errors import ConfigError, ProviderError, TemplateError

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE = (
    "Solve the following programming problem. Read input from standard input and "
    "write the answer to standard output. Your program must finish within "
    "{wall_time_ms} ms and use at most {memory_bytes} bytes of memory.\n\n{question}\n"
)

_ALLOWED_PLACEHOLDERS = {"question", "wall_time_ms", "memory_bytes"}

# A fence opener is ``` at line start, optionally tagged (```python). The
# block ends at the next line consisting of ``` alone, or at end of text
# for truncated responses.
_FENCE_OPEN = re.compile(r"^```[^\n]*\n", re.MULTILINE)
_FENCE_CLOSE = re.compile(r"^```\s*$", re.MULTILINE)


@dataclass(frozen=True)
class GenerationInstruction:
    template: str
    rendered: str


@dataclass(frozen=True)
class ProviderConfig:
    """Where completions come from: endpoint "file" reads a response cache
    directory; anything else is treated as an HTTP endpoint."""

    endpoint: str
    model_id: str
    path: str | None = None
    auth_token_env: str | None = None
    request_timeout_ms: int = 30_000
    max_retries: int = 2
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.endpoint == "file":
            if not self.path:
                raise ConfigError("file provider requires a path")
        elif not self.endpoint.startswith(("http://", "https://")):
            raise ConfigError(f"endpoint must be an http(s) URL or 'file', got {self.endpoint!r}")
        if self.request_timeout_ms <= 0:
            raise ConfigError("request_timeout_ms must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be non-negative")


def render_instruction(
    question: str, limits: ResourceLimits, template: str = DEFAULT_TEMPLATE
) -> GenerationInstruction:
    """Substitute {question}, {wall_time_ms}, {memory_bytes} into the
    template. Unknown or malformed placeholders raise TemplateError."""
    try:
        fields = [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]
    except ValueError as exc:
        raise TemplateError(f"malformed template: {exc}") from exc
    for name in fields:
        if name not in _ALLOWED_PLACEHOLDERS:
            raise TemplateError(f"unknown placeholder {{{name}}}")
    rendered = template.format(
        question=question,
        wall_time_ms=limits.wall_time_ms,
        memory_bytes=limits.memory_bytes,
    )
    return GenerationInstruction(template=template, rendered=rendered)


def extract_code(raw_response: str) -> str:
    """Return the interior of the first fenced code block, or the response
    unchanged when no fence exists.

    Trailing whitespace of every line is preserved: downstream degeneration
    detection depends on raw repetition. An opener without a closing fence
    (a truncated response) yields everything after the opener."""
    match = _FENCE_OPEN.search(raw_response)
    if match is None:
        return raw_response
    start = match.end()
    close = _FENCE_CLOSE.search(raw_response, start)
    if close is None:
        return raw_response[start:]
    interior = raw_response[start : close.start()]
    return interior[:-1] if interior.endswith("\n") else interior


def _cache_file(cache_dir: str, task_id: str, model_id: str) -> Path:
    safe = lambda s: re.sub(r"[^A-Za-z0-9._-]", "_", s)
    return Path(cache_dir) / f"{safe(task_id)}__{safe(model_id)}.json"


def _read_response_file(path: Path) -> str:
    with path.open("r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict) or "text" not in obj:
        raise ProviderError(f"{path}: stored response must be an object with a 'text' field")
    return str(obj["text"])


def fetch_completion(
    task: Task, provider: ProviderConfig, instruction: GenerationInstruction
) -> Completion:
    """Fetch one completion for `task`.

    HTTP transport failures and non-2xx statuses are retried up to
    provider.max_retries; a well-formed response is never retried. The
    raw response is stored exactly as returned."""
    if provider.endpoint == "file":
        path = _cache_file(provider.path or "", task.task_id, provider.model_id)
        if not path.exists():
            raise ProviderError(f"no stored response for ({task.task_id}, {provider.model_id})")
        text = _read_response_file(path)
    else:
        if provider.cache_dir:
            cached = _cache_file(provider.cache_dir, task.task_id, provider.model_id)
            if cached.exists():
                text = _read_response_file(cached)
                return _build_completion(task, provider, text)
        text = _http_fetch(provider, instruction.rendered)
        if provider.cache_dir:
            cached = _cache_file(provider.cache_dir, task.task_id, provider.model_id)
            cached.parent.mkdir(parents=True, exist_ok=True)
            cached.write_text(json.dumps({"text": text}, sort_keys=True), encoding="utf-8")
    return _build_completion(task, provider, text)


def _build_completion(task: Task, provider: ProviderConfig, text: str) -> Completion:
    return Completion(
        task_id=task.task_id,
        model_id=provider.model_id,
        raw_response=text,
        source_code=extract_code(text),
    )


def _http_fetch(provider: ProviderConfig, prompt: str) -> str:
    headers = {"Content-Type": "application/json"}
    if provider.auth_token_env:
        token = os.environ.get(provider.auth_token_env)
        if token is None:
            raise ConfigError(f"auth variable {provider.auth_token_env!r} is not set")
        headers["Authorization"] = f"Bearer {token}"
    payload = {"model": provider.model_id, "prompt": prompt}
    timeout = provider.request_timeout_ms / 1000.0
    last_error: str = "no attempt made"
    last_status: int | None = None
    for attempt in range(provider.max_retries + 1):
        if attempt:
            time.sleep(min(0.25 * 2 ** (attempt - 1), 2.0))
        try:
            resp = requests.post(provider.endpoint, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_error = f"transport failure: {exc}"
            logger.debug("attempt %d failed: %s", attempt + 1, exc)
            continue
        if resp.status_code // 100 != 2:
            last_error = f"HTTP {resp.status_code}"
            last_status = resp.status_code
            continue
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProviderError(f"provider returned non-JSON body: {exc}") from exc
        if not isinstance(body, dict) or "text" not in body:
            raise ProviderError("provider response missing 'text' field")
        return str(body["text"])
    raise ProviderError(
        f"provider failed after {provider.max_retries + 1} attempts: {last_error}",
        status=last_status,
    )
