"""HTTP client for remote chat-completion endpoints.

Speaks the common JSON-over-HTTP chat contract: POST a ``messages`` array
with text and image_url content parts, read the reply from
``choices[0].message.content``. Authentication is a bearer token taken from
an environment variable named in the backend config.
"""

from __future__ import annotations

import base64
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .base import (
    BackendResponse,
    ChatBackend,
    ChatRequest,
    EmptyResponseError,
    PermanentBackendError,
    RetryPolicy,
    TransientBackendError,
    truncate_output,
)

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class WireConfig:
    endpoint: str
    model: str
    api_key_env: str = ""
    timeout_s: float = 60.0
    max_tokens: int = 1024


def _image_content(request: ChatRequest) -> dict | None:
    if request.image is None:
        return None
    uri = request.image.uri
    if uri.startswith(("http://", "https://", "data:")):
        url = uri
    else:
        path = Path(uri)
        if path.exists():
            encoded = base64.b64encode(path.read_bytes()).decode("ascii")
            url = f"data:application/octet-stream;base64,{encoded}"
        else:
            # Opaque locator; let the server resolve it.
            url = uri
    return {"type": "image_url", "image_url": {"url": url}}


def build_wire_body(request: ChatRequest, config: WireConfig) -> dict:
    messages = []
    image_part = _image_content(request)
    for message in request.messages:
        content: list[dict] = [{"type": "text", "text": message.text}]
        # The image is attached to the first user message.
        if image_part is not None and message.speaker.value == "user":
            content.insert(0, image_part)
            image_part = None
        messages.append({"role": message.speaker.value, "content": content})
    return {
        "model": config.model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": config.max_tokens,
    }


class WireBackend(ChatBackend):
    def __init__(self, config: WireConfig, retry: RetryPolicy | None = None,
                 session: requests.Session | None = None):
        self.config = config
        self.retry = retry or RetryPolicy()
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            token = os.environ.get(self.config.api_key_env, "")
            if not token:
                raise PermanentBackendError(
                    f"environment variable {self.config.api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post_once(self, body: dict) -> str:
        try:
            response = self.session.post(
                self.config.endpoint,
                json=body,
                headers=self._headers(),
                timeout=self.config.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        if response.status_code in RETRYABLE_STATUS:
            raise TransientBackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code != 200:
            raise PermanentBackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise PermanentBackendError(f"malformed response body: {exc}") from exc
        if text is None or not str(text).strip():
            raise EmptyResponseError("model returned empty output")
        return str(text)

    def complete(self, request: ChatRequest) -> BackendResponse:
        body = build_wire_body(request, self.config)
        started = time.monotonic()
        last_error: BaseException | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            try:
                text = self._post_once(body)
            except BaseException as exc:
                last_error = exc
                if attempt < self.retry.max_attempts and self.retry.should_retry(exc):
                    time.sleep(self.retry.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
                    continue
                raise
            text, truncated = truncate_output(text, request.max_output_chars)
            if truncated:
                log.warning("response truncated to %d chars", request.max_output_chars)
            latency_ms = int((time.monotonic() - started) * 1000)
            return BackendResponse(
                text=text, latency_ms=latency_ms, attempts=attempt, truncated=truncated
            )
        raise last_error  # pragma: no cover - loop always raises or returns
