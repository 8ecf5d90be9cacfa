"""Record/replay cassette around any chat backend.

Recording appends one ``{"request_fingerprint", "response_text"}`` JSON line
per completed call. Replay looks requests up by fingerprint and returns the
recorded text byte for byte; identical repeated requests are replayed in
recording order, and any unrecorded request is an error.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from pathlib import Path

from .base import BackendResponse, ChatBackend, ChatRequest, PermanentBackendError


class CassetteMissError(PermanentBackendError):
    """Replay was asked for a request that was never recorded."""


class CassetteRecorder(ChatBackend):
    def __init__(self, inner: ChatBackend, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> BackendResponse:
        response = self.inner.complete(request)
        entry = {
            "request_fingerprint": request.fingerprint(),
            "response_text": response.text,
        }
        line = json.dumps(entry, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        return response


class CassettePlayer(ChatBackend):
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, deque[str]] = {}
        if not self.path.exists():
            raise CassetteMissError(f"cassette file not found: {self.path}")
        with open(self.path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    fingerprint = entry["request_fingerprint"]
                    text = entry["response_text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CassetteMissError(
                        f"{self.path}: corrupt cassette entry on line {lineno}: {exc}"
                    ) from exc
                self._entries.setdefault(fingerprint, deque()).append(text)

    def complete(self, request: ChatRequest) -> BackendResponse:
        fingerprint = request.fingerprint()
        with self._lock:
            queue = self._entries.get(fingerprint)
            if not queue:
                raise CassetteMissError(
                    f"no recorded response for request fingerprint {fingerprint[:12]}…"
                )
            text = queue.popleft()
        return BackendResponse(text=text, latency_ms=0, attempts=1)
