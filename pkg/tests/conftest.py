import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from codistill.records import ImageRef, InstructionRecord, Origin, TaskType


def make_instruction(
    rid: str,
    question: str = "counting: how many cups are on the table",
    image_uri: str = "img://0001",
    task_type: TaskType = TaskType.CONVERSATION,
    origin: Origin = Origin.SEED,
    parent_id: str | None = None,
    iteration: int = 0,
) -> InstructionRecord:
    return InstructionRecord(
        id=rid,
        image=ImageRef(uri=image_uri),
        question=question,
        task_type=task_type,
        origin=origin,
        parent_id=parent_id,
        iteration=iteration,
    )


class _StubState:
    """Mutable behavior shared between the test and the HTTP handler."""

    def __init__(self):
        self.fail_next = 0          # respond 500 this many times, then succeed
        self.status = 200
        self.reply_text = "stub reply"
        self.requests: list[dict] = []
        self.lock = threading.Lock()


class _StubHandler(BaseHTTPRequestHandler):
    state: _StubState = None  # set per server

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        with self.state.lock:
            self.state.requests.append(body)
            if self.state.fail_next > 0:
                self.state.fail_next -= 1
                status = 500
            else:
                status = self.state.status
            reply_text = self.state.reply_text
        if status != 200:
            payload = json.dumps({"error": "induced failure"}).encode()
        else:
            payload = json.dumps(
                {"choices": [{"message": {"role": "assistant", "content": reply_text}}]}
            ).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):  # keep pytest output clean
        pass


@pytest.fixture
def stub_server():
    state = _StubState()
    handler = type("Handler", (_StubHandler,), {"state": state})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    try:
        yield url, state
    finally:
        server.shutdown()
        server.server_close()
