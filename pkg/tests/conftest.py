"""Shared fixtures: a stub HTTP generation service for remote-mode tests."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class StubService:
    """In-memory behavior of a remote generation/training stack.

    The canned sample is a valid single module so scored groups are benign;
    `fail_next` makes the next N requests return HTTP 500 (retry testing);
    `advance_checkpoint_after_generates` flips the digest once that many
    /generate calls have been served, simulating the external trainer.
    """

    def __init__(self):
        self.lock = threading.Lock()
        self.digest = "ckpt-0"
        self.generate_calls = 0
        self.score_calls = 0
        self.checkpoint_calls = 0
        self.fail_next = 0
        self.advance_checkpoint_after_generates = None
        self.score_enabled = True
        self.requests_seen = []
        self.sample_code = "module stub(input a, output y); assign y = a; endmodule"

    def handle(self, method, path, body):
        with self.lock:
            self.requests_seen.append((method, path, body))
            if self.fail_next > 0:
                self.fail_next -= 1
                return 500, {"error": "transient"}
            if method == "POST" and path == "/generate":
                self.generate_calls += 1
                if (self.advance_checkpoint_after_generates is not None
                        and self.generate_calls >= self.advance_checkpoint_after_generates):
                    self.digest = f"ckpt-{self.generate_calls}"
                n = body["n"]
                samples = [{"code": self.sample_code,
                            "token_logprobs": [-0.1] * 3} for _ in range(n)]
                return 200, {"samples": samples}
            if method == "POST" and path == "/score":
                self.score_calls += 1
                if not self.score_enabled:
                    return 404, {"error": "not implemented"}
                return 200, {"token_logprobs": [-0.2] * 4}
            if method == "GET" and path == "/checkpoint":
                self.checkpoint_calls += 1
                return 200, {"digest": self.digest}
            return 404, {"error": "no such endpoint"}


def _make_handler(service: StubService):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _reply(self, method):
            length = int(self.headers.get("Content-Length") or 0)
            body = json.loads(self.rfile.read(length) or b"null") if length else None
            status, payload = service.handle(method, self.path, body)
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            self._reply("GET")

        def do_POST(self):
            self._reply("POST")

    return Handler


@pytest.fixture
def stub_service():
    service = StubService()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _make_handler(service))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    service.url = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        yield service
    finally:
        server.shutdown()
        thread.join(timeout=5)
