"""Scriptable in-process mock for the chat/embeddings/tagging endpoints.

Responses are driven by a script dict (or JSON file) so tests and the
fixture pipeline run fully offline:

    {
      "chat": {
        "by_image": {
          "img001": {"text": "{'country': 'France', ...}"},
          "img002": {"text": "...", "fail_times": 2},
          "img003": {"status": 500}
        },
        "default": {"text": "{'country': '', 'city': '', 'reasons':''}"}
      },
      "embeddings": {"by_text": {"building": [1, 0, 0]}, "default": [1, 0]},
      "tag": {
        "by_text": {"the sky is blue": {"entities": []}},
        "default": {"entities": []}
      }
    }

"fail_times": N makes the first N requests for that key return HTTP 500
(consumed across the server's lifetime).  GET /stats reports request
counters so tests can assert how many calls were actually issued.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path


class MockEndpoint:
    def __init__(self, script: dict | str | Path):
        if not isinstance(script, dict):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        self.script = script
        self.stats = {"chat": 0, "embeddings": 0, "tag": 0}
        self._remaining_failures: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- scripted behavior -------------------------------------------------

    def _entry(self, section: str, key: str) -> dict | None:
        table = self.script.get(section, {})
        sub = "by_image" if section == "chat" else "by_text"
        entry = table.get(sub, {}).get(key)
        if entry is None:
            entry = table.get("default")
        return entry

    def _should_fail(self, section: str, key: str, entry: dict) -> bool:
        fail_times = int(entry.get("fail_times", 0))
        if fail_times <= 0:
            return False
        with self._lock:
            remaining = self._remaining_failures.setdefault((section, key), fail_times)
            if remaining > 0:
                self._remaining_failures[(section, key)] = remaining - 1
                return True
        return False

    def chat_response(self, image_ref: str) -> tuple[int, dict]:
        with self._lock:
            self.stats["chat"] += 1
        entry = self._entry("chat", image_ref)
        if entry is None:
            return 404, {"error": f"no scripted response for {image_ref!r}"}
        if self._should_fail("chat", image_ref, entry):
            return 500, {"error": "scripted failure"}
        status = int(entry.get("status", 200))
        if status != 200:
            return status, {"error": f"scripted status {status}"}
        return 200, {"choices": [{"message": {"content": entry.get("text", "")}}]}

    def embeddings_response(self, texts: list[str]) -> tuple[int, dict]:
        with self._lock:
            self.stats["embeddings"] += 1
        table = self.script.get("embeddings", {})
        data = []
        for text in texts:
            vector = table.get("by_text", {}).get(text, table.get("default"))
            if vector is None:
                return 400, {"error": f"no scripted embedding for {text!r}"}
            data.append({"embedding": vector})
        return 200, {"data": data}

    def tag_response(self, text: str) -> tuple[int, dict]:
        with self._lock:
            self.stats["tag"] += 1
        entry = self._entry("tag", text)
        if entry is None:
            return 404, {"error": f"no scripted tags for {text!r}"}
        if self._should_fail("tag", text, entry):
            return 500, {"error": "scripted failure"}
        return 200, {"entities": entry.get("entities", [])}

    # -- HTTP plumbing -----------------------------------------------------

    def start(self) -> str:
        """Start serving on an ephemeral port; returns the base URL."""
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args) -> None:
                pass

            def _reply(self, status: int, payload: dict) -> None:
                body = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self) -> None:
                if self.path == "/stats":
                    with mock._lock:
                        self._reply(200, dict(mock.stats))
                else:
                    self._reply(404, {"error": "unknown path"})

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._reply(400, {"error": "bad request body"})
                    return
                if self.path == "/v1/chat/completions":
                    ref = ""
                    for message in body.get("messages", []):
                        for part in message.get("content", []):
                            if isinstance(part, dict) and part.get("type") == "image_url":
                                ref = part.get("image_url", {}).get("url", "")
                    self._reply(*mock.chat_response(ref))
                elif self.path == "/v1/embeddings":
                    texts = [str(t) for t in body.get("input", [])]
                    self._reply(*mock.embeddings_response(texts))
                elif self.path == "/tag":
                    self._reply(*mock.tag_response(str(body.get("text", ""))))
                else:
                    self._reply(404, {"error": "unknown path"})

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "MockEndpoint":
        self.base_url = self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
