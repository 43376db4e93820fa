from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from greenrec.domain import Catalog, Item
from greenrec.synthetic import write_demo

# -- acceptance criterion summary ------------------------------------------------

_criteria: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    number = getattr(report, "criterion", None)
    if number is None:
        return
    entry = _criteria.setdefault(number, {"title": report.criterion_title, "failed": False, "ran": False})
    if report.when == "call" or report.failed:
        entry["ran"] = True
        entry["failed"] = entry["failed"] or report.failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep = outcome.get_result()
        rep.criterion, rep.criterion_title = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "FAIL" if entry["failed"] else ("PASS" if entry["ran"] else "SKIP")
        terminalreporter.write_line(f"criterion {number}: {status}  {entry['title']}")


# -- data fixtures ---------------------------------------------------------------


@pytest.fixture
def abc_catalog() -> Catalog:
    return Catalog([
        Item.from_mapping("a", "Bamboo Brush", "Home", {}, True),
        Item.from_mapping("b", "Steel Mug", "Home", {"size": "L"}, False),
        Item.from_mapping("c", "Recycled Pad", "Games", {"brand": "X"}, True),
        Item.from_mapping("d", "Wool Socks", "Clothing", {}, False),
    ])


@pytest.fixture
def demo_dir(tmp_path):
    """Synthetic 120-item catalog, 40 train and 10 test sessions, mock script and config."""
    return write_demo(tmp_path / "demo", n_items=120, n_train=40, n_test=10, seed=0, max_trials=8)


# -- stub HTTP server ----------------------------------------------------------------


class StubServer:
    """Replays scripted (status, json body) responses; the last one repeats."""

    def __init__(self) -> None:
        self.responses: list[tuple[int, object]] = []
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"null")
                with stub._lock:
                    stub.requests.append({"path": self.path, "body": body})
                    stub.headers.append(dict(self.headers))
                    if not stub.responses:
                        status, payload = 500, {"error": "no scripted response"}
                    elif len(stub.responses) > 1:
                        status, payload = stub.responses.pop(0)
                    else:
                        status, payload = stub.responses[0]
                if callable(payload):
                    payload = payload(body)
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self._thread = threading.Thread(target=self.server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()


def completion(text: str) -> dict:
    return {
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3},
    }
