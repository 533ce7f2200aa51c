import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from evoforge.problems import BppInstance, TspInstance

DEMO = Path(__file__).resolve().parents[1] / "src" / "evoforge" / "demo"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def unit_square():
    return TspInstance(((0, 0), (0, 1), (1, 1), (1, 0)), "unit-square")


@pytest.fixture
def demo_dir():
    return DEMO


@pytest.fixture
def three_bpp():
    return [
        BppInstance(10, (5, 5, 4, 3, 3), "a"),
        BppInstance(10, (6, 6, 6, 6), "b"),
        BppInstance(10, (7, 6, 5, 4), "c"),
    ]


class StubServer:
    """Chat-completions stub that answers with a scripted list of status codes."""

    def __init__(self, statuses, body="stub reply"):
        self.statuses = list(statuses)
        self.body = body
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                stub.requests.append((self.path, json.loads(self.rfile.read(length)), dict(self.headers)))
                status = stub.statuses.pop(0) if len(stub.statuses) > 1 else stub.statuses[0]
                if status == 200:
                    payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": stub.body}}]})
                else:
                    payload = json.dumps({"error": status})
                data = payload.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def make(statuses, body="stub reply"):
        s = StubServer(statuses, body)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report(capsys):
    """Record one pass/fail line for an acceptance criterion and echo it."""

    def report(number, title, passed, detail=""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
