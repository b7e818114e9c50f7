"""Shared test utilities: a mock chat-completions server and fixture stores."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional, Sequence

from kpdistill.client import Completion, EndpointConfig, ReplayStore, SamplingParams, TeacherClient
from kpdistill.records import Format, MathProblem
from kpdistill.synthesis import PromptTemplate, build_prompt, default_demonstrations


class MockChatServer:
    """Scriptable chat-completions endpoint for tests.

    reply(prompt) produces the completion text. status_script is a list of
    HTTP codes consumed one per request before normal 200 handling.
    """

    def __init__(
        self,
        reply: Optional[Callable[[str], str]] = None,
        status_script: Optional[Sequence[int]] = None,
        delay: float = 0.0,
        finish_reason: str = "stop",
        abrupt_close: bool = False,
    ):
        self.reply = reply or (lambda prompt: f"echo: {prompt[:40]}")
        self.status_script = list(status_script or [])
        self.delay = delay
        self.finish_reason = finish_reason
        self.abrupt_close = abrupt_close
        self.requests: list[dict] = []
        self.max_concurrent = 0
        self._active = 0
        self._lock = threading.Lock()
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "MockChatServer":
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                if self.path.endswith("/health"):
                    self.send_response(200)
                    self.end_headers()
                    self.wfile.write(b"ok")
                else:
                    self.send_response(404)
                    self.end_headers()

            def do_POST(self):
                with outer._lock:
                    outer._active += 1
                    outer.max_concurrent = max(outer.max_concurrent, outer._active)
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    payload = json.loads(self.rfile.read(length) or b"{}")
                    prompt = payload.get("messages", [{}])[-1].get("content", "")
                    if outer.delay:
                        time.sleep(outer.delay)
                    with outer._lock:
                        outer.requests.append({"prompt": prompt, "payload": payload})
                        scripted = outer.status_script.pop(0) if outer.status_script else None
                    if outer.abrupt_close:
                        self.connection.close()
                        return
                    if scripted is not None and scripted != 200:
                        self.send_response(scripted)
                        self.end_headers()
                        self.wfile.write(b"{}")
                        return
                    body = json.dumps(
                        {
                            "choices": [
                                {
                                    "message": {"role": "assistant", "content": outer.reply(prompt)},
                                    "finish_reason": outer.finish_reason,
                                }
                            ]
                        }
                    ).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                finally:
                    with outer._lock:
                        outer._active -= 1

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    @property
    def base_url(self) -> str:
        assert self._server is not None
        return f"http://127.0.0.1:{self._server.server_port}/v1"

    def stop(self) -> None:
        if self._server:
            self._server.shutdown()
            self._server.server_close()

    def prompts(self) -> list[str]:
        return [r["prompt"] for r in self.requests]


def scripted_completion(problem: MathProblem, fmt: Format, path_index: int, kind: str = "ok") -> str:
    """Deterministic fake teacher output for one (problem, path)."""
    answer = problem.gold_answer.value
    core = f"What must be computed for {problem.id}?"
    info = f"The quantities stated in {problem.id}."
    if fmt is Format.COT:
        if kind == "wrong":
            shown = answer + 5
            body = f"Path {path_index}: the steps give {shown}. The answer is {shown}."
        elif kind == "malformed":
            return (
                f"<core>{core}</core><info>{info} missing close "
                f"<cot>The answer is {answer}.</cot>"
            )
        else:
            body = f"Path {path_index}: working through the steps gives {answer}. The answer is {answer}."
        return f"<core>{core}</core><info>{info}</info><cot>{body}</cot>"
    if kind == "wrong":
        program = f"# path {path_index}\nans = {answer} + 5"
    elif kind == "malformed":
        return f"<core>{core}</core><info>{info} missing close <pot>ans = {answer}</pot>"
    elif kind == "crash":
        program = f"# path {path_index}\nans = 1 / 0"
    else:
        program = f"# path {path_index}\nans = {answer} * 1"
    return f"<core>{core}</core><info>{info}</info><pot>{program}</pot>"


DEFAULT_DEFECTS = {
    ("p03", 3): "wrong",
    ("p07", 2): "malformed",
    ("p11", 1): "wrong",
}


def build_fixture_store(
    problems: Sequence[MathProblem],
    fmt: Format,
    store_path,
    n_paths: int = 4,
    defects: Optional[dict] = None,
) -> ReplayStore:
    """Record deterministic teacher transcripts for every fixture prompt."""
    defects = dict(DEFAULT_DEFECTS if defects is None else defects)
    if fmt is Format.POT:
        defects = {key: ("crash" if kind == "malformed" else kind) for key, kind in defects.items()}
    template = PromptTemplate(format=fmt, demonstrations=default_demonstrations(fmt))
    store = ReplayStore(store_path)
    params = SamplingParams(n_paths=n_paths, seed=0)
    for problem in problems:
        prompt = build_prompt(template, problem.question)
        completions = [
            Completion(text=scripted_completion(problem, fmt, i, defects.get((problem.id, i), "ok")))
            for i in range(n_paths)
        ]
        store.record(prompt, params, completions)
    return store


def replay_client(store_path, max_in_flight: int = 4) -> TeacherClient:
    cfg = EndpointConfig(
        base_url="http://replay.invalid/v1",
        model_name="fixture-teacher",
        max_in_flight=max_in_flight,
    )
    return TeacherClient(cfg, backend="replay", store=ReplayStore(store_path))
