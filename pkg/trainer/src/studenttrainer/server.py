"""Serves a trained checkpoint behind the chat-completions protocol."""

from __future__ import annotations

import errno
import socket
import threading
import time
from pathlib import Path
from typing import Any, Optional

import uvicorn
from fastapi import FastAPI
from pydantic import BaseModel

from .train import generate, load_checkpoint


class PortInUse(Exception):
    pass


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str = "student"
    messages: list[ChatMessage]
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 256
    seed: Optional[int] = None


def create_app(checkpoint_dir: str | Path) -> FastAPI:
    model, vocab = load_checkpoint(checkpoint_dir)
    app = FastAPI(title="student-server")
    lock = threading.Lock()

    @app.get("/health")
    @app.get("/v1/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.post("/chat/completions")
    @app.post("/v1/chat/completions")
    def chat(request: ChatRequest) -> dict[str, Any]:
        prompt = request.messages[-1].content if request.messages else ""
        with lock:  # greedy decode is stateless but not reentrant-tested
            text = generate(model, vocab, prompt)
        return {
            "object": "chat.completion",
            "model": request.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
            ],
        }

    return app


def _check_port_free(host: str, port: int) -> None:
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES):
            raise PortInUse(f"port {port} is already in use") from exc
        raise
    finally:
        probe.close()


class ServerHandle:
    """A background uvicorn server; stop() shuts it down cleanly."""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread, port: int):
        self._server = server
        self._thread = thread
        self.port = port

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}/v1"

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)


def start_background(checkpoint_dir: str | Path, port: int, host: str = "127.0.0.1") -> ServerHandle:
    _check_port_free(host, port)
    app = create_app(checkpoint_dir)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server failed to start")
        time.sleep(0.05)
    return ServerHandle(server, thread, port)


def serve(checkpoint_dir: str | Path, port: int, host: str = "127.0.0.1") -> None:
    """Blocking entry point used by the CLI."""
    _check_port_free(host, port)
    uvicorn.run(create_app(checkpoint_dir), host=host, port=port, log_level="info")
